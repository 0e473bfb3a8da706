//! Shared domain types.
//!
//! Every type here is a plain immutable value with a stable JSON schema.
//! Field names are snake_case; enum labels are kebab-case. Intervals are
//! half-open `(lo, hi]` throughout, so adjacent intervals tile a range
//! without overlap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Current version of every structured document this crate reads or writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Slack allowed on the sum of sampling fractions in a snapshot.
pub const RATE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnobKind {
    Continuous,
    Integer,
    Categorical,
    MemoryBytes,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
    MemoryFraction,
}

/// A configured knob value: a number for numeric kinds, a label for
/// categorical knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KnobValue {
    Number(f64),
    Label(String),
}

impl KnobValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            KnobValue::Number(v) => Some(*v),
            KnobValue::Label(_) => None,
        }
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            KnobValue::Label(s) => Some(s),
            KnobValue::Number(_) => None,
        }
    }
}

impl From<f64> for KnobValue {
    fn from(v: f64) -> Self {
        KnobValue::Number(v)
    }
}

impl From<&str> for KnobValue {
    fn from(v: &str) -> Self {
        KnobValue::Label(v.to_string())
    }
}

impl fmt::Display for KnobValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnobValue::Number(v) => write!(f, "{v}"),
            KnobValue::Label(s) => f.write_str(s),
        }
    }
}

/// Knob name to value.
pub type Configuration = BTreeMap<String, KnobValue>;

/// A field-path-qualified validation failure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub path: String,
    pub message: String,
}

impl ValidationIssue {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationIssue {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// A tunable parameter's domain, default and scaling semantics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnobSpec {
    pub name: String,
    pub kind: KnobKind,
    #[serde(default)]
    pub min: f64,
    #[serde(default)]
    pub max: f64,
    pub default: KnobValue,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl KnobSpec {
    pub fn is_numeric(&self) -> bool {
        self.kind != KnobKind::Categorical
    }

    pub fn is_integral(&self) -> bool {
        matches!(self.kind, KnobKind::Integer | KnobKind::MemoryBytes)
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    /// Checks the spec's own invariants.
    pub fn validate(&self) -> Vec<ValidationIssue> {
        let p = |field: &str| format!("knobs.{}.{}", self.name, field);
        let mut issues = Vec::new();
        if self.name.is_empty() {
            issues.push(ValidationIssue::new("knobs.<unnamed>", "name must be non-empty"));
        }
        match self.kind {
            KnobKind::Categorical => {
                if self.categories.is_empty() {
                    issues.push(ValidationIssue::new(
                        p("categories"),
                        "categorical knob requires non-empty categories",
                    ));
                }
                match &self.default {
                    KnobValue::Label(l) if self.category_index(l).is_some() => {}
                    _ => issues.push(ValidationIssue::new(
                        p("default"),
                        "default must be one of the categories",
                    )),
                }
                if self.scale != Scale::Linear {
                    issues.push(ValidationIssue::new(p("scale"), "categorical knobs are unscaled"));
                }
            }
            _ => {
                if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
                    issues.push(ValidationIssue::new(p("max"), "requires finite min <= max"));
                }
                match self.default {
                    KnobValue::Number(d) if d >= self.min && d <= self.max => {}
                    KnobValue::Number(_) => issues.push(ValidationIssue::new(
                        p("default"),
                        "default outside [min, max]",
                    )),
                    KnobValue::Label(_) => issues.push(ValidationIssue::new(
                        p("default"),
                        "numeric knob requires a numeric default",
                    )),
                }
                if self.scale == Scale::Log && self.min <= 0.0 {
                    issues.push(ValidationIssue::new(p("scale"), "log scale requires min > 0"));
                }
                if self.scale == Scale::MemoryFraction && self.kind != KnobKind::MemoryBytes {
                    issues.push(ValidationIssue::new(
                        p("scale"),
                        "memory-fraction scale requires kind memory-bytes",
                    ));
                }
            }
        }
        issues
    }

    /// Checks that `value` lies in the domain; the error is a message only,
    /// callers attach the field path.
    pub fn check_value(&self, value: &KnobValue) -> Result<(), &'static str> {
        match (self.kind, value) {
            (KnobKind::Categorical, KnobValue::Label(l)) => {
                if self.category_index(l).is_some() {
                    Ok(())
                } else {
                    Err("label not in categories")
                }
            }
            (KnobKind::Categorical, KnobValue::Number(_)) => Err("expected category label"),
            (_, KnobValue::Label(_)) => Err("expected numeric value"),
            (kind, KnobValue::Number(v)) => {
                if !v.is_finite() {
                    Err("value is not finite")
                } else if *v > self.max {
                    Err("value above domain max")
                } else if *v < self.min {
                    Err("value below domain min")
                } else if matches!(kind, KnobKind::Integer | KnobKind::MemoryBytes)
                    && v.fract() != 0.0
                {
                    Err("integral knob requires a whole value")
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Projects a numeric value onto the domain, rounding integral kinds.
    pub fn clamp_number(&self, v: f64) -> f64 {
        let v = if v.is_nan() { self.min } else { v };
        let v = v.clamp(self.min, self.max);
        if self.is_integral() {
            let r = v.round();
            if r > self.max {
                r - 1.0
            } else if r < self.min {
                r + 1.0
            } else {
                r
            }
        } else {
            v
        }
    }
}

/// The full set of knob specs, keyed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KnobCatalog {
    specs: BTreeMap<String, KnobSpec>,
}

impl KnobCatalog {
    pub fn new(specs: impl IntoIterator<Item = KnobSpec>) -> Result<Self, Vec<ValidationIssue>> {
        let mut map = BTreeMap::new();
        let mut issues = Vec::new();
        for spec in specs {
            issues.extend(spec.validate());
            if map.contains_key(&spec.name) {
                issues.push(ValidationIssue::new(
                    format!("knobs.{}", spec.name),
                    "duplicate knob name",
                ));
            }
            map.insert(spec.name.clone(), spec);
        }
        if issues.is_empty() {
            Ok(KnobCatalog { specs: map })
        } else {
            Err(issues)
        }
    }

    pub fn get(&self, name: &str) -> Option<&KnobSpec> {
        self.specs.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &KnobSpec> {
        self.specs.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn defaults(&self) -> Configuration {
        self.specs
            .values()
            .map(|s| (s.name.clone(), s.default.clone()))
            .collect()
    }

    /// Validates a whole configuration; every knob must be known and in domain.
    pub fn check_configuration(&self, config: &Configuration, prefix: &str) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        for (name, value) in config {
            let path = format!("{prefix}.{name}");
            match self.get(name) {
                None => issues.push(ValidationIssue::new(path, "unknown knob")),
                Some(spec) => {
                    if let Err(msg) = spec.check_value(value) {
                        issues.push(ValidationIssue::new(path, msg));
                    }
                }
            }
        }
        issues
    }
}

/// On-disk form of a knob catalog.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KnobSpecDocument {
    pub schema_version: u32,
    pub knobs: Vec<KnobSpec>,
}

impl From<&KnobCatalog> for KnobSpecDocument {
    fn from(c: &KnobCatalog) -> Self {
        KnobSpecDocument {
            schema_version: SCHEMA_VERSION,
            knobs: c.iter().cloned().collect(),
        }
    }
}

/// A workload predicate value: open vocabulary, compared by exact equality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredicateValue {
    Bool(bool),
    Number(f64),
    Label(String),
}

impl fmt::Display for PredicateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredicateValue::Bool(b) => write!(f, "{b}"),
            PredicateValue::Number(n) => write!(f, "{n}"),
            PredicateValue::Label(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hardware {
    pub total_memory_bytes: u64,
    pub cores: u32,
}

impl Default for Hardware {
    fn default() -> Self {
        Hardware {
            total_memory_bytes: 16 << 30,
            cores: 4,
        }
    }
}

/// Runtime context at the time of one observation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    #[serde(default)]
    pub workload_predicates: BTreeMap<String, PredicateValue>,
    #[serde(default)]
    pub function_rates: BTreeMap<String, f64>,
    #[serde(default)]
    pub hardware: Hardware,
}

impl ContextSnapshot {
    /// Sampling rate of `function`; functions absent from the snapshot count as 0.
    pub fn rate(&self, function: &str) -> f64 {
        self.function_rates.get(function).copied().unwrap_or(0.0)
    }

    pub fn validate(&self, prefix: &str) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        let mut sum = 0.0;
        for (f, r) in &self.function_rates {
            if !(0.0..=1.0).contains(r) {
                issues.push(ValidationIssue::new(
                    format!("{prefix}.function_rates.{f}"),
                    "sampling rate out of [0,1]",
                ));
            } else {
                sum += r;
            }
        }
        if sum > 1.0 + RATE_SUM_TOLERANCE {
            issues.push(ValidationIssue::new(
                format!("{prefix}.function_rates"),
                "sampling rates sum above 1",
            ));
        }
        if self.hardware.total_memory_bytes == 0 {
            issues.push(ValidationIssue::new(
                format!("{prefix}.hardware.total_memory_bytes"),
                "must be positive",
            ));
        }
        if self.hardware.cores == 0 {
            issues.push(ValidationIssue::new(format!("{prefix}.hardware.cores"), "must be positive"));
        }
        issues
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    /// +1 when larger values are better, -1 otherwise.
    pub fn sign(self) -> f64 {
        match self {
            Direction::HigherBetter => 1.0,
            Direction::LowerBetter => -1.0,
        }
    }

    /// Relative improvement of `to` over `from`: `(to - from) / |from|`,
    /// sign-flipped for lower-better metrics. `None` when `from` is zero.
    pub fn relative_improvement(self, from: f64, to: f64) -> Option<f64> {
        if from == 0.0 || !from.is_finite() || !to.is_finite() {
            return None;
        }
        Some(self.sign() * (to - from) / from.abs())
    }

    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::HigherBetter => a > b,
            Direction::LowerBetter => a < b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub metric_name: String,
    pub value: f64,
    pub direction: Direction,
}

/// One tuning trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub id: String,
    pub context: ContextSnapshot,
    pub configuration: Configuration,
    pub performance: Performance,
}

/// Validates a record against the catalog, collecting every issue.
pub fn validate_observation(
    record: ObservationRecord,
    catalog: &KnobCatalog,
) -> Result<ObservationRecord, Vec<ValidationIssue>> {
    let mut issues = Vec::new();
    if record.id.is_empty() {
        issues.push(ValidationIssue::new("id", "must be non-empty"));
    }
    issues.extend(record.context.validate("context"));
    issues.extend(catalog.check_configuration(&record.configuration, "configuration"));
    if !record.performance.value.is_finite() {
        issues.push(ValidationIssue::new(
            "performance.value",
            "performance value is not finite",
        ));
    }
    if issues.is_empty() {
        Ok(record)
    } else {
        Err(issues)
    }
}

/// Half-open interval `(lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}]", self.lo, self.hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjustmentForm {
    Relative,
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjustDirection {
    Increase,
    Decrease,
    Set,
}

impl fmt::Display for AdjustDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdjustDirection::Increase => "increase",
            AdjustDirection::Decrease => "decrease",
            AdjustDirection::Set => "set",
        })
    }
}

/// A knob change in encoded space. Relative adjustments carry the magnitude
/// of the change; absolute adjustments carry the target value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnobAdjustment {
    pub knob: String,
    pub form: AdjustmentForm,
    pub direction: AdjustDirection,
    pub magnitude_interval: Interval,
}

impl KnobAdjustment {
    pub fn validate(&self, path: &str) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        if !self.magnitude_interval.is_valid() {
            issues.push(ValidationIssue::new(
                format!("{path}.magnitude_interval"),
                "requires finite lo < hi",
            ));
        }
        match (self.form, self.direction) {
            (AdjustmentForm::Absolute, AdjustDirection::Set) => {}
            (AdjustmentForm::Absolute, _) => issues.push(ValidationIssue::new(
                format!("{path}.direction"),
                "absolute adjustments must use direction set",
            )),
            (AdjustmentForm::Relative, AdjustDirection::Set) => issues.push(ValidationIssue::new(
                format!("{path}.direction"),
                "relative adjustments must increase or decrease",
            )),
            _ => {}
        }
        issues
    }

    pub(crate) fn canonical_key(&self) -> String {
        format!(
            "adj:{}:{:?}:{}:{}:{}",
            self.knob,
            self.form,
            self.direction,
            self.magnitude_interval.lo,
            self.magnitude_interval.hi
        )
    }
}

impl fmt::Display for KnobAdjustment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.form {
            AdjustmentForm::Relative => write!(
                f,
                "{} {} by {}",
                self.direction, self.knob, self.magnitude_interval
            ),
            AdjustmentForm::Absolute => {
                write!(f, "set {} within {}", self.knob, self.magnitude_interval)
            }
        }
    }
}

/// Condition applied to a named workload predicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadCondition {
    Equals(PredicateValue),
    Within(Interval),
}

/// One antecedent item of a tuning rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Predicate {
    Workload {
        name: String,
        #[serde(flatten)]
        condition: WorkloadCondition,
    },
    FunctionRate {
        function: String,
        interval: Interval,
    },
}

impl Predicate {
    pub fn holds(&self, ctx: &ContextSnapshot) -> bool {
        match self {
            Predicate::Workload { name, condition } => {
                let Some(actual) = ctx.workload_predicates.get(name) else {
                    return false;
                };
                match (condition, actual) {
                    (WorkloadCondition::Equals(expected), actual) => expected == actual,
                    (WorkloadCondition::Within(iv), PredicateValue::Number(n)) => iv.contains(*n),
                    (WorkloadCondition::Within(_), _) => false,
                }
            }
            Predicate::FunctionRate { function, interval } => interval.contains(ctx.rate(function)),
        }
    }

    pub(crate) fn canonical_key(&self) -> String {
        match self {
            Predicate::Workload {
                name,
                condition: WorkloadCondition::Equals(v),
            } => format!("wl:{name}={v}"),
            Predicate::Workload {
                name,
                condition: WorkloadCondition::Within(iv),
            } => format!("wl:{name}~{}:{}", iv.lo, iv.hi),
            Predicate::FunctionRate { function, interval } => {
                format!("rate:{function}:{}:{}", interval.lo, interval.hi)
            }
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Workload {
                name,
                condition: WorkloadCondition::Equals(v),
            } => write!(f, "{name} = {v}"),
            Predicate::Workload {
                name,
                condition: WorkloadCondition::Within(iv),
            } => write!(f, "{name} in {iv}"),
            Predicate::FunctionRate { function, interval } => {
                if interval.hi >= 1.0 {
                    write!(f, "r({function}) > {:.4}", interval.lo)
                } else {
                    write!(f, "r({function}) in {interval}")
                }
            }
        }
    }
}

/// Statistics a rule was born with when it came out of the miner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinedStats {
    pub pair_trials: u64,
    pub pair_successes: u64,
    pub confidence: f64,
    pub mean_improvement: f64,
}

/// `antecedent => consequent` with maintenance statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningRule {
    pub id: String,
    pub antecedent: Vec<Predicate>,
    pub consequent: Vec<KnobAdjustment>,
    pub coverage: f64,
    pub success_count: u64,
    pub trial_count: u64,
    pub improvement_sum: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mined: Option<MinedStats>,
}

impl TuningRule {
    /// Builds an unverified rule; items are put into canonical order and the
    /// id is derived from them.
    pub fn new(mut antecedent: Vec<Predicate>, mut consequent: Vec<KnobAdjustment>) -> Self {
        antecedent.sort_by_key(Predicate::canonical_key);
        antecedent.dedup();
        consequent.sort_by_key(KnobAdjustment::canonical_key);
        consequent.dedup();
        let mut rule = TuningRule {
            id: String::new(),
            antecedent,
            consequent,
            coverage: 0.0,
            success_count: 0,
            trial_count: 0,
            improvement_sum: 0.0,
            mined: None,
        };
        rule.id = rule.derived_id();
        rule
    }

    /// Identity used to deduplicate rules: the canonical antecedent and
    /// consequent, order-insensitive.
    pub fn identity_key(&self) -> String {
        let mut a: Vec<String> = self.antecedent.iter().map(Predicate::canonical_key).collect();
        a.sort();
        let mut c: Vec<String> = self.consequent.iter().map(KnobAdjustment::canonical_key).collect();
        c.sort();
        format!("{}=>{}", a.join("&"), c.join("&"))
    }

    pub fn derived_id(&self) -> String {
        let digest = Sha256::digest(self.identity_key().as_bytes());
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        format!("r-{hex}")
    }

    /// `success_count / trial_count`, or `None` while the rule is unverified.
    pub fn confidence(&self) -> Option<f64> {
        (self.trial_count > 0).then(|| self.success_count as f64 / self.trial_count as f64)
    }

    pub fn antecedent_holds(&self, ctx: &ContextSnapshot) -> bool {
        self.antecedent.iter().all(|p| p.holds(ctx))
    }

    pub fn knobs(&self) -> BTreeSet<&str> {
        self.consequent.iter().map(|a| a.knob.as_str()).collect()
    }

    pub fn validate(&self, path: &str) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        if self.consequent.is_empty() {
            issues.push(ValidationIssue::new(
                format!("{path}.consequent"),
                "consequent must be non-empty",
            ));
        }
        for (i, adj) in self.consequent.iter().enumerate() {
            issues.extend(adj.validate(&format!("{path}.consequent[{i}]")));
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            issues.push(ValidationIssue::new(format!("{path}.coverage"), "must lie in [0,1]"));
        }
        if self.success_count > self.trial_count {
            issues.push(ValidationIssue::new(
                format!("{path}.success_count"),
                "exceeds trial_count",
            ));
        }
        if !(self.improvement_sum >= 0.0 && self.improvement_sum.is_finite()) {
            issues.push(ValidationIssue::new(
                format!("{path}.improvement_sum"),
                "must be finite and non-negative",
            ));
        }
        for (i, p) in self.antecedent.iter().enumerate() {
            if let Predicate::FunctionRate { interval, .. } = p {
                if !interval.is_valid() {
                    issues.push(ValidationIssue::new(
                        format!("{path}.antecedent[{i}].interval"),
                        "requires finite lo < hi",
                    ));
                }
            }
        }
        issues
    }
}

impl fmt::Display for TuningRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.antecedent.is_empty() {
            f.write_str("true")?;
        } else {
            let a: Vec<String> = self.antecedent.iter().map(|p| p.to_string()).collect();
            f.write_str(&a.join(" AND "))?;
        }
        f.write_str(" => ")?;
        let c: Vec<String> = self.consequent.iter().map(|a| a.to_string()).collect();
        f.write_str(&c.join(" AND "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Signal {
    HighRate,
    LowRate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shift {
    Increase,
    Decrease,
}

impl Shift {
    pub fn sign(self) -> f64 {
        match self {
            Shift::Increase => 1.0,
            Shift::Decrease => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub function: String,
    pub signal: Signal,
    pub direction: Shift,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    #[default]
    Stub,
    Advisor,
}

/// A per-knob semantic tuning strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub knob: String,
    pub functions: BTreeSet<String>,
    pub causal_link: String,
    pub triggers: Vec<Trigger>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl Hypothesis {
    pub fn validate(&self, path: &str) -> Vec<ValidationIssue> {
        self.triggers
            .iter()
            .enumerate()
            .filter(|(_, t)| !self.functions.contains(&t.function))
            .map(|(i, _)| {
                ValidationIssue::new(
                    format!("{path}.triggers[{i}].function"),
                    "trigger function not listed in functions",
                )
            })
            .collect()
    }
}
