//! Tuning hypotheses, prompt assembly and configuration advisors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::diagnosis::Flagged;
use crate::error::{Error, Result};
use crate::io::{parse_document, read_document, Versioned};
use crate::mining::{apply_relative, decode_value, encode_value, encoded_range};
use crate::model::{
    AdjustmentForm, Configuration, ContextSnapshot, Hardware, Hypothesis, KnobCatalog, KnobSpec, KnobValue,
    PredicateValue, Shift, Signal, TuningRule, ValidationIssue, SCHEMA_VERSION,
};
use crate::registry::Registry;
use crate::rulebook::{expected_improvement, DEFAULT_TOP_K};

pub const EXPLORE_FRACTION: f64 = 0.25;
pub const CAUSAL_LINK_LIMIT: usize = 500;
pub const ADVISOR_URL_ENV: &str = "KNOBWISE_ADVISOR_URL";
pub const ADVISOR_TIMEOUT: Duration = Duration::from_secs(30);
pub const PROTOCOL: &str = "knobwise-advice/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisDocument {
    pub schema_version: u32,
    pub hypotheses: Vec<Hypothesis>,
}

impl Versioned for HypothesisDocument {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

/// Immutable set of hypotheses in document order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HypothesisStore {
    hypotheses: Vec<Hypothesis>,
}

impl HypothesisStore {
    pub fn new(hypotheses: Vec<Hypothesis>) -> Result<Self> {
        let issues: Vec<ValidationIssue> = hypotheses
            .iter()
            .enumerate()
            .flat_map(|(i, h)| h.validate(&format!("hypotheses[{i}]")))
            .collect();
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        Ok(HypothesisStore { hypotheses })
    }

    pub fn from_document(doc: HypothesisDocument) -> Result<Self> {
        HypothesisStore::new(doc.hypotheses)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        HypothesisStore::from_document(parse_document(text, origin)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        HypothesisStore::from_document(read_document(path)?)
    }

    pub fn to_document(&self) -> HypothesisDocument {
        HypothesisDocument {
            schema_version: SCHEMA_VERSION,
            hypotheses: self.hypotheses.clone(),
        }
    }

    pub fn all(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    /// Hypotheses for any of `knobs` that mention a flagged function, largest
    /// overlap first; ties keep document order.
    pub fn retrieve_hypotheses<K: AsRef<str>, F: AsRef<str>>(&self, knobs: &[K], functions: &[F]) -> Vec<&Hypothesis> {
        let mut hits: Vec<(usize, &Hypothesis)> = self
            .hypotheses
            .iter()
            .filter(|h| knobs.iter().any(|k| k.as_ref() == h.knob))
            .map(|h| {
                let overlap = functions.iter().filter(|f| h.functions.contains(f.as_ref())).count();
                (overlap, h)
            })
            .filter(|(n, _)| *n > 0)
            .collect();
        hits.sort_by_key(|h| std::cmp::Reverse(h.0));
        hits.into_iter().map(|(_, h)| h).collect()
    }
}

/// Direction of the first trigger whose function shows the expected signal.
pub fn triggered_direction(h: &Hypothesis, signals: &BTreeMap<String, Signal>) -> Option<Shift> {
    h.triggers
        .iter()
        .find(|t| signals.get(&t.function) == Some(&t.signal))
        .map(|t| t.direction)
}

/// What the advisor is told about the task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub hardware: Hardware,
    pub workload: BTreeMap<String, PredicateValue>,
    pub bottlenecks: Vec<Flagged>,
    pub selected_knobs: Vec<String>,
    pub current: Configuration,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
}

fn truncate_chars(s: &str, limit: usize) -> String {
    match s.char_indices().nth(limit) {
        Some((cut, _)) => format!("{}...", &s[..cut]),
        None => s.to_string(),
    }
}

/// Renders the three prompt sections: instruction, task information, and
/// hypotheses with rules. Deterministic for identical inputs.
pub fn build_prompt(task: &TaskInfo, hypotheses: &[&Hypothesis], rules: &[&TuningRule]) -> Prompt {
    let mut t = String::new();
    t.push_str("## 1. Task instruction\n");
    t.push_str(
        "You are tuning a database system. Exploit verified tuning rules where they apply and \
         explore the tuning hypotheses otherwise. Reply with a JSON object mapping knob names to \
         new values; only the selected knobs may change.\n\n",
    );

    t.push_str("## 2. Task information\n");
    let _ = writeln!(
        t,
        "Hardware: {} bytes memory, {} cores",
        task.hardware.total_memory_bytes, task.hardware.cores
    );
    if task.workload.is_empty() {
        t.push_str("Workload: unspecified\n");
    } else {
        let w: Vec<String> = task.workload.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(t, "Workload: {}", w.join(", "));
    }
    if task.bottlenecks.is_empty() {
        t.push_str("Bottlenecks: none detected\n");
    } else {
        t.push_str("Bottlenecks:\n");
        for b in &task.bottlenecks {
            let signal = match b.signal {
                Signal::HighRate => "high",
                Signal::LowRate => "low",
            };
            let _ = writeln!(t, "- {} (severity {:.4}, {signal} rate)", b.function, b.severity);
        }
    }
    if task.selected_knobs.is_empty() {
        t.push_str("Selected knobs: none\n");
    } else {
        t.push_str("Selected knobs:\n");
        for k in &task.selected_knobs {
            match task.current.get(k) {
                Some(v) => {
                    let _ = writeln!(t, "- {k} (current {v})");
                }
                None => {
                    let _ = writeln!(t, "- {k}");
                }
            }
        }
    }
    t.push('\n');

    t.push_str("## 3. Tuning hypotheses and rules\n");
    if hypotheses.is_empty() {
        t.push_str("Hypotheses: none\n");
    } else {
        t.push_str("Hypotheses:\n");
        for h in hypotheses {
            let triggers: Vec<String> = h
                .triggers
                .iter()
                .map(|tr| {
                    let sig = match tr.signal {
                        Signal::HighRate => "high",
                        Signal::LowRate => "low",
                    };
                    let dir = match tr.direction {
                        Shift::Increase => "increase",
                        Shift::Decrease => "decrease",
                    };
                    format!("{sig} {} -> {dir}", tr.function)
                })
                .collect();
            let _ = writeln!(
                t,
                "- {}: {} [{}]",
                h.knob,
                truncate_chars(&h.causal_link, CAUSAL_LINK_LIMIT),
                triggers.join("; ")
            );
        }
    }
    if rules.is_empty() {
        t.push_str("Rules: no verified rules\n");
    } else {
        t.push_str("Rules:\n");
        for r in rules.iter().take(DEFAULT_TOP_K) {
            let conf = r.confidence().map_or("unverified".to_string(), |c| format!("{c:.4}"));
            let _ = writeln!(
                t,
                "- [{}] {} (confidence {conf}, EI {:.4})",
                r.id,
                r,
                expected_improvement(r)
            );
        }
    }
    Prompt { text: t }
}

/// Everything an advisor may use to propose a configuration change.
#[derive(Clone, Copy)]
pub struct AdviceRequest<'a> {
    pub prompt: &'a Prompt,
    pub context: &'a ContextSnapshot,
    pub current: &'a Configuration,
    pub catalog: &'a KnobCatalog,
    /// Retrieved rules, best first.
    pub rules: &'a [&'a TuningRule],
    pub hypotheses: &'a [&'a Hypothesis],
    pub selected_knobs: &'a [String],
    pub signals: &'a BTreeMap<String, Signal>,
    /// Consecutive non-improving exploration steps per knob and direction.
    pub failures: &'a BTreeMap<(String, Shift), u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdviceKind {
    Exploit,
    Explore,
    Remote,
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreMove {
    pub knob: String,
    pub direction: Shift,
    /// Fraction of the encoded range.
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    pub kind: AdviceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
    /// New values for the knobs that change.
    pub delta: Configuration,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moves: Vec<ExploreMove>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Advice {
    fn empty() -> Self {
        Advice {
            kind: AdviceKind::Empty,
            rule_id: None,
            delta: Configuration::new(),
            moves: vec![],
            notes: vec![],
        }
    }
}

pub trait Advisor: Send + Sync {
    fn name(&self) -> &'static str;
    fn advise(&self, req: &AdviceRequest<'_>) -> Result<Advice>;
}

fn current_value<'a>(spec: &'a KnobSpec, current: &'a Configuration) -> &'a KnobValue {
    current.get(&spec.name).unwrap_or(&spec.default)
}

/// Applies a rule's consequent at the midpoint of every interval.
pub fn apply_rule(rule: &TuningRule, current: &Configuration, catalog: &KnobCatalog, hw: &Hardware) -> Result<Configuration> {
    let mut delta = Configuration::new();
    for adj in &rule.consequent {
        let spec = catalog.get(&adj.knob).ok_or_else(|| Error::UnknownKnob(adj.knob.clone()))?;
        let from = current_value(spec, current);
        let mid = adj.magnitude_interval.midpoint();
        let to = match adj.form {
            AdjustmentForm::Relative => apply_relative(spec, from, adj.direction, mid, hw)?,
            AdjustmentForm::Absolute => decode_value(spec, mid, hw),
        };
        if &to != from {
            delta.insert(adj.knob.clone(), to);
        }
    }
    Ok(delta)
}

/// Moves `knob` by `fraction` of its encoded range in `direction`.
pub fn explore_value(spec: &KnobSpec, from: &KnobValue, direction: Shift, fraction: f64, hw: &Hardware) -> Result<KnobValue> {
    let (lo, hi) = encoded_range(spec, hw);
    let base = encode_value(spec, from, hw)?;
    Ok(decode_value(spec, base + direction.sign() * fraction * (hi - lo), hw))
}

/// Deterministic policy: exploit the best retrieved rule, else explore along
/// triggered hypotheses.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubAdvisor;

impl Advisor for StubAdvisor {
    fn name(&self) -> &'static str {
        "stub"
    }

    fn advise(&self, req: &AdviceRequest<'_>) -> Result<Advice> {
        let hw = &req.context.hardware;
        if let Some(rule) = req.rules.first() {
            let delta = apply_rule(rule, req.current, req.catalog, hw)?;
            return Ok(Advice {
                kind: AdviceKind::Exploit,
                rule_id: Some(rule.id.clone()),
                delta,
                moves: vec![],
                notes: vec![],
            });
        }
        let mut advice = Advice::empty();
        for knob in req.selected_knobs {
            if advice.delta.contains_key(knob) {
                continue;
            }
            let Some(direction) = req
                .hypotheses
                .iter()
                .filter(|h| &h.knob == knob)
                .find_map(|h| triggered_direction(h, req.signals))
            else {
                continue;
            };
            let spec = req.catalog.get(knob).ok_or_else(|| Error::UnknownKnob(knob.clone()))?;
            let fails = req.failures.get(&(knob.clone(), direction)).copied().unwrap_or(0);
            let fraction = EXPLORE_FRACTION * 0.5f64.powi(fails.min(60) as i32);
            let from = current_value(spec, req.current);
            let to = explore_value(spec, from, direction, fraction, hw)?;
            if &to == from {
                advice.notes.push(format!("{knob} already at its domain bound"));
                continue;
            }
            advice.delta.insert(knob.clone(), to);
            advice.moves.push(ExploreMove {
                knob: knob.clone(),
                direction,
                fraction,
            });
        }
        if !advice.delta.is_empty() {
            advice.kind = AdviceKind::Explore;
        }
        Ok(advice)
    }
}

/// The request body sent to a remote advisor.
pub fn remote_request_body(req: &AdviceRequest<'_>) -> serde_json::Value {
    let knobs: Vec<&KnobSpec> = req.selected_knobs.iter().filter_map(|k| req.catalog.get(k)).collect();
    let current: Configuration = req
        .selected_knobs
        .iter()
        .filter_map(|k| req.catalog.get(k).map(|s| (k.clone(), current_value(s, req.current).clone())))
        .collect();
    json!({
        "protocol": PROTOCOL,
        "prompt": req.prompt.text,
        "knobs": knobs,
        "current": current,
        "reply_schema": {
            "type": "object",
            "required": ["configuration"],
            "properties": {
                "configuration": {
                    "type": "object",
                    "additionalProperties": {"type": ["number", "string"]}
                }
            }
        }
    })
}

/// Validates a reply: only selected knobs, values of the right type.
/// Out-of-domain numbers are clamped and reported in the notes.
pub fn parse_remote_reply(reply: &serde_json::Value, req: &AdviceRequest<'_>) -> Result<Advice> {
    let bad = |m: String| Error::Advisor(format!("invalid reply: {m}"));
    let config = reply
        .get("configuration")
        .and_then(|c| c.as_object())
        .ok_or_else(|| bad("missing `configuration` object".into()))?;
    let mut advice = Advice::empty();
    advice.kind = AdviceKind::Remote;
    for (knob, raw) in config {
        if !req.selected_knobs.iter().any(|k| k == knob) {
            return Err(bad(format!("knob `{knob}` was not selected")));
        }
        let spec = req.catalog.get(knob).ok_or_else(|| Error::UnknownKnob(knob.clone()))?;
        let value: KnobValue = serde_json::from_value(raw.clone()).map_err(|_| bad(format!("`{knob}` has a non-scalar value")))?;
        let value = match (&value, spec.is_numeric()) {
            (KnobValue::Number(v), true) if v.is_finite() => {
                let c = spec.clamp_number(*v);
                if c != *v {
                    tracing::warn!(knob = %knob, requested = v, clamped = c, "advisor value clamped to domain");
                    advice.notes.push(format!("{knob}: {v} clamped to {c}"));
                }
                KnobValue::Number(c)
            }
            (KnobValue::Label(l), false) if spec.category_index(l).is_some() => value.clone(),
            _ => return Err(bad(format!("`{knob}` has a value outside its domain type"))),
        };
        if &value != current_value(spec, req.current) {
            advice.delta.insert(knob.clone(), value);
        }
    }
    Ok(advice)
}

/// JSON-over-HTTP advisor. Any transport or validation failure falls back to
/// the stub policy.
pub struct RemoteAdvisor {
    url: String,
    agent: ureq::Agent,
    fallback: StubAdvisor,
}

impl RemoteAdvisor {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        RemoteAdvisor {
            url: url.into(),
            agent,
            fallback: StubAdvisor,
        }
    }

    fn call(&self, req: &AdviceRequest<'_>) -> Result<Advice> {
        let body = remote_request_body(req);
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| Error::Advisor(e.to_string()))?;
        let reply: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Advisor(e.to_string()))?;
        parse_remote_reply(&reply, req)
    }
}

impl Advisor for RemoteAdvisor {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn advise(&self, req: &AdviceRequest<'_>) -> Result<Advice> {
        if req.rules.is_empty() && req.hypotheses.is_empty() {
            return Ok(Advice::empty());
        }
        match self.call(req) {
            Ok(a) => Ok(a),
            Err(e) => {
                tracing::warn!(error = %e, "remote advisor failed, using stub policy");
                let mut a = self.fallback.advise(req)?;
                a.notes.push(format!("remote advisor fallback: {e}"));
                Ok(a)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AdvisorConfig {
    /// Remote endpoint; the environment variable is consulted when unset.
    pub url: Option<String>,
    pub timeout: Option<Duration>,
}

pub fn advisor_registry() -> Registry<dyn Advisor, AdvisorConfig> {
    let mut r: Registry<dyn Advisor, AdvisorConfig> = Registry::new("advisor");
    r.register("stub", |_: &AdvisorConfig| Ok(Box::new(StubAdvisor) as Box<dyn Advisor>));
    r.register("remote", |c: &AdvisorConfig| {
        let url = c
            .url
            .clone()
            .or_else(|| std::env::var(ADVISOR_URL_ENV).ok())
            .ok_or_else(|| Error::invalid(format!("remote advisor needs a URL (set {ADVISOR_URL_ENV})")))?;
        Ok(Box::new(RemoteAdvisor::new(url, c.timeout.unwrap_or(ADVISOR_TIMEOUT))) as Box<dyn Advisor>)
    });
    r
}
