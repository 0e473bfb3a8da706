//! Scale-invariant encoding of knob values and adjustments.
//!
//! Memory knobs are expressed as a fraction of total memory, log-scale knobs
//! by their natural log, linear knobs by min-max normalization, and
//! categorical knobs by category index. A relative adjustment is the
//! difference of encoded values, so it carries over between machines of
//! different sizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AdjustDirection, Hardware, KnobKind, KnobSpec, KnobValue, Scale};

/// Direction and (positive) magnitude of a change in encoded space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeChange {
    pub direction: AdjustDirection,
    pub magnitude: f64,
}

/// Both encodings of one knob change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedChange {
    pub knob: String,
    /// `None` for categorical knobs, which only have an absolute form.
    pub relative: Option<RelativeChange>,
    /// Target value in encoded space.
    pub absolute: f64,
}

fn check(spec: &KnobSpec, value: &KnobValue) -> Result<()> {
    spec.check_value(value)
        .map_err(|m| Error::invalid(format!("{}: {m} ({value})", spec.name)))
}

fn encode_number(spec: &KnobSpec, v: f64, hw: &Hardware) -> f64 {
    match spec.scale {
        Scale::MemoryFraction => v / hw.total_memory_bytes as f64,
        Scale::Log => v.ln(),
        Scale::Linear => {
            let width = spec.max - spec.min;
            if width > 0.0 {
                (v - spec.min) / width
            } else {
                0.0
            }
        }
    }
}

fn decode_number(spec: &KnobSpec, e: f64, hw: &Hardware) -> f64 {
    match spec.scale {
        Scale::MemoryFraction => e * hw.total_memory_bytes as f64,
        Scale::Log => e.exp(),
        Scale::Linear => spec.min + e * (spec.max - spec.min),
    }
}

/// Absolute encoding of a value in the knob's domain.
pub fn encode_value(spec: &KnobSpec, value: &KnobValue, hw: &Hardware) -> Result<f64> {
    check(spec, value)?;
    Ok(match value {
        KnobValue::Number(v) => encode_number(spec, *v, hw),
        KnobValue::Label(l) => spec.category_index(l).expect("checked above") as f64,
    })
}

/// Inverse of [`encode_value`], projected onto the domain.
pub fn decode_value(spec: &KnobSpec, encoded: f64, hw: &Hardware) -> KnobValue {
    if spec.kind == KnobKind::Categorical {
        let last = spec.categories.len().saturating_sub(1) as f64;
        let idx = encoded.round().clamp(0.0, last) as usize;
        return KnobValue::Label(spec.categories[idx].clone());
    }
    KnobValue::Number(spec.clamp_number(decode_number(spec, encoded, hw)))
}

/// The domain bounds in encoded space.
pub fn encoded_range(spec: &KnobSpec, hw: &Hardware) -> (f64, f64) {
    if spec.kind == KnobKind::Categorical {
        return (0.0, spec.categories.len().saturating_sub(1) as f64);
    }
    (
        encode_number(spec, spec.min, hw),
        encode_number(spec, spec.max, hw),
    )
}

/// Relative form only; categorical knobs have none.
pub fn encode_relative(
    spec: &KnobSpec,
    from: &KnobValue,
    to: &KnobValue,
    hw: &Hardware,
) -> Result<RelativeChange> {
    if !spec.is_numeric() {
        return Err(Error::invalid(format!(
            "{}: categorical knobs only support absolute adjustments",
            spec.name
        )));
    }
    if from == to {
        return Err(Error::invalid(format!("{}: no-op adjustment", spec.name)));
    }
    let delta = encode_value(spec, to, hw)? - encode_value(spec, from, hw)?;
    Ok(RelativeChange {
        direction: if delta >= 0.0 {
            AdjustDirection::Increase
        } else {
            AdjustDirection::Decrease
        },
        magnitude: delta.abs(),
    })
}

pub fn encode_adjustment(
    spec: &KnobSpec,
    from: &KnobValue,
    to: &KnobValue,
    hw: &Hardware,
) -> Result<EncodedChange> {
    if from == to {
        return Err(Error::invalid(format!("{}: no-op adjustment", spec.name)));
    }
    let absolute = encode_value(spec, to, hw)?;
    let relative = if spec.is_numeric() {
        Some(encode_relative(spec, from, to, hw)?)
    } else {
        check(spec, from)?;
        None
    };
    Ok(EncodedChange {
        knob: spec.name.clone(),
        relative,
        absolute,
    })
}

/// Moves `from` by `magnitude` in encoded space and decodes the result.
pub fn apply_relative(
    spec: &KnobSpec,
    from: &KnobValue,
    direction: AdjustDirection,
    magnitude: f64,
    hw: &Hardware,
) -> Result<KnobValue> {
    let base = encode_value(spec, from, hw)?;
    let signed = match direction {
        AdjustDirection::Increase => magnitude,
        AdjustDirection::Decrease => -magnitude,
        AdjustDirection::Set => {
            return Err(Error::invalid("relative adjustment cannot use direction set"))
        }
    };
    Ok(decode_value(spec, base + signed, hw))
}
