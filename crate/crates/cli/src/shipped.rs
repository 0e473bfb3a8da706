//! Companion documents for the shipped simulator scenarios, used when a
//! `tune` run names a shipped scenario without its own map, rules or
//! hypotheses.

use knobwise_core::hypothesis::HypothesisStore;
use knobwise_core::io::parse_document;
use knobwise_core::mapping::{FunctionKnobMap, MapDocument};
use knobwise_core::model::KnobCatalog;
use knobwise_core::rulebook::{Rulebook, RulebookDocument};
use knobwise_core::Result;

const BUFFER_MAP: &str = include_str!("../../../fixtures/maps/buffer.json");
const SPIN_MAP: &str = include_str!("../../../fixtures/maps/spin.json");
const COMPOSITE_MAP: &str = include_str!("../../../fixtures/maps/composite.json");
const SEED_RULES: &str = include_str!("../../../fixtures/rules/seed_rules.json");
const HYPOTHESES: &str = include_str!("../../../fixtures/hypotheses.json");

pub fn map(scenario: &str) -> Result<Option<FunctionKnobMap>> {
    let text = match scenario {
        "buffer" => BUFFER_MAP,
        "spin" => SPIN_MAP,
        "composite" => COMPOSITE_MAP,
        _ => return Ok(None),
    };
    let doc: MapDocument = parse_document(text, "shipped map")?;
    FunctionKnobMap::from_document(doc).map(Some)
}

/// Seed rules whose knobs all exist in `catalog`.
pub fn rules(catalog: &KnobCatalog) -> Result<Rulebook> {
    let doc: RulebookDocument = parse_document(SEED_RULES, "shipped rules")?;
    let keep = doc
        .rules
        .into_iter()
        .filter(|r| r.knobs().iter().all(|k| catalog.get(k).is_some()))
        .collect();
    Rulebook::new(keep)
}

/// Hypotheses about knobs in `catalog`.
pub fn hypotheses(catalog: &KnobCatalog) -> Result<HypothesisStore> {
    let all = HypothesisStore::parse(HYPOTHESES, "shipped hypotheses")?;
    HypothesisStore::new(
        all.all()
            .iter()
            .filter(|h| catalog.get(&h.knob).is_some())
            .cloned()
            .collect(),
    )
}
