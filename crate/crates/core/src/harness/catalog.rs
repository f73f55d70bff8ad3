//! Built-in scenarios, embedded at compile time.

use crate::error::{Error, Result};

use super::scenario::{parse_scenario, Scenario};

/// Markdown table describing every catalog entry.
pub const MANIFEST: &str = include_str!("../../scenarios/MANIFEST.md");

#[derive(Clone, Copy, Debug)]
pub struct CatalogEntry {
    pub id: &'static str,
    pub json: &'static str,
}

macro_rules! entries {
    ($($id:literal),* $(,)?) => {
        &[$(CatalogEntry { id: $id, json: include_str!(concat!("../../scenarios/", $id, ".json")) }),*]
    };
}

const ENTRIES: &[CatalogEntry] = entries![
    "base-3agent",
    "rho-harmonic",
    "rho-exp-nonzero",
    "noisy-decay",
    "gaussian-dist",
    "rademacher-dist",
    "epsilon-oscillator",
    "cauchy-invariant",
    "nonlinear-tanh",
    "signum-periodic",
    "average-consensus",
    "average-clt",
    "average-line",
];

pub fn catalog() -> &'static [CatalogEntry] {
    ENTRIES
}

pub fn catalog_entry(id: &str) -> Result<&'static CatalogEntry> {
    ENTRIES
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| Error::UnknownCatalogId(id.to_string()))
}

pub fn catalog_scenario(id: &str) -> Result<Scenario> {
    parse_scenario(catalog_entry(id)?.json)
}
