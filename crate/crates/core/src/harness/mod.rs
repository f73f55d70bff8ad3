//! Scenario files, the built-in catalog and run orchestration.

mod catalog;
mod run;
mod scenario;

pub use catalog::{catalog, catalog_entry, catalog_scenario, CatalogEntry, MANIFEST};
pub use run::{
    analyze_sample, check_scenario, read_ensemble_csv, rho_sequence, run_check, run_scenario,
    write_ensemble_csv, write_trajectory_csv, RunOptions, RunSummary, Timing, TrajectorySummary,
};
pub use scenario::{
    load_scenario, parse_scenario, Analysis, Check, EnsembleDecl, FunctionDecl, GeneratorExpr, KsReference,
    ModelDecl, Op, Outputs, Overrides, Predicate, PredicateResult, RatesExpr, ResponseDecl, Scenario,
    WeightsExpr, KNOWN_GENERATORS, SCHEMA_VERSION,
};

/// JSON Schema (draft 2020-12) for `summary.json`.
pub const SUMMARY_SCHEMA: &str = include_str!("../../schemas/summary.schema.json");
