//! Causal testing engine: perturbs a failing test input, runs the nearest
//! perturbations through a harness and reports which minimal changes make
//! the test pass, along with how the execution traces differ.

pub mod candidates;
pub mod error;
pub mod executor;
pub mod harness;
pub mod model;
pub mod protocol;
pub mod report;
pub mod similarity;
pub mod trace;

pub use candidates::{generate_candidates, reuse_suite_candidates, Candidate, Mutator, MutatorCatalog};
pub use error::{Error, Result};
pub use executor::{run_search, SearchControl, SearchResult, StopReason};
pub use harness::{HarnessHandle, Transcript};
pub use model::{validate_spec, ExecutionRecord, InputValue, Outcome, Provenance, SearchConfig, TestSpec};
pub use report::{build_report, render, CausalReport, Format};
pub use similarity::{rank_candidates, test_distance, Distance, RankedCandidate};
pub use trace::{diff_traces, CallEvent, Trace, TraceDiff};

/// Builds the ranked candidate list: comparable suite members first, then
/// fuzzed perturbations, `max_candidates` in total.
pub fn prepare_candidates(
    original: &TestSpec,
    suite: &[TestSpec],
    catalog: &MutatorCatalog,
    config: &SearchConfig,
) -> Result<Vec<RankedCandidate>> {
    let mut reused = reuse_suite_candidates(suite, original);
    reused.truncate(config.max_candidates);
    let keys: Vec<String> = reused.iter().map(|c| c.spec.args_key()).collect();
    let offset = reused.len() as u64;
    let fuzzed = generate_candidates(original, catalog, config)
        .exclude_keys(keys)
        .with_limit(config.max_candidates - reused.len())
        .map(|mut c| {
            c.generation += offset;
            c
        });
    rank_candidates(reused.into_iter().chain(fuzzed), original, config.weights.as_deref())
}

/// Runs the whole pipeline for one failing test and assembles the report.
pub fn causal_test(
    original: TestSpec,
    suite: &[TestSpec],
    catalog: &MutatorCatalog,
    config: &SearchConfig,
    harness: &HarnessHandle,
    control: SearchControl<'_>,
) -> Result<CausalReport> {
    let original = validate_spec(original)?;
    config.validate(original.arity())?;
    catalog.check_covers(&original.args)?;
    let ranked = prepare_candidates(&original, suite, catalog, config)?;
    let result = run_search(&original, &ranked, harness, config, control)?;
    Ok(build_report(&result, config))
}
