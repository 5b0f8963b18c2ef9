//! Nearest-first execution of ranked candidates with early stopping.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Execution, HarnessHandle, HarnessSession};
use crate::model::{ExecutionRecord, Outcome, Provenance, SearchConfig, TestSpec};
use crate::similarity::RankedCandidate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    TargetReached,
    CandidatesExhausted,
    BudgetExpired,
}

impl StopReason {
    pub fn label(self) -> &'static str {
        match self {
            StopReason::TargetReached => "target-reached",
            StopReason::CandidatesExhausted => "candidates-exhausted",
            StopReason::BudgetExpired => "budget-expired",
        }
    }
}

/// One dispatched candidate, in dispatch order.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchEntry {
    pub generation: u64,
    pub distance: f64,
    pub outcome: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub original: ExecutionRecord,
    /// Passing records, nearest first.
    pub passing: Vec<ExecutionRecord>,
    /// Non-passing records strictly nearer than the farthest passing one.
    pub closer_failing: Vec<ExecutionRecord>,
    pub executed_count: usize,
    pub stop_reason: StopReason,
    pub dispatch_log: Vec<DispatchEntry>,
    /// Sum of candidate wall times (the original excluded).
    pub total_execution_ms: u64,
}

/// Cancellation and progress hooks for [`run_search`].
#[derive(Default)]
pub struct SearchControl<'a> {
    pub cancel: Option<Arc<AtomicBool>>,
    pub progress: Option<&'a mut dyn FnMut(&ExecutionRecord)>,
}

impl SearchControl<'_> {
    fn cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(|c| c.load(Ordering::Relaxed))
    }
}

/// Runs one spec on a fresh session and shuts it down.
pub fn execute(spec: &TestSpec, harness: &HarnessHandle, timeout: Duration) -> ExecutionRecord {
    let execution = match harness.connect() {
        Ok(mut session) => {
            let e = session.execute(spec, timeout);
            session.shutdown();
            e
        }
        Err(e) => Execution {
            outcome: Outcome::Crash { message: e.to_string() },
            trace: None,
            wall_time_ms: 0,
            diagnostics: Vec::new(),
        },
    };
    into_record(spec.clone(), execution, 0.0, Provenance::Original, 0)
}

fn into_record(
    spec: TestSpec,
    e: Execution,
    distance: f64,
    provenance: Provenance,
    generation: u64,
) -> ExecutionRecord {
    ExecutionRecord {
        spec,
        outcome: e.outcome,
        trace: e.trace,
        distance_to_original: distance,
        wall_time_ms: e.wall_time_ms,
        provenance,
        generation,
        diagnostics: e.diagnostics,
    }
}

/// Runs a candidate `repeat` times; a pass that ever fails is demoted.
fn run_repeated(session: &mut HarnessSession, spec: &TestSpec, timeout: Duration, repeat: usize) -> Execution {
    let mut first = session.execute(spec, timeout);
    if first.outcome.is_pass() {
        for attempt in 2..=repeat {
            let again = session.execute(spec, timeout);
            first.wall_time_ms += again.wall_time_ms;
            first.diagnostics.extend(again.diagnostics);
            if !again.outcome.is_pass() {
                let detail = again.outcome.message().unwrap_or(again.outcome.label());
                first.outcome = Outcome::Fail {
                    message: format!("flaky: passed once, then {} on attempt {attempt}: {detail}", again.outcome.label()),
                };
                break;
            }
        }
    }
    first
}

struct Job {
    rank: usize,
    spec: TestSpec,
}

/// Executes the original, then candidates in rank order, until
/// `target_passing` passes are settled, candidates run out, or the budget
/// expires.
///
/// With several workers, results are assembled in rank order: the report
/// keeps the rank-order prefix ending at the `target_passing`-th pass, so it
/// does not depend on which worker finished first.
pub fn run_search(
    original: &TestSpec,
    ranked: &[RankedCandidate],
    harness: &HarnessHandle,
    config: &SearchConfig,
    mut control: SearchControl<'_>,
) -> Result<SearchResult> {
    let timeout = Duration::from_millis(config.per_execution_timeout_ms);
    let budget = Duration::from_millis(config.total_budget_ms);
    let workers = config.parallelism.max(1);

    let mut sessions = Vec::with_capacity(workers);
    for _ in 0..workers {
        sessions.push(harness.connect()?);
    }

    let start = Instant::now();
    let original_exec = sessions[0].execute(original, timeout);
    let original_record = into_record(original.clone(), original_exec, 0.0, Provenance::Original, 0);
    if original_record.outcome.is_pass() {
        sessions.into_iter().for_each(HarnessSession::shutdown);
        return Err(Error::OriginalPassed);
    }
    if let Some(progress) = control.progress.as_mut() {
        progress(&original_record);
    }

    let (result_tx, result_rx) = mpsc::channel::<(usize, usize, Execution)>();
    let mut job_txs = Vec::with_capacity(workers);
    let mut handles = Vec::with_capacity(workers);
    for (worker, mut session) in sessions.into_iter().enumerate() {
        let (job_tx, job_rx) = mpsc::channel::<Job>();
        let result_tx = result_tx.clone();
        let repeat = config.repeat.max(1);
        handles.push(thread::spawn(move || {
            for job in job_rx {
                let e = run_repeated(&mut session, &job.spec, timeout, repeat);
                if result_tx.send((worker, job.rank, e)).is_err() {
                    break;
                }
            }
            session.shutdown();
        }));
        job_txs.push(job_tx);
    }
    drop(result_tx);

    let mut results: Vec<Option<ExecutionRecord>> = vec![None; ranked.len()];
    let mut idle: Vec<usize> = (0..workers).rev().collect();
    let mut next = 0usize;
    let mut in_flight = 0usize;
    let mut passes = 0usize;
    let mut executed = 0usize;
    let mut stop: Option<StopReason> = None;
    let mut dispatch_log = Vec::new();
    let mut total_execution_ms = 0u64;

    loop {
        while stop.is_none() && !idle.is_empty() {
            if passes >= config.target_passing {
                stop = Some(StopReason::TargetReached);
            } else if control.cancelled() || start.elapsed() >= budget {
                stop = Some(StopReason::BudgetExpired);
            } else if next >= ranked.len() {
                break;
            } else {
                let worker = idle.pop().expect("idle worker");
                let spec = ranked[next].candidate.spec.clone();
                job_txs[worker].send(Job { rank: next, spec }).expect("worker alive");
                next += 1;
                in_flight += 1;
            }
        }
        if in_flight == 0 {
            break;
        }
        let (worker, rank, e) = result_rx.recv().expect("workers alive while jobs are in flight");
        in_flight -= 1;
        executed += 1;
        idle.push(worker);
        total_execution_ms += e.wall_time_ms;
        let rc = &ranked[rank];
        let record = into_record(
            rc.candidate.spec.clone(),
            e,
            rc.distance.value(),
            rc.candidate.provenance.clone(),
            rc.candidate.generation,
        );
        if record.outcome.is_pass() {
            passes += 1;
        }
        dispatch_log.push(DispatchEntry {
            generation: record.generation,
            distance: record.distance_to_original,
            outcome: record.outcome.label(),
        });
        if let Some(progress) = control.progress.as_mut() {
            progress(&record);
        }
        results[rank] = Some(record);
    }
    drop(job_txs);
    for h in handles {
        let _ = h.join();
    }

    let stop_reason = match stop {
        Some(reason) => reason,
        None if passes >= config.target_passing => StopReason::TargetReached,
        None => StopReason::CandidatesExhausted,
    };

    // Rank-order prefix, cut after the target-th pass.
    let mut passing = Vec::new();
    let mut failing = Vec::new();
    for record in results.into_iter().flatten() {
        if passing.len() >= config.target_passing {
            break;
        }
        if record.outcome.is_pass() {
            passing.push(record);
        } else {
            failing.push(record);
        }
    }
    let closer_failing = match passing.last().map(|r| r.distance_to_original) {
        Some(max_passing) => failing.into_iter().filter(|r| r.distance_to_original < max_passing).collect(),
        None => Vec::new(),
    };

    Ok(SearchResult {
        original: original_record,
        passing,
        closer_failing,
        executed_count: executed,
        stop_reason,
        dispatch_log,
        total_execution_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::Candidate;
    use crate::model::InputValue;
    use crate::protocol::{Response, WireOutcome};
    use crate::similarity::Distance;
    use std::sync::atomic::AtomicUsize;

    fn ranked(values: &[(i64, f64)]) -> Vec<RankedCandidate> {
        values
            .iter()
            .enumerate()
            .map(|(i, &(n, d))| RankedCandidate {
                candidate: Candidate {
                    spec: TestSpec::new(format!("c{i}"), "o", vec![InputValue::Integer(n)]),
                    provenance: Provenance::Fuzzed { mutator: "m".into(), round: 1 },
                    lineage_seed: 0,
                    generation: i as u64 + 1,
                },
                distance: Distance::new(d),
            })
            .collect()
    }

    /// Passes for even integers, fails for odd, crashes for negatives.
    fn parity() -> HarnessHandle {
        HarnessHandle::in_process(|req| {
            let InputValue::Integer(n) = req.args[0] else { unreachable!() };
            let outcome = if n < 0 {
                WireOutcome::Crash
            } else if n % 2 == 0 {
                WireOutcome::Pass
            } else {
                WireOutcome::Fail
            };
            Response::new(req.id, outcome)
        })
    }

    fn original() -> TestSpec {
        TestSpec::new("orig", "o", vec![InputValue::Integer(1)])
    }

    #[test]
    fn stops_at_target() {
        let cands = ranked(&[(3, 0.1), (2, 0.2), (-1, 0.25), (4, 0.3), (6, 0.4), (8, 0.5)]);
        let config = SearchConfig { target_passing: 2, report_k: 2, ..Default::default() };
        let r = run_search(&original(), &cands, &parity(), &config, SearchControl::default()).unwrap();
        assert_eq!(r.stop_reason, StopReason::TargetReached);
        assert_eq!(r.executed_count, 4);
        assert_eq!(r.passing.len(), 2);
        assert_eq!(r.passing[0].spec.args, vec![InputValue::Integer(2)]);
        assert_eq!(r.closer_failing.len(), 2);
        assert_eq!(r.closer_failing[1].outcome.label(), "crash");
    }

    #[test]
    fn empty_buffer_exhausts() {
        let r = run_search(&original(), &[], &parity(), &SearchConfig::default(), SearchControl::default()).unwrap();
        assert_eq!(r.stop_reason, StopReason::CandidatesExhausted);
        assert!(r.passing.is_empty() && r.closer_failing.is_empty());
        assert_eq!(r.executed_count, 0);
    }

    #[test]
    fn original_passing_is_an_error() {
        let passing = TestSpec::new("orig", "o", vec![InputValue::Integer(2)]);
        let err = run_search(&passing, &[], &parity(), &SearchConfig::default(), SearchControl::default());
        assert!(matches!(err, Err(Error::OriginalPassed)));
    }

    #[test]
    fn dead_harness_is_an_error() {
        let h = HarnessHandle::subprocess("/nonexistent/harness", vec![]);
        let err = run_search(&original(), &[], &h, &SearchConfig::default(), SearchControl::default());
        assert!(matches!(err, Err(Error::HarnessDead(_))));
    }

    #[test]
    fn crashes_and_timeouts_never_count_as_passes() {
        let h = HarnessHandle::in_process(|req| {
            let InputValue::Integer(n) = req.args[0] else { unreachable!() };
            if n == 100 {
                thread::sleep(Duration::from_secs(3600));
            }
            Response::new(req.id, if n < 0 { WireOutcome::Crash } else { WireOutcome::Fail })
        });
        let cands = ranked(&[(-1, 0.1), (100, 0.2), (-2, 0.3)]);
        let config = SearchConfig { per_execution_timeout_ms: 50, ..Default::default() };
        let r = run_search(&original(), &cands, &h, &config, SearchControl::default()).unwrap();
        assert!(r.passing.is_empty());
        assert_eq!(r.stop_reason, StopReason::CandidatesExhausted);
        let outcomes: Vec<_> = r.dispatch_log.iter().map(|d| d.outcome).collect();
        assert_eq!(outcomes, vec!["crash", "timeout", "crash"]);
    }

    #[test]
    fn budget_expiry_stops_dispatch() {
        let h = HarnessHandle::in_process(|req| {
            thread::sleep(Duration::from_millis(30));
            Response::new(req.id, WireOutcome::Fail)
        });
        let cands = ranked(&(0..100).map(|i| (2 * i + 1, i as f64 / 100.0)).collect::<Vec<_>>());
        let config = SearchConfig { total_budget_ms: 100, ..Default::default() };
        let r = run_search(&original(), &cands, &h, &config, SearchControl::default()).unwrap();
        assert_eq!(r.stop_reason, StopReason::BudgetExpired);
        assert!(r.executed_count < 100);
    }

    #[test]
    fn cancellation_is_budget_expiry() {
        let cancel = Arc::new(AtomicBool::new(true));
        let cands = ranked(&[(2, 0.1)]);
        let control = SearchControl { cancel: Some(cancel), progress: None };
        let r = run_search(&original(), &cands, &parity(), &SearchConfig::default(), control).unwrap();
        assert_eq!(r.stop_reason, StopReason::BudgetExpired);
        assert_eq!(r.executed_count, 0);
    }

    #[test]
    fn repeat_demotes_flaky_passes() {
        let calls = Arc::new(AtomicUsize::new(0));
        let seen = calls.clone();
        let h = HarnessHandle::in_process(move |req| {
            let InputValue::Integer(n) = req.args[0] else { unreachable!() };
            if n == 1 {
                return Response::new(req.id, WireOutcome::Fail);
            }
            // n == 2 passes only on its first run.
            let k = seen.fetch_add(1, Ordering::SeqCst);
            let outcome = if n == 4 || k == 0 { WireOutcome::Pass } else { WireOutcome::Fail };
            Response::new(req.id, outcome)
        });
        let cands = ranked(&[(2, 0.1), (4, 0.2)]);
        let config = SearchConfig { target_passing: 1, report_k: 1, repeat: 3, ..Default::default() };
        let r = run_search(&original(), &cands, &h, &config, SearchControl::default()).unwrap();
        assert_eq!(r.passing.len(), 1);
        assert_eq!(r.passing[0].spec.args, vec![InputValue::Integer(4)]);
        assert!(r.closer_failing[0].outcome.message().unwrap().starts_with("flaky"));
    }

    #[test]
    fn parallel_assembly_matches_sequential() {
        let values: Vec<(i64, f64)> = (0..60).map(|i| (if i % 7 == 3 { 2 * i } else { 2 * i + 1 }, i as f64 / 60.0)).collect();
        let cands = ranked(&values);
        let seq = SearchConfig { target_passing: 3, ..Default::default() };
        let par = SearchConfig { parallelism: 4, ..seq.clone() };
        let a = run_search(&original(), &cands, &parity(), &seq, SearchControl::default()).unwrap();
        let b = run_search(&original(), &cands, &parity(), &par, SearchControl::default()).unwrap();
        let strip = |rs: &[ExecutionRecord]| rs.iter().map(|r| (r.generation, r.outcome.clone())).collect::<Vec<_>>();
        assert_eq!(strip(&a.passing), strip(&b.passing));
        assert_eq!(strip(&a.closer_failing), strip(&b.closer_failing));
        assert_eq!(a.stop_reason, b.stop_reason);
        assert_eq!(a.passing.len(), 3);
        assert!(b.executed_count >= a.executed_count);
    }

    #[test]
    fn progress_sees_every_execution() {
        let mut seen = 0;
        let mut count = |_: &ExecutionRecord| seen += 1;
        let cands = ranked(&[(3, 0.1), (2, 0.2)]);
        let control = SearchControl { cancel: None, progress: Some(&mut count) };
        run_search(&original(), &cands, &parity(), &SearchConfig::default(), control).unwrap();
        assert_eq!(seen, 3);
    }
}
