//! End-to-end experiment runs and summary statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, InitialBuffer, Receiver, Transmitter};
use crate::error::{Error, Result};
use crate::symmat::{upper_len, SymMatrix};
use crate::triggers::TriggerPlan;

/// Tolerance below zero accepted for the relative conservativeness.
pub const RC_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// One-based timestep.
    pub k: u32,
    /// Transmitted upper-triangle elements.
    pub sent: usize,
    /// Relative conservativeness `trace(p_hat - p) / trace(p)`.
    pub rc: f64,
    /// Wire bytes of the frame.
    pub bytes: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Also require `p_hat - p` to be positive semidefinite at every step.
    pub check_psd: bool,
}

/// `trace(p_hat - p) / trace(p)`; errors on a non-positive trace.
pub fn relative_conservativeness(p_hat: &SymMatrix, p: &SymMatrix, step: usize) -> Result<f64> {
    let trace = p.trace();
    if trace.is_nan() || trace <= 0.0 {
        return Err(Error::InvalidCovariance { step, trace });
    }
    Ok((p_hat.trace() - trace) / trace)
}

/// Sends one sequence through an encoded channel and records per-step metrics.
///
/// Fails with [`Error::Invariant`] if the two buffers diverge, the relative
/// conservativeness goes negative, or (with `check_psd`) the bound does not
/// dominate the input.
pub fn run_sequence(
    seq: &[SymMatrix],
    plan: &TriggerPlan,
    init: &InitialBuffer,
    opts: RunOptions,
) -> Result<Vec<StepMetrics>> {
    let mut tx = Transmitter::new(plan.clone(), init)?;
    let mut rx = Receiver::new(plan.clone(), init)?;
    seq.iter()
        .enumerate()
        .map(|(idx, p)| {
            let step = idx + 1;
            let at = |e: Error| e.context(format!("step {step}"));
            let frame = tx.step(p).map_err(at)?;
            let bytes = channel::encode(&frame).map_err(at)?;
            let reception = rx.step(&channel::decode(&bytes).map_err(at)?).map_err(at)?;
            if tx.buffer() != rx.buffer() {
                return Err(at(Error::Invariant("buffers diverged".into())));
            }
            let rc = relative_conservativeness(reception.p_hat(), p, step)?;
            if rc < -RC_TOLERANCE {
                return Err(at(Error::Invariant(format!("negative relative conservativeness {rc}"))));
            }
            if opts.check_psd {
                let gap = reception.p_hat().sub(p).map_err(at)?;
                if !gap.is_psd(1e-9) {
                    return Err(at(Error::Invariant(format!(
                        "bound is not conservative, min eigenvalue {}",
                        gap.min_eigenvalue()
                    ))));
                }
            }
            Ok(StepMetrics {
                k: frame.timestep(),
                sent: frame.len(),
                rc,
                bytes: bytes.len(),
            })
        })
        .collect()
}

/// Runs every sequence in parallel; results keep the dataset order.
pub fn run_experiment(
    dataset: &[Vec<SymMatrix>],
    plan: &TriggerPlan,
    init: &InitialBuffer,
    opts: RunOptions,
) -> Result<Vec<Vec<StepMetrics>>> {
    if dataset.is_empty() {
        return Err(Error::Parse("dataset is empty".into()));
    }
    dataset
        .par_iter()
        .enumerate()
        .map(|(s, seq)| {
            run_sequence(seq, plan, init, opts).map_err(|e| e.context(format!("sequence {}", s + 1)))
        })
        .collect()
}

/// `1 - sent_total / (steps * n(n+1)/2)`.
pub fn data_reduction_ratio(sent_total: usize, steps: usize, n: usize) -> f64 {
    assert!(steps >= 1, "at least one step required");
    1.0 - sent_total as f64 / (steps * upper_len(n)) as f64
}

/// Box-plot statistics with type-7 (linear interpolation) quartiles and
/// Tukey whiskers at 1.5 IQR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(Error::Parse("cannot summarize an empty list".into()));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parse(format!("value {k} is not finite")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || sorted.iter().copied().filter(|v| (lo_fence..=hi_fence).contains(v));
    let whisker_low = inside().next().unwrap_or(q1).min(q1);
    let whisker_high = inside().next_back().unwrap_or(q3).max(q3);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|v| !(lo_fence..=hi_fence).contains(v))
        .collect();
    Ok(SummaryStats {
        median,
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers,
    })
}

/// Per-sequence aggregates used in reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub sequence: usize,
    pub steps: usize,
    pub sent_total: usize,
    pub bytes_total: usize,
    pub reduction: f64,
    pub mean_rc: f64,
    pub median_rc: f64,
}

pub fn summarize_sequence(sequence: usize, n: usize, steps: &[StepMetrics]) -> Result<SequenceSummary> {
    let rcs: Vec<f64> = steps.iter().map(|s| s.rc).collect();
    let stats = summarize(&rcs).map_err(|e| e.context(format!("sequence {sequence}")))?;
    let sent_total = steps.iter().map(|s| s.sent).sum();
    Ok(SequenceSummary {
        sequence,
        steps: steps.len(),
        sent_total,
        bytes_total: steps.iter().map(|s| s.bytes).sum(),
        reduction: data_reduction_ratio(sent_total, steps.len(), n),
        mean_rc: rcs.iter().sum::<f64>() / rcs.len() as f64,
        median_rc: stats.median,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ekfgen::{generate_dataset, synth_trajectories, VehicleModel};
    use crate::triggers::{Deviation, TriggerSpec};

    fn plan(spec: TriggerSpec) -> TriggerPlan {
        TriggerPlan::new(&spec, 5).unwrap()
    }

    fn dataset(count: usize, len: usize) -> Vec<Vec<SymMatrix>> {
        generate_dataset(&synth_trajectories(count, len, 5), &VehicleModel::default(), 5).unwrap()
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert_eq!((s.whisker_low, s.whisker_high), (1.0, 5.0));
        let c = summarize(&[2.5; 6]).unwrap();
        assert_eq!(c.q3 - c.q1, 0.0);
        assert!(c.outliers.is_empty());
        let one = summarize(&[7.0]).unwrap();
        assert_eq!([one.q1, one.median, one.q3, one.whisker_low, one.whisker_high], [7.0; 5]);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn outliers_lie_beyond_fences() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0, 100.0]).unwrap();
        assert_eq!(s.outliers, vec![100.0]);
        assert_eq!(s.whisker_high, 5.0);
        assert!(s.whisker_high <= s.q3 + 1.5 * (s.q3 - s.q1));
    }

    #[test]
    fn type7_interpolation() {
        // R: quantile(c(1, 2, 4, 8), 0.25) == 1.75
        let s = summarize(&[8.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q3, 5.0);
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(data_reduction_ratio(0, 10, 5), 1.0);
        assert_eq!(data_reduction_ratio(150, 10, 5), 0.0);
        assert_eq!(data_reduction_ratio(3, 2, 2), 0.5);
    }

    #[test]
    fn always_send_is_exact() {
        let data = dataset(3, 60);
        let runs = run_experiment(&data, &plan(TriggerSpec::AlwaysSend), &InitialBuffer::Zero, RunOptions { check_psd: true }).unwrap();
        for steps in runs {
            assert!(steps.iter().all(|s| s.rc == 0.0 && s.sent == 15 && s.bytes == 11 + 150));
        }
    }

    #[test]
    fn rc_matches_trace_identity() {
        let data = dataset(1, 80);
        let plan = TriggerPlan::new(&TriggerSpec::absolute(1e-4), 5).unwrap();
        let steps = run_sequence(&data[0], &plan, &InitialBuffer::Zero, RunOptions::default()).unwrap();
        let mut tx = Transmitter::new(plan.clone(), &InitialBuffer::Zero).unwrap();
        let mut rx = Receiver::new(plan, &InitialBuffer::Zero).unwrap();
        for (p, m) in data[0].iter().zip(&steps) {
            let r = rx.step(&tx.step(p).unwrap()).unwrap();
            let expect = (r.p_hat().trace() - p.trace()) / p.trace();
            assert_eq!(m.rc, expect);
        }
    }

    #[test]
    fn n_most_sends_exactly_n_and_capped_at_most_n() {
        let data = dataset(2, 100);
        let init = InitialBuffer::Zero;
        let opts = RunOptions { check_psd: true };
        for run in run_experiment(&data, &plan(TriggerSpec::n_most(7, Deviation::Absolute)), &init, opts).unwrap() {
            assert!(run.iter().all(|s| s.sent == 7));
        }
        for run in run_experiment(&data, &plan(TriggerSpec::absolute_capped(9e-5, 7)), &init, opts).unwrap() {
            assert!(run.iter().all(|s| s.sent <= 7));
        }
    }

    #[test]
    fn parallel_run_is_deterministic() {
        let data = dataset(6, 50);
        let spec = plan(TriggerSpec::relative(4e-3));
        let a = run_experiment(&data, &spec, &InitialBuffer::Zero, RunOptions::default()).unwrap();
        let b = run_experiment(&data, &spec, &InitialBuffer::Zero, RunOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[3], run_sequence(&data[3], &spec, &InitialBuffer::Zero, RunOptions::default()).unwrap());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(run_experiment(&[], &plan(TriggerSpec::AlwaysSend), &InitialBuffer::Zero, RunOptions::default()).is_err());
    }
}
