//! Threshold learning by grid search.
//!
//! For a shared scalar threshold `T`, every sequence of the dataset is run
//! through the channel. The objective adds, per sequence, the mean number of
//! transmitted elements and `lambda` times the mean relative
//! conservativeness, and sums over sequences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{InitialBuffer, Receiver, Transmitter};
use crate::error::{Error, Result};
use crate::metrics::relative_conservativeness;
use crate::symmat::{upper_len, SymMatrix};
use crate::triggers::{TriggerPlan, TriggerSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriggerKind {
    AbsoluteChange,
    RelativeChange,
    /// Absolute change limited to the `N` most changed elements.
    CombinedAbsNMost(usize),
}

impl TriggerKind {
    pub fn spec(self, t: f64) -> TriggerSpec {
        match self {
            TriggerKind::AbsoluteChange => TriggerSpec::absolute(t),
            TriggerKind::RelativeChange => TriggerSpec::relative(t),
            TriggerKind::CombinedAbsNMost(count) => TriggerSpec::absolute_capped(t, count),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LearnConfig<'a> {
    pub lambda: f64,
    pub grid: Vec<f64>,
    pub trigger: TriggerKind,
    pub dataset: &'a [Vec<SymMatrix>],
    pub init: InitialBuffer,
    /// Multiply the conservativeness term by `n(n+1)/2`, matching the
    /// objective written with a sum over the upper triangle.
    pub triangle_sum: bool,
}

impl<'a> LearnConfig<'a> {
    pub fn new(lambda: f64, grid: Vec<f64>, trigger: TriggerKind, dataset: &'a [Vec<SymMatrix>]) -> Self {
        Self {
            lambda,
            grid,
            trigger,
            dataset,
            init: InitialBuffer::Zero,
            triangle_sum: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..f64::INFINITY).contains(&self.lambda) {
            return Err(Error::Parse(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.grid.is_empty() {
            return Err(Error::Parse("threshold grid is empty".into()));
        }
        if !self.grid.iter().all(|&t| t > 0.0 && t.is_finite()) {
            return Err(Error::Parse("grid thresholds must be positive and finite".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parse("threshold grid must be strictly increasing".into()));
        }
        if self.dataset.iter().all(|s| s.is_empty()) {
            return Err(Error::Parse("dataset is empty".into()));
        }
        Ok(())
    }
}

/// Objective value at one threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    /// Sum over sequences of the mean transmitted count.
    pub data_term: f64,
    /// Sum over sequences of the mean relative conservativeness, before `lambda`.
    pub cons_term: f64,
    pub sequences: usize,
}

impl ObjectiveBreakdown {
    pub fn with_lambda(self, lambda: f64) -> Self {
        Self {
            total: self.data_term + lambda * self.cons_term,
            ..self
        }
    }

    /// Objective averaged over sequences.
    pub fn per_sequence(&self) -> f64 {
        self.total / self.sequences as f64
    }
}

fn sequence_terms(seq: &[SymMatrix], plan: &TriggerPlan, init: &InitialBuffer) -> Result<(f64, f64)> {
    let mut tx = Transmitter::new(plan.clone(), init)?;
    let mut rx = Receiver::new(plan.clone(), init)?;
    let (mut sent, mut rc) = (0usize, 0.0);
    for (idx, p) in seq.iter().enumerate() {
        let step = idx + 1;
        let trace = p.trace();
        if trace.is_nan() || trace <= 0.0 {
            return Err(Error::InvalidCovariance { step, trace });
        }
        let frame = tx.step(p)?;
        let reception = rx.step(&frame).map_err(|e| e.context(format!("step {step}")))?;
        sent += frame.len();
        rc += relative_conservativeness(reception.p_hat(), p, step)?;
    }
    let l = seq.len() as f64;
    Ok((sent as f64 / l, rc / l))
}

/// Evaluates the objective with thresholds `t * 1`.
pub fn objective(t: f64, cfg: &LearnConfig<'_>) -> Result<ObjectiveBreakdown> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::Parse(format!("threshold must be positive, got {t}")));
    }
    let seqs: Vec<&Vec<SymMatrix>> = cfg.dataset.iter().filter(|s| !s.is_empty()).collect();
    let n = seqs
        .first()
        .map(|s| s[0].n())
        .ok_or_else(|| Error::Parse("dataset is empty".into()))?;
    let plan = TriggerPlan::new(&cfg.trigger.spec(t), n)?;
    let terms = seqs
        .par_iter()
        .enumerate()
        .map(|(s, seq)| sequence_terms(seq, &plan, &cfg.init).map_err(|e| e.context(format!("sequence {}", s + 1))))
        .collect::<Result<Vec<_>>>()?;
    let data_term: f64 = terms.iter().map(|t| t.0).sum();
    let mut cons_term: f64 = terms.iter().map(|t| t.1).sum();
    if cfg.triangle_sum {
        cons_term *= upper_len(n) as f64;
    }
    Ok(ObjectiveBreakdown {
        total: data_term + cfg.lambda * cons_term,
        data_term,
        cons_term,
        sequences: terms.len(),
    })
}

/// Objective at every grid point, evaluated in parallel.
pub fn evaluate_grid(cfg: &LearnConfig<'_>) -> Result<Vec<(f64, ObjectiveBreakdown)>> {
    cfg.validate()?;
    cfg.grid
        .par_iter()
        .map(|&t| objective(t, cfg).map(|o| (t, o)).map_err(|e| e.context(format!("T = {t:e}"))))
        .collect()
}

/// Grid point with the smallest total at `lambda`; ties go to the smaller threshold.
pub fn argmin(curve: &[(f64, ObjectiveBreakdown)], lambda: f64) -> Option<f64> {
    curve
        .iter()
        .map(|(t, o)| (*t, o.with_lambda(lambda).total))
        .fold(None, |best: Option<(f64, f64)>, (t, v)| match best {
            Some((_, bv)) if bv <= v => best,
            _ => Some((t, v)),
        })
        .map(|(t, _)| t)
}

/// Returns the minimizing threshold and the whole curve.
pub fn grid_search(cfg: &LearnConfig<'_>) -> Result<(f64, Vec<(f64, ObjectiveBreakdown)>)> {
    let curve = evaluate_grid(cfg)?;
    let t_star = argmin(&curve, cfg.lambda).expect("grid is nonempty");
    Ok((t_star, curve))
}

/// `per_decade` logarithmically spaced points from `lo` to `hi`, both included.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || per_decade == 0 {
        return Err(Error::Parse(format!("invalid grid bounds [{lo}, {hi}]")));
    }
    let (a, b) = (lo.log10(), hi.log10());
    let steps = ((b - a) * per_decade as f64).round().max(1.0) as usize;
    Ok((0..=steps)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / steps as f64))
        .collect())
}
