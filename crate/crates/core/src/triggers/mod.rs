//! Trigger specifications, the transmitter-side send decision, and the
//! receiver-side elementwise bounds on the buffer error of unsent elements.
//!
//! A [`TriggerSpec`] is a declarative tree. Binding it to a matrix dimension
//! yields a [`TriggerPlan`]: subsets are resolved into explicit scopes and the
//! whole upper triangle is checked to be governed exactly once at the top
//! level. Inside a `Combined` node the children overlap on purpose; an element
//! is sent only if every child that governs it fires.
//!
//! Bounds per governed, unsent element `(i, j)`:
//!
//! | trigger | bound |
//! |---|---|
//! | absolute change | `T[i][j]` |
//! | relative change | `T[i][j] * |buf_k[i][j]|` |
//! | N most changed, absolute | smallest `|buf_k - buf_prev|` among sent elements in scope |
//! | N most changed, relative | `|buf_k[i][j]|` times the smallest relative change among sent elements |
//! | combined | max of the children's bounds |
//! | absolute change + absolute N most | N-most rule if the budget was exhausted, otherwise the threshold |
//!
//! Sent elements always get a zero bound.

mod config;

pub use config::{PlanDocument, SpecDocument};

use crate::error::{Error, Result};
use crate::events::{Event, EventSet, ReducedEventSet};
use crate::symmat::SymMatrix;

/// Which change measure an N-most-changed trigger ranks by.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Deviation {
    Absolute,
    Relative,
}

/// Threshold matrix, either `T * 1` or given explicitly.
#[derive(Clone, Debug, PartialEq)]
pub enum Thresholds {
    Uniform(f64),
    Matrix(SymMatrix),
}

impl Thresholds {
    fn bind(&self, n: usize) -> Result<SymMatrix> {
        let t = match self {
            Thresholds::Uniform(t) => {
                if !t.is_finite() {
                    return Err(Error::InvalidSpec(format!("threshold {t} is not finite")));
                }
                SymMatrix::filled(n, *t)
            }
            Thresholds::Matrix(m) => {
                if m.n() != n {
                    return Err(Error::InvalidSpec(format!(
                        "threshold matrix has dimension {}, expected {n}",
                        m.n()
                    )));
                }
                m.clone()
            }
        };
        if let Some((i, j, v)) = t.iter_upper().find(|(_, _, v)| *v < 0.0) {
            return Err(Error::InvalidSpec(format!(
                "negative threshold {v} at ({}, {})",
                i + 1,
                j + 1
            )));
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TriggerSpec {
    AbsoluteChange(Thresholds),
    RelativeChange(Thresholds),
    NMostChanged { count: usize, deviation: Deviation },
    AlwaysSend,
    /// Restricts `inner` to the given index pairs. Pairs are zero-based and
    /// unordered: `(i, j)` and `(j, i)` name the same element.
    Subset {
        indices: Vec<(usize, usize)>,
        inner: Box<TriggerSpec>,
    },
    Combined(Vec<TriggerSpec>),
}

impl TriggerSpec {
    pub fn absolute(t: f64) -> Self {
        TriggerSpec::AbsoluteChange(Thresholds::Uniform(t))
    }

    pub fn relative(t: f64) -> Self {
        TriggerSpec::RelativeChange(Thresholds::Uniform(t))
    }

    pub fn n_most(count: usize, deviation: Deviation) -> Self {
        TriggerSpec::NMostChanged { count, deviation }
    }

    pub fn subset(indices: Vec<(usize, usize)>, inner: TriggerSpec) -> Self {
        TriggerSpec::Subset {
            indices,
            inner: Box::new(inner),
        }
    }

    /// Absolute change with `T * 1`, capped at the `count` largest deviations.
    pub fn absolute_capped(t: f64, count: usize) -> Self {
        TriggerSpec::Combined(vec![
            Self::absolute(t),
            Self::n_most(count, Deviation::Absolute),
        ])
    }
}

/// How `Combined` nodes derive their bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CombinePolicy {
    /// Use the sharper budget-aware rule for absolute change + absolute N most.
    #[default]
    Sharpened,
    /// Always take the elementwise max over children.
    Generic,
}

#[derive(Clone, Debug)]
struct Scope {
    /// Upper-triangle pairs `(i, j)`, `i <= j`, row-major order.
    pairs: Vec<(usize, usize)>,
}

impl Scope {
    fn full(n: usize) -> Self {
        let pairs: Vec<_> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        Self { pairs }
    }

    fn intersect(&self, n: usize, indices: &[(usize, usize)]) -> Result<Self> {
        let mut wanted = vec![false; n * n];
        for &(a, b) in indices {
            if a >= n || b >= n {
                return Err(Error::InvalidSpec(format!(
                    "subset index ({}, {}) out of range for dimension {n}",
                    a + 1,
                    b + 1
                )));
            }
            let (i, j) = if a <= b { (a, b) } else { (b, a) };
            wanted[i * n + j] = true;
        }
        let pairs = self
            .pairs
            .iter()
            .copied()
            .filter(|&(i, j)| wanted[i * n + j])
            .collect();
        Ok(Self { pairs })
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Absolute(SymMatrix),
    Relative(SymMatrix),
    NMost { count: usize, deviation: Deviation },
    Always,
    Combined {
        children: Vec<Node>,
        /// `(absolute child, n-most child)` when the sharpened rule applies.
        sharpened: Option<(usize, usize)>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    kind: Kind,
    scope: Scope,
}

/// Relative change `|p - b| / |b|`, with `0/0 = 0` and `x/0 = inf` for `x != 0`.
#[inline]
pub fn relative_deviation(current: f64, previous: f64) -> f64 {
    let d = (current - previous).abs();
    if previous == 0.0 {
        if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        d / previous.abs()
    }
}

// Covers the two roundings in the relative N-most bound `|b| * min(|d| / |b|)`.
const RELATIVE_ROUNDING_MARGIN: f64 = 1.0 + 4.0 * f64::EPSILON;

impl Node {
    fn compile(spec: &TriggerSpec, scope: Scope, n: usize) -> Result<Node> {
        if scope.pairs.is_empty() {
            return Err(Error::InvalidSpec("a trigger governs no elements".into()));
        }
        let kind = match spec {
            TriggerSpec::AbsoluteChange(t) => Kind::Absolute(t.bind(n)?),
            TriggerSpec::RelativeChange(t) => Kind::Relative(t.bind(n)?),
            TriggerSpec::NMostChanged { count, deviation } => {
                if *count == 0 {
                    return Err(Error::InvalidSpec("N-most-changed needs N >= 1".into()));
                }
                Kind::NMost {
                    count: *count,
                    deviation: *deviation,
                }
            }
            TriggerSpec::AlwaysSend => Kind::Always,
            TriggerSpec::Subset { indices, inner } => {
                let narrowed = scope.intersect(n, indices)?;
                return Node::compile(inner, narrowed, n);
            }
            TriggerSpec::Combined(specs) => {
                if specs.len() < 2 {
                    return Err(Error::InvalidSpec(
                        "a combined trigger needs at least two children".into(),
                    ));
                }
                let children = specs
                    .iter()
                    .map(|s| Node::compile(s, scope.clone(), n))
                    .collect::<Result<Vec<_>>>()?;
                let mut covered = vec![0usize; n * n];
                let mut n_most = vec![0usize; n * n];
                for c in &children {
                    for &(i, j) in &c.scope.pairs {
                        covered[i * n + j] += 1;
                    }
                    c.count_n_most(n, &mut n_most);
                }
                for &(i, j) in &scope.pairs {
                    if covered[i * n + j] == 0 {
                        return Err(Error::InvalidSpec(format!(
                            "element ({}, {}) is not governed by any child of a combined trigger",
                            i + 1,
                            j + 1
                        )));
                    }
                    if n_most[i * n + j] > 1 {
                        return Err(Error::InvalidSpec(format!(
                            "element ({}, {}) is governed by more than one N-most-changed trigger",
                            i + 1,
                            j + 1
                        )));
                    }
                }
                let sharpened = sharpened_pair(&children, &scope);
                Kind::Combined {
                    children,
                    sharpened,
                }
            }
        };
        Ok(Node { kind, scope })
    }

    fn count_n_most(&self, n: usize, counts: &mut [usize]) {
        match &self.kind {
            Kind::NMost { .. } => {
                for &(i, j) in &self.scope.pairs {
                    counts[i * n + j] += 1;
                }
            }
            Kind::Combined { children, .. } => {
                for c in children {
                    c.count_n_most(n, counts);
                }
            }
            _ => {}
        }
    }

    /// Fills `fires[i * n + j]` for every pair in scope.
    fn fire(&self, n: usize, p: &SymMatrix, prev: &SymMatrix, fires: &mut [bool]) {
        match &self.kind {
            Kind::Absolute(t) => {
                for &(i, j) in &self.scope.pairs {
                    fires[i * n + j] = (p.get(i, j) - prev.get(i, j)).abs() > t.get(i, j);
                }
            }
            Kind::Relative(t) => {
                for &(i, j) in &self.scope.pairs {
                    let b = prev.get(i, j);
                    fires[i * n + j] = (p.get(i, j) - b).abs() > t.get(i, j) * b.abs();
                }
            }
            Kind::NMost { count, deviation } => {
                let mut ranked: Vec<(f64, (usize, usize))> = self
                    .scope
                    .pairs
                    .iter()
                    .map(|&(i, j)| {
                        let d = match deviation {
                            Deviation::Absolute => (p.get(i, j) - prev.get(i, j)).abs(),
                            Deviation::Relative => relative_deviation(p.get(i, j), prev.get(i, j)),
                        };
                        (d, (i, j))
                    })
                    .collect();
                // Stable: equal deviations keep row-major order, so the
                // lexicographically smaller index wins a tie.
                ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
                for (rank, &(_, (i, j))) in ranked.iter().enumerate() {
                    fires[i * n + j] = rank < *count;
                }
            }
            Kind::Always => {
                for &(i, j) in &self.scope.pairs {
                    fires[i * n + j] = true;
                }
            }
            Kind::Combined { children, .. } => {
                for &(i, j) in &self.scope.pairs {
                    fires[i * n + j] = true;
                }
                let mut child_fires = vec![false; n * n];
                for c in children {
                    c.fire(n, p, prev, &mut child_fires);
                    for &(i, j) in &c.scope.pairs {
                        fires[i * n + j] &= child_fires[i * n + j];
                    }
                }
            }
        }
    }

    /// Fills `out[i * n + j]` with the bound for every pair in scope.
    fn bound(
        &self,
        n: usize,
        buf: &SymMatrix,
        prev: &SymMatrix,
        sent: &EventSet,
        policy: CombinePolicy,
        out: &mut [f64],
    ) -> Result<()> {
        match &self.kind {
            Kind::Absolute(t) => {
                for &(i, j) in &self.scope.pairs {
                    out[i * n + j] = if sent.contains(i, j) { 0.0 } else { t.get(i, j) };
                }
            }
            Kind::Relative(t) => {
                for &(i, j) in &self.scope.pairs {
                    out[i * n + j] = if sent.contains(i, j) {
                        0.0
                    } else {
                        t.get(i, j) * buf.get(i, j).abs()
                    };
                }
            }
            Kind::NMost { deviation, .. } => {
                let (sent_pairs, unsent): (Vec<_>, Vec<_>) = self
                    .scope
                    .pairs
                    .iter()
                    .copied()
                    .partition(|&(i, j)| sent.contains(i, j));
                for &(i, j) in &sent_pairs {
                    out[i * n + j] = 0.0;
                }
                let Some(&(ui, uj)) = unsent.first() else {
                    return Ok(());
                };
                let min_change = |f: &dyn Fn(usize, usize) -> f64| {
                    sent_pairs
                        .iter()
                        .map(|&(i, j)| f(i, j))
                        .fold(f64::INFINITY, f64::min)
                };
                match deviation {
                    Deviation::Absolute => {
                        let m = min_change(&|i, j| (buf.get(i, j) - prev.get(i, j)).abs());
                        if !m.is_finite() {
                            return Err(Error::Unbounded {
                                i: ui,
                                j: uj,
                                reason: "no element of the N-most-changed scope was sent",
                            });
                        }
                        for &(i, j) in &unsent {
                            out[i * n + j] = m;
                        }
                    }
                    Deviation::Relative => {
                        let m = min_change(&|i, j| relative_deviation(buf.get(i, j), prev.get(i, j)));
                        if !m.is_finite() {
                            return Err(Error::Unbounded {
                                i: ui,
                                j: uj,
                                reason: "every sent element changed from a zero buffer value",
                            });
                        }
                        for &(i, j) in &unsent {
                            out[i * n + j] = buf.get(i, j).abs() * m * RELATIVE_ROUNDING_MARGIN;
                        }
                    }
                }
            }
            Kind::Always => {
                for &(i, j) in &self.scope.pairs {
                    out[i * n + j] = 0.0;
                }
            }
            Kind::Combined {
                children,
                sharpened,
            } => {
                if let (Some((abs_idx, nmost_idx)), CombinePolicy::Sharpened) = (sharpened, policy) {
                    return self.sharpened_bound(n, buf, prev, sent, *abs_idx, *nmost_idx, out);
                }
                for &(i, j) in &self.scope.pairs {
                    out[i * n + j] = 0.0;
                }
                let mut child_out = vec![0.0; n * n];
                for c in children {
                    c.bound(n, buf, prev, sent, policy, &mut child_out)?;
                    for &(i, j) in &c.scope.pairs {
                        if !sent.contains(i, j) {
                            let k = i * n + j;
                            out[k] = out[k].max(child_out[k]);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Budget-aware bound for absolute change combined with absolute N most.
    #[allow(clippy::too_many_arguments)]
    fn sharpened_bound(
        &self,
        n: usize,
        buf: &SymMatrix,
        prev: &SymMatrix,
        sent: &EventSet,
        abs_idx: usize,
        nmost_idx: usize,
        out: &mut [f64],
    ) -> Result<()> {
        let Kind::Combined { children, .. } = &self.kind else {
            unreachable!()
        };
        let (Kind::Absolute(t), Kind::NMost { count, .. }) =
            (&children[abs_idx].kind, &children[nmost_idx].kind)
        else {
            unreachable!()
        };
        let budget = (*count).min(self.scope.pairs.len());
        let sent_pairs: Vec<_> = self
            .scope
            .pairs
            .iter()
            .copied()
            .filter(|&(i, j)| sent.contains(i, j))
            .collect();
        let unsent_bound = if sent_pairs.len() == budget {
            sent_pairs
                .iter()
                .map(|&(i, j)| (buf.get(i, j) - prev.get(i, j)).abs())
                .fold(f64::INFINITY, f64::min)
        } else {
            // With a uniform threshold this is T itself. Under a non-uniform
            // one an unsent element may have been outranked by an element that
            // then failed its own threshold, so the largest threshold applies.
            self.scope
                .pairs
                .iter()
                .map(|&(i, j)| t.get(i, j))
                .fold(0.0, f64::max)
        };
        for &(i, j) in &self.scope.pairs {
            out[i * n + j] = if sent.contains(i, j) { 0.0 } else { unsent_bound };
        }
        Ok(())
    }
}

fn sharpened_pair(children: &[Node], scope: &Scope) -> Option<(usize, usize)> {
    if children.len() != 2 || children.iter().any(|c| c.scope.pairs != scope.pairs) {
        return None;
    }
    match (&children[0].kind, &children[1].kind) {
        (Kind::Absolute(_), Kind::NMost { deviation: Deviation::Absolute, .. }) => Some((0, 1)),
        (Kind::NMost { deviation: Deviation::Absolute, .. }, Kind::Absolute(_)) => Some((1, 0)),
        _ => None,
    }
}

/// A trigger configuration validated against a matrix dimension.
#[derive(Clone, Debug)]
pub struct TriggerPlan {
    n: usize,
    rules: Vec<Node>,
}

impl TriggerPlan {
    /// One rule governing every element.
    pub fn new(spec: &TriggerSpec, n: usize) -> Result<Self> {
        Self::from_rules(std::slice::from_ref(spec), n)
    }

    /// Top-level rules whose scopes must partition the upper triangle.
    pub fn from_rules(rules: &[TriggerSpec], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyMatrix);
        }
        if rules.is_empty() {
            return Err(Error::InvalidSpec("no trigger rules given".into()));
        }
        let full = Scope::full(n);
        let nodes = rules
            .iter()
            .map(|r| Node::compile(r, full.clone(), n))
            .collect::<Result<Vec<_>>>()?;
        let mut covered = vec![0usize; n * n];
        for node in &nodes {
            for &(i, j) in &node.scope.pairs {
                covered[i * n + j] += 1;
            }
        }
        for &(i, j) in &full.pairs {
            match covered[i * n + j] {
                1 => {}
                0 => {
                    return Err(Error::InvalidSpec(format!(
                        "element ({}, {}) is not governed by any rule",
                        i + 1,
                        j + 1
                    )))
                }
                _ => {
                    return Err(Error::InvalidSpec(format!(
                        "element ({}, {}) is governed by more than one rule",
                        i + 1,
                        j + 1
                    )))
                }
            }
        }
        Ok(Self { n, rules: nodes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn check_dim(&self, m: &SymMatrix) -> Result<()> {
        if m.n() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: m.n(),
            });
        }
        Ok(())
    }

    /// Selects the upper-triangle elements of `p` to transmit, given the
    /// buffer from the previous step. The timestep of the result is 0.
    pub fn decide(&self, p: &SymMatrix, buf_prev: &SymMatrix) -> Result<ReducedEventSet> {
        self.check_dim(p)?;
        self.check_dim(buf_prev)?;
        let n = self.n;
        let mut fires = vec![false; n * n];
        for rule in &self.rules {
            rule.fire(n, p, buf_prev, &mut fires);
        }
        let entries = (0..n)
            .flat_map(|i| (i..n).map(move |j| (i, j)))
            .filter(|&(i, j)| fires[i * n + j])
            .map(|(i, j)| Event {
                i,
                j,
                value: p.get(i, j),
            })
            .collect();
        ReducedEventSet::new(n, 0, entries)
    }

    /// Elementwise bounds on `|P_k - buf_k|`, computable by the receiver.
    pub fn bounds(&self, buf: &SymMatrix, buf_prev: &SymMatrix, events: &EventSet) -> Result<SymMatrix> {
        self.bounds_with(buf, buf_prev, events, CombinePolicy::default())
    }

    pub fn bounds_with(
        &self,
        buf: &SymMatrix,
        buf_prev: &SymMatrix,
        events: &EventSet,
        policy: CombinePolicy,
    ) -> Result<SymMatrix> {
        self.check_dim(buf)?;
        self.check_dim(buf_prev)?;
        if events.n() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: events.n(),
            });
        }
        let n = self.n;
        for (i, j, b) in buf.iter_upper() {
            let consistent = match events.value(i, j) {
                Some(v) => v == b,
                None => b == buf_prev.get(i, j),
            };
            if !consistent {
                return Err(Error::BufferMismatch { i, j });
            }
        }
        let mut out = vec![0.0; n * n];
        for rule in &self.rules {
            rule.bound(n, buf, buf_prev, events, policy, &mut out)?;
        }
        let mut delta = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                delta.set(i, j, out[i * n + j]);
            }
        }
        Ok(delta)
    }
}
