//! Event-sets: the index-value pairs selected for transmission in one step.

use crate::error::{Error, Result};
use crate::symmat::SymMatrix;

/// One transmitted element, zero-based indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Upper-triangle half of an event-set (`i <= j`, no duplicates), sorted row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedEventSet {
    n: usize,
    timestep: u32,
    entries: Vec<Event>,
}

impl ReducedEventSet {
    pub fn new(n: usize, timestep: u32, mut entries: Vec<Event>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyMatrix);
        }
        for e in &entries {
            if e.i >= n || e.j >= n {
                return Err(Error::IndexOutOfRange { i: e.i, j: e.j, n });
            }
            if e.i > e.j {
                return Err(Error::Frame(format!(
                    "entry ({}, {}) lies below the diagonal",
                    e.i + 1,
                    e.j + 1
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::NonFinite { i: e.i, j: e.j });
            }
        }
        entries.sort_by_key(|e| (e.i, e.j));
        if let Some(w) = entries.windows(2).find(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j)) {
            return Err(Error::Frame(format!(
                "duplicate entry ({}, {})",
                w[0].i + 1,
                w[0].j + 1
            )));
        }
        Ok(Self {
            n,
            timestep,
            entries,
        })
    }

    pub fn empty(n: usize, timestep: u32) -> Self {
        Self {
            n,
            timestep,
            entries: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn timestep(&self) -> u32 {
        self.timestep
    }

    pub fn with_timestep(mut self, timestep: u32) -> Self {
        self.timestep = timestep;
        self
    }

    pub fn entries(&self) -> &[Event] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn diagonal_count(&self) -> usize {
        self.entries.iter().filter(|e| e.i == e.j).count()
    }

    /// Overwrites the buffer at every listed index (and, implicitly, its transpose).
    pub fn apply(&self, buf: &mut SymMatrix) -> Result<()> {
        if buf.n() != self.n {
            return Err(Error::DimensionMismatch {
                expected: buf.n(),
                found: self.n,
            });
        }
        for e in &self.entries {
            buf.set(e.i, e.j, e.value);
        }
        Ok(())
    }

    /// Symmetric completion.
    pub fn complete(&self) -> EventSet {
        EventSet::from_reduced(self)
    }
}

/// Event-set closed under index transposition.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSet {
    n: usize,
    timestep: u32,
    entries: Vec<Event>,
    values: Vec<Option<f64>>,
}

impl EventSet {
    pub fn from_reduced(r: &ReducedEventSet) -> Self {
        let n = r.n;
        let mut entries = Vec::with_capacity(2 * r.len());
        let mut values = vec![None; n * n];
        for e in &r.entries {
            entries.push(*e);
            values[e.i * n + e.j] = Some(e.value);
            if e.i != e.j {
                entries.push(Event {
                    i: e.j,
                    j: e.i,
                    value: e.value,
                });
                values[e.j * n + e.i] = Some(e.value);
            }
        }
        Self {
            n,
            timestep: r.timestep,
            entries,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn timestep(&self) -> u32 {
        self.timestep
    }

    pub fn entries(&self) -> &[Event] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.values[i * self.n + j].is_some()
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.n + j]
    }

    /// Upper-triangle half.
    pub fn reduce(&self) -> ReducedEventSet {
        let entries = self.entries.iter().copied().filter(|e| e.i <= e.j).collect();
        ReducedEventSet::new(self.n, self.timestep, entries)
            .expect("completion of a valid reduced set")
    }
}
