//! Grid-aligned signal histories with delayed lookup.
//!
//! Two storage conventions are used by the closed loop:
//!
//! * piecewise-constant: sample `i` is the value held on the half-open cell
//!   `[t_i, t_i + h)`; lookups at a cell boundary return the left limit, so
//!   the value at `k h` is the sample of the cell ending there;
//! * linear: sample `i` is the value at the node `t_i` and lookups
//!   interpolate between adjacent nodes.
//!
//! The stepping code addresses cells directly through [`HistoryBuffer::cell_at`]
//! and [`HistoryBuffer::cells_at`], which name a cell by its left endpoint;
//! the left-limit rule applies only to instantaneous [`HistoryBuffer::lookup`].

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    PiecewiseConstant,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    start_index: i64,
    step: f64,
    dim: usize,
    mode: Interpolation,
    samples: Vec<Vec<f64>>,
}

/// Boundary tolerance measured in grid steps.
const STEP_TOL: f64 = 1e-6;

impl HistoryBuffer {
    pub fn new(start_index: i64, step: f64, dim: usize, mode: Interpolation) -> Self {
        assert!(step > 0.0 && dim > 0);
        HistoryBuffer {
            start_index,
            step,
            dim,
            mode,
            samples: Vec::new(),
        }
    }

    /// Buffer taking ownership of already-collected samples.
    pub fn from_samples(
        start_index: i64,
        step: f64,
        samples: Vec<Vec<f64>>,
        mode: Interpolation,
    ) -> Result<Self> {
        let dim = samples
            .first()
            .map(|v| v.len())
            .ok_or_else(|| Error::Config("history needs at least one sample".into()))?;
        if dim == 0 || samples.iter().any(|v| v.len() != dim) {
            return Err(Error::Shape("inconsistent sample dimensions".into()));
        }
        Ok(HistoryBuffer {
            start_index,
            step,
            dim,
            mode,
            samples,
        })
    }

    /// Buffer pre-filled with `count` copies of `value`.
    pub fn constant(
        start_index: i64,
        step: f64,
        value: &[f64],
        count: usize,
        mode: Interpolation,
    ) -> Self {
        let mut buf = HistoryBuffer::new(start_index, step, value.len(), mode);
        for _ in 0..count {
            buf.samples.push(value.to_vec());
        }
        buf
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mode(&self) -> Interpolation {
        self.mode
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    pub fn start_time(&self) -> f64 {
        self.start_index as f64 * self.step
    }

    /// Sample stored for the grid node with the given index.
    pub fn at_node(&self, node: i64) -> &[f64] {
        let i = node - self.start_index;
        assert!(
            i >= 0 && (i as usize) < self.samples.len(),
            "node {node} outside stored range"
        );
        &self.samples[i as usize]
    }

    /// End of the covered span: one step past the last cell in
    /// piecewise-constant mode, the last node in linear mode.
    pub fn end_time(&self) -> f64 {
        let nodes = self.samples.len() as i64;
        match self.mode {
            Interpolation::PiecewiseConstant => (self.start_index + nodes) as f64 * self.step,
            Interpolation::Linear => (self.start_index + nodes - 1).max(self.start_index) as f64 * self.step,
        }
    }

    pub fn push(&mut self, value: &[f64]) {
        assert_eq!(value.len(), self.dim, "sample dimension mismatch");
        self.samples.push(value.to_vec());
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.samples.last().map(|v| v.as_slice())
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i]
    }

    fn offset_of(&self, t: f64) -> f64 {
        t / self.step - self.start_index as f64
    }

    fn span_error(&self, t: f64) -> Error {
        Error::OutOfSpan {
            requested: t,
            span_start: self.start_time(),
            span_end: self.end_time(),
        }
    }

    /// Value on the cell whose left endpoint is the grid node `t`
    /// (piecewise-constant mode only).
    pub fn cell_at(&self, t: f64) -> Result<&[f64]> {
        debug_assert_eq!(self.mode, Interpolation::PiecewiseConstant);
        let rel = self.offset_of(t);
        let i = rel.round();
        if (rel - i).abs() > STEP_TOL {
            return Err(Error::Config(format!("time {t} is not a grid node")));
        }
        if i < 0.0 || i >= self.samples.len() as f64 {
            return Err(self.span_error(t));
        }
        Ok(&self.samples[i as usize])
    }

    /// Values of `count` consecutive cells starting at the grid node `t`.
    pub fn cells_at(&self, t: f64, count: usize) -> Result<&[Vec<f64>]> {
        debug_assert_eq!(self.mode, Interpolation::PiecewiseConstant);
        let rel = self.offset_of(t);
        let i = rel.round();
        if (rel - i).abs() > STEP_TOL {
            return Err(Error::Config(format!("time {t} is not a grid node")));
        }
        if i < 0.0 || i + count as f64 > self.samples.len() as f64 {
            return Err(self.span_error(t));
        }
        let i = i as usize;
        Ok(&self.samples[i..i + count])
    }

    /// Instantaneous value at `t`.
    ///
    /// Piecewise-constant mode serves `t` in `(start, end]` and resolves grid
    /// boundaries to the left limit; linear mode serves `[start, end]`.
    pub fn lookup(&self, t: f64) -> Result<Vec<f64>> {
        let rel = self.offset_of(t);
        let near = rel.round();
        let on_boundary = (rel - near).abs() <= STEP_TOL;
        match self.mode {
            Interpolation::PiecewiseConstant => {
                let cell = if on_boundary {
                    near as i64 - 1
                } else {
                    rel.floor() as i64
                };
                if cell < 0 || cell >= self.samples.len() as i64 {
                    return Err(self.span_error(t));
                }
                Ok(self.samples[cell as usize].clone())
            }
            Interpolation::Linear => {
                let n = self.samples.len() as i64;
                if on_boundary {
                    let i = near as i64;
                    if i < 0 || i >= n {
                        return Err(self.span_error(t));
                    }
                    return Ok(self.samples[i as usize].clone());
                }
                let i = rel.floor() as i64;
                if i < 0 || i + 1 >= n {
                    return Err(self.span_error(t));
                }
                let w = rel - i as f64;
                let a = &self.samples[i as usize];
                let b = &self.samples[i as usize + 1];
                Ok(a.iter().zip(b).map(|(x, y)| x * (1.0 - w) + y * w).collect())
            }
        }
    }
}
