//! Run-level configuration: predictor stage count, measurement error sources,
//! and initial data.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Configuration of the prediction chain and the measurement channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeConfig {
    /// Number of stages the total delay is split into; each stage predicts
    /// one sub-interval of length `(r + tau) / stages`.
    pub stages: usize,
    /// Additive error applied to sampled measurements.
    #[serde(default)]
    pub error: ErrorSource,
}

impl SchemeConfig {
    pub fn exact(stages: usize) -> Self {
        SchemeConfig {
            stages,
            error: ErrorSource::None,
        }
    }
}

/// Additive measurement error at sampling instants.
#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorSource {
    /// Exact measurements.
    #[default]
    None,
    /// Independent uniform draws in `[-amplitude, amplitude]` per component.
    ///
    /// The draws are `amplitude` times fixed unit draws determined by the
    /// seed and the sample order, so scaling the amplitude scales every
    /// realization linearly — runs with different amplitudes but the same
    /// seed see proportional noise.
    Uniform { amplitude: f64, seed: u64 },
    /// Explicit error vectors, one per sample in order.
    Sequence { values: Vec<Vec<f64>> },
}

impl ErrorSource {
    /// Stateful per-run generator producing the error of each sample in order.
    pub fn generator(&self, dim: usize) -> ErrorGenerator {
        let rng = match self {
            ErrorSource::Uniform { seed, .. } => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        ErrorGenerator {
            source: self.clone(),
            dim,
            rng,
            next_index: 0,
        }
    }

    /// Worst-case amplitude bound, when one is known a priori.
    pub fn amplitude_bound(&self) -> Option<f64> {
        match self {
            ErrorSource::None => Some(0.0),
            ErrorSource::Uniform { amplitude, .. } => Some(amplitude.abs()),
            ErrorSource::Sequence { values } => values
                .iter()
                .flat_map(|v| v.iter())
                .map(|e| e.abs())
                .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e)))),
        }
    }
}

pub struct ErrorGenerator {
    source: ErrorSource,
    dim: usize,
    rng: Option<ChaCha8Rng>,
    next_index: usize,
}

impl ErrorGenerator {
    /// Error vector for the sample with the given index; indices must be
    /// consumed in order so that seeded draws stay aligned with samples.
    pub fn next(&mut self, index: usize) -> Result<Vec<f64>> {
        if index != self.next_index {
            return Err(Error::Config(format!(
                "error generator expects sample {} next, got {index}",
                self.next_index
            )));
        }
        self.next_index += 1;
        match &self.source {
            ErrorSource::None => Ok(vec![0.0; self.dim]),
            ErrorSource::Uniform { amplitude, .. } => {
                let rng = self.rng.as_mut().expect("uniform source carries an rng");
                Ok((0..self.dim)
                    .map(|_| amplitude * rng.gen_range(-1.0..1.0))
                    .collect())
            }
            ErrorSource::Sequence { values } => {
                let e = values.get(index).ok_or_else(|| {
                    Error::InsufficientData(format!(
                        "error sequence has {} entries, sample {index} requested",
                        values.len()
                    ))
                })?;
                if e.len() != self.dim {
                    return Err(Error::Shape(format!(
                        "error entry {index} has dimension {}, expected {}",
                        e.len(),
                        self.dim
                    )));
                }
                Ok(e.clone())
            }
        }
    }
}

/// Initial data of a closed-loop run.
///
/// The plant state is held constant at `x0` over the measurement history
/// window `[-r, 0]`, and the applied input is zero before time zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialConditions {
    /// Plant state at time zero (the full plant, including any extra
    /// channels when an input transformation is active).
    pub x0: Vec<f64>,
    /// Observer state at time zero.
    pub z0: Vec<f64>,
    /// Initial anticipating-channel value for transformed runs.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
}

impl InitialConditions {
    pub fn new(x0: Vec<f64>, z0: Vec<f64>) -> Self {
        InitialConditions {
            x0,
            z0,
            theta0: None,
        }
    }

    pub fn with_theta(mut self, theta0: Vec<f64>) -> Self {
        self.theta0 = Some(theta0);
        self
    }
}
