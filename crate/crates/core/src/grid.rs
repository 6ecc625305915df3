//! Uniform time grid and randomized sampling partitions.
//!
//! Every run lives on a fixed-step grid; delays, stage lengths, and sampling
//! gaps are all integer multiples of the step, so times are represented by
//! integer indices wherever exactness matters and converted to `f64` only at
//! evaluation points.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relative slack used when asserting that a duration is a grid multiple.
pub const GRID_TOL: f64 = 1e-6;

/// Fixed-step simulation grid over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    step: f64,
    horizon: f64,
    n_steps: u64,
}

impl TimeGrid {
    pub fn new(step: f64, horizon: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::Config(format!("step must be positive, got {step}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let n = steps_in(horizon, step).ok_or_else(|| {
            Error::Config(format!(
                "horizon {horizon} is not an integer multiple of step {step}"
            ))
        })?;
        Ok(TimeGrid {
            step,
            horizon,
            n_steps: n,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps; the grid has `n_steps() + 1` node times.
    pub fn n_steps(&self) -> u64 {
        self.n_steps
    }

    pub fn time(&self, index: i64) -> f64 {
        index as f64 * self.step
    }

    /// Exact step count for a duration, or an error when it is off-grid.
    pub fn steps_exact(&self, duration: f64, what: &str) -> Result<u64> {
        steps_in(duration, self.step).ok_or_else(|| {
            Error::Config(format!(
                "{what} = {duration} is not an integer multiple of step {}",
                self.step
            ))
        })
    }

    /// Nearest grid multiple of a duration.
    pub fn round(&self, duration: f64) -> f64 {
        (duration / self.step).round() * self.step
    }
}

fn steps_in(duration: f64, step: f64) -> Option<u64> {
    let ratio = duration / step;
    let n = ratio.round();
    if n >= 0.0 && (ratio - n).abs() <= GRID_TOL * n.max(1.0) {
        Some(n as u64)
    } else {
        None
    }
}

/// Strictly increasing sample times starting at zero, stored as grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPartition {
    steps: Vec<u64>,
    grid_step: f64,
    diameter: f64,
}

impl SamplingPartition {
    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|&s| s as f64 * self.grid_step).collect()
    }

    pub fn step_indices(&self) -> &[u64] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Upper bound on the gaps used to generate the partition.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Step of the grid the partition indices refer to.
    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.steps
            .windows(2)
            .map(|w| (w[1] - w[0]) as f64 * self.grid_step)
            .collect()
    }
}

/// Generate a sampling partition with gaps drawn uniformly from the grid
/// multiples inside `[t_min, t_s]`.
///
/// The first sample is always at time zero. Generation stops at the last
/// sample that does not exceed the horizon; identical seeds reproduce the
/// partition exactly.
pub fn make_partition(
    grid: &TimeGrid,
    t_s: f64,
    t_min: f64,
    seed: u64,
) -> Result<SamplingPartition> {
    if !(t_min > 0.0) || t_min > t_s {
        return Err(Error::Config(format!(
            "need 0 < t_min <= t_s, got t_min = {t_min}, t_s = {t_s}"
        )));
    }
    let gap_min = grid.steps_exact(t_min, "t_min")?;
    let gap_max = grid.steps_exact(t_s, "t_s")?;
    if gap_min == 0 {
        return Err(Error::Config(format!(
            "t_min = {t_min} is below the grid step {}",
            grid.step()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = vec![0u64];
    loop {
        let gap = if gap_min == gap_max {
            gap_min
        } else {
            rng.gen_range(gap_min..=gap_max)
        };
        let next = steps.last().unwrap() + gap;
        if next > grid.n_steps() {
            break;
        }
        steps.push(next);
    }
    Ok(SamplingPartition {
        steps,
        grid_step: grid.step(),
        diameter: t_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn grid_rejects_off_grid_horizon() {
        assert!(TimeGrid::new(0.0025, 200.0).is_ok());
        assert!(TimeGrid::new(0.0025, 200.0011).is_err());
        assert!(TimeGrid::new(-0.1, 1.0).is_err());
    }

    #[test]
    fn uniform_partition_covers_unit_horizon_with_twenty_gaps() {
        let grid = TimeGrid::new(0.0025, 1.0).unwrap();
        let p = make_partition(&grid, 0.05, 0.05, 9).unwrap();
        let times = p.times();
        assert_eq!(times.len(), 21);
        assert_relative_eq!(times[0], 0.0);
        assert_relative_eq!(*times.last().unwrap(), 1.0, max_relative = 1e-12);
        for g in p.gaps() {
            assert_relative_eq!(g, 0.05, max_relative = 1e-12);
        }
    }

    #[test]
    fn random_partition_gaps_stay_inside_bounds() {
        let grid = TimeGrid::new(0.0025, 10.0).unwrap();
        let p = make_partition(&grid, 0.05, 0.02, 3).unwrap();
        assert_eq!(p.step_indices()[0], 0);
        for g in p.gaps() {
            assert!(g >= 0.02 - 1e-12 && g <= 0.05 + 1e-12, "gap {g} out of range");
        }
        // Gaps must actually vary for a non-degenerate range.
        let gaps = p.gaps();
        assert!(gaps.iter().any(|g| (g - gaps[0]).abs() > 1e-9));
    }

    #[test]
    fn identical_seeds_reproduce_the_partition() {
        let grid = TimeGrid::new(0.0025, 50.0).unwrap();
        let a = make_partition(&grid, 0.05, 0.02, 7).unwrap();
        let b = make_partition(&grid, 0.05, 0.02, 7).unwrap();
        assert_eq!(a, b);
        let c = make_partition(&grid, 0.05, 0.02, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn partition_rejects_gap_below_grid_step() {
        let grid = TimeGrid::new(0.01, 1.0).unwrap();
        assert!(make_partition(&grid, 0.05, 0.001, 0).is_err());
        assert!(make_partition(&grid, 0.02, 0.05, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_gaps_always_inside_bounds(
            seed in 0u64..500,
            gmin_steps in 1u64..40,
            extra in 0u64..40,
        ) {
            let grid = TimeGrid::new(0.0025, 20.0).unwrap();
            let t_min = gmin_steps as f64 * 0.0025;
            let t_s = (gmin_steps + extra) as f64 * 0.0025;
            let p = make_partition(&grid, t_s, t_min, seed).unwrap();
            prop_assert_eq!(p.step_indices()[0], 0);
            for w in p.step_indices().windows(2) {
                prop_assert!(w[1] > w[0]);
                let gap = w[1] - w[0];
                prop_assert!(gap >= gmin_steps && gap <= gmin_steps + extra);
            }
            if let Some(&last) = p.step_indices().last() {
                prop_assert!(last <= grid.n_steps());
            }
        }
    }
}
