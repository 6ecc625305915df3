//! Input transformations that reduce a plant with extra integrator-like
//! channels to a smaller core system plus an anticipating channel.
//!
//! The pattern: the full plant splits into a core state and extra components
//! `a1(x)` whose future value can be reconstructed exactly from delayed
//! measurements and the recorded input — typically because those components
//! are driven by the input through a chain the measurement sees directly.
//! An anticipating channel `theta(t)` tracks `a1(x(t + tau))`: it is reset at
//! every sampling instant from the measurement and the logged raw input over
//! the last `r + tau` window, and integrates its reduced dynamics in between.
//! Feeding `theta` back through the input shift `a2` cancels the coupling, so
//! the core system sees dynamics it can handle with its own certificate.
//!
//! The raw plant input is `v(t) = embed(u(t)) + a2(theta(t))`, where `u` is
//! the core input produced by the staged predictor and `embed` places it in
//! the raw input space.

use crate::diff;
use crate::error::{Error, Result};
use crate::integrate::rk4_step;
use crate::system::SystemDefinition;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

type VectorMap = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type ReducedField = Box<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type ExactPredictor = Box<dyn Fn(&[f64], &[Vec<f64>], f64) -> Vec<f64> + Send + Sync>;

pub struct TransformDefinition {
    pub name: String,
    /// Dimension of the anticipated components `a1(x)`.
    pub extra_dim: usize,
    /// Raw-output components forwarded to the core scheme, in core order.
    pub core_output_indices: Vec<usize>,
    /// `a1(x)`: the components of the raw state the channel anticipates.
    partial: VectorMap,
    /// `a2(theta)`: additive input shift cancelling the coupling.
    input_shift: VectorMap,
    /// Reduced dynamics of the channel: `theta' = reduced(theta, embed(u))`.
    reduced: ReducedField,
    /// Reconstruction of `a1(x(t_i + tau))` from the measurement at `t_i` and
    /// the raw-input cells covering `[t_i - r - tau, t_i)`.
    exact_predictor: ExactPredictor,
    /// Placement of the core input into the raw input space.
    embed: VectorMap,
}

impl fmt::Debug for TransformDefinition {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("TransformDefinition")
            .field("name", &self.name)
            .field("extra_dim", &self.extra_dim)
            .field("core_output_indices", &self.core_output_indices)
            .finish()
    }
}

impl TransformDefinition {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        extra_dim: usize,
        core_output_indices: Vec<usize>,
        partial: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        input_shift: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        reduced: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        exact_predictor: impl Fn(&[f64], &[Vec<f64>], f64) -> Vec<f64> + Send + Sync + 'static,
        embed: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        TransformDefinition {
            name: name.into(),
            extra_dim,
            core_output_indices,
            partial: Box::new(partial),
            input_shift: Box::new(input_shift),
            reduced: Box::new(reduced),
            exact_predictor: Box::new(exact_predictor),
            embed: Box::new(embed),
        }
    }
}

/// A raw plant paired with the transformation that reduces it.
pub struct TransformedSystem {
    pub outer: SystemDefinition,
    pub transform: TransformDefinition,
}

impl fmt::Debug for TransformedSystem {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("TransformedSystem")
            .field("outer", &self.outer)
            .field("transform", &self.transform)
            .finish()
    }
}

impl TransformedSystem {
    pub fn new(outer: SystemDefinition, transform: TransformDefinition) -> Result<Self> {
        if transform.extra_dim == 0 || transform.extra_dim >= outer.state_dim {
            return Err(Error::Config(format!(
                "anticipated dimension {} must be positive and below the raw state dimension {}",
                transform.extra_dim, outer.state_dim
            )));
        }
        let zero_x = vec![0.0; outer.state_dim];
        let zero_th = vec![0.0; transform.extra_dim];
        let a1 = (transform.partial)(&zero_x);
        if a1.len() != transform.extra_dim {
            return Err(Error::Shape(format!(
                "anticipated components have dimension {}, declared {}",
                a1.len(),
                transform.extra_dim
            )));
        }
        if a1.iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::Config(
                "anticipated components must vanish at the origin".into(),
            ));
        }
        let a2 = (transform.input_shift)(&zero_th);
        if a2.len() != outer.input_dim {
            return Err(Error::Shape(format!(
                "input shift has dimension {}, raw input dimension is {}",
                a2.len(),
                outer.input_dim
            )));
        }
        if a2.iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::Config("input shift must vanish at theta = 0".into()));
        }
        let red0 = (transform.reduced)(&zero_th, &vec![0.0; outer.input_dim]);
        if red0.len() != transform.extra_dim || red0.iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::Config(
                "reduced channel dynamics must vanish at the origin".into(),
            ));
        }
        Ok(TransformedSystem { outer, transform })
    }

    /// Check the wiring against the core system the scheme runs on:
    /// dimensions, matching delays, and the defining identity that the
    /// reduced dynamics are exactly the raw dynamics of `a1(x)` under the
    /// shifted input.
    pub fn validate_against(&self, core: &SystemDefinition) -> Result<()> {
        let tr = &self.transform;
        if self.outer.state_dim != core.state_dim + tr.extra_dim {
            return Err(Error::Shape(format!(
                "raw state dimension {} != core {} + anticipated {}",
                self.outer.state_dim, core.state_dim, tr.extra_dim
            )));
        }
        if (self.outer.input_delay - core.input_delay).abs() > 1e-12
            || (self.outer.measurement_delay - core.measurement_delay).abs() > 1e-12
        {
            return Err(Error::Config(
                "raw and core systems must share the same delays".into(),
            ));
        }
        if tr.core_output_indices.len() != core.output_dim {
            return Err(Error::Shape(format!(
                "{} forwarded outputs, core expects {}",
                tr.core_output_indices.len(),
                core.output_dim
            )));
        }
        for (i, &idx) in tr.core_output_indices.iter().enumerate() {
            if idx >= self.outer.output_dim {
                return Err(Error::Shape(format!(
                    "forwarded output {i} selects raw component {idx}, but the raw output has {} components",
                    self.outer.output_dim
                )));
            }
        }
        let emb0 = (tr.embed)(&vec![0.0; core.input_dim]);
        if emb0.len() != self.outer.input_dim {
            return Err(Error::Shape(format!(
                "embedded input has dimension {}, raw input dimension is {}",
                emb0.len(),
                self.outer.input_dim
            )));
        }
        if emb0.iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::Config("the input embedding must map 0 to 0".into()));
        }
        // Defining identity, spot-checked: d/dt a1(x) under the raw dynamics
        // with input embed(u) + a2(a1(x)) equals reduced(a1(x), embed(u)).
        let mut rng = ChaCha8Rng::seed_from_u64(0x7a5f);
        for _ in 0..32 {
            let x: Vec<f64> = (0..self.outer.state_dim)
                .map(|_| rng.gen_range(-2.0..2.0))
                .collect();
            let unit: Vec<f64> = (0..core.input_dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            let u_emb = (tr.embed)(&core.input_set.point_from_unit(&unit));
            let theta = (tr.partial)(&x);
            let v = self.compose_raw(&u_emb, &theta);
            let fx = self.outer.f(&x, &v);
            let jac = diff::central_jacobian(tr.partial.as_ref(), &x, tr.extra_dim);
            let expected = (tr.reduced)(&theta, &u_emb);
            for (row, want) in jac.iter().zip(&expected) {
                let got: f64 = row.iter().zip(&fx).map(|(a, b)| a * b).sum();
                if (got - want).abs() > 1e-6 * (1.0 + want.abs()) {
                    return Err(Error::Config(format!(
                        "reduced dynamics disagree with the raw dynamics of the anticipated \
                         components at x = {x:?}: {got} vs {want}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn compose_raw(&self, u_emb: &[f64], theta: &[f64]) -> Vec<f64> {
        let shift = (self.transform.input_shift)(theta);
        u_emb.iter().zip(&shift).map(|(a, b)| a + b).collect()
    }

    /// Raw-output components forwarded to the core scheme.
    pub fn core_measurement(&self, y_raw: &[f64]) -> Vec<f64> {
        self.transform
            .core_output_indices
            .iter()
            .map(|&i| y_raw[i])
            .collect()
    }

    /// Core input placed in the raw input space.
    pub fn embed_input(&self, u_core: &[f64]) -> Vec<f64> {
        (self.transform.embed)(u_core)
    }

    /// Raw plant input `embed(u) + a2(theta)`.
    pub fn compose_input(&self, u_core: &[f64], theta: &[f64]) -> Vec<f64> {
        self.compose_raw(&self.embed_input(u_core), theta)
    }

    /// Reduced channel dynamics `reduced(theta, u_emb)`.
    pub fn reduced_field(&self, theta: &[f64], u_emb: &[f64]) -> Vec<f64> {
        (self.transform.reduced)(theta, u_emb)
    }

    /// Channel reset from the measurement at a sampling instant and the raw
    /// input cells covering the preceding `r + tau` window, oldest first.
    pub fn exact_predict(&self, y_raw: &[f64], input_cells: &[Vec<f64>], h: f64) -> Vec<f64> {
        (self.transform.exact_predictor)(y_raw, input_cells, h)
    }

    /// One integration step of the channel with the embedded input held
    /// constant over the step.
    pub fn step_theta(&self, theta: &[f64], u_emb: &[f64], t: f64, h: f64) -> Vec<f64> {
        rk4_step(|_, th| self.reduced_field(th, u_emb), t, theta, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{InputSet, SystemBuilder};
    use approx::assert_relative_eq;

    fn toy_outer() -> SystemDefinition {
        // x1' = -x1 + x2^2 + v1,  x2' = v2; the square couples the channel in.
        SystemBuilder::new(
            "toy-raw",
            2,
            2,
            2,
            InputSet::from_bounds(&[(-10.0, 10.0), (-10.0, 10.0)]).unwrap(),
            |x, v| vec![-x[0] + x[1] * x[1] + v[0], v[1]],
            |x| vec![x[0], x[1]],
            |_| vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .delays(0.2, 0.1)
        .build()
        .unwrap()
    }

    fn toy_core() -> SystemDefinition {
        SystemBuilder::new(
            "toy-core",
            1,
            1,
            1,
            InputSet::symmetric(10.0).unwrap(),
            |x, u| vec![-x[0] + u[0]],
            |x| vec![x[0]],
            |_| vec![vec![1.0]],
        )
        .delays(0.2, 0.1)
        .build()
        .unwrap()
    }

    fn toy_transform() -> TransformDefinition {
        TransformDefinition::new(
            "toy-channel",
            1,
            vec![0],
            |x: &[f64]| vec![x[1]],
            |th: &[f64]| vec![-th[0] * th[0], -th[0]],
            |th: &[f64], u: &[f64]| vec![-th[0] + u[1]],
            |y: &[f64], cells: &[Vec<f64>], h: f64| {
                vec![y[1] + h * cells.iter().map(|c| c[1]).sum::<f64>()]
            },
            |u: &[f64]| vec![u[0], 0.0],
        )
    }

    #[test]
    fn consistent_transform_validates_against_the_core() {
        let ts = TransformedSystem::new(toy_outer(), toy_transform()).unwrap();
        ts.validate_against(&toy_core()).unwrap();
    }

    #[test]
    fn wrong_reduced_dynamics_are_rejected() {
        let bad = TransformDefinition::new(
            "bad-channel",
            1,
            vec![0],
            |x: &[f64]| vec![x[1]],
            |th: &[f64]| vec![-th[0] * th[0], -th[0]],
            // Doubled rate: no longer the derivative of x2 under the shift.
            |th: &[f64], u: &[f64]| vec![-2.0 * th[0] + u[1]],
            |y: &[f64], _: &[Vec<f64>], _: f64| vec![y[1]],
            |u: &[f64]| vec![u[0], 0.0],
        );
        let ts = TransformedSystem::new(toy_outer(), bad).unwrap();
        assert!(ts.validate_against(&toy_core()).is_err());
    }

    #[test]
    fn nonvanishing_input_shift_is_rejected() {
        let bad = TransformDefinition::new(
            "offset-shift",
            1,
            vec![0],
            |x: &[f64]| vec![x[1]],
            |th: &[f64]| vec![1.0 - th[0], -th[0]],
            |th: &[f64], u: &[f64]| vec![-th[0] + u[1]],
            |y: &[f64], _: &[Vec<f64>], _: f64| vec![y[1]],
            |u: &[f64]| vec![u[0], 0.0],
        );
        assert!(TransformedSystem::new(toy_outer(), bad).is_err());
    }

    #[test]
    fn channel_reset_integrates_the_logged_input() {
        let ts = TransformedSystem::new(toy_outer(), toy_transform()).unwrap();
        let cells = vec![vec![9.0, 0.5], vec![9.0, 0.5], vec![9.0, -0.25], vec![9.0, 0.0]];
        let theta = ts.exact_predict(&[1.0, 2.0], &cells, 0.1);
        assert_relative_eq!(theta[0], 2.0 + 0.1 * 0.75, max_relative = 1e-14);
    }

    #[test]
    fn composed_input_adds_shift_to_the_embedded_core_input() {
        let ts = TransformedSystem::new(toy_outer(), toy_transform()).unwrap();
        let v = ts.compose_input(&[1.5], &[2.0]);
        assert_relative_eq!(v[0], 1.5 - 4.0, max_relative = 1e-14);
        assert_relative_eq!(v[1], -2.0, max_relative = 1e-14);
    }

    #[test]
    fn channel_step_decays_without_input() {
        let ts = TransformedSystem::new(toy_outer(), toy_transform()).unwrap();
        let mut theta = vec![1.0];
        for i in 0..100 {
            theta = ts.step_theta(&theta, &[0.0, 0.0], i as f64 * 0.01, 0.01);
        }
        assert!((theta[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn mismatched_delays_fail_validation() {
        let core = SystemBuilder::new(
            "slow-core",
            1,
            1,
            1,
            InputSet::symmetric(10.0).unwrap(),
            |x, u| vec![-x[0] + u[0]],
            |x| vec![x[0]],
            |_| vec![vec![1.0]],
        )
        .delays(0.3, 0.1)
        .build()
        .unwrap();
        let ts = TransformedSystem::new(toy_outer(), toy_transform()).unwrap();
        assert!(ts.validate_against(&core).is_err());
    }
}
