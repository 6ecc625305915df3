//! Plant definitions and compact input sets.

use crate::diff;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use std::fmt;

/// One axis of an input set: either a closed interval or a pinned value.
#[derive(Debug, Clone, PartialEq)]
pub enum InputComponent {
    Interval { lo: f64, hi: f64 },
    Fixed(f64),
}

/// Axis-aligned product of intervals and pinned values, always containing the
/// origin so that a zero input is admissible.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSet {
    components: Vec<InputComponent>,
}

impl InputSet {
    pub fn new(components: Vec<InputComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("input set needs at least one axis".into()));
        }
        for (i, c) in components.iter().enumerate() {
            match *c {
                InputComponent::Interval { lo, hi } => {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(Error::Config(format!(
                            "input axis {i}: need finite lo < hi, got [{lo}, {hi}]"
                        )));
                    }
                    if lo > 0.0 || hi < 0.0 {
                        return Err(Error::Config(format!(
                            "input axis {i}: [{lo}, {hi}] does not contain 0"
                        )));
                    }
                }
                InputComponent::Fixed(v) => {
                    if v != 0.0 {
                        return Err(Error::Config(format!(
                            "input axis {i}: pinned value {v} excludes 0"
                        )));
                    }
                }
            }
        }
        Ok(InputSet { components })
    }

    /// Symmetric interval `[-bound, bound]` in one dimension.
    pub fn symmetric(bound: f64) -> Result<Self> {
        InputSet::new(vec![InputComponent::Interval {
            lo: -bound,
            hi: bound,
        }])
    }

    /// Box from per-axis bounds.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        InputSet::new(
            bounds
                .iter()
                .map(|&(lo, hi)| InputComponent::Interval { lo, hi })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[InputComponent] {
        &self.components
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.len() == self.dim()
            && self.components.iter().zip(u).all(|(c, &x)| match *c {
                InputComponent::Interval { lo, hi } => x >= lo - tol && x <= hi + tol,
                InputComponent::Fixed(v) => (x - v).abs() <= tol,
            })
    }

    /// Componentwise nearest point of the set.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.dim(), "input dimension mismatch");
        self.components
            .iter()
            .zip(u)
            .map(|(c, &x)| match *c {
                InputComponent::Interval { lo, hi } => x.clamp(lo, hi),
                InputComponent::Fixed(v) => v,
            })
            .collect()
    }

    /// Map a point of the unit cube onto the set.
    pub fn point_from_unit(&self, unit: &[f64]) -> Vec<f64> {
        assert_eq!(unit.len(), self.dim());
        self.components
            .iter()
            .zip(unit)
            .map(|(c, &t)| match *c {
                InputComponent::Interval { lo, hi } => lo + t * (hi - lo),
                InputComponent::Fixed(v) => v,
            })
            .collect()
    }

    /// All vertices of the set (pinned axes contribute their single value).
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new()];
        for c in &self.components {
            let choices: Vec<f64> = match *c {
                InputComponent::Interval { lo, hi } => vec![lo, hi],
                InputComponent::Fixed(v) => vec![v],
            };
            let mut next = Vec::with_capacity(out.len() * choices.len());
            for prefix in &out {
                for &ch in &choices {
                    let mut p = prefix.clone();
                    p.push(ch);
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }
}

type VectorField = Box<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type OutputMap = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type OutputJacobian = Box<dyn Fn(&[f64]) -> Matrix + Send + Sync>;

/// A plant with delayed input and delayed sampled output:
/// state dynamics `x' = f(x, u(t - tau))`, measurements
/// `y = h(x(t - r))` taken at the sampling instants.
pub struct SystemDefinition {
    pub name: String,
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Input delay tau.
    pub input_delay: f64,
    /// Measurement delay r.
    pub measurement_delay: f64,
    pub input_set: InputSet,
    f: VectorField,
    h: OutputMap,
    h_jac: OutputJacobian,
}

impl fmt::Debug for SystemDefinition {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("SystemDefinition")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .field("input_delay", &self.input_delay)
            .field("measurement_delay", &self.measurement_delay)
            .finish()
    }
}

pub struct SystemBuilder {
    name: String,
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    input_delay: f64,
    measurement_delay: f64,
    input_set: InputSet,
    f: VectorField,
    h: OutputMap,
    h_jac: OutputJacobian,
    validation_radius: f64,
}

impl SystemBuilder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        input_set: InputSet,
        f: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        h: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        h_jac: impl Fn(&[f64]) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        SystemBuilder {
            name: name.into(),
            state_dim,
            input_dim,
            output_dim,
            input_delay: 0.0,
            measurement_delay: 0.0,
            input_set,
            f: Box::new(f),
            h: Box::new(h),
            h_jac: Box::new(h_jac),
            validation_radius: 5.0,
        }
    }

    pub fn delays(mut self, input_delay: f64, measurement_delay: f64) -> Self {
        self.input_delay = input_delay;
        self.measurement_delay = measurement_delay;
        self
    }

    /// Radius of the ball on which the output Jacobian is spot-checked.
    pub fn validation_radius(mut self, radius: f64) -> Self {
        self.validation_radius = radius;
        self
    }

    pub fn build(self) -> Result<SystemDefinition> {
        if self.state_dim == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.input_set.dim() != self.input_dim {
            return Err(Error::Shape(format!(
                "input set has {} axes, system expects {}",
                self.input_set.dim(),
                self.input_dim
            )));
        }
        if !(self.input_delay >= 0.0 && self.input_delay.is_finite()) {
            return Err(Error::Config("input delay must be finite and >= 0".into()));
        }
        if !(self.measurement_delay >= 0.0 && self.measurement_delay.is_finite()) {
            return Err(Error::Config(
                "measurement delay must be finite and >= 0".into(),
            ));
        }
        let zero_x = vec![0.0; self.state_dim];
        let zero_u = vec![0.0; self.input_dim];
        let f0 = (self.f)(&zero_x, &zero_u);
        if f0.len() != self.state_dim {
            return Err(Error::Shape(format!(
                "f returns {} components, expected {}",
                f0.len(),
                self.state_dim
            )));
        }
        if f0.iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::Config(
                "the origin must be an equilibrium: f(0, 0) != 0".into(),
            ));
        }
        let h0 = (self.h)(&zero_x);
        if h0.len() != self.output_dim {
            return Err(Error::Shape(format!(
                "h returns {} components, expected {}",
                h0.len(),
                self.output_dim
            )));
        }
        if h0.iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::Config("the output must vanish at the origin".into()));
        }
        diff::validate_jacobian(
            "output map",
            self.h.as_ref(),
            self.h_jac.as_ref(),
            self.state_dim,
            self.output_dim,
            self.validation_radius,
        )?;
        Ok(SystemDefinition {
            name: self.name,
            state_dim: self.state_dim,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            input_delay: self.input_delay,
            measurement_delay: self.measurement_delay,
            input_set: self.input_set,
            f: self.f,
            h: self.h,
            h_jac: self.h_jac,
        })
    }
}

impl SystemDefinition {
    pub fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.state_dim);
        debug_assert_eq!(u.len(), self.input_dim);
        (self.f)(x, u)
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        (self.h)(x)
    }

    pub fn output_jacobian(&self, x: &[f64]) -> Matrix {
        (self.h_jac)(x)
    }

    /// Total feedback delay r + tau.
    pub fn total_delay(&self) -> f64 {
        self.input_delay + self.measurement_delay
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const B: f64 = 5.656854249492381; // 4 sqrt(2)

    #[test]
    fn projection_clamps_interval_components() {
        let set = InputSet::symmetric(B).unwrap();
        assert_eq!(set.project(&[0.0]), vec![0.0]);
        assert_relative_eq!(set.project(&[10.0])[0], B);
        assert_relative_eq!(set.project(&[-7.0])[0], -B);
        assert_eq!(set.project(&[1.25]), vec![1.25]);
    }

    #[test]
    fn projection_pins_fixed_components() {
        let set = InputSet::new(vec![
            InputComponent::Interval { lo: -B, hi: B },
            InputComponent::Fixed(0.0),
        ])
        .unwrap();
        let p = set.project(&[7.0, 3.0]);
        assert_relative_eq!(p[0], B);
        assert_eq!(p[1], 0.0);
        assert!(set.contains(&[1.0, 0.0], 1e-12));
        assert!(!set.contains(&[1.0, 0.5], 1e-12));
    }

    #[test]
    fn input_set_must_contain_origin() {
        assert!(InputSet::from_bounds(&[(0.5, 2.0)]).is_err());
        assert!(InputSet::from_bounds(&[(-1.0, -0.2)]).is_err());
        assert!(InputSet::new(vec![InputComponent::Fixed(1.0)]).is_err());
        assert!(InputSet::from_bounds(&[(-1.0, 2.0)]).is_ok());
    }

    #[test]
    fn corners_enumerate_interval_endpoints() {
        let set = InputSet::new(vec![
            InputComponent::Interval { lo: -1.0, hi: 2.0 },
            InputComponent::Fixed(0.0),
        ])
        .unwrap();
        let corners = set.corners();
        assert_eq!(corners.len(), 2);
        assert!(corners.contains(&vec![-1.0, 0.0]));
        assert!(corners.contains(&vec![2.0, 0.0]));
    }

    fn scalar_system() -> SystemBuilder {
        SystemBuilder::new(
            "scalar",
            1,
            1,
            1,
            InputSet::symmetric(2.0).unwrap(),
            |x, u| vec![-x[0] + u[0]],
            |x| vec![x[0]],
            |_| vec![vec![1.0]],
        )
    }

    #[test]
    fn scalar_system_builds_and_evaluates() {
        let sys = scalar_system().delays(0.5, 0.25).build().unwrap();
        assert_eq!(sys.f(&[2.0], &[0.5]), vec![-1.5]);
        assert_eq!(sys.output(&[3.0]), vec![3.0]);
        assert_relative_eq!(sys.total_delay(), 0.75);
    }

    #[test]
    fn nonvanishing_drift_at_origin_is_rejected() {
        let r = SystemBuilder::new(
            "bad",
            1,
            1,
            1,
            InputSet::symmetric(1.0).unwrap(),
            |_, _| vec![1.0],
            |x| vec![x[0]],
            |_| vec![vec![1.0]],
        )
        .build();
        assert!(r.is_err());
    }

    #[test]
    fn wrong_output_jacobian_is_caught() {
        let r = SystemBuilder::new(
            "bad-jac",
            1,
            1,
            1,
            InputSet::symmetric(1.0).unwrap(),
            |x, u| vec![-x[0] + u[0]],
            |x| vec![x[0] * x[0]],
            |_| vec![vec![1.0]],
        )
        .build();
        assert!(r.is_err());
    }

    #[test]
    fn negative_delay_is_rejected() {
        assert!(scalar_system().delays(-0.1, 0.0).build().is_err());
    }
}
