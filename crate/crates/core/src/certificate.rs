//! Certificate data, shaping functions, and the corrected observer feedback.
//!
//! A certificate bundles the Lyapunov-type objects that make the scheme work
//! on a given plant:
//!
//! * `V` with margin `W` and level `R`: outside the sublevel set
//!   `{V <= R}` the open-loop drift already dissipates, so that set absorbs
//!   every trajectory under admissible inputs;
//! * `P` with rate `2 mu`: a strict Lyapunov function for the nominal
//!   delay-free closed loop inside the absorbing set;
//! * a metric `Q` and injection gain `L` making the observer error contract
//!   at rate `omega` while the true state stays inside the absorbing set;
//! * the nominal controller `k`, always evaluated through the input set.
//!
//! The shaping functions deform the raw observer so that its state can
//! never escape to infinity: a ramp `p` switches the output injection off as
//! `V(z)` climbs from `a` to `b`, a saturation `q` caps predicted states at
//! a multiple of the growth envelope `psi`, and the correction term
//! [`SystemInstance::observer_feedback`] subtracts exactly enough of the
//! gradient direction to keep `V(z)` from growing above `b`.
//!
//! All user-supplied gradients are spot-checked against central finite
//! differences at construction time, and structural inequalities between the
//! pieces are verified on random samples when a [`SystemInstance`] is
//! assembled.

use crate::diff;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::system::SystemDefinition;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// Gradient-norm guard below which the correction direction is undefined.
pub const GRADIENT_GUARD: f64 = 1e-10;

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type ControlFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type RadiusFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar constants of a certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateConstants {
    /// Level `R` of the absorbing sublevel set of `V`.
    pub absorbing_level: f64,
    /// Ramp window `[a, b]`: output injection is full strength below `a`
    /// and switched off above `b`. Requires `R <= a < b`.
    pub ramp_lo: f64,
    pub ramp_hi: f64,
    /// Split `c` in (0, 1) between the dissipation margin kept for the
    /// observer bound and the share absorbed by the correction.
    pub margin_split: f64,
    /// Rate `mu`: the nominal closed loop satisfies a `P` decay of
    /// `-2 mu |x|^2` inside the absorbing set.
    pub state_decay: f64,
    /// Rate `omega` of observer-error contraction in the `Q` metric.
    pub error_decay: f64,
    /// Coercivity `K1` with `K1 |x|^2 <= P(x)`.
    pub p_coercivity: f64,
    /// Coercivity `K2` with `K2 |x|^2 <= x' Q x`.
    pub q_coercivity: f64,
}

pub struct CertificateData {
    v: ScalarFn,
    grad_v: GradFn,
    w: ScalarFn,
    p: ScalarFn,
    grad_p: GradFn,
    k: ControlFn,
    level_radius: RadiusFn,
    pub q: Matrix,
    pub l: Matrix,
    pub constants: CertificateConstants,
}

impl fmt::Debug for CertificateData {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("CertificateData")
            .field("constants", &self.constants)
            .field("q", &self.q)
            .field("l", &self.l)
            .finish()
    }
}

pub struct CertificateBuilder {
    v: ScalarFn,
    grad_v: GradFn,
    w: ScalarFn,
    p: ScalarFn,
    grad_p: GradFn,
    k: ControlFn,
    level_radius: RadiusFn,
    q: Matrix,
    l: Matrix,
    constants: CertificateConstants,
    q_coercivity_given: bool,
}

impl CertificateBuilder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        v: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad_v: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        w: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        p: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad_p: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        k: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        q: Matrix,
        l: Matrix,
    ) -> Self {
        CertificateBuilder {
            v: Box::new(v),
            grad_v: Box::new(grad_v),
            w: Box::new(w),
            p: Box::new(p),
            grad_p: Box::new(grad_p),
            k: Box::new(k),
            level_radius: Box::new(|s: f64| (2.0 * s.max(0.0)).sqrt()),
            q,
            l,
            constants: CertificateConstants {
                absorbing_level: 1.0,
                ramp_lo: 1.0,
                ramp_hi: 2.0,
                margin_split: 0.5,
                state_decay: 0.1,
                error_decay: 0.1,
                p_coercivity: 0.25,
                q_coercivity: 0.0,
            },
            q_coercivity_given: false,
        }
    }

    pub fn constants(mut self, constants: CertificateConstants) -> Self {
        self.q_coercivity_given = constants.q_coercivity > 0.0;
        self.constants = constants;
        self
    }

    /// Radius bound for the sublevel set `{V <= s}`, used by samplers.
    /// The default assumes `V` comparable to `|x|^2 / 2`.
    pub fn level_radius(mut self, radius: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.level_radius = Box::new(radius);
        self
    }

    pub fn build(mut self, state_dim: usize) -> Result<CertificateData> {
        let c = self.constants;
        if !(c.absorbing_level > 0.0) {
            return Err(Error::Config("absorbing level must be positive".into()));
        }
        if !(c.absorbing_level <= c.ramp_lo && c.ramp_lo < c.ramp_hi) {
            return Err(Error::Config(format!(
                "need absorbing level <= ramp_lo < ramp_hi, got {} / {} / {}",
                c.absorbing_level, c.ramp_lo, c.ramp_hi
            )));
        }
        if !(c.margin_split > 0.0 && c.margin_split < 1.0) {
            return Err(Error::Config("margin split must lie in (0, 1)".into()));
        }
        if !(c.state_decay > 0.0 && c.error_decay > 0.0 && c.p_coercivity > 0.0) {
            return Err(Error::Config("decay rates and coercivity must be positive".into()));
        }
        if self.q.len() != state_dim || self.q.iter().any(|r| r.len() != state_dim) {
            return Err(Error::Shape(format!(
                "metric matrix must be {state_dim} x {state_dim}"
            )));
        }
        if !linalg::is_symmetric(&self.q, 1e-9) {
            return Err(Error::Config("metric matrix must be symmetric".into()));
        }
        let eig = linalg::sym_eigenvalues(&self.q)?;
        let lambda_min = eig[0];
        if !(lambda_min > 0.0) {
            return Err(Error::Config(format!(
                "metric matrix must be positive definite, smallest eigenvalue {lambda_min}"
            )));
        }
        if self.q_coercivity_given {
            if self.constants.q_coercivity > lambda_min + 1e-12 {
                return Err(Error::Config(format!(
                    "q_coercivity {} exceeds the smallest metric eigenvalue {lambda_min}",
                    self.constants.q_coercivity
                )));
            }
        } else {
            self.constants.q_coercivity = lambda_min;
        }
        if self.l.len() != state_dim {
            return Err(Error::Shape(format!(
                "injection gain must have {state_dim} rows"
            )));
        }
        let zero = vec![0.0; state_dim];
        if (self.v)(&zero).abs() > 1e-12 || (self.p)(&zero).abs() > 1e-12 {
            return Err(Error::Config("V and P must vanish at the origin".into()));
        }
        if (self.k)(&zero).iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::Config("the nominal controller must vanish at the origin".into()));
        }
        let radius = ((self.level_radius)(c.ramp_hi)).max(1.0);
        diff::validate_gradient("V", self.v.as_ref(), self.grad_v.as_ref(), state_dim, radius)?;
        diff::validate_gradient("P", self.p.as_ref(), self.grad_p.as_ref(), state_dim, radius)?;
        // Pointwise sign requirements, spot-checked on the validation ball.
        let mut rng = ChaCha8Rng::seed_from_u64(0xce47);
        for _ in 0..64 {
            let x: Vec<f64> = (0..state_dim).map(|_| rng.gen_range(-radius..radius)).collect();
            if (self.v)(&x) < -1e-12 || (self.w)(&x) < -1e-12 {
                return Err(Error::Config("V and W must be nonnegative".into()));
            }
            let norm2 = linalg::dot(&x, &x);
            if (self.p)(&x) < c.p_coercivity * norm2 - 1e-9 * (1.0 + norm2) {
                return Err(Error::Config(
                    "P is not bounded below by its declared coercivity".into(),
                ));
            }
        }
        Ok(CertificateData {
            v: self.v,
            grad_v: self.grad_v,
            w: self.w,
            p: self.p,
            grad_p: self.grad_p,
            k: self.k,
            level_radius: self.level_radius,
            q: self.q,
            l: self.l,
            constants: self.constants,
        })
    }
}

impl CertificateData {
    pub fn v(&self, x: &[f64]) -> f64 {
        (self.v)(x)
    }

    pub fn grad_v(&self, x: &[f64]) -> Vec<f64> {
        (self.grad_v)(x)
    }

    pub fn w(&self, x: &[f64]) -> f64 {
        (self.w)(x)
    }

    pub fn p(&self, x: &[f64]) -> f64 {
        (self.p)(x)
    }

    pub fn grad_p(&self, x: &[f64]) -> Vec<f64> {
        (self.grad_p)(x)
    }

    pub fn controller(&self, x: &[f64]) -> Vec<f64> {
        (self.k)(x)
    }

    /// Radius bound for the sublevel set `{V <= level}`.
    pub fn level_radius(&self, level: f64) -> f64 {
        (self.level_radius)(level)
    }

    /// `L (h(z) - y)`, the raw output-injection term.
    pub fn injection(&self, innovation: &[f64]) -> Vec<f64> {
        linalg::mat_vec(&self.l, innovation)
    }

    /// Replace the nominal controller, keeping everything else. Intended for
    /// planted-failure checks in certification tests.
    pub fn with_controller(
        self,
        k: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> CertificateData {
        CertificateData {
            k: Box::new(k),
            ..self
        }
    }
}

/// Ramp, saturation, and growth envelope deforming the raw observer.
pub struct ShapingFunctions {
    ramp: ScalarRamp,
    sat: ScalarRamp,
    psi: ScalarFn,
    /// Saturation cap `K` with `s * sat(s) <= K`.
    pub sat_cap: f64,
    /// Whether `psi` is radially monotone, which lets samplers bound
    /// image sets by evaluating on the boundary sphere.
    pub psi_radial: bool,
}

type ScalarRamp = Box<dyn Fn(f64) -> f64 + Send + Sync>;

impl fmt::Debug for ShapingFunctions {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("ShapingFunctions")
            .field("sat_cap", &self.sat_cap)
            .field("psi_radial", &self.psi_radial)
            .finish()
    }
}

impl ShapingFunctions {
    /// Standard instance: linear ramp over `[ramp_lo, ramp_hi]` and the
    /// saturation `q(s) = 1` for `s <= 1`, `q(s) = 2/s - 1/s^2` beyond, for
    /// which `s q(s) <= 2`.
    pub fn standard(
        ramp_lo: f64,
        ramp_hi: f64,
        psi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        psi_radial: bool,
    ) -> Result<Self> {
        if !(ramp_lo < ramp_hi) {
            return Err(Error::Config(format!(
                "ramp window needs lo < hi, got [{ramp_lo}, {ramp_hi}]"
            )));
        }
        Ok(ShapingFunctions {
            ramp: Box::new(move |s: f64| ((s - ramp_lo) / (ramp_hi - ramp_lo)).clamp(0.0, 1.0)),
            sat: Box::new(|s: f64| {
                if s <= 1.0 {
                    1.0
                } else {
                    2.0 / s - 1.0 / (s * s)
                }
            }),
            psi: Box::new(psi),
            sat_cap: 2.0,
            psi_radial,
        })
    }

    /// Ramp `p(s)`: 0 at and below the lower edge, 1 at and above the upper.
    pub fn ramp(&self, s: f64) -> f64 {
        (self.ramp)(s)
    }

    /// Saturation `q(s)`.
    pub fn sat(&self, s: f64) -> f64 {
        (self.sat)(s)
    }

    /// Growth envelope `psi(z) >= 1`.
    pub fn psi(&self, z: &[f64]) -> f64 {
        (self.psi)(z)
    }

    /// Saturated state `sat(|xi| / psi) * xi`, never longer than
    /// `sat_cap * psi`.
    pub fn saturate(&self, xi: &[f64], psi_value: f64) -> Vec<f64> {
        let scale = self.sat(linalg::norm(xi) / psi_value);
        xi.iter().map(|v| scale * v).collect()
    }
}

/// A plant bundled with its certificate and shaping functions; the unit the
/// closed loop and the certification routines operate on.
pub struct SystemInstance {
    pub system: SystemDefinition,
    pub certificate: CertificateData,
    pub shaping: ShapingFunctions,
}

impl SystemInstance {
    /// Assemble and cross-validate the three parts.
    pub fn new(
        system: SystemDefinition,
        certificate: CertificateData,
        shaping: ShapingFunctions,
    ) -> Result<Self> {
        let n = system.state_dim;
        if certificate.q.len() != n {
            return Err(Error::Shape(format!(
                "certificate metric is {} x {}, system state dimension is {n}",
                certificate.q.len(),
                certificate.q.len()
            )));
        }
        if certificate.l.len() != n
            || certificate.l.iter().any(|r| r.len() != system.output_dim)
        {
            return Err(Error::Shape(format!(
                "injection gain must be {n} x {}",
                system.output_dim
            )));
        }
        let radius = certificate
            .level_radius(certificate.constants.ramp_hi)
            .max(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0x51a9e);
        for _ in 0..256 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-radius..radius)).collect();
            let kx = certificate.controller(&x);
            if kx.len() != system.input_dim {
                return Err(Error::Shape(format!(
                    "controller returns {} components, system expects {}",
                    kx.len(),
                    system.input_dim
                )));
            }
            if !system.input_set.contains(&kx, 1e-9) {
                return Err(Error::Config(format!(
                    "nominal controller leaves the input set at x = {x:?}"
                )));
            }
            if shaping.psi(&x) < 1.0 - 1e-12 {
                return Err(Error::Config(format!(
                    "growth envelope drops below 1 at z = {x:?}"
                )));
            }
        }
        // Saturation shape: identity scale below 1, capped product beyond.
        for i in 0..=100 {
            let s = i as f64 * 0.01;
            if (shaping.sat(s) - 1.0).abs() > 1e-12 {
                return Err(Error::Config("saturation must be 1 on [0, 1]".into()));
            }
        }
        for i in 1..=400 {
            let s = 1.0 + i as f64 * 0.25;
            let q = shaping.sat(s);
            if !(q > 0.0) || s * q > shaping.sat_cap + 1e-12 {
                return Err(Error::Config(format!(
                    "saturation cap violated at s = {s}: s q(s) = {}",
                    s * q
                )));
            }
        }
        // Ramp shape on the configured window.
        let (a, b) = (certificate.constants.ramp_lo, certificate.constants.ramp_hi);
        if shaping.ramp(a) > 1e-12 || (shaping.ramp(b) - 1.0).abs() > 1e-12 {
            return Err(Error::Config(
                "ramp must vanish at the lower edge and reach 1 at the upper".into(),
            ));
        }
        let mut prev = -1.0;
        for i in 0..=40 {
            let s = a + (b - a) * i as f64 / 40.0;
            let p = shaping.ramp(s);
            if !(0.0..=1.0).contains(&p) || p < prev - 1e-12 {
                return Err(Error::Config("ramp must increase from 0 to 1".into()));
            }
            prev = p;
        }
        // Envelope implication: V(x) <= max(V(z), ramp_hi) forces |x| <= psi(z).
        let wide = 1.5 * radius;
        for _ in 0..512 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-wide..wide)).collect();
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-wide..wide)).collect();
            let vx = certificate.v(&x);
            if vx <= certificate.v(&z).max(certificate.constants.ramp_hi)
                && linalg::norm(&x) > shaping.psi(&z) + 1e-9
            {
                return Err(Error::Config(format!(
                    "growth envelope fails to dominate: |x| = {} > psi(z) = {} with V(x) = {vx}",
                    linalg::norm(&x),
                    shaping.psi(&z)
                )));
            }
        }
        Ok(SystemInstance {
            system,
            certificate,
            shaping,
        })
    }

    /// `L (h(z) - y)`.
    pub fn output_injection(&self, z: &[f64], y: &[f64]) -> Vec<f64> {
        let hz = self.system.output(z);
        let innovation: Vec<f64> = hz.iter().zip(y).map(|(a, b)| a - b).collect();
        self.certificate.injection(&innovation)
    }

    /// Correction magnitude: the positive part of
    /// `grad V(z) . f(z, u) + W(z) + ramp(V(z)) grad V(z) . L (h(z) - y)`.
    ///
    /// Whenever this is subtracted along the normalized gradient direction,
    /// `V(z)` decreases at least at rate `W(z)`.
    pub fn correction_gain(&self, z: &[f64], y: &[f64], u: &[f64]) -> f64 {
        let gv = self.certificate.grad_v(z);
        let drift = linalg::dot(&gv, &self.system.f(z, u));
        let ramp = self.shaping.ramp(self.certificate.v(z));
        let inj = self.output_injection(z, y);
        (drift + self.certificate.w(z) + ramp * linalg::dot(&gv, &inj)).max(0.0)
    }

    /// Observer feedback term: plain output injection inside the absorbing
    /// set, output injection minus the gradient-aligned correction outside.
    pub fn observer_feedback(&self, z: &[f64], y: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let inj = self.output_injection(z, y);
        let vz = self.certificate.v(z);
        if vz <= self.certificate.constants.absorbing_level {
            return Ok(inj);
        }
        let gv = self.certificate.grad_v(z);
        let g2 = linalg::dot(&gv, &gv);
        if g2 <= GRADIENT_GUARD * GRADIENT_GUARD {
            return Err(Error::SingularGradient {
                grad_norm: g2.sqrt(),
                v_value: vz,
                z_norm: linalg::norm(z),
            });
        }
        let phi = self.correction_gain(z, y, u);
        Ok(inj
            .iter()
            .zip(&gv)
            .map(|(i, g)| i - phi / g2 * g)
            .collect())
    }

    /// Nominal controller pushed through the input set.
    pub fn control(&self, x: &[f64]) -> Vec<f64> {
        self.system
            .input_set
            .project(&self.certificate.controller(x))
    }
}
