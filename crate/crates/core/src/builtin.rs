//! Built-in benchmark systems used by the test-suite, the CLI examples, and
//! the certification fixtures.
//!
//! Two instances are provided:
//!
//! * [`build_planar`]: a two-state plant with a weak destabilizing linear
//!   drift on the first state, cubic damping on both, and the input entering
//!   the second state. The first state is measured. Quadratic certificate
//!   data with closed-form observer gains makes every certification quantity
//!   reproducible by hand.
//! * [`build_chained`]: the planar plant driven through one extra channel:
//!   a third state feeds the second equation through a configurable coupling
//!   and is itself driven by a second raw input. Because the third state is
//!   measured and integrator-driven, its future value is reconstructible
//!   exactly from a delayed measurement plus the logged input, which is
//!   precisely the situation the anticipating-channel transformation
//!   handles. The scheme itself then runs on the planar core.

use crate::certificate::{
    CertificateBuilder, CertificateConstants, CertificateData, ShapingFunctions, SystemInstance,
};
use crate::error::{Error, Result};
use crate::system::{InputSet, SystemBuilder, SystemDefinition};
use crate::transform::{TransformDefinition, TransformedSystem};
use serde::{Deserialize, Serialize};

/// Bound of the symmetric input interval of the planar system.
pub fn planar_input_bound() -> f64 {
    4.0 * std::f64::consts::SQRT_2
}

/// Parameters of the planar benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanarParams {
    /// Gain of the destabilizing linear drift in the first state equation.
    pub drift_gain: f64,
    /// Off-diagonal weight of the observer metric; also sets the observer
    /// contraction rate.
    pub metric_coupling: f64,
    /// Share of the contraction margin reserved when balancing observer
    /// error against sampling error.
    pub margin_split: f64,
    /// Input delay tau.
    pub input_delay: f64,
    /// Measurement delay r.
    pub measurement_delay: f64,
}

impl Default for PlanarParams {
    fn default() -> Self {
        PlanarParams {
            drift_gain: 0.005,
            metric_coupling: 4e-4,
            margin_split: 0.5,
            input_delay: 0.5,
            measurement_delay: 0.25,
        }
    }
}

/// Observer injection gains of the planar system, in closed form.
///
/// Shared between the instance builder and the closed-form certification
/// check so the two agree bit for bit.
pub fn planar_injection_gains(drift_gain: f64, metric_coupling: f64) -> (f64, f64) {
    let g = drift_gain;
    let p = metric_coupling;
    let s7 = 7.0f64.sqrt();
    let big = 11.0 + 2.0 * s7;
    let den = 2.0 * (1.0 - p * p);
    let l1 = -(2.0 * g + 2.0 * p * (1.0 - p * g) + 4.0 * p * big * big + p) / den;
    let l2 = -(2.0 * g * p + 4.0 * p * p * big * big + p * p + 2.0 * (1.0 - p * g)) / den;
    (l1, l2)
}

fn planar_system(params: &PlanarParams) -> Result<SystemDefinition> {
    let g = params.drift_gain;
    SystemBuilder::new(
        "planar",
        2,
        1,
        1,
        InputSet::symmetric(planar_input_bound())?,
        move |x, u| {
            vec![
                g * x[0] - x[0] * x[0] * x[0] + x[1],
                -x[1] * x[1] * x[1] + u[0],
            ]
        },
        |x| vec![x[0]],
        |_| vec![vec![1.0, 0.0]],
    )
    .delays(params.input_delay, params.measurement_delay)
    .build()
}

fn planar_certificate(params: &PlanarParams) -> Result<CertificateData> {
    let g = params.drift_gain;
    let p = params.metric_coupling;
    let bound = planar_input_bound();
    let (l1, l2) = planar_injection_gains(g, p);
    let controller = move |x: &[f64]| {
        let v = 0.5 * (x[0] * x[0] + x[1] * x[1]);
        // Full strength up to level 4, fading out linearly, off from 5 on.
        let gate = 5.0 - v.clamp(4.0, 5.0);
        let raw = (4.0 * g * g + 1.0) * x[0]
            + 3.0 * g * x[1]
            + 2.0 * g * (4.0 * g * g - 1.0) * x[0] * x[0] * x[0]
            + 12.0 * g * g * x[1] * x[0] * x[0]
            + 6.0 * g * x[1] * x[1] * x[0];
        vec![-gate * raw.clamp(-bound, bound)]
    };
    CertificateBuilder::new(
        |x| 0.5 * (x[0] * x[0] + x[1] * x[1]),
        |x| x.to_vec(),
        |x| 0.25 * (x[0] * x[0] + x[1] * x[1]),
        move |x| {
            let s = x[1] + 2.0 * g * x[0];
            0.5 * x[0] * x[0] + 0.5 * s * s
        },
        move |x| {
            let s = x[1] + 2.0 * g * x[0];
            vec![x[0] + 2.0 * g * s, s]
        },
        controller,
        vec![vec![0.5, -0.5 * p], vec![-0.5 * p, 0.5]],
        vec![vec![l1], vec![l2]],
    )
    .constants(CertificateConstants {
        absorbing_level: 4.0,
        ramp_lo: 6.0,
        ramp_hi: 7.0,
        margin_split: params.margin_split,
        state_decay: g / 4.0,
        error_decay: p / 4.0,
        p_coercivity: 0.25,
        q_coercivity: 0.0, // filled with the smallest metric eigenvalue
    })
    .build(2)
}

fn planar_shaping() -> Result<ShapingFunctions> {
    ShapingFunctions::standard(
        6.0,
        7.0,
        |z: &[f64]| 0.5 * (1.0 + 2.0 * 14.0f64.sqrt()) + 0.5 * (z[0] * z[0] + z[1] * z[1]),
        true,
    )
}

fn validate_planar_params(params: &PlanarParams) -> Result<()> {
    if !(params.drift_gain >= 0.0 && params.drift_gain.is_finite()) {
        return Err(Error::Config("drift gain must be finite and >= 0".into()));
    }
    if !(params.metric_coupling > 0.0 && params.metric_coupling < 1.0) {
        return Err(Error::Config(
            "metric coupling must lie strictly between 0 and 1".into(),
        ));
    }
    Ok(())
}

/// Assemble the planar benchmark instance.
pub fn build_planar(params: &PlanarParams) -> Result<SystemInstance> {
    validate_planar_params(params)?;
    SystemInstance::new(
        planar_system(params)?,
        planar_certificate(params)?,
        planar_shaping()?,
    )
}

/// Coupling through which the extra channel of the chained benchmark feeds
/// the planar core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    /// Quadratic coupling.
    #[default]
    Square,
    /// No coupling: the chained system decouples into the planar core plus
    /// an independent channel. Used to cross-check the transformed loop
    /// against the plain one.
    Zero,
}

impl CouplingKind {
    pub fn eval(self, s: f64) -> f64 {
        match self {
            CouplingKind::Square => s * s,
            CouplingKind::Zero => 0.0,
        }
    }
}

/// Parameters of the chained benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ChainedParams {
    pub planar: PlanarParams,
    pub coupling: CouplingKind,
}

/// The chained benchmark: the core instance the scheme runs on plus the raw
/// three-state plant and its anticipating-channel transformation.
pub struct ChainedSystem {
    pub core: SystemInstance,
    pub raw: TransformedSystem,
}

/// Assemble the chained benchmark.
pub fn build_chained(params: &ChainedParams) -> Result<ChainedSystem> {
    let core = build_planar(&params.planar)?;
    let g = params.planar.drift_gain;
    let coupling = params.coupling;
    let outer = SystemBuilder::new(
        "chained",
        3,
        2,
        2,
        // The raw channel inputs are not constrained by the scheme; the wide
        // box only satisfies the interface.
        InputSet::from_bounds(&[(-1e6, 1e6), (-1e6, 1e6)])?,
        move |x, v| {
            vec![
                g * x[0] - x[0] * x[0] * x[0] + x[1],
                -x[1] * x[1] * x[1] + coupling.eval(x[2]) + v[0],
                v[1],
            ]
        },
        |x| vec![x[0], x[2]],
        |_| vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
    )
    .delays(params.planar.input_delay, params.planar.measurement_delay)
    .build()?;
    let transform = TransformDefinition::new(
        "chained-channel",
        1,
        vec![0],
        |x: &[f64]| vec![x[2]],
        move |th: &[f64]| vec![-coupling.eval(th[0]), -th[0]],
        |th: &[f64], u_emb: &[f64]| vec![-th[0] + u_emb[1]],
        |y: &[f64], cells: &[Vec<f64>], h: f64| {
            vec![y[1] + h * cells.iter().map(|c| c[1]).sum::<f64>()]
        },
        |u: &[f64]| vec![u[0], 0.0],
    );
    let raw = TransformedSystem::new(outer, transform)?;
    raw.validate_against(&core.system)?;
    Ok(ChainedSystem { core, raw })
}
