//! Certification of a configured instance: sampled checks of the standing
//! structural conditions, sampled growth/contraction constants, and the
//! small-gain rate inequalities those constants feed.

pub mod assumptions;
pub mod constants;
pub mod rates;
pub mod sampling;

pub use assumptions::{check_assumptions, AssumptionReport, AssumptionsReport, Witness};
pub use constants::{
    estimate_curvature_sup, estimate_scheme_constants, estimate_sup_quotient, EstimatedConstants,
    GrowthBound, SupEstimate,
};
pub use rates::{
    check_rate_inequalities, planar_closed_form, ClosedFormReport, RateInputs, RateReport,
    RateVerdict,
};
pub use sampling::{QuasiSampler, SampleDomain, SamplerConfig};

use crate::certificate::SystemInstance;
use crate::error::Result;
use serde::Serialize;

/// Verdict wording: sampled estimates can only certify up to sampling
/// resolution, never prove.
pub const CERTIFIED: &str = "certified under sampled estimates";
pub const NOT_CERTIFIED: &str = "not certified";

/// Everything `certify_instance` establishes, in emission order.
#[derive(Debug, Clone, Serialize)]
pub struct CertificationReport {
    pub method: &'static str,
    pub assumptions: AssumptionsReport,
    pub constants: EstimatedConstants,
    pub rates: RateReport,
    pub verdict: &'static str,
}

impl CertificationReport {
    pub fn pass(&self) -> bool {
        self.verdict == CERTIFIED
    }
}

/// Run the full sampled certification pipeline for one instance at a chosen
/// decay rate `sigma`, stage interval `delta`, and sampling period.
pub fn certify_instance(
    inst: &SystemInstance,
    sigma: f64,
    delta: f64,
    sampling_period: f64,
    cfg: &SamplerConfig,
    outer_level_factor: f64,
) -> Result<CertificationReport> {
    let assumptions = check_assumptions(inst, cfg, outer_level_factor)?;
    let constants = estimate_scheme_constants(inst, delta, cfg)?;
    let consts = inst.certificate.constants;
    let rates = check_rate_inequalities(&RateInputs {
        sigma,
        delta,
        sampling_period,
        state_decay: consts.state_decay,
        error_decay: consts.error_decay,
        margin_split: consts.margin_split,
        state_dim: inst.system.state_dim,
        curvature: constants.curvature.value,
        sat_lipschitz: constants.sat_lipschitz.value,
        field_lipschitz: constants.field_lipschitz.value,
        output_drift_lipschitz: constants.output_drift_lipschitz.value,
        feedback_measurement_lipschitz: constants.feedback_measurement_lipschitz.value,
        metric_norm: constants.metric_norm,
        metric_floor: constants.metric_floor,
    })?;
    let verdict = if assumptions.all_clear && rates.all_pass {
        CERTIFIED
    } else {
        NOT_CERTIFIED
    };
    Ok(CertificationReport {
        method: "sampled",
        assumptions,
        constants,
        rates,
        verdict,
    })
}
