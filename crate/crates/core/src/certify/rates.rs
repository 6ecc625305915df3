//! The small-gain rate inequalities that tie the decay-rate target to the
//! stage interval and the sampling period, plus a closed-form variant
//! specialized to the planar benchmark.

use crate::builtin::planar_injection_gains;
use crate::error::{Error, Result};
use serde::Serialize;

/// One inequality outcome. `pass` is `lhs <= bound` when the comparison is
/// non-strict and `lhs < bound` when it is strict.
#[derive(Debug, Clone, Serialize)]
pub struct RateVerdict {
    pub label: &'static str,
    pub lhs: f64,
    pub bound: f64,
    pub pass: bool,
    pub strict: bool,
}

impl RateVerdict {
    fn non_strict(label: &'static str, lhs: f64, bound: f64) -> Self {
        RateVerdict {
            label,
            lhs,
            bound,
            pass: lhs <= bound,
            strict: false,
        }
    }

    fn strict(label: &'static str, lhs: f64, bound: f64) -> Self {
        RateVerdict {
            label,
            lhs,
            bound,
            pass: lhs < bound,
            strict: true,
        }
    }
}

/// Constants feeding the three rate inequalities. The Lipschitz entries are
/// normally sampled estimates; the margins come from the certificate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateInputs {
    /// Target exponential decay rate of the composite closed-loop norm.
    pub sigma: f64,
    /// Stage interval of the prediction chain.
    pub delta: f64,
    /// Upper bound on the measurement-partition gaps.
    pub sampling_period: f64,
    /// Quadratic contraction margin of the inner stabilizer.
    pub state_decay: f64,
    /// Quadratic contraction margin of the observer error.
    pub error_decay: f64,
    /// Share of the observer margin spent on contraction (the rest absorbs
    /// the gradient correction).
    pub margin_split: f64,
    pub state_dim: usize,
    /// Curvature bound of the stabilizer certificate.
    pub curvature: f64,
    /// Lipschitz bound of the saturated-prediction map.
    pub sat_lipschitz: f64,
    /// Lipschitz bound of the field between the absorbing set and the
    /// saturation range.
    pub field_lipschitz: f64,
    /// Lipschitz bound of the measured-output drift.
    pub output_drift_lipschitz: f64,
    /// Lipschitz bound of the observer feedback in its measurement slot.
    pub feedback_measurement_lipschitz: f64,
    /// Spectral norm of the observer metric.
    pub metric_norm: f64,
    /// Smallest eigenvalue of the observer metric.
    pub metric_floor: f64,
}

/// The three inequalities, in dependence order: the rate must fit inside
/// both contraction margins, then the chain must contract per stage, then
/// the inter-sample growth must stay below the observer's restoring margin.
#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub rate_margin: RateVerdict,
    pub stage_contraction: RateVerdict,
    pub sampling_contraction: RateVerdict,
    pub all_pass: bool,
}

fn require_finite(label: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Config(format!("{label} must be finite, got {value}")));
    }
    Ok(())
}

fn require_positive(label: &str, value: f64) -> Result<()> {
    require_finite(label, value)?;
    if value <= 0.0 {
        return Err(Error::Config(format!(
            "{label} must be positive, got {value}"
        )));
    }
    Ok(())
}

fn require_nonnegative(label: &str, value: f64) -> Result<()> {
    require_finite(label, value)?;
    if value < 0.0 {
        return Err(Error::Config(format!(
            "{label} must be nonnegative, got {value}"
        )));
    }
    Ok(())
}

pub fn check_rate_inequalities(inputs: &RateInputs) -> Result<RateReport> {
    require_nonnegative("decay rate", inputs.sigma)?;
    require_positive("stage interval", inputs.delta)?;
    require_positive("sampling period", inputs.sampling_period)?;
    require_positive("state decay margin", inputs.state_decay)?;
    require_positive("error decay margin", inputs.error_decay)?;
    require_positive("certificate curvature", inputs.curvature)?;
    require_positive("metric norm", inputs.metric_norm)?;
    require_positive("metric floor", inputs.metric_floor)?;
    require_nonnegative("saturation Lipschitz bound", inputs.sat_lipschitz)?;
    require_nonnegative("field Lipschitz bound", inputs.field_lipschitz)?;
    require_nonnegative("output drift Lipschitz bound", inputs.output_drift_lipschitz)?;
    require_nonnegative(
        "feedback measurement Lipschitz bound",
        inputs.feedback_measurement_lipschitz,
    )?;
    if !(inputs.margin_split > 0.0 && inputs.margin_split < 1.0) {
        return Err(Error::Config(format!(
            "margin split must lie in (0, 1), got {}",
            inputs.margin_split
        )));
    }
    if inputs.state_dim == 0 {
        return Err(Error::Config("state dimension must be positive".into()));
    }

    let rate_bound = (inputs.state_decay / ((inputs.state_dim as f64).sqrt() * inputs.curvature))
        .min(inputs.margin_split * inputs.error_decay / (4.0 * inputs.metric_norm));
    let rate_margin = RateVerdict::non_strict(
        "decay rate within both contraction margins",
        inputs.sigma,
        rate_bound,
    );

    let stage_lhs = inputs.delta
        * inputs.sat_lipschitz
        * inputs.field_lipschitz
        * (inputs.sigma * inputs.delta).exp();
    let stage_contraction =
        RateVerdict::strict("prediction chain contracts per stage", stage_lhs, 1.0);

    let sampling_lhs = inputs.sampling_period
        * inputs.output_drift_lipschitz
        * (inputs.sigma * inputs.sampling_period).exp()
        * (2.0 * inputs.metric_norm / inputs.metric_floor).sqrt()
        * (inputs.feedback_measurement_lipschitz * inputs.metric_norm)
        / (inputs.margin_split * inputs.error_decay);
    let sampling_contraction = RateVerdict::strict(
        "inter-sample drift stays below the observer margin",
        sampling_lhs,
        1.0,
    );

    let all_pass = rate_margin.pass && stage_contraction.pass && sampling_contraction.pass;
    Ok(RateReport {
        rate_margin,
        stage_contraction,
        sampling_contraction,
        all_pass,
    })
}

/// Closed-form certification of the planar benchmark: four structural
/// parameter conditions plus the three rate inequalities with every
/// constant evaluated analytically. The injection gains are emitted so
/// callers can cross-check them against the configured instance.
#[derive(Debug, Clone, Serialize)]
pub struct ClosedFormReport {
    pub drift: RateVerdict,
    pub coupling_small: RateVerdict,
    pub coupling_margin: RateVerdict,
    pub injection_budget: RateVerdict,
    pub rate_margin: RateVerdict,
    pub stage_contraction: RateVerdict,
    pub sampling_contraction: RateVerdict,
    pub injection_gains: (f64, f64),
    pub all_pass: bool,
}

pub fn planar_closed_form(
    drift_gain: f64,
    metric_coupling: f64,
    sigma: f64,
    delta: f64,
    sampling_period: f64,
) -> Result<ClosedFormReport> {
    let g = drift_gain;
    let p = metric_coupling;
    require_nonnegative("drift gain", g)?;
    require_nonnegative("decay rate", sigma)?;
    require_positive("stage interval", delta)?;
    require_positive("sampling period", sampling_period)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!(
            "metric coupling must lie in (0, 1), got {p}"
        )));
    }

    let s7 = 7.0f64.sqrt();
    let s14 = 14.0f64.sqrt();
    let s2 = 2.0f64.sqrt();

    let drift = RateVerdict::non_strict("drift gain small enough", g, 1.0 / 167.0);
    let coupling_small = RateVerdict::non_strict("metric coupling below a quarter", p, 0.25);
    let coupling_margin = RateVerdict::non_strict(
        "metric coupling inside the injection margin",
        p * (597.0 + 176.0 * s7),
        123.0 / (4.0 * s7 * (s7 + 2.0)) - 2.0 - 2.0 * g,
    );

    let (l1, l2) = planar_injection_gains(g, p);
    let injection_budget = RateVerdict::non_strict(
        "injection gains within budget",
        l1.abs() + l2.abs(),
        41.0 / (2.0 * s7 * (s7 + 2.0)),
    );

    let rate_bound =
        (g / (8.0 * (1.0 + 2.0 * g * g) * s2)).min(p / (8.0 * (1.0 + p)));
    let rate_margin = RateVerdict::strict("decay rate within both contraction margins", sigma, rate_bound);

    let stage_bound = 27.0 * (1.0 + 2.0 * s14)
        / ((27.0 + 54.0 * s14 + 32.0 * s2) * (3034.0 + g));
    let stage_contraction = RateVerdict::strict(
        "prediction chain contracts per stage",
        delta * (sigma * delta).exp(),
        stage_bound,
    );

    let injection_norm = (l1 * l1 + l2 * l2).sqrt();
    let sampling_bound = s2 * p * (1.0 - p).sqrt()
        / (12.0 * (43.0 + g) * injection_norm * (1.0 + p).powf(1.5));
    let sampling_contraction = RateVerdict::strict(
        "inter-sample drift stays below the observer margin",
        sampling_period * (sigma * sampling_period).exp(),
        sampling_bound,
    );

    let all_pass = drift.pass
        && coupling_small.pass
        && coupling_margin.pass
        && injection_budget.pass
        && rate_margin.pass
        && stage_contraction.pass
        && sampling_contraction.pass;
    Ok(ClosedFormReport {
        drift,
        coupling_small,
        coupling_margin,
        injection_budget,
        rate_margin,
        stage_contraction,
        sampling_contraction,
        injection_gains: (l1, l2),
        all_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base_inputs() -> RateInputs {
        RateInputs {
            sigma: 1e-4,
            delta: 0.25,
            sampling_period: 0.05,
            state_decay: 0.2,
            error_decay: 0.4,
            margin_split: 0.5,
            state_dim: 4,
            curvature: 1.0,
            sat_lipschitz: 1.0,
            field_lipschitz: 1.0,
            output_drift_lipschitz: 0.5,
            feedback_measurement_lipschitz: 0.5,
            metric_norm: 0.5,
            metric_floor: 0.25,
        }
    }

    #[test]
    fn checker_matches_direct_evaluation_on_random_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xa9);
        for _ in 0..10 {
            let inputs = RateInputs {
                sigma: rng.gen_range(0.0..0.1),
                delta: rng.gen_range(0.01..1.0),
                sampling_period: rng.gen_range(0.001..0.2),
                state_decay: rng.gen_range(0.01..1.0),
                error_decay: rng.gen_range(0.01..1.0),
                margin_split: rng.gen_range(0.1..0.9),
                state_dim: rng.gen_range(1..6),
                curvature: rng.gen_range(0.5..3.0),
                sat_lipschitz: rng.gen_range(0.1..5.0),
                field_lipschitz: rng.gen_range(0.1..50.0),
                output_drift_lipschitz: rng.gen_range(0.1..20.0),
                feedback_measurement_lipschitz: rng.gen_range(0.1..20.0),
                metric_norm: rng.gen_range(0.2..2.0),
                metric_floor: rng.gen_range(0.05..0.2),
            };
            let report = check_rate_inequalities(&inputs).unwrap();

            let expected_rate_bound = f64::min(
                inputs.state_decay / ((inputs.state_dim as f64).sqrt() * inputs.curvature),
                inputs.margin_split * inputs.error_decay / (4.0 * inputs.metric_norm),
            );
            assert_relative_eq!(report.rate_margin.bound, expected_rate_bound, max_relative = 1e-14);
            assert_eq!(report.rate_margin.pass, inputs.sigma <= expected_rate_bound);

            let expected_stage = inputs.delta
                * inputs.sat_lipschitz
                * inputs.field_lipschitz
                * f64::exp(inputs.sigma * inputs.delta);
            assert_relative_eq!(report.stage_contraction.lhs, expected_stage, max_relative = 1e-14);
            assert_eq!(report.stage_contraction.pass, expected_stage < 1.0);

            let expected_sampling = inputs.sampling_period
                * inputs.output_drift_lipschitz
                * f64::exp(inputs.sigma * inputs.sampling_period)
                * f64::sqrt(2.0 * inputs.metric_norm / inputs.metric_floor)
                * inputs.feedback_measurement_lipschitz
                * inputs.metric_norm
                / (inputs.margin_split * inputs.error_decay);
            assert_relative_eq!(
                report.sampling_contraction.lhs,
                expected_sampling,
                max_relative = 1e-12
            );
            assert_eq!(report.sampling_contraction.pass, expected_sampling < 1.0);

            assert_eq!(
                report.all_pass,
                report.rate_margin.pass
                    && report.stage_contraction.pass
                    && report.sampling_contraction.pass
            );
        }
    }

    #[test]
    fn rate_margin_equality_passes_non_strictly() {
        // Both margin branches evaluate to exactly 0.1.
        let inputs = RateInputs {
            sigma: 0.1,
            ..base_inputs()
        };
        let report = check_rate_inequalities(&inputs).unwrap();
        assert_eq!(report.rate_margin.bound, 0.1);
        assert!(report.rate_margin.pass && !report.rate_margin.strict);
    }

    #[test]
    fn stage_equality_fails_strictly() {
        // sigma = 0 makes the exponential exactly 1; 2 * 0.25 * 2 = 1.
        let inputs = RateInputs {
            sigma: 0.0,
            delta: 2.0,
            sat_lipschitz: 0.25,
            field_lipschitz: 2.0,
            ..base_inputs()
        };
        let report = check_rate_inequalities(&inputs).unwrap();
        assert_eq!(report.stage_contraction.lhs, 1.0);
        assert!(!report.stage_contraction.pass && report.stage_contraction.strict);
    }

    #[test]
    fn sampling_equality_fails_strictly() {
        // sqrt(2 * 0.5 / 0.25) = 2 and the rest collapses to powers of two:
        // 1 * 0.5 * 1 * 2 * (0.5 * 0.5) / (0.5 * 0.5) = 1.
        let inputs = RateInputs {
            sigma: 0.0,
            sampling_period: 1.0,
            output_drift_lipschitz: 0.5,
            feedback_measurement_lipschitz: 0.5,
            metric_norm: 0.5,
            metric_floor: 0.25,
            margin_split: 0.5,
            error_decay: 0.5,
            ..base_inputs()
        };
        let report = check_rate_inequalities(&inputs).unwrap();
        assert_eq!(report.sampling_contraction.lhs, 1.0);
        assert!(!report.sampling_contraction.pass && report.sampling_contraction.strict);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut bad = base_inputs();
        bad.delta = 0.0;
        assert!(check_rate_inequalities(&bad).is_err());
        let mut bad = base_inputs();
        bad.margin_split = 1.0;
        assert!(check_rate_inequalities(&bad).is_err());
        let mut bad = base_inputs();
        bad.metric_floor = -0.1;
        assert!(check_rate_inequalities(&bad).is_err());
        let mut bad = base_inputs();
        bad.sigma = f64::NAN;
        assert!(check_rate_inequalities(&bad).is_err());
    }

    #[test]
    fn drift_boundary_passes_non_strictly() {
        let report = planar_closed_form(1.0 / 167.0, 4e-4, 1e-5, 1e-4, 1e-7).unwrap();
        assert_eq!(report.drift.lhs, report.drift.bound);
        assert!(report.drift.pass && !report.drift.strict);
    }

    #[test]
    fn oversized_coupling_fails_the_margin_condition() {
        let report = planar_closed_form(0.005, 0.01, 1e-5, 1e-4, 1e-7).unwrap();
        assert!(report.coupling_small.pass, "0.01 is still below a quarter");
        assert!(!report.coupling_margin.pass);
        assert!(report.coupling_margin.lhs > 10.62 && report.coupling_margin.lhs < 10.64);
        assert!(report.coupling_margin.bound > 0.49 && report.coupling_margin.bound < 0.4925);
        assert!(!report.all_pass);
    }

    #[test]
    fn default_parameters_pass_all_conditions_at_a_small_rate() {
        let report = planar_closed_form(0.005, 4e-4, 2e-5, 1e-4, 1e-7).unwrap();
        assert!(report.drift.pass);
        assert!(report.coupling_small.pass);
        assert!(report.coupling_margin.pass);
        assert!(report.injection_budget.pass);
        assert!(report.rate_margin.pass, "rate bound {}", report.rate_margin.bound);
        assert!(report.stage_contraction.pass);
        assert!(report.sampling_contraction.pass);
        assert!(report.all_pass);
        // Analytic bounds land where expected.
        assert_relative_eq!(report.rate_margin.bound, 4.998e-5, max_relative = 1e-3);
        assert_relative_eq!(report.stage_contraction.bound, 2.752e-4, max_relative = 1e-3);
        assert_relative_eq!(report.sampling_contraction.bound, 1.070e-6, max_relative = 1e-3);
    }

    #[test]
    fn practical_intervals_fail_the_rate_conditions() {
        // The workable simulation configuration sits far outside the
        // closed-form bounds: that is expected, the bounds are conservative.
        let report = planar_closed_form(0.005, 4e-4, 2e-5, 0.25, 0.05).unwrap();
        assert!(!report.stage_contraction.pass);
        assert!(!report.sampling_contraction.pass);
        assert!(!report.all_pass);
    }

    #[test]
    fn emitted_gains_match_the_shared_helper_bit_for_bit() {
        let report = planar_closed_form(0.005, 4e-4, 1e-5, 1e-4, 1e-7).unwrap();
        let (l1, l2) = planar_injection_gains(0.005, 4e-4);
        assert_eq!(report.injection_gains, (l1, l2));
    }
}
