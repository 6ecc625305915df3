//! Run-level metrics: fitted decay rates, tail suprema, absorbing-set entry
//! times, and the composite attractivity norm.
//!
//! Every quantity here is an empirical surrogate read off a finite-horizon
//! run: the fitted rate stands in for the true exponential rate, the tail
//! suprema for asymptotic bounds, and the measured entry time for the
//! (non-constructive) transient length. None of them is a proof artifact.

use crate::certificate::SystemInstance;
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::simulate::SimulationResult;
use serde::Serialize;

/// Norms below this are clamped before taking logarithms so that exact
/// zeros (an equilibrium tail) fit a flat line instead of poisoning the
/// regression with infinities.
pub const NORM_FLOOR: f64 = 1e-300;

/// Least-squares exponential rate of a norm sequence: fits
/// `log(norm) ~ intercept - rate * t` and returns the rate. Positive means
/// decay. The fit is invariant to positive scaling of the norms.
pub fn fit_decay_rate(times: &[f64], norms: &[f64]) -> Result<f64> {
    if times.len() != norms.len() {
        return Err(Error::Config(
            "decay fit needs one norm per time point".into(),
        ));
    }
    if times.len() < 10 {
        return Err(Error::Config(format!(
            "decay fit window has {} points; need at least 10",
            times.len()
        )));
    }
    if norms.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config(
            "decay fit needs finite nonnegative norms".into(),
        ));
    }
    let n = times.len() as f64;
    let logs: Vec<f64> = norms.iter().map(|v| v.max(NORM_FLOOR).ln()).collect();
    let t_mean = times.iter().sum::<f64>() / n;
    let l_mean = logs.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (t, l) in times.iter().zip(&logs) {
        cov += (t - t_mean) * (l - l_mean);
        var += (t - t_mean) * (t - t_mean);
    }
    if var <= 0.0 {
        return Err(Error::Config(
            "decay fit window has no time spread".into(),
        ));
    }
    Ok(-cov / var)
}

/// The composite norm whose exponential decay the scheme guarantees: the
/// trailing sup of the plant state over one measurement delay, the current
/// observer / output-prediction / channel magnitudes, the trailing sup of
/// every chain stage over one stage interval, and the trailing sup of the
/// input over the whole delay. Windows are clamped to the stored range.
pub fn composite_attractivity_norm(res: &SimulationResult, node: i64) -> f64 {
    let r_steps = res.measurement_delay_steps as i64;
    let d_steps = (res.input_delay_steps + res.measurement_delay_steps) as i64;
    let m_steps = res.stage_steps as i64;
    let sup_norm = |buf: &crate::history::HistoryBuffer, from: i64, to: i64| -> f64 {
        let lo = from.max(buf.start_index());
        let mut sup: f64 = 0.0;
        for k in lo..=to {
            sup = sup.max(norm(buf.at_node(k)));
        }
        sup
    };
    let mut total = sup_norm(&res.x, node - r_steps, node);
    total += norm(res.w.at_node(node));
    total += norm(res.z.at_node(node));
    if let Some(theta) = &res.theta {
        total += norm(theta.at_node(node));
    }
    for stage in &res.stages {
        total += sup_norm(stage, (node - m_steps + 1).max(0), node);
    }
    total += sup_norm(&res.u, node - d_steps, node - 1);
    total
}

/// Options for [`evaluate_run`].
#[derive(Debug, Clone, Copy)]
pub struct MetricsOptions {
    /// Fraction of the horizon treated as the tail window.
    pub tail_fraction: f64,
    /// Convergence threshold on the tail sup of the plant state norm.
    pub convergence_threshold: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions {
            tail_fraction: 0.25,
            convergence_threshold: 1e-3,
        }
    }
}

/// Summary metrics of one closed-loop run.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    /// Start of the tail window.
    pub tail_start: f64,
    /// Fitted exponential rate of the plant state norm over the tail.
    pub decay_rate: f64,
    /// First grid time at which the plant state reaches the absorbing
    /// level, if it does.
    pub entry_time: Option<f64>,
    /// Tail sup of the plant state norm.
    pub tail_sup_state: f64,
    /// Tail sup of the observer error against the delayed plant state.
    pub tail_sup_observer_gap: f64,
    /// Tail sup of the final-stage prediction error against the plant state
    /// one input delay ahead (over tail nodes where that is stored).
    pub tail_sup_prediction_gap: f64,
    /// Tail sup of the composite attractivity norm.
    pub tail_sup_composite: f64,
    /// Fitted exponential rate of the composite attractivity norm over the
    /// tail.
    pub composite_decay_rate: f64,
    /// Tail sup of the state norm below threshold, with a positive fitted
    /// rate.
    pub converged: bool,
    /// Fitted disturbance-to-tail gain; only present on sweep aggregates.
    pub fitted_gain: Option<f64>,
}

/// Evaluate the standard metrics of a finished run.
pub fn evaluate_run(
    res: &SimulationResult,
    inst: &SystemInstance,
    opts: &MetricsOptions,
) -> Result<RunMetrics> {
    if !(opts.tail_fraction > 0.0 && opts.tail_fraction < 1.0) {
        return Err(Error::Config(
            "tail fraction must lie strictly between 0 and 1".into(),
        ));
    }
    let n_steps = res.grid.n_steps() as i64;
    let tail_start_node =
        ((n_steps as f64) * (1.0 - opts.tail_fraction)).floor() as i64;
    let r_steps = res.measurement_delay_steps as i64;
    let tau_steps = res.input_delay_steps as i64;

    let mut times = Vec::new();
    let mut state_norms = Vec::new();
    let mut composite_norms = Vec::new();
    let mut sup_state: f64 = 0.0;
    let mut sup_observer: f64 = 0.0;
    let mut sup_prediction: f64 = 0.0;
    let mut sup_composite: f64 = 0.0;
    for node in tail_start_node..=n_steps {
        let t = res.grid.time(node);
        let x = res.x.at_node(node);
        let state_norm = norm(x);
        sup_state = sup_state.max(state_norm);
        times.push(t);
        state_norms.push(state_norm);
        let z = res.z.at_node(node);
        let x_delayed = res.x.at_node(node - r_steps);
        let gap: f64 = z
            .iter()
            .zip(x_delayed)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        sup_observer = sup_observer.max(gap);
        if node + tau_steps <= n_steps {
            let xi = res.prediction.at_node(node);
            let x_ahead = res.x.at_node(node + tau_steps);
            let mut sq = 0.0;
            for i in 0..xi.len().min(x_ahead.len()) {
                let d = xi[i] - x_ahead[i];
                sq += d * d;
            }
            sup_prediction = sup_prediction.max(sq.sqrt());
        }
        let comp = composite_attractivity_norm(res, node);
        sup_composite = sup_composite.max(comp);
        composite_norms.push(comp);
    }
    let decay_rate = fit_decay_rate(&times, &state_norms)?;
    let composite_decay_rate = fit_decay_rate(&times, &composite_norms)?;

    let level = inst.certificate.constants.absorbing_level;
    let mut entry_time = None;
    for node in 0..=n_steps {
        if inst.certificate.v(res.x.at_node(node)) <= level {
            entry_time = Some(res.grid.time(node));
            break;
        }
    }

    Ok(RunMetrics {
        tail_start: res.grid.time(tail_start_node),
        decay_rate,
        entry_time,
        tail_sup_state: sup_state,
        tail_sup_observer_gap: sup_observer,
        tail_sup_prediction_gap: sup_prediction,
        tail_sup_composite: sup_composite,
        composite_decay_rate,
        converged: sup_state < opts.convergence_threshold && decay_rate > 0.0,
        fitted_gain: None,
    })
}
