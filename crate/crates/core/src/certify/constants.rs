//! Sampled estimates of the growth and contraction constants that the rate
//! inequalities consume.
//!
//! Every estimate is a supremum approached from below: a deterministic
//! quasi-random scan of the stated region, refined by doubling the sample
//! count until the relative gain falls under a tolerance. Reported values
//! are therefore lower estimates; verdicts derived from them read
//! "certified under sampled estimates", never "proved".

use super::sampling::{QuasiSampler, SampleDomain, SamplerConfig};
use crate::certificate::SystemInstance;
use crate::error::{Error, Result};
use crate::linalg::{mat_vec, norm, sym_spectral_norm};
use crate::system::{InputComponent, InputSet, SystemDefinition};
use serde::Serialize;

/// The input set as a sampling region (pinned axes become zero-width).
fn input_domain(set: &InputSet) -> Result<SampleDomain<'static>> {
    SampleDomain::from_box(
        set.components()
            .iter()
            .map(|c| match *c {
                InputComponent::Interval { lo, hi } => (lo, hi),
                InputComponent::Fixed(v) => (v, v),
            })
            .collect(),
    )
}

/// Pairs closer than this are skipped in difference quotients.
pub const PAIR_GAP: f64 = 1e-8;

/// A sampled supremum with its provenance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SupEstimate {
    pub value: f64,
    /// Accepted samples that entered the estimate.
    pub samples: usize,
    /// Relative gain of the final refinement round.
    pub last_delta: f64,
}

/// Supremum of `quotient(a, b, aux)` over the three regions. The engine
/// draws all blocks jointly from one low-discrepancy sequence, skips pairs
/// with `|a - b| < PAIR_GAP` when the two blocks share a dimension, and
/// additionally probes near-diagonal pairs (the supremum of a difference
/// quotient often lives in the coincidence limit). The closure returns
/// `None` to skip a combination.
pub fn estimate_sup_quotient(
    quotient: &dyn Fn(&[f64], &[f64], &[f64]) -> Option<f64>,
    a: &SampleDomain,
    b: &SampleDomain,
    aux: Option<&SampleDomain>,
    cfg: &SamplerConfig,
) -> Result<SupEstimate> {
    let aux_dim = aux.map_or(0, |d| d.dim());
    let dim = a.dim() + b.dim() + aux_dim;
    let mut qs = QuasiSampler::new(dim, cfg.seed);
    let paired = a.dim() == b.dim();
    let near_radii = [1e-2, 1e-4, 1e-6];

    let mut value = f64::NEG_INFINITY;
    let mut seen = false;

    // Skeleton pass: centers and corners, crossed while small.
    let skel_a = a.skeleton();
    let skel_b = b.skeleton();
    let skel_aux = aux.map(|d| d.skeleton()).unwrap_or_else(|| vec![vec![]]);
    if skel_a.len() * skel_b.len() * skel_aux.len() <= 4096 {
        for pa in &skel_a {
            for pb in &skel_b {
                if paired && dist(pa, pb) < PAIR_GAP {
                    continue;
                }
                for px in &skel_aux {
                    if let Some(q) = quotient(pa, pb, px) {
                        value = value.max(q);
                        seen = true;
                    }
                }
            }
        }
    }

    let mut total_accepted = 0usize;
    let mut batch = cfg.samples.max(1);
    let mut last_delta = 0.0;
    for round in 0..=cfg.max_doublings {
        let before = value;
        let mut accepted = 0usize;
        let mut tries = 0usize;
        let budget = batch.saturating_mul(cfg.max_tries_factor);
        while accepted < batch {
            tries += 1;
            if tries > budget {
                return Err(Error::Domain(format!(
                    "rejection sampling exhausted after {tries} tries \
                     ({accepted}/{batch} accepted); the region is too thin"
                )));
            }
            let unit = qs.next_unit();
            let (ua, rest) = unit.split_at(a.dim());
            let (ub, ux) = rest.split_at(b.dim());
            let Some(pa) = a.place(ua) else { continue };
            let Some(mut pb) = b.place(ub) else { continue };
            let px = match aux {
                Some(d) => match d.place(ux) {
                    Some(p) => p,
                    None => continue,
                },
                None => vec![],
            };
            if paired && accepted % 4 == 3 {
                // Shrink the drawn partner toward the base point.
                let radius = near_radii[(accepted / 4) % near_radii.len()];
                let gap = dist(&pa, &pb);
                if gap > PAIR_GAP {
                    let shrunk: Vec<f64> = pa
                        .iter()
                        .zip(&pb)
                        .map(|(x, y)| x + (y - x) * radius / gap)
                        .collect();
                    if b.contains(&shrunk) {
                        pb = shrunk;
                    }
                }
            }
            if paired && dist(&pa, &pb) < PAIR_GAP {
                continue;
            }
            if let Some(q) = quotient(&pa, &pb, &px) {
                value = value.max(q);
                seen = true;
                accepted += 1;
            }
        }
        total_accepted += accepted;
        last_delta = if value.abs() > 0.0 {
            ((value - before) / value.abs()).max(0.0)
        } else {
            0.0
        };
        if round > 0 && last_delta <= cfg.refine_tolerance {
            break;
        }
        batch *= 2;
    }
    if !seen {
        return Err(Error::Domain(
            "no admissible sample combination found".into(),
        ));
    }
    Ok(SupEstimate {
        value,
        samples: total_accepted,
        last_delta,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Largest field magnitude over state balls of growing radius, crossed with
/// the input set. Queries are cached so the reported bound is monotone in
/// the radius even though each scan is finite.
pub struct GrowthBound<'a> {
    sys: &'a SystemDefinition,
    cfg: SamplerConfig,
    cache: Vec<(f64, f64)>,
}

impl<'a> GrowthBound<'a> {
    pub fn new(sys: &'a SystemDefinition, cfg: SamplerConfig) -> Self {
        GrowthBound {
            sys,
            cfg,
            cache: Vec::new(),
        }
    }

    /// Sampled `max |f|` over `{|x| <= radius} x U`.
    pub fn eval(&mut self, radius: f64) -> Result<f64> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!(
                "growth bound needs a finite nonnegative radius, got {radius}"
            )));
        }
        let n = self.sys.state_dim;
        let mut sup: f64 = 0.0;
        let input_box = input_domain(&self.sys.input_set)?;
        // Corners of U against the origin, axis extremes, and a quasi scan.
        for u in input_box.skeleton() {
            sup = sup.max(norm(&self.sys.f(&vec![0.0; n], &u)));
            for i in 0..n {
                for sign in [-1.0, 1.0] {
                    let mut x = vec![0.0; n];
                    x[i] = sign * radius;
                    sup = sup.max(norm(&self.sys.f(&x, &u)));
                }
            }
        }
        let ball = SampleDomain::ball(n, radius)?;
        let mut qs = QuasiSampler::new(n + input_box.dim(), self.cfg.seed ^ 0x9f0);
        let mut accepted = 0usize;
        let mut tries = 0usize;
        while accepted < self.cfg.samples {
            tries += 1;
            if tries > self.cfg.samples.saturating_mul(self.cfg.max_tries_factor) {
                break;
            }
            let unit = qs.next_unit();
            let (ux, uu) = unit.split_at(n);
            let Some(x) = ball.place(ux) else { continue };
            let Some(u) = input_box.place(uu) else {
                continue;
            };
            sup = sup.max(norm(&self.sys.f(&x, &u)));
            accepted += 1;
        }
        for &(r, v) in &self.cache {
            if r <= radius {
                sup = sup.max(v);
            }
        }
        self.cache.push((radius, sup));
        Ok(sup)
    }
}

/// Sampled `max` of the spectral norm of the curvature of the stabilizer
/// certificate over the ball of the given radius, via central differences
/// of its gradient (exact for quadratic certificates).
pub fn estimate_curvature_sup(
    grad: &dyn Fn(&[f64]) -> Vec<f64>,
    dim: usize,
    radius: f64,
    cfg: &SamplerConfig,
) -> Result<SupEstimate> {
    let ball = SampleDomain::ball(dim, radius)?;
    let mut qs = QuasiSampler::new(dim, cfg.seed ^ 0x4e55);
    let hessian_norm = |x: &[f64]| -> Result<f64> {
        let step = 1e-4 * (1.0 + norm(x));
        let mut hess = vec![vec![0.0; dim]; dim];
        for j in 0..dim {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += step;
            xm[j] -= step;
            let gp = grad(&xp);
            let gm = grad(&xm);
            for i in 0..dim {
                hess[i][j] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        // Symmetrize before reading the spectrum.
        for i in 0..dim {
            for j in (i + 1)..dim {
                let s = 0.5 * (hess[i][j] + hess[j][i]);
                hess[i][j] = s;
                hess[j][i] = s;
            }
        }
        sym_spectral_norm(&hess)
    };
    let mut value: f64 = hessian_norm(&vec![0.0; dim])?;
    let mut accepted = 0usize;
    let mut tries = 0usize;
    while accepted < cfg.samples {
        tries += 1;
        if tries > cfg.samples.saturating_mul(cfg.max_tries_factor) {
            return Err(Error::Domain(
                "curvature sampling could not fill the ball".into(),
            ));
        }
        let Some(x) = ball.place(qs.next_unit()) else {
            continue;
        };
        value = value.max(hessian_norm(&x)?);
        accepted += 1;
    }
    Ok(SupEstimate {
        value,
        samples: accepted,
        last_delta: 0.0,
    })
}

/// Every sampled constant the rate inequalities need, plus the diagnostic
/// ones, with the radii of the regions they were scanned over.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatedConstants {
    /// Lipschitz bound of the saturated-prediction map (chain contraction
    /// factor source).
    pub sat_lipschitz: SupEstimate,
    /// Lipschitz bound of the field between the absorbing set and the
    /// saturation range.
    pub field_lipschitz: SupEstimate,
    /// Lipschitz bound of the measured-output drift (inter-sample
    /// prediction error source).
    pub output_drift_lipschitz: SupEstimate,
    /// Lipschitz bound of the observer feedback in its measurement slot.
    pub feedback_measurement_lipschitz: SupEstimate,
    /// Diagnostic: envelope sensitivity of the saturated-prediction map.
    pub sat_envelope_lipschitz: SupEstimate,
    /// Diagnostic: controller-channel Lipschitz bound of the field.
    pub field_control_lipschitz: SupEstimate,
    /// Curvature bound of the stabilizer certificate.
    pub curvature: SupEstimate,
    /// Sampled growth bound at the saturation radius.
    pub growth_at_sat_radius: f64,
    /// Envelope maximum over the observer region.
    pub envelope_max: f64,
    pub radius_absorbing: f64,
    pub radius_observer: f64,
    pub radius_prediction: f64,
    pub radius_saturation: f64,
    /// Smallest and largest-magnitude eigenvalues of the observer metric.
    pub metric_floor: f64,
    pub metric_norm: f64,
}

/// Estimate all constants for one instance. `delta` is the stage interval
/// of the prediction chain (it widens the prediction region by one stage of
/// drift).
pub fn estimate_scheme_constants(
    inst: &SystemInstance,
    delta: f64,
    cfg: &SamplerConfig,
) -> Result<EstimatedConstants> {
    let sys = &inst.system;
    let cert = &inst.certificate;
    let shaping = &inst.shaping;
    let n = sys.state_dim;
    let consts = cert.constants;

    if !shaping.psi_radial {
        return Err(Error::Domain(
            "constants estimation needs a radially monotone envelope; \
             generic envelopes are unsupported"
                .into(),
        ));
    }
    let radius_absorbing = cert.level_radius(consts.absorbing_level);
    let radius_observer = cert.level_radius(consts.ramp_hi);
    let mut probe = vec![0.0; n];
    probe[0] = radius_observer;
    let envelope_max = shaping.psi(&probe);
    let radius_saturation = shaping.sat_cap * envelope_max;
    let mut growth = GrowthBound::new(sys, *cfg);
    let growth_at_sat_radius = growth.eval(radius_saturation)?;
    let radius_prediction = radius_saturation + delta * growth_at_sat_radius;

    // The tolerance keeps the exact level-set boundary (in particular the
    // axis points of the skeleton) inside the regions despite rounding.
    let s1 = SampleDomain::with_predicate(vec![(-radius_absorbing, radius_absorbing); n], |x| {
        cert.v(x) <= consts.absorbing_level * (1.0 + 1e-12)
    })?;
    let s2 = SampleDomain::with_predicate(vec![(-radius_observer, radius_observer); n], |x| {
        cert.v(x) <= consts.ramp_hi * (1.0 + 1e-12)
    })?;
    let s3 = SampleDomain::ball(n, radius_prediction)?;
    let s4 = SampleDomain::ball(n, radius_saturation)?;
    let input_box = input_domain(&sys.input_set)?;

    // Saturated-prediction map: pair (x, xi), envelope argument from S2.
    let sat_lipschitz = estimate_sup_quotient(
        &|x, xi, z| {
            let psi = shaping.psi(z);
            let a = shaping.saturate(x, psi);
            let b = shaping.saturate(xi, psi);
            Some(dist(&a, &b) / dist(x, xi))
        },
        &s1,
        &s3,
        Some(&s2),
        cfg,
    )?;

    // Field between the absorbing set and the saturation range, uniform in
    // the input.
    let field_lipschitz = estimate_sup_quotient(
        &|x, xi, u| Some(dist(&sys.f(x, u), &sys.f(xi, u)) / dist(x, xi)),
        &s1,
        &s4,
        Some(&input_box),
        cfg,
    )?;

    // Drift of the measured output.
    let output_drift_lipschitz = estimate_sup_quotient(
        &|x, z, u| {
            let a = mat_vec(&sys.output_jacobian(x), &sys.f(x, u));
            let b = mat_vec(&sys.output_jacobian(z), &sys.f(z, u));
            Some(dist(&a, &b) / dist(x, z))
        },
        &s1,
        &s2,
        Some(&input_box),
        cfg,
    )?;

    // Observer feedback against its measurement argument. The feedback is
    // undefined on a measure-zero gradient-degenerate set; those draws are
    // skipped.
    let k = sys.output_dim;
    let mut h_sup: f64 = 0.0;
    {
        let mut qs = QuasiSampler::new(n, cfg.seed ^ 0x80);
        let mut accepted = 0;
        let mut tries = 0;
        while accepted < 1024 && tries < 1024 * cfg.max_tries_factor {
            tries += 1;
            if let Some(z) = s2.place(qs.next_unit()) {
                h_sup = h_sup.max(norm(&sys.output(&z)));
                accepted += 1;
            }
        }
    }
    let y_radius = 1.0 + 2.0 * h_sup;
    let y_box = SampleDomain::from_box(vec![(-y_radius, y_radius); k])?;
    let zu = product_domain(&s2, &input_box)?;
    let feedback_measurement_lipschitz = estimate_sup_quotient(
        &|y, w, zu| {
            let (z, u) = zu.split_at(n);
            let a = inst.observer_feedback(z, y, u).ok()?;
            let b = inst.observer_feedback(z, w, u).ok()?;
            Some(dist(&a, &b) / dist(y, w))
        },
        &y_box,
        &y_box,
        Some(&zu),
        cfg,
    )?;

    // Diagnostics: envelope sensitivity of the saturation, and the
    // controller channel of the field.
    let sat_envelope_lipschitz = estimate_sup_quotient(
        &|z, w, x| {
            let a = shaping.saturate(x, shaping.psi(z));
            let b = shaping.saturate(x, shaping.psi(w));
            Some(dist(&a, &b) / dist(z, w))
        },
        &s2,
        &s1,
        Some(&s1),
        cfg,
    )?;
    let field_control_lipschitz = estimate_sup_quotient(
        &|x, xi, _| {
            let a = sys.f(x, &cert.controller(x));
            let b = sys.f(x, &cert.controller(xi));
            Some(dist(&a, &b) / dist(x, xi))
        },
        &s1,
        &s3,
        None,
        cfg,
    )?;

    let curvature = estimate_curvature_sup(&|x| cert.grad_p(x), n, radius_absorbing, cfg)?;

    Ok(EstimatedConstants {
        sat_lipschitz,
        field_lipschitz,
        output_drift_lipschitz,
        feedback_measurement_lipschitz,
        sat_envelope_lipschitz,
        field_control_lipschitz,
        curvature,
        growth_at_sat_radius,
        envelope_max,
        radius_absorbing,
        radius_observer,
        radius_prediction,
        radius_saturation,
        metric_floor: consts.q_coercivity,
        metric_norm: sym_spectral_norm(&cert.q)?,
    })
}

fn product_domain<'a>(
    a: &'a SampleDomain<'a>,
    b: &'a SampleDomain<'a>,
) -> Result<SampleDomain<'a>> {
    let mut bounds = Vec::with_capacity(a.dim() + b.dim());
    for d in [a, b] {
        for i in 0..d.dim() {
            bounds.push(d.bounds_at(i));
        }
    }
    let (da, _db) = (a.dim(), b.dim());
    SampleDomain::with_predicate(bounds, move |x: &[f64]| {
        a.contains(&x[..da]) && b.contains(&x[da..])
    })
}
