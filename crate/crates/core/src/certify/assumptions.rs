//! Sampled verification of the four standing conditions a configured
//! instance must satisfy: drift into the absorbing set, stabilizer
//! contraction inside it, observer contraction, and compatibility of the
//! gradient correction with both — each checked pointwise over a
//! deterministic quasi-random scan of its stated region.

use super::constants::PAIR_GAP;
use super::sampling::{splitmix64, QuasiSampler, SampleDomain, SamplerConfig};
use crate::certificate::SystemInstance;
use crate::error::{Error, Result};
use crate::linalg::{dot, mat_vec, norm};
use serde::Serialize;

/// Degenerate-denominator guard in the correction-compatibility check.
const DENOMINATOR_GUARD: f64 = 1e-12;

/// A sampled point violating one condition, with the two sides of the
/// failed inequality.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub point: Vec<f64>,
    pub partner: Option<Vec<f64>>,
    pub input: Option<Vec<f64>>,
    pub lhs: f64,
    pub rhs: f64,
}

/// Outcome of one condition scan.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub name: &'static str,
    /// Accepted sample draws from the condition's domains. Draws where the
    /// condition imposes nothing (a guard or sub-region predicate excludes
    /// them) count as trivially satisfied.
    pub samples: usize,
    /// How many of those draws were actually constrained.
    pub constrained: usize,
    pub violations: usize,
    /// The violation with the most negative margin, if any.
    pub worst: Option<Witness>,
    /// Smallest `rhs - lhs` seen; negative means a violation was found, and
    /// infinity that no draw was constrained.
    pub margin: f64,
}

impl AssumptionReport {
    pub fn clear(&self) -> bool {
        self.violations == 0
    }
}

/// All four condition scans plus their conjunction.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionsReport {
    /// Decay of the outer certificate under every admissible input, outside
    /// the absorbing set.
    pub absorbing: AssumptionReport,
    /// Quadratic contraction of the inner certificate under the nominal
    /// controller, inside the absorbing set, plus its coercivity floor.
    pub stabilizer: AssumptionReport,
    /// Metric contraction of the injection-corrected estimation error.
    pub observer: AssumptionReport,
    /// The gradient correction keeps the outer certificate decaying in the
    /// ramp region whenever the error term pushes the right way.
    pub correction: AssumptionReport,
    pub all_clear: bool,
}

/// One inequality evaluation: `lhs <= rhs` is the requirement. `None`
/// means the combination lies outside the condition's region.
type Evaluation = Option<(f64, f64)>;

struct Scan<'a> {
    name: &'static str,
    primary: SampleDomain<'a>,
    partner: Option<SampleDomain<'a>>,
    with_input: bool,
}

fn run_scan(
    scan: &Scan,
    inst: &SystemInstance,
    cfg: &SamplerConfig,
    seed: u64,
    eval: &dyn Fn(&[f64], Option<&[f64]>, Option<&[f64]>) -> Evaluation,
) -> Result<AssumptionReport> {
    let input_dim = if scan.with_input {
        inst.system.input_dim
    } else {
        0
    };
    let dim = scan.primary.dim() + scan.partner.as_ref().map_or(0, |d| d.dim()) + input_dim;
    let mut qs = QuasiSampler::new(dim, seed);
    let corners = if scan.with_input {
        inst.system.input_set.corners()
    } else {
        Vec::new()
    };

    let mut samples = 0usize;
    let mut constrained = 0usize;
    let mut violations = 0usize;
    let mut worst: Option<Witness> = None;
    let mut margin = f64::INFINITY;
    let mut tries = 0usize;
    let budget = cfg.samples.saturating_mul(cfg.max_tries_factor);
    while samples < cfg.samples {
        tries += 1;
        if tries > budget {
            return Err(Error::Domain(format!(
                "condition scan '{}' exhausted its sampling budget \
                 ({samples}/{} accepted after {tries} tries)",
                scan.name, cfg.samples
            )));
        }
        let unit = qs.next_unit();
        let (u_primary, rest) = unit.split_at(scan.primary.dim());
        let Some(point) = scan.primary.place(u_primary) else {
            continue;
        };
        let partner = match &scan.partner {
            Some(d) => {
                let (u_partner, _) = rest.split_at(d.dim());
                match d.place(u_partner) {
                    Some(p) => Some(p),
                    None => continue,
                }
            }
            None => None,
        };
        let mut candidates: Vec<Option<Vec<f64>>> = Vec::new();
        if scan.with_input {
            let u_unit = &rest[rest.len() - input_dim..];
            candidates.push(Some(inst.system.input_set.point_from_unit(u_unit)));
            for c in &corners {
                candidates.push(Some(c.clone()));
            }
        } else {
            candidates.push(None);
        }
        samples += 1;
        let mut in_region = false;
        for input in candidates {
            let Some((lhs, rhs)) = eval(&point, partner.as_deref(), input.as_deref()) else {
                continue;
            };
            in_region = true;
            let m = rhs - lhs;
            if m < margin {
                margin = m;
            }
            if lhs > rhs {
                violations += 1;
                let record = match &worst {
                    Some(w) => m < w.rhs - w.lhs,
                    None => true,
                };
                if record {
                    worst = Some(Witness {
                        point: point.clone(),
                        partner: partner.clone(),
                        input,
                        lhs,
                        rhs,
                    });
                }
            }
        }
        if in_region {
            constrained += 1;
        }
    }
    Ok(AssumptionReport {
        name: scan.name,
        samples,
        constrained,
        violations,
        worst,
        margin,
    })
}

/// Scan all four conditions. `outer_level_factor` sets how far beyond the
/// absorbing level the drift condition is scanned (the region is unbounded;
/// the scan covers the shell up to `factor` times the absorbing level).
pub fn check_assumptions(
    inst: &SystemInstance,
    cfg: &SamplerConfig,
    outer_level_factor: f64,
) -> Result<AssumptionsReport> {
    if !(outer_level_factor > 1.0 && outer_level_factor.is_finite()) {
        return Err(Error::Config(format!(
            "outer level factor must exceed 1, got {outer_level_factor}"
        )));
    }
    let cert = &inst.certificate;
    let sys = &inst.system;
    let consts = cert.constants;
    let n = sys.state_dim;
    let absorbing_level = consts.absorbing_level;
    let outer_level = outer_level_factor * absorbing_level;

    let mut seed_state = cfg.seed ^ 0xa55e_55ed;
    let mut next_seed = || splitmix64(&mut seed_state);

    let shell_radius = cert.level_radius(outer_level);
    let shell = SampleDomain::with_predicate(vec![(-shell_radius, shell_radius); n], |x| {
        let v = cert.v(x);
        v >= absorbing_level && v <= outer_level
    })?;
    let absorbing = run_scan(
        &Scan {
            name: "absorbing-drift",
            primary: shell,
            partner: None,
            with_input: true,
        },
        inst,
        cfg,
        next_seed(),
        &|x, _, u| {
            let u = u.expect("input scan");
            Some((dot(&cert.grad_v(x), &sys.f(x, u)), -cert.w(x)))
        },
    )?;

    let core_radius = cert.level_radius(absorbing_level);
    let core = SampleDomain::with_predicate(vec![(-core_radius, core_radius); n], |x| {
        cert.v(x) <= absorbing_level
    })?;
    let stabilizer = run_scan(
        &Scan {
            name: "stabilizer-contraction",
            primary: core,
            partner: None,
            with_input: false,
        },
        inst,
        cfg,
        next_seed(),
        &|x, _, _| {
            let x2 = dot(x, x);
            let decay_lhs = dot(&cert.grad_p(x), &sys.f(x, &inst.control(x)));
            let decay_rhs = -2.0 * consts.state_decay * x2;
            let floor_lhs = consts.p_coercivity * x2;
            let floor_rhs = cert.p(x);
            // Report the tighter of the decay and coercivity branches.
            if decay_rhs - decay_lhs <= floor_rhs - floor_lhs {
                Some((decay_lhs, decay_rhs))
            } else {
                Some((floor_lhs, floor_rhs))
            }
        },
    )?;

    let wide_radius = cert.level_radius(consts.ramp_hi);
    let wide = SampleDomain::with_predicate(vec![(-wide_radius, wide_radius); n], |z| {
        cert.v(z) <= consts.ramp_hi
    })?;
    let core_again = SampleDomain::with_predicate(vec![(-core_radius, core_radius); n], |x| {
        cert.v(x) <= absorbing_level
    })?;
    let observer = run_scan(
        &Scan {
            name: "observer-contraction",
            primary: wide,
            partner: Some(core_again),
            with_input: true,
        },
        inst,
        cfg,
        next_seed(),
        &|z, x, u| {
            let x = x.expect("partner scan");
            let u = u.expect("input scan");
            let gap: Vec<f64> = z.iter().zip(x).map(|(a, b)| a - b).collect();
            let gap_norm = norm(&gap);
            if gap_norm < PAIR_GAP {
                return None;
            }
            let fz = sys.f(z, u);
            let fx = sys.f(x, u);
            let inj = inst.output_injection(z, &sys.output(x));
            let drift: Vec<f64> = fz
                .iter()
                .zip(&inj)
                .zip(&fx)
                .map(|((a, b), c)| a + b - c)
                .collect();
            Some((
                dot(&gap, &mat_vec(&cert.q, &drift)),
                -consts.error_decay * gap_norm * gap_norm,
            ))
        },
    )?;

    let ramp = SampleDomain::with_predicate(vec![(-wide_radius, wide_radius); n], |z| {
        let v = cert.v(z);
        v > consts.ramp_lo && v <= consts.ramp_hi
    })?;
    let core_third = SampleDomain::with_predicate(vec![(-core_radius, core_radius); n], |x| {
        cert.v(x) <= absorbing_level
    })?;
    let correction = run_scan(
        &Scan {
            name: "correction-compatibility",
            primary: ramp,
            partner: Some(core_third),
            with_input: true,
        },
        inst,
        cfg,
        next_seed(),
        &|z, x, u| {
            let x = x.expect("partner scan");
            let u = u.expect("input scan");
            let gap: Vec<f64> = z.iter().zip(x).map(|(a, b)| a - b).collect();
            if norm(&gap) < PAIR_GAP {
                return None;
            }
            let gv = cert.grad_v(z);
            let denominator = dot(&gv, &mat_vec(&cert.q, &gap));
            if denominator.abs() < DENOMINATOR_GUARD || denominator >= 0.0 {
                return None;
            }
            let fz = sys.f(z, u);
            let inj = inst.output_injection(z, &sys.output(x));
            let observed: Vec<f64> = fz.iter().zip(&inj).map(|(a, b)| a + b).collect();
            let fx = sys.f(x, u);
            let err_drift: Vec<f64> = observed.iter().zip(&fx).map(|(a, b)| a - b).collect();
            let err_rate = dot(&gap, &mat_vec(&cert.q, &err_drift));
            let lhs = dot(&gv, &observed);
            let rhs = -cert.w(z)
                + (1.0 - consts.margin_split) * dot(&gv, &gv) * err_rate / denominator;
            Some((lhs, rhs))
        },
    )?;

    let all_clear =
        absorbing.clear() && stabilizer.clear() && observer.clear() && correction.clear();
    Ok(AssumptionsReport {
        absorbing,
        stabilizer,
        observer,
        correction,
        all_clear,
    })
}
