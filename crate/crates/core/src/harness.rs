//! Declarative scenario configuration and the orchestration layer above the
//! closed-loop engine: building systems and grids from a single config,
//! running and scoring scenarios, estimating disturbance-to-state gains, and
//! sweeping over sampling partitions.
//!
//! A scenario is described by one TOML document. Every field not given takes
//! a documented default, and serializing the parsed config back out shows the
//! fully resolved settings, so reports can embed exactly what was run.

use std::io::Write;
use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::builtin::{build_chained, build_planar, ChainedParams, ChainedSystem, CouplingKind, PlanarParams};
use crate::certify::{certify_instance, planar_closed_form, CertificationReport, ClosedFormReport, SamplerConfig};
use crate::error::{Error, Result};
use crate::grid::{make_partition, SamplingPartition, TimeGrid};
use crate::linalg::norm;
use crate::metrics::{evaluate_run, MetricsOptions, RunMetrics};
use crate::scheme::{ErrorSource, InitialConditions, SchemeConfig};
use crate::simulate::{run_closed_loop, SimulationResult};
use crate::certificate::SystemInstance;
use crate::transform::TransformedSystem;

/// Default certification rate target, chosen so the margin condition is
/// satisfiable by the built-in systems at their default parameters.
pub const DEFAULT_RATE_TARGET: f64 = 1e-5;

fn default_rate_target() -> f64 {
    DEFAULT_RATE_TARGET
}

/// One declarative scenario: which system, how the scheme is discretized,
/// where the run starts, what corrupts the measurements, how sampling
/// instants are drawn, and how certification scans are budgeted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemSection,
    pub scheme: SchemeSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub error: ErrorSource,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub certify: CertifySection,
}

/// Which built-in plant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    /// Two-dimensional plant with cubic damping and a weakly unstable drift.
    Planar,
    /// Three-dimensional chain whose trailing channel is anticipated away,
    /// leaving the planar core.
    Chained,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: SystemName,
    /// Coupling of the extra channel; only meaningful for the chained plant.
    #[serde(default)]
    pub coupling: CouplingKind,
    #[serde(default)]
    pub params: PlanarParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    /// Stage count of the prediction chain; must divide the total delay in
    /// grid steps.
    pub stages: usize,
    /// Upper bound on the gap between consecutive sampling instants; rounded
    /// to a grid multiple.
    pub sampling_period: f64,
    /// Lower bound on the sampling gaps; defaults to the sampling period,
    /// which makes even a "random" partition uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_gap: Option<f64>,
    /// Integration step; the delays of the chosen system must be integer
    /// multiples of it.
    pub step: f64,
    /// Simulation horizon; must cover at least ten total delays.
    pub horizon: f64,
    /// Decay-rate target handed to certification.
    #[serde(default = "default_rate_target")]
    pub rate_target: f64,
}

/// Initial data. The plant state is either given outright or drawn from a
/// seeded uniform distribution over a centered ball; observer and channel
/// states default to zero.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Radius of the ball the initial plant state is drawn from; mutually
    /// exclusive with `x0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Seed of the initial-state draw; defaults to 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<Vec<f64>>,
    /// Initial anticipating-channel value; only valid for transformed plants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Every gap equals the sampling period.
    #[default]
    Uniform,
    /// Gaps drawn uniformly from the grid multiples in `[min_gap, period]`.
    Random,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    #[serde(default)]
    pub kind: PartitionKind,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Directory run artifacts are written into; writers decide the file
    /// names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    pub sampler: SamplerConfig,
    /// Factor over the absorbing level bounding the shell scanned for the
    /// dissipation condition.
    pub outer_level_factor: f64,
}

impl Default for CertifySection {
    fn default() -> Self {
        CertifySection {
            sampler: SamplerConfig::default(),
            outer_level_factor: 4.0,
        }
    }
}

impl ScenarioConfig {
    /// Parse a scenario from TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario config: {e}")))
    }

    /// The fully resolved configuration as TOML, defaults included.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Output(format!("scenario config: {e}")))
    }

    /// Resolve the configuration into a ready-to-run scenario, validating
    /// grid compatibility and initial data along the way.
    pub fn build(&self) -> Result<BuiltScenario> {
        let mut notes = Vec::new();
        let system = match self.system.name {
            SystemName::Planar => BuiltSystem::Planar(build_planar(&self.system.params)?),
            SystemName::Chained => BuiltSystem::Chained(build_chained(&ChainedParams {
                planar: self.system.params,
                coupling: self.system.coupling,
            })?),
        };

        let h = self.scheme.step;
        if self.scheme.stages == 0 {
            return Err(Error::Config("need at least one prediction stage".into()));
        }
        let sys = &system.instance().system;
        let total_delay = sys.input_delay + sys.measurement_delay;
        let horizon = round_to_grid(self.scheme.horizon, h, "horizon", &mut notes)?;
        if horizon + 1e-9 < 10.0 * total_delay {
            return Err(Error::Config(format!(
                "horizon {horizon} is shorter than ten total delays ({})",
                10.0 * total_delay
            )));
        }
        let grid = TimeGrid::new(h, horizon)?;
        let r_steps = grid.steps_exact(sys.measurement_delay, "measurement delay")?;
        let tau_steps = grid.steps_exact(sys.input_delay, "input delay")?;
        let d_steps = r_steps + tau_steps;
        if d_steps % self.scheme.stages as u64 != 0 {
            return Err(Error::Config(format!(
                "stage count {} must divide the {d_steps} steps of total delay",
                self.scheme.stages
            )));
        }

        let period = round_to_grid(self.scheme.sampling_period, h, "sampling period", &mut notes)?;
        let min_gap = match self.scheme.min_gap {
            Some(m) => {
                if m > self.scheme.sampling_period {
                    return Err(Error::Config(format!(
                        "min_gap {m} exceeds the sampling period {}",
                        self.scheme.sampling_period
                    )));
                }
                round_to_grid(m, h, "min_gap", &mut notes)?.min(period)
            }
            None => period,
        };
        let partition = match self.partition.kind {
            PartitionKind::Uniform => make_partition(&grid, period, period, self.partition.seed)?,
            PartitionKind::Random => make_partition(&grid, period, min_gap, self.partition.seed)?,
        };

        let init = self.resolve_initial(&system)?;
        if !(self.scheme.rate_target >= 0.0) || !self.scheme.rate_target.is_finite() {
            return Err(Error::Config(format!(
                "rate target must be finite and nonnegative, got {}",
                self.scheme.rate_target
            )));
        }

        Ok(BuiltScenario {
            system,
            grid,
            partition,
            scheme: SchemeConfig {
                stages: self.scheme.stages,
                error: self.error.clone(),
            },
            init,
            notes,
        })
    }

    fn resolve_initial(&self, system: &BuiltSystem) -> Result<InitialConditions> {
        let plant_dim = system.plant_dim();
        let core_dim = system.instance().system.state_dim;
        let x0 = match (&self.initial.x0, self.initial.radius) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either an explicit x0 or a draw radius, not both".into(),
                ))
            }
            (Some(x0), None) => {
                if x0.len() != plant_dim {
                    return Err(Error::Shape(format!(
                        "x0 has dimension {}, plant state dimension is {plant_dim}",
                        x0.len()
                    )));
                }
                x0.clone()
            }
            (None, Some(radius)) => {
                if !(radius > 0.0) || !radius.is_finite() {
                    return Err(Error::Config(format!(
                        "draw radius must be positive, got {radius}"
                    )));
                }
                seeded_ball_point(plant_dim, radius, self.initial.seed.unwrap_or(0))
            }
            (None, None) => vec![0.0; plant_dim],
        };
        let z0 = match &self.initial.z0 {
            Some(z0) => {
                if z0.len() != core_dim {
                    return Err(Error::Shape(format!(
                        "z0 has dimension {}, observer dimension is {core_dim}",
                        z0.len()
                    )));
                }
                z0.clone()
            }
            None => vec![0.0; core_dim],
        };
        let theta0 = match (system.transform(), &self.initial.theta0) {
            (None, Some(_)) => {
                return Err(Error::Config(
                    "theta0 only applies to plants with an anticipating channel".into(),
                ))
            }
            (None, None) => None,
            (Some(tr), given) => {
                let dim = tr.transform.extra_dim;
                let th = match given {
                    Some(th) => {
                        if th.len() != dim {
                            return Err(Error::Shape(format!(
                                "theta0 has dimension {}, channel dimension is {dim}",
                                th.len()
                            )));
                        }
                        th.clone()
                    }
                    None => vec![0.0; dim],
                };
                Some(th)
            }
        };
        let mut init = InitialConditions::new(x0, z0);
        init.theta0 = theta0;
        Ok(init)
    }
}

/// Round a duration to the nearest positive grid multiple, recording a note
/// when that moves it.
fn round_to_grid(value: f64, h: f64, label: &str, notes: &mut Vec<String>) -> Result<f64> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::Config(format!(
            "{label} must be positive, got {value}"
        )));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    let steps = (value / h).round().max(1.0);
    let eff = steps * h;
    if (eff - value).abs() > 1e-9 * value.max(h) {
        notes.push(format!("{label} {value} rounded to {eff} ({steps} grid steps)"));
    }
    Ok(eff)
}

/// Uniform draw from the centered ball of the given radius, by seeded
/// rejection from the bounding box.
fn seeded_ball_point(dim: usize, radius: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-radius..=radius)).collect();
        if norm(&p) <= radius {
            return p;
        }
    }
}

/// A built system: either the planar plant run directly, or the chained
/// plant run through its anticipating transformation.
pub enum BuiltSystem {
    Planar(SystemInstance),
    Chained(ChainedSystem),
}

impl BuiltSystem {
    /// The core instance the scheme runs on.
    pub fn instance(&self) -> &SystemInstance {
        match self {
            BuiltSystem::Planar(inst) => inst,
            BuiltSystem::Chained(sys) => &sys.core,
        }
    }

    /// The raw-plant transformation, when one is active.
    pub fn transform(&self) -> Option<&TransformedSystem> {
        match self {
            BuiltSystem::Planar(_) => None,
            BuiltSystem::Chained(sys) => Some(&sys.raw),
        }
    }

    /// State dimension of the plant actually simulated.
    pub fn plant_dim(&self) -> usize {
        match self {
            BuiltSystem::Planar(inst) => inst.system.state_dim,
            BuiltSystem::Chained(sys) => sys.raw.outer.state_dim,
        }
    }
}

/// A scenario resolved against the grid, ready to simulate.
pub struct BuiltScenario {
    pub system: BuiltSystem,
    pub grid: TimeGrid,
    pub partition: SamplingPartition,
    pub scheme: SchemeConfig,
    pub init: InitialConditions,
    /// Adjustments made while fitting the configuration to the grid.
    pub notes: Vec<String>,
}

/// A finished run with its summary metrics.
pub struct ScenarioRun {
    pub result: SimulationResult,
    pub metrics: RunMetrics,
    pub notes: Vec<String>,
}

/// Build and simulate the scenario, then score the run with the default
/// metrics options.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun> {
    let built = config.build()?;
    let result = run_closed_loop(
        built.system.instance(),
        built.system.transform(),
        &built.scheme,
        &built.init,
        &built.grid,
        &built.partition,
    )?;
    let metrics = evaluate_run(&result, built.system.instance(), &MetricsOptions::default())?;
    Ok(ScenarioRun {
        result,
        metrics,
        notes: built.notes,
    })
}

/// Certification of one scenario: sampled condition checks and rate
/// inequalities on the core instance, plus the closed-form parameter checks
/// that exist for the built-in family.
#[derive(Debug, Clone, Serialize)]
pub struct CertifySummary {
    pub certification: CertificationReport,
    pub closed_form: ClosedFormReport,
    pub pass: bool,
}

/// Run the full certification stack on the scenario's core instance at the
/// configured rate target, stage length, and sampling period.
pub fn certify_scenario(config: &ScenarioConfig) -> Result<CertifySummary> {
    let built = config.build()?;
    let inst = built.system.instance();
    let sys = &inst.system;
    let delta = (sys.input_delay + sys.measurement_delay) / config.scheme.stages as f64;
    let sigma = config.scheme.rate_target;
    let period = built.partition.diameter();
    let certification = certify_instance(
        inst,
        sigma,
        delta,
        period,
        &config.certify.sampler,
        config.certify.outer_level_factor,
    )?;
    let closed_form = planar_closed_form(
        config.system.params.drift_gain,
        config.system.params.metric_coupling,
        sigma,
        delta,
        period,
    )?;
    let pass = certification.pass() && closed_form.all_pass;
    Ok(CertifySummary {
        certification,
        closed_form,
        pass,
    })
}

/// Verdict of one run inside a disturbance-amplitude sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GainVerdict {
    Bounded,
    Diverged,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainEntry {
    pub amplitude: f64,
    /// Tail sup of the composite attractivity norm; absent when the run
    /// diverged.
    pub tail_sup: Option<f64>,
    pub verdict: GainVerdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainReport {
    pub entries: Vec<GainEntry>,
    /// Least-squares slope through the origin of tail sup against amplitude,
    /// over the bounded entries.
    pub gain: Option<f64>,
    pub all_bounded: bool,
}

impl GainReport {
    /// One row per amplitude: `amplitude,tail_sup,verdict`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let emit = |out: &mut W, line: &str| -> Result<()> {
            writeln!(out, "{line}").map_err(|e| Error::Output(e.to_string()))
        };
        emit(&mut out, "amplitude,tail_sup,verdict")?;
        for e in &self.entries {
            let tail = e.tail_sup.map_or(String::new(), |t| format!("{t}"));
            let verdict = match e.verdict {
                GainVerdict::Bounded => "bounded",
                GainVerdict::Diverged => "diverged",
            };
            emit(&mut out, &format!("{},{tail},{verdict}", e.amplitude))?;
        }
        Ok(())
    }
}

/// Rescale the configured error source to the given amplitude, keeping its
/// seed so realizations stay proportional across amplitudes.
fn scaled_error(base: &ErrorSource, amplitude: f64) -> Result<ErrorSource> {
    match base {
        ErrorSource::None => Ok(ErrorSource::None),
        ErrorSource::Uniform { seed, .. } => Ok(ErrorSource::Uniform {
            amplitude,
            seed: *seed,
        }),
        ErrorSource::Sequence { .. } => Err(Error::Config(
            "gain estimation needs a scalable error source (none or uniform)".into(),
        )),
    }
}

/// Estimate the asymptotic disturbance-to-state gain by rerunning the
/// scenario at each amplitude and fitting the tail sup of the composite norm
/// against the amplitude.
///
/// With an error source of kind `none` every amplitude maps to exact
/// measurements, so all tails coincide and the fitted gain reflects the
/// disturbance-free baseline. Runs that leave the finite range are reported
/// per amplitude as diverged instead of aborting the sweep.
pub fn estimate_asymptotic_gain(base: &ScenarioConfig, amplitudes: &[f64]) -> Result<GainReport> {
    if amplitudes.len() < 3 {
        return Err(Error::Config(format!(
            "gain estimation needs at least three amplitudes, got {}",
            amplitudes.len()
        )));
    }
    if let Some(bad) = amplitudes.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::Config(format!(
            "amplitudes must be positive and finite, got {bad}"
        )));
    }
    scaled_error(&base.error, amplitudes[0])?;

    let runs: Vec<(f64, Result<RunMetrics>)> = amplitudes
        .par_iter()
        .map(|&amplitude| {
            let run = scaled_error(&base.error, amplitude).and_then(|error| {
                let mut config = base.clone();
                config.error = error;
                run_scenario(&config).map(|r| r.metrics)
            });
            (amplitude, run)
        })
        .collect();

    let mut entries = Vec::with_capacity(runs.len());
    for (amplitude, run) in runs {
        let entry = match run {
            Ok(metrics) if metrics.tail_sup_composite.is_finite() => GainEntry {
                amplitude,
                tail_sup: Some(metrics.tail_sup_composite),
                verdict: GainVerdict::Bounded,
            },
            Ok(_) | Err(Error::NonFinite { .. }) => GainEntry {
                amplitude,
                tail_sup: None,
                verdict: GainVerdict::Diverged,
            },
            Err(other) => return Err(other),
        };
        entries.push(entry);
    }

    let mut num = 0.0;
    let mut den = 0.0;
    for e in &entries {
        if let Some(tail) = e.tail_sup {
            num += e.amplitude * tail;
            den += e.amplitude * e.amplitude;
        }
    }
    let gain = (den > 0.0).then(|| num / den);
    let all_bounded = entries.iter().all(|e| e.verdict == GainVerdict::Bounded);
    Ok(GainReport {
        entries,
        gain,
        all_bounded,
    })
}

/// One run of a partition-robustness sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub seed: u64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub all_converged: bool,
}

impl SweepReport {
    /// One row per seed with the headline metrics; failed runs keep their
    /// row with the error message and empty metric fields.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let emit = |out: &mut W, line: &str| -> Result<()> {
            writeln!(out, "{line}").map_err(|e| Error::Output(e.to_string()))
        };
        emit(
            &mut out,
            "seed,converged,entry_time,decay_rate,tail_sup_state,tail_sup_observer_gap,\
             tail_sup_prediction_gap,tail_sup_composite,composite_decay_rate,error",
        )?;
        for e in &self.entries {
            let mut fields = vec![format!("{}", e.seed), format!("{}", e.converged)];
            match &e.metrics {
                Some(m) => {
                    fields.push(m.entry_time.map_or(String::new(), |t| format!("{t}")));
                    for v in [
                        m.decay_rate,
                        m.tail_sup_state,
                        m.tail_sup_observer_gap,
                        m.tail_sup_prediction_gap,
                        m.tail_sup_composite,
                        m.composite_decay_rate,
                    ] {
                        fields.push(format!("{v}"));
                    }
                }
                None => fields.extend(std::iter::repeat(String::new()).take(7)),
            }
            fields.push(csv_quote(e.error.as_deref().unwrap_or("")));
            emit(&mut out, &fields.join(","))?;
        }
        Ok(())
    }
}

fn csv_quote(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

/// Rerun the scenario once per seed, varying nothing but the sampling
/// partition, and record each run's verdict.
///
/// Runs are independent and may execute in parallel; entries come back in
/// seed-list order regardless. A failed run is recorded in its entry and the
/// sweep continues. With the default `min_gap` (equal to the sampling
/// period) every partition degenerates to the uniform one, so a single-seed
/// sweep reproduces the direct run exactly.
pub fn robustness_sweep(base: &ScenarioConfig, seeds: &[u64]) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::Config(
            "partition sweep needs at least one seed".into(),
        ));
    }
    let entries: Vec<SweepEntry> = seeds
        .par_iter()
        .map(|&seed| {
            let mut config = base.clone();
            config.partition.kind = PartitionKind::Random;
            config.partition.seed = seed;
            match run_scenario(&config) {
                Ok(run) => SweepEntry {
                    seed,
                    converged: run.metrics.converged,
                    metrics: Some(run.metrics),
                    error: None,
                },
                Err(e) => SweepEntry {
                    seed,
                    converged: false,
                    metrics: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let all_converged = entries.iter().all(|e| e.converged);
    Ok(SweepReport {
        entries,
        all_converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_PLANAR: &str = "\
        [system]\n\
        name = \"planar\"\n\
        [scheme]\n\
        stages = 3\n\
        sampling_period = 0.05\n\
        step = 0.0025\n\
        horizon = 10.0\n";

    fn planar_config() -> ScenarioConfig {
        ScenarioConfig::from_toml_str(MINIMAL_PLANAR).unwrap()
    }

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let config = planar_config();
        assert_eq!(config.system.name, SystemName::Planar);
        assert_eq!(config.error, ErrorSource::None);
        assert_eq!(config.partition.kind, PartitionKind::Uniform);
        assert_eq!(config.scheme.rate_target, DEFAULT_RATE_TARGET);
        assert_eq!(config.certify.outer_level_factor, 4.0);

        let built = config.build().unwrap();
        assert!(built.notes.is_empty());
        assert_eq!(built.init.x0, vec![0.0, 0.0]);
        assert_eq!(built.init.z0, vec![0.0, 0.0]);
        assert!(built.init.theta0.is_none());
        let gaps = built.partition.gaps();
        assert!(!gaps.is_empty());
        assert!(gaps.iter().all(|g| (g - 0.05).abs() < 1e-12));
    }

    #[test]
    fn resolved_toml_round_trips_and_shows_defaults() {
        let config = planar_config();
        let text = config.to_toml_string().unwrap();
        assert!(text.contains("rate_target"), "defaults must be printed");
        assert!(text.contains("outer_level_factor"));
        let back = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(
            serde_json::to_value(&config).unwrap(),
            serde_json::to_value(&back).unwrap()
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL_PLANAR}speed = 3\n");
        assert!(ScenarioConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn grid_incompatibilities_are_reported() {
        let mut short = planar_config();
        short.scheme.horizon = 5.0;
        assert!(short.build().is_err(), "horizon below ten total delays");

        let mut coarse = planar_config();
        coarse.scheme.step = 0.003;
        assert!(coarse.build().is_err(), "delays not grid multiples");

        let mut stages = planar_config();
        stages.scheme.stages = 7;
        assert!(stages.build().is_err(), "7 does not divide 300 delay steps");

        let mut gap = planar_config();
        gap.scheme.min_gap = Some(0.06);
        assert!(gap.build().is_err(), "min_gap above the sampling period");
    }

    #[test]
    fn off_grid_durations_are_rounded_with_notes() {
        let mut config = planar_config();
        config.scheme.sampling_period = 0.0501;
        let built = config.build().unwrap();
        assert_eq!(built.notes.len(), 1);
        assert!(built.notes[0].contains("sampling period"));
        assert!(built
            .partition
            .gaps()
            .iter()
            .all(|g| (g - 0.05).abs() < 1e-12));
    }

    #[test]
    fn seeded_initial_draws_are_reproducible_and_inside_the_ball() {
        let mut config = planar_config();
        config.initial.radius = Some(3.0);
        config.initial.seed = Some(11);
        let a = config.build().unwrap().init.x0;
        let b = config.build().unwrap().init.x0;
        assert_eq!(a, b);
        assert!(norm(&a) <= 3.0);
        config.initial.seed = Some(12);
        let c = config.build().unwrap().init.x0;
        assert_ne!(a, c);

        config.initial.x0 = Some(vec![1.0, 0.0]);
        assert!(config.build().is_err(), "x0 and radius are exclusive");
    }

    #[test]
    fn initial_dimensions_are_validated() {
        let mut config = planar_config();
        config.initial.x0 = Some(vec![1.0, 2.0, 3.0]);
        assert!(config.build().is_err());

        let mut config = planar_config();
        config.initial.theta0 = Some(vec![0.0]);
        assert!(config.build().is_err(), "planar plant has no channel");
    }

    #[test]
    fn quiescent_run_stays_at_the_origin() {
        let run = run_scenario(&planar_config()).unwrap();
        assert!(run.notes.is_empty());
        assert_eq!(run.metrics.tail_sup_state, 0.0);
        assert_eq!(run.metrics.tail_sup_observer_gap, 0.0);
        assert_eq!(run.metrics.tail_sup_composite, 0.0);
    }

    #[test]
    fn chained_scenario_builds_and_runs() {
        let text = "\
            [system]\n\
            name = \"chained\"\n\
            [scheme]\n\
            stages = 3\n\
            sampling_period = 0.05\n\
            step = 0.0025\n\
            horizon = 10.0\n\
            [initial]\n\
            x0 = [0.2, 0.2, 0.4]\n";
        let config = ScenarioConfig::from_toml_str(text).unwrap();
        let built = config.build().unwrap();
        assert_eq!(built.system.plant_dim(), 3);
        assert_eq!(built.init.theta0, Some(vec![0.0]));

        let run = run_scenario(&config).unwrap();
        assert!(run.metrics.tail_sup_state.is_finite());
        assert!(run.result.theta.is_some());
    }

    #[test]
    fn gain_estimation_scales_linearly_near_the_origin() {
        let mut config = planar_config();
        config.error = ErrorSource::Uniform {
            amplitude: 0.0,
            seed: 9,
        };
        let report = estimate_asymptotic_gain(&config, &[1e-3, 2e-3, 4e-3]).unwrap();
        assert!(report.all_bounded);
        assert_eq!(report.entries.len(), 3);
        let tails: Vec<f64> = report.entries.iter().map(|e| e.tail_sup.unwrap()).collect();
        assert!(tails.iter().all(|t| *t > 0.0));
        assert!(tails[0] <= tails[1] && tails[1] <= tails[2]);
        for w in tails.windows(2) {
            let ratio = w[1] / w[0];
            assert!(
                (1.4..=2.6).contains(&ratio),
                "amplitude doubling should roughly double the tail, got {ratio}"
            );
        }
        let gain = report.gain.unwrap();
        assert!(gain > 0.0 && gain.is_finite());
    }

    #[test]
    fn gain_estimation_handles_the_disturbance_free_case() {
        let report = estimate_asymptotic_gain(&planar_config(), &[0.01, 0.02, 0.04]).unwrap();
        assert!(report.all_bounded);
        assert!(report.entries.iter().all(|e| e.tail_sup == Some(0.0)));
        assert_eq!(report.gain, Some(0.0));
    }

    #[test]
    fn gain_estimation_validates_amplitudes() {
        let config = planar_config();
        assert!(estimate_asymptotic_gain(&config, &[0.1, 0.2]).is_err());
        assert!(estimate_asymptotic_gain(&config, &[0.1, -0.2, 0.3]).is_err());
        let mut seq = config;
        seq.error = ErrorSource::Sequence {
            values: vec![vec![0.0]],
        };
        assert!(estimate_asymptotic_gain(&seq, &[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn sweep_records_every_seed_in_order_and_is_deterministic() {
        let mut config = planar_config();
        config.scheme.min_gap = Some(0.02);
        config.initial.x0 = Some(vec![0.3, -0.2]);
        let report = robustness_sweep(&config, &[3, 1, 2]).unwrap();
        let seeds: Vec<u64> = report.entries.iter().map(|e| e.seed).collect();
        assert_eq!(seeds, vec![3, 1, 2]);
        assert!(report.entries.iter().all(|e| e.metrics.is_some()));

        let again = robustness_sweep(&config, &[3, 1, 2]).unwrap();
        assert_eq!(
            serde_json::to_value(&report).unwrap(),
            serde_json::to_value(&again).unwrap()
        );
    }

    #[test]
    fn single_seed_sweep_with_default_gap_matches_the_direct_run() {
        let mut config = planar_config();
        config.initial.x0 = Some(vec![0.5, 0.1]);
        let direct = run_scenario(&config).unwrap();
        let sweep = robustness_sweep(&config, &[7]).unwrap();
        let entry = &sweep.entries[0];
        let m = entry.metrics.as_ref().unwrap();
        assert_eq!(m.tail_sup_state, direct.metrics.tail_sup_state);
        assert_eq!(m.tail_sup_composite, direct.metrics.tail_sup_composite);
        assert_eq!(entry.converged, direct.metrics.converged);
    }

    #[test]
    fn sweep_keeps_going_past_failed_runs() {
        let mut config = planar_config();
        config.error = ErrorSource::Sequence {
            values: vec![vec![0.0]],
        };
        let report = robustness_sweep(&config, &[1, 2]).unwrap();
        assert_eq!(report.entries.len(), 2);
        assert!(!report.all_converged);
        assert!(report
            .entries
            .iter()
            .all(|e| e.metrics.is_none() && e.error.is_some()));
    }

    #[test]
    fn report_csv_writers_emit_one_row_per_entry() {
        let gain = GainReport {
            entries: vec![
                GainEntry {
                    amplitude: 0.01,
                    tail_sup: Some(0.02),
                    verdict: GainVerdict::Bounded,
                },
                GainEntry {
                    amplitude: 0.02,
                    tail_sup: None,
                    verdict: GainVerdict::Diverged,
                },
            ],
            gain: None,
            all_bounded: false,
        };
        let mut out = Vec::new();
        gain.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "amplitude,tail_sup,verdict");
        assert_eq!(lines[1], "0.01,0.02,bounded");
        assert_eq!(lines[2], "0.02,,diverged");

        let sweep = SweepReport {
            entries: vec![SweepEntry {
                seed: 4,
                converged: false,
                metrics: None,
                error: Some("bad, \"thing\"".into()),
            }],
            all_converged: false,
        };
        let mut out = Vec::new();
        sweep.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("seed,converged,"));
        assert_eq!(lines[1], "4,false,,,,,,,,\"bad, \"\"thing\"\"\"");
    }

    #[test]
    fn csv_quoting_escapes_only_when_needed() {
        assert_eq!(csv_quote("plain"), "plain");
        assert_eq!(csv_quote("a,b"), "\"a,b\"");
        assert_eq!(csv_quote("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
