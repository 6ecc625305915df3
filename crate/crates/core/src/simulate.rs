//! Closed-loop simulation of the full scheme on a fixed grid.
//!
//! Per grid node, in this order:
//!
//! 1. if the node is a sampling instant, take the delayed measurement and
//!    reset the inter-sample output prediction (and the anticipating channel
//!    when an input transformation is active) — resets happen before any
//!    other use of the node;
//! 2. evaluate the staged prediction chain from the current observer state;
//! 3. apply the nominal controller to the final stage and commit the input
//!    cell that starts at this node;
//! 4. advance plant, observer, and inter-sample prediction to the next node.
//!
//! Every quantity consumed by steps 2-4 lies strictly in the past or at the
//! current node, so the loop is causal: no value is read before the loop has
//! produced it. Delayed inputs are frozen at their cell value over each
//! integration step, which is exact for the piecewise-constant inputs the
//! loop generates.

use crate::certificate::SystemInstance;
use crate::error::{Error, Result};
use crate::grid::{SamplingPartition, TimeGrid};
use crate::history::{HistoryBuffer, Interpolation};
use crate::integrate::rk4_step;
use crate::scheme::{InitialConditions, SchemeConfig};
use crate::transform::TransformedSystem;
use std::collections::VecDeque;
use std::io::Write;

/// One sampling instant: measurement as received plus the error inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub index: usize,
    pub time: f64,
    pub y: Vec<f64>,
    pub e: Vec<f64>,
}

/// All signals of one closed-loop run, stored at grid resolution.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub grid: TimeGrid,
    pub partition: SamplingPartition,
    /// Grid steps per prediction stage.
    pub stage_steps: u64,
    /// Grid steps in the measurement delay r and the input delay tau.
    pub measurement_delay_steps: u64,
    pub input_delay_steps: u64,
    /// Plant state: node values from `-r`, linear interpolation.
    pub x: HistoryBuffer,
    /// Observer state: node values from 0.
    pub z: HistoryBuffer,
    /// Inter-sample output prediction: node values from 0, post-reset at
    /// sampling instants.
    pub w: HistoryBuffer,
    /// Final-stage state prediction: node values from 0.
    pub prediction: HistoryBuffer,
    /// Every stage of the prediction chain: node values from 0. The last
    /// entry repeats `prediction`; the earlier ones feed the composite
    /// attractivity norm.
    pub stages: Vec<HistoryBuffer>,
    /// Input applied by the controller: cells from `-(r + tau)`.
    pub u: HistoryBuffer,
    /// Anticipating channel for transformed runs: node values from 0,
    /// post-reset at sampling instants.
    pub theta: Option<HistoryBuffer>,
    /// Raw plant input for transformed runs: cells from `-(r + tau)`.
    pub v: Option<HistoryBuffer>,
    pub samples: Vec<SampleRecord>,
}

/// Runge-Kutta step of a field that may fail (the observer correction is
/// undefined where the Lyapunov gradient vanishes).
fn rk4_step_fallible<F>(mut field: F, t: f64, s: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k1 = field(t, s)?;
    let s2: Vec<f64> = s.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = field(t + 0.5 * h, &s2)?;
    let s3: Vec<f64> = s.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
    let k3 = field(t + 0.5 * h, &s3)?;
    let s4: Vec<f64> = s.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
    let k4 = field(t + h, &s4)?;
    Ok((0..s.len())
        .map(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// One node of the staged prediction chain.
///
/// `rings` holds, per stage, the stage's committed values over its trailing
/// stage interval (front = oldest); each stage is advanced in place. The
/// predictions are saturated against the envelope evaluated at the current
/// observer state `z`. `u_cells` is the contiguous input-cell history and
/// `current_cell` the index of the cell starting at the current node, so
/// stage `j` (0-based) integrates over the cells starting at
/// `current_cell - (stages - j) * m_steps`. Returns the final-stage value.
pub fn advance_prediction_chain(
    instance: &SystemInstance,
    z: &[f64],
    rings: &mut [VecDeque<Vec<f64>>],
    u_cells: &[Vec<f64>],
    current_cell: usize,
    m_steps: usize,
    h: f64,
) -> Vec<f64> {
    let stages = rings.len();
    let psi_z = instance.shaping.psi(z);
    let mut xi_prev = z.to_vec();
    for (j, ring) in rings.iter_mut().enumerate() {
        let mut val = instance.shaping.saturate(&xi_prev, psi_z);
        let u_window_start = current_cell - (stages - j) * m_steps;
        for m in 0..m_steps {
            let sat_past = instance.shaping.saturate(&ring[m], psi_z);
            let fv = instance.system.f(&sat_past, &u_cells[u_window_start + m]);
            for (a, b) in val.iter_mut().zip(&fv) {
                *a += h * b;
            }
        }
        ring.push_back(val.clone());
        ring.pop_front();
        xi_prev = val;
    }
    xi_prev
}

fn ensure_finite(what: &str, values: &[f64], time: f64) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            subsystem: what.into(),
            time,
        })
    }
}

/// Simulate the closed loop over the grid.
///
/// `instance` is the core system the scheme runs on. With a transformation,
/// `init.x0` is the raw plant state and `init.theta0` must be present; the
/// raw plant is driven by the composed input while the scheme itself only
/// sees the forwarded measurement components.
pub fn run_closed_loop(
    instance: &SystemInstance,
    transform: Option<&TransformedSystem>,
    scheme: &SchemeConfig,
    init: &InitialConditions,
    grid: &TimeGrid,
    partition: &SamplingPartition,
) -> Result<SimulationResult> {
    let sys = &instance.system;
    let n = sys.state_dim;
    let h = grid.step();
    let n_steps = grid.n_steps() as usize;

    let r_steps = grid.steps_exact(sys.measurement_delay, "measurement delay")? as usize;
    let tau_steps = grid.steps_exact(sys.input_delay, "input delay")? as usize;
    let d_steps = r_steps + tau_steps;
    if scheme.stages == 0 {
        return Err(Error::Config("need at least one prediction stage".into()));
    }
    if d_steps % scheme.stages != 0 {
        return Err(Error::Config(format!(
            "stage count {} must divide the {} steps of total delay",
            scheme.stages, d_steps
        )));
    }
    let m_steps = d_steps / scheme.stages;

    if (partition.grid_step() - h).abs() > 1e-12 * h {
        return Err(Error::Config(format!(
            "partition step {} does not match the grid step {h}",
            partition.grid_step()
        )));
    }
    if partition.is_empty() || partition.step_indices()[0] != 0 {
        return Err(Error::Config("partition must start with a sample at 0".into()));
    }
    if let Some(&last) = partition.step_indices().last() {
        if last as usize > n_steps {
            return Err(Error::Config(format!(
                "partition reaches step {last}, horizon has {n_steps}"
            )));
        }
    }

    let outer_state_dim = transform.map_or(n, |tr| tr.outer.state_dim);
    let raw_input_dim = transform.map_or(sys.input_dim, |tr| tr.outer.input_dim);
    let meas_dim = transform.map_or(sys.output_dim, |tr| tr.outer.output_dim);
    if init.x0.len() != outer_state_dim {
        return Err(Error::Shape(format!(
            "x0 has dimension {}, plant state dimension is {outer_state_dim}",
            init.x0.len()
        )));
    }
    if init.z0.len() != n {
        return Err(Error::Shape(format!(
            "z0 has dimension {}, observer dimension is {n}",
            init.z0.len()
        )));
    }
    let theta0 = match transform {
        Some(tr) => {
            tr.validate_against(sys)?;
            let th = init.theta0.as_ref().ok_or_else(|| {
                Error::Config("transformed runs need an initial anticipating state".into())
            })?;
            if th.len() != tr.transform.extra_dim {
                return Err(Error::Shape(format!(
                    "theta0 has dimension {}, channel dimension is {}",
                    th.len(),
                    tr.transform.extra_dim
                )));
            }
            Some(th.clone())
        }
        None => None,
    };

    let mut errgen = scheme.error.generator(meas_dim);

    // Node value at index `node + r_steps`; pre-filled constant history.
    let mut x_hist: Vec<Vec<f64>> = Vec::with_capacity(r_steps + n_steps + 2);
    for _ in 0..=r_steps {
        x_hist.push(init.x0.clone());
    }
    // Cell [node, node + 1) at index `node + d_steps`; zero before time 0.
    let mut u_cells: Vec<Vec<f64>> = Vec::with_capacity(d_steps + n_steps + 2);
    for _ in 0..d_steps {
        u_cells.push(vec![0.0; sys.input_dim]);
    }
    let mut v_cells: Vec<Vec<f64>> = Vec::new();
    if transform.is_some() {
        v_cells.reserve(d_steps + n_steps + 2);
        for _ in 0..d_steps {
            v_cells.push(vec![0.0; raw_input_dim]);
        }
    }
    let mut z_hist: Vec<Vec<f64>> = Vec::with_capacity(n_steps + 1);
    let mut w_hist: Vec<Vec<f64>> = Vec::with_capacity(n_steps + 1);
    let mut xi_hist: Vec<Vec<f64>> = Vec::with_capacity(n_steps + 1);
    let mut stage_hist: Vec<Vec<Vec<f64>>> =
        vec![Vec::with_capacity(n_steps + 1); scheme.stages];
    let mut theta_hist: Vec<Vec<f64>> = Vec::with_capacity(if transform.is_some() {
        n_steps + 1
    } else {
        0
    });
    let mut samples: Vec<SampleRecord> = Vec::with_capacity(partition.len());

    let mut z_cur = init.z0.clone();
    let mut w_cur = sys.output(&z_cur);
    let mut theta_cur = theta0.unwrap_or_default();

    // Each stage remembers its own values over the last stage interval;
    // front is the oldest node. Pre-filled with the initial observer state.
    let mut rings: Vec<VecDeque<Vec<f64>>> = (0..scheme.stages)
        .map(|_| {
            let mut ring = VecDeque::with_capacity(m_steps + 1);
            for _ in 0..m_steps {
                ring.push_back(init.z0.clone());
            }
            ring
        })
        .collect();

    let sample_steps = partition.step_indices();
    let mut next_sample = 0usize;

    for node in 0..=n_steps {
        let t = grid.time(node as i64);

        // 1. Measurement and resets.
        if next_sample < sample_steps.len() && sample_steps[next_sample] as usize == node {
            let idx = next_sample;
            let x_delayed = &x_hist[node]; // state at node - r_steps
            let y_raw = match transform {
                Some(tr) => tr.outer.output(x_delayed),
                None => sys.output(x_delayed),
            };
            let e = errgen.next(idx)?;
            let y_meas: Vec<f64> = y_raw.iter().zip(&e).map(|(a, b)| a + b).collect();
            if idx >= 1 {
                match transform {
                    Some(tr) => {
                        w_cur = tr.core_measurement(&y_meas);
                        // Raw-input cells covering [t - r - tau, t).
                        let window = &v_cells[node..node + d_steps];
                        theta_cur = tr.exact_predict(&y_meas, window, h);
                        if theta_cur.len() != tr.transform.extra_dim {
                            return Err(Error::Shape(
                                "channel reset returned the wrong dimension".into(),
                            ));
                        }
                        ensure_finite("channel reset", &theta_cur, t)?;
                    }
                    None => {
                        w_cur = y_meas.clone();
                    }
                }
            }
            samples.push(SampleRecord {
                index: idx,
                time: t,
                y: y_meas,
                e,
            });
            next_sample += 1;
        }

        // Record the node (post-reset where resets apply).
        z_hist.push(z_cur.clone());
        w_hist.push(w_cur.clone());
        if transform.is_some() {
            theta_hist.push(theta_cur.clone());
        }

        // 2. Staged prediction chain.
        let xi_n = advance_prediction_chain(
            instance,
            &z_cur,
            &mut rings,
            &u_cells,
            node + d_steps,
            m_steps,
            h,
        );
        for (j, ring) in rings.iter().enumerate() {
            stage_hist[j].push(ring.back().expect("ring is never empty").clone());
        }
        ensure_finite("prediction chain", &xi_n, t)?;
        xi_hist.push(xi_n.clone());

        // 3. Control and input cells.
        let u_now = instance.control(&xi_n);
        u_cells.push(u_now.clone());
        if let Some(tr) = transform {
            v_cells.push(tr.compose_input(&u_now, &theta_cur));
        }

        // 4. Advance to the next node.
        if node < n_steps {
            let x_next = match transform {
                Some(tr) => {
                    let v_d = &v_cells[node + r_steps]; // raw input at node - tau
                    rk4_step(|_, xs| tr.outer.f(xs, v_d), t, &x_hist[node + r_steps], h)
                }
                None => {
                    let u_d = &u_cells[node + r_steps]; // input at node - tau
                    rk4_step(|_, xs| sys.f(xs, u_d), t, &x_hist[node + r_steps], h)
                }
            };
            ensure_finite("plant", &x_next, t + h)?;
            x_hist.push(x_next);

            // Observer and inter-sample prediction advance jointly; the
            // prediction value doubles as the measurement feed.
            let u_fb = &u_cells[node]; // input at node - r - tau
            let joint: Vec<f64> = z_cur.iter().chain(w_cur.iter()).cloned().collect();
            let joint_next = rk4_step_fallible(
                |_, s| {
                    let (zs, ws) = s.split_at(n);
                    let drift = sys.f(zs, u_fb);
                    let feedback = instance.observer_feedback(zs, ws, u_fb)?;
                    let jac = sys.output_jacobian(zs);
                    let mut ds = Vec::with_capacity(n + sys.output_dim);
                    for i in 0..n {
                        ds.push(drift[i] + feedback[i]);
                    }
                    for row in &jac {
                        ds.push(row.iter().zip(&drift).map(|(a, b)| a * b).sum());
                    }
                    Ok(ds)
                },
                t,
                &joint,
                h,
            )?;
            ensure_finite("observer", &joint_next, t + h)?;
            z_cur = joint_next[..n].to_vec();
            w_cur = joint_next[n..].to_vec();

            if let Some(tr) = transform {
                let u_emb = tr.embed_input(&u_now);
                theta_cur = tr.step_theta(&theta_cur, &u_emb, t, h);
                ensure_finite("anticipating channel", &theta_cur, t + h)?;
            }
        }
    }

    let (theta_buf, v_buf) = if transform.is_some() {
        (
            Some(HistoryBuffer::from_samples(
                0,
                h,
                theta_hist,
                Interpolation::Linear,
            )?),
            Some(HistoryBuffer::from_samples(
                -(d_steps as i64),
                h,
                v_cells,
                Interpolation::PiecewiseConstant,
            )?),
        )
    } else {
        (None, None)
    };

    Ok(SimulationResult {
        grid: grid.clone(),
        partition: partition.clone(),
        stage_steps: m_steps as u64,
        measurement_delay_steps: r_steps as u64,
        input_delay_steps: tau_steps as u64,
        x: HistoryBuffer::from_samples(-(r_steps as i64), h, x_hist, Interpolation::Linear)?,
        z: HistoryBuffer::from_samples(0, h, z_hist, Interpolation::Linear)?,
        w: HistoryBuffer::from_samples(0, h, w_hist, Interpolation::Linear)?,
        prediction: HistoryBuffer::from_samples(0, h, xi_hist, Interpolation::Linear)?,
        stages: stage_hist
            .into_iter()
            .map(|vals| HistoryBuffer::from_samples(0, h, vals, Interpolation::Linear))
            .collect::<Result<Vec<_>>>()?,
        u: HistoryBuffer::from_samples(
            -(d_steps as i64),
            h,
            u_cells,
            Interpolation::PiecewiseConstant,
        )?,
        theta: theta_buf,
        v: v_buf,
        samples,
    })
}

impl SimulationResult {
    /// Number of grid nodes from time 0 to the horizon, inclusive.
    pub fn node_count(&self) -> usize {
        self.grid.n_steps() as usize + 1
    }

    /// Post-run sanity checks: the observer level never exceeds its
    /// guaranteed envelope and every applied input is admissible.
    pub fn check_invariants(&self, instance: &SystemInstance) -> Result<()> {
        let cert = &instance.certificate;
        let bound = cert.v(self.z.at_node(0)).max(cert.constants.ramp_hi);
        let slack = 1e-6 * (1.0 + bound);
        for node in 0..self.node_count() as i64 {
            let v = cert.v(self.z.at_node(node));
            if v > bound + slack {
                return Err(Error::Invariant {
                    what: "observer Lyapunov level".into(),
                    time: self.grid.time(node),
                    value: v,
                    bound,
                });
            }
        }
        for node in -(self.measurement_delay_steps as i64 + self.input_delay_steps as i64)
            ..=self.grid.n_steps() as i64
        {
            let u = self.u.at_node(node);
            if !instance.system.input_set.contains(u, 1e-9) {
                return Err(Error::Invariant {
                    what: "input containment".into(),
                    time: self.grid.time(node),
                    value: crate::linalg::norm(u),
                    bound: f64::NAN,
                });
            }
        }
        Ok(())
    }

    /// Trajectory table, one row per grid node from 0 to the horizon:
    /// time, plant state, observer state, inter-sample prediction,
    /// final-stage prediction, applied input, and for transformed runs the
    /// anticipating channel and the raw input. The input columns hold the
    /// value applied on the cell starting at the row's node; the final row
    /// repeats the last committed cell.
    pub fn write_trajectory_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut columns: Vec<String> = vec!["t".into()];
        let push_block = |name: &str, dim: usize, columns: &mut Vec<String>| {
            for i in 1..=dim {
                columns.push(format!("{name}{i}"));
            }
        };
        push_block("x", self.x.dim(), &mut columns);
        push_block("z", self.z.dim(), &mut columns);
        push_block("w", self.w.dim(), &mut columns);
        push_block("xi", self.prediction.dim(), &mut columns);
        push_block("u", self.u.dim(), &mut columns);
        if let Some(theta) = &self.theta {
            push_block("theta", theta.dim(), &mut columns);
        }
        if let Some(v) = &self.v {
            push_block("v", v.dim(), &mut columns);
        }
        let emit = |out: &mut W, fields: &[String]| -> Result<()> {
            writeln!(out, "{}", fields.join(",")).map_err(|e| Error::Output(e.to_string()))
        };
        emit(&mut out, &columns)?;
        let last_cell = self.grid.n_steps() as i64;
        for node in 0..self.node_count() as i64 {
            let mut fields = vec![format!("{}", self.grid.time(node))];
            let push_values = |vals: &[f64], fields: &mut Vec<String>| {
                for v in vals {
                    fields.push(format!("{v}"));
                }
            };
            push_values(self.x.at_node(node), &mut fields);
            push_values(self.z.at_node(node), &mut fields);
            push_values(self.w.at_node(node), &mut fields);
            push_values(self.prediction.at_node(node), &mut fields);
            push_values(self.u.at_node(node.min(last_cell)), &mut fields);
            if let Some(theta) = &self.theta {
                push_values(theta.at_node(node), &mut fields);
            }
            if let Some(v) = &self.v {
                push_values(v.at_node(node.min(last_cell)), &mut fields);
            }
            emit(&mut out, &fields)?;
        }
        Ok(())
    }

    /// Sampling table: one row per sampling instant with the measurement as
    /// received and the error inside it.
    pub fn write_samples_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.samples.first().map_or(0, |s| s.y.len());
        let mut columns: Vec<String> = vec!["index".into(), "t".into()];
        for i in 1..=dim {
            columns.push(format!("y{i}"));
        }
        for i in 1..=dim {
            columns.push(format!("e{i}"));
        }
        writeln!(out, "{}", columns.join(",")).map_err(|e| Error::Output(e.to_string()))?;
        for s in &self.samples {
            let mut fields = vec![format!("{}", s.index), format!("{}", s.time)];
            for v in &s.y {
                fields.push(format!("{v}"));
            }
            for v in &s.e {
                fields.push(format!("{v}"));
            }
            writeln!(out, "{}", fields.join(",")).map_err(|e| Error::Output(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::{
        CertificateBuilder, CertificateConstants, CertificateData, ShapingFunctions,
    };
    use crate::grid::make_partition;
    use crate::scheme::ErrorSource;
    use crate::system::{InputSet, SystemBuilder};
    use crate::transform::TransformDefinition;

    fn quadratic_constants() -> CertificateConstants {
        CertificateConstants {
            absorbing_level: 2.0,
            ramp_lo: 3.0,
            ramp_hi: 4.0,
            margin_split: 0.5,
            state_decay: 0.25,
            error_decay: 0.5,
            p_coercivity: 0.25,
            q_coercivity: 0.0,
        }
    }

    fn quadratic_certificate(
        k: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> CertificateData {
        CertificateBuilder::new(
            |x| 0.5 * x[0] * x[0],
            |x| vec![x[0]],
            |x| 0.25 * x[0] * x[0],
            |x| x[0] * x[0],
            |x| vec![2.0 * x[0]],
            k,
            vec![vec![1.0]],
            vec![vec![-1.0]],
        )
        .constants(quadratic_constants())
        .build(1)
        .unwrap()
    }

    fn scalar_shaping() -> ShapingFunctions {
        ShapingFunctions::standard(3.0, 4.0, |z: &[f64]| 3.0 + 0.5 * z[0] * z[0], true).unwrap()
    }

    fn integrator_instance() -> SystemInstance {
        let sys = SystemBuilder::new(
            "integrator",
            1,
            1,
            1,
            InputSet::symmetric(10.0).unwrap(),
            |_, u| vec![u[0]],
            |x| vec![x[0]],
            |_| vec![vec![1.0]],
        )
        .delays(0.2, 0.1)
        .build()
        .unwrap();
        let cert = quadratic_certificate(|x: &[f64]| vec![-x[0]]);
        SystemInstance::new(sys, cert, scalar_shaping()).unwrap()
    }

    fn stable_instance() -> SystemInstance {
        let sys = SystemBuilder::new(
            "scalar-stable",
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
        .unwrap();
        let cert = quadratic_certificate(|x: &[f64]| vec![-x[0]]);
        SystemInstance::new(sys, cert, scalar_shaping()).unwrap()
    }

    fn run_integrator(x0: f64, z0: f64, seed: u64) -> SimulationResult {
        let inst = integrator_instance();
        let grid = TimeGrid::new(0.01, 6.0).unwrap();
        let partition = make_partition(&grid, 0.25, 0.1, seed).unwrap();
        run_closed_loop(
            &inst,
            None,
            &SchemeConfig::exact(3),
            &InitialConditions::new(vec![x0], vec![z0]),
            &grid,
            &partition,
        )
        .unwrap()
    }

    // For the pure integrator every approximation in the loop is exact, so
    // the delayed-coordinate identities must hold to rounding error. This
    // pins the delay indexing: the plant input is u(t - tau), the observer
    // input is u(t - r - tau), and the final stage anticipates by tau.
    #[test]
    fn integrator_run_satisfies_delay_identities_to_rounding() {
        let res = run_integrator(2.0, 2.0, 11);
        let n_steps = res.grid.n_steps() as i64;
        let tau_steps = res.input_delay_steps as i64;
        let r_steps = res.measurement_delay_steps as i64;
        // Dead time: the plant cannot move before the input delay elapses.
        for node in 0..=tau_steps {
            assert_eq!(res.x.at_node(node)[0], 2.0, "node {node} inside dead time");
        }
        assert_ne!(res.x.at_node(tau_steps + 1)[0], 2.0);
        for node in 0..=n_steps {
            let z = res.z.at_node(node)[0];
            let x_delayed = res.x.at_node(node - r_steps)[0];
            assert!(
                (z - x_delayed).abs() < 1e-10,
                "observer drifted from the delayed state at node {node}: {z} vs {x_delayed}"
            );
            if node + tau_steps <= n_steps {
                let xi = res.prediction.at_node(node)[0];
                let x_ahead = res.x.at_node(node + tau_steps)[0];
                assert!(
                    (xi - x_ahead).abs() < 1e-10,
                    "prediction missed at node {node}: {xi} vs {x_ahead}"
                );
            }
        }
        // The loop contracts the state.
        assert!(res.x.at_node(n_steps)[0].abs() < 0.05);
    }

    #[test]
    fn first_sample_records_without_resetting() {
        let res = run_integrator(2.0, 0.5, 3);
        // Node 0 is a sampling instant, but the inter-sample prediction
        // keeps its initial value h(z0).
        assert_eq!(res.samples[0].time, 0.0);
        assert_eq!(res.samples[0].y, vec![2.0]);
        assert_eq!(res.w.at_node(0)[0], 0.5);
        // Later samples do reset it to the measurement.
        let s1 = &res.samples[1];
        let node = res.grid.steps_exact(s1.time, "sample").unwrap() as i64;
        assert_eq!(res.w.at_node(node)[0], s1.y[0]);
    }

    #[test]
    fn sequence_errors_enter_measurements_and_resets() {
        let inst = integrator_instance();
        let grid = TimeGrid::new(0.01, 1.0).unwrap();
        let partition = make_partition(&grid, 0.25, 0.25, 0).unwrap();
        let errors = vec![vec![0.125], vec![-0.25], vec![0.5], vec![0.0], vec![0.0]];
        let scheme = SchemeConfig {
            stages: 3,
            error: ErrorSource::Sequence {
                values: errors.clone(),
            },
        };
        let res = run_closed_loop(
            &inst,
            None,
            &scheme,
            &InitialConditions::new(vec![1.0], vec![1.0]),
            &grid,
            &partition,
        )
        .unwrap();
        assert_eq!(res.samples.len(), 5);
        for (s, e) in res.samples.iter().zip(&errors) {
            assert_eq!(&s.e, e);
            let node = res.grid.steps_exact(s.time, "sample").unwrap() as i64;
            let truth = res.x.at_node(node - res.measurement_delay_steps as i64)[0];
            assert!((s.y[0] - truth - e[0]).abs() < 1e-14);
            if s.index >= 1 {
                assert_eq!(res.w.at_node(node)[0], s.y[0]);
            }
        }
    }

    #[test]
    fn stable_loop_converges_and_predicts_ahead() {
        let inst = stable_instance();
        let grid = TimeGrid::new(0.01, 12.0).unwrap();
        let partition = make_partition(&grid, 0.2, 0.1, 21).unwrap();
        let res = run_closed_loop(
            &inst,
            None,
            &SchemeConfig::exact(3),
            &InitialConditions::new(vec![1.5], vec![0.5]),
            &grid,
            &partition,
        )
        .unwrap();
        let n_steps = res.grid.n_steps() as i64;
        let tau_steps = res.input_delay_steps as i64;
        assert!(res.x.at_node(n_steps)[0].abs() < 1e-3);
        assert!(res.z.at_node(n_steps)[0].abs() < 1e-3);
        // Prediction accuracy once the observer transient has died down:
        // what remains is the first-order chain discretization error, well
        // below this bound at h = 0.01.
        let mut worst: f64 = 0.0;
        for node in 400..=(n_steps - tau_steps) {
            let gap = (res.prediction.at_node(node)[0] - res.x.at_node(node + tau_steps)[0]).abs();
            worst = worst.max(gap);
        }
        assert!(worst < 2e-3, "prediction error {worst} too large");
        res.check_invariants(&inst).unwrap();
    }

    #[test]
    fn identical_configurations_reproduce_bit_identical_runs() {
        let a = run_integrator(2.0, 0.5, 9);
        let b = run_integrator(2.0, 0.5, 9);
        for node in 0..=a.grid.n_steps() as i64 {
            assert_eq!(a.x.at_node(node), b.x.at_node(node));
            assert_eq!(a.z.at_node(node), b.z.at_node(node));
            assert_eq!(a.u.at_node(node), b.u.at_node(node));
        }
        let c = run_integrator(2.0, 0.5, 10);
        let mut differs = false;
        for node in 0..=a.grid.n_steps() as i64 {
            differs |= a.x.at_node(node) != c.x.at_node(node);
        }
        assert!(differs, "a different partition seed must change the run");
    }

    #[test]
    fn stage_count_must_divide_delay_steps() {
        let inst = integrator_instance(); // 30 delay steps at h = 0.01
        let grid = TimeGrid::new(0.01, 1.0).unwrap();
        let partition = make_partition(&grid, 0.25, 0.1, 0).unwrap();
        let r = run_closed_loop(
            &inst,
            None,
            &SchemeConfig::exact(4),
            &InitialConditions::new(vec![1.0], vec![1.0]),
            &grid,
            &partition,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn csv_exports_have_consistent_shapes() {
        let res = run_integrator(1.0, 1.0, 2);
        let mut traj = Vec::new();
        res.write_trajectory_csv(&mut traj).unwrap();
        let text = String::from_utf8(traj).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert_eq!(header, "t,x1,z1,w1,xi1,u1");
        let n_rows = lines.count();
        assert_eq!(n_rows, res.node_count());
        let mut samp = Vec::new();
        res.write_samples_csv(&mut samp).unwrap();
        let text = String::from_utf8(samp).unwrap();
        assert_eq!(text.lines().next().unwrap(), "index,t,y1,e1");
        assert_eq!(text.lines().count(), res.samples.len() + 1);
    }

    fn toy_transformed() -> TransformedSystem {
        let outer = SystemBuilder::new(
            "toy-raw",
            2,
            2,
            2,
            InputSet::from_bounds(&[(-50.0, 50.0), (-50.0, 50.0)]).unwrap(),
            |x, v| vec![-x[0] + x[1] * x[1] + v[0], v[1]],
            |x| vec![x[0], x[1]],
            |_| vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .delays(0.2, 0.1)
        .build()
        .unwrap();
        let tr = TransformDefinition::new(
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
        );
        TransformedSystem::new(outer, tr).unwrap()
    }

    #[test]
    fn anticipating_channel_tracks_the_future_component() {
        let inst = stable_instance();
        let ts = toy_transformed();
        let grid = TimeGrid::new(0.01, 8.0).unwrap();
        let partition = make_partition(&grid, 0.2, 0.1, 17).unwrap();
        let res = run_closed_loop(
            &inst,
            Some(&ts),
            &SchemeConfig::exact(3),
            &InitialConditions::new(vec![1.0, 0.8], vec![0.5]).with_theta(vec![0.4]),
            &grid,
            &partition,
        )
        .unwrap();
        let theta = res.theta.as_ref().unwrap();
        let tau_steps = res.input_delay_steps as i64;
        let first_reset = res.partition.step_indices()[1] as i64;
        let mut worst: f64 = 0.0;
        for node in first_reset..=(res.grid.n_steps() as i64 - tau_steps) {
            let gap = (theta.at_node(node)[0] - res.x.at_node(node + tau_steps)[1]).abs();
            worst = worst.max(gap);
        }
        // Held-input discretization allows a first-order gap between resets.
        assert!(worst < 0.05, "channel tracking error {worst}");
        // The channel and the coupled component both settle.
        assert!(res.x.at_node(res.grid.n_steps() as i64)[1].abs() < 1e-2);
        assert!(res.x.at_node(res.grid.n_steps() as i64)[0].abs() < 1e-2);
    }

    #[test]
    fn decoupled_transform_reproduces_the_plain_run_bit_for_bit() {
        // With the coupling removed and the channel at rest, the transformed
        // loop must agree with the plain core loop exactly.
        let outer = SystemBuilder::new(
            "decoupled-raw",
            2,
            2,
            2,
            InputSet::from_bounds(&[(-50.0, 50.0), (-50.0, 50.0)]).unwrap(),
            |x, v| vec![-x[0] + v[0], v[1]],
            |x| vec![x[0], x[1]],
            |_| vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .delays(0.2, 0.1)
        .build()
        .unwrap();
        let tr = TransformDefinition::new(
            "decoupled-channel",
            1,
            vec![0],
            |x: &[f64]| vec![x[1]],
            |th: &[f64]| vec![0.0, -th[0]],
            |th: &[f64], u: &[f64]| vec![-th[0] + u[1]],
            |y: &[f64], cells: &[Vec<f64>], h: f64| {
                vec![y[1] + h * cells.iter().map(|c| c[1]).sum::<f64>()]
            },
            |u: &[f64]| vec![u[0], 0.0],
        );
        let ts = TransformedSystem::new(outer, tr).unwrap();
        let inst = stable_instance();
        let grid = TimeGrid::new(0.01, 5.0).unwrap();
        let partition = make_partition(&grid, 0.2, 0.1, 29).unwrap();
        let scheme = SchemeConfig::exact(3);
        let plain = run_closed_loop(
            &inst,
            None,
            &scheme,
            &InitialConditions::new(vec![1.2], vec![0.3]),
            &grid,
            &partition,
        )
        .unwrap();
        let wrapped = run_closed_loop(
            &inst,
            Some(&ts),
            &scheme,
            &InitialConditions::new(vec![1.2, 0.0], vec![0.3]).with_theta(vec![0.0]),
            &grid,
            &partition,
        )
        .unwrap();
        for node in 0..=grid.n_steps() as i64 {
            assert_eq!(plain.z.at_node(node), wrapped.z.at_node(node));
            assert_eq!(plain.u.at_node(node), wrapped.u.at_node(node));
            assert_eq!(plain.x.at_node(node)[0], wrapped.x.at_node(node)[0]);
            assert_eq!(wrapped.x.at_node(node)[1], 0.0);
        }
    }

    fn tiny_envelope_instance() -> SystemInstance {
        let sys = SystemBuilder::new(
            "integrator",
            1,
            1,
            1,
            InputSet::symmetric(10.0).unwrap(),
            |_, u| vec![u[0]],
            |x| vec![x[0]],
            |_| vec![vec![1.0]],
        )
        .delays(0.2, 0.1)
        .build()
        .unwrap();
        let cert = CertificateBuilder::new(
            |x| 0.5 * x[0] * x[0],
            |x| vec![x[0]],
            |x| 0.25 * x[0] * x[0],
            |x| x[0] * x[0],
            |x| vec![2.0 * x[0]],
            |x: &[f64]| vec![-x[0]],
            vec![vec![1.0]],
            vec![vec![-1.0]],
        )
        .constants(CertificateConstants {
            absorbing_level: 0.02,
            ramp_lo: 0.02,
            ramp_hi: 0.04,
            margin_split: 0.5,
            state_decay: 0.25,
            error_decay: 0.5,
            p_coercivity: 0.25,
            q_coercivity: 0.0,
        })
        .build(1)
        .unwrap();
        let shaping =
            ShapingFunctions::standard(0.02, 0.04, |z: &[f64]| 3.0 + 0.5 * z[0] * z[0], true)
                .unwrap();
        SystemInstance::new(sys, cert, shaping).unwrap()
    }

    #[test]
    fn invariant_check_flags_an_escaping_observer_level() {
        // The observer starts near the origin and climbs toward the plant
        // state; judged against a certificate whose envelope is far below
        // that excursion, the level check must report the violation.
        let res = run_integrator(2.0, 0.1, 1);
        let err = res.check_invariants(&tiny_envelope_instance()).unwrap_err();
        match err {
            Error::Invariant {
                what, value, bound, ..
            } => {
                assert!(what.contains("level"));
                // The first crossing of the envelope is reported.
                assert!(value > bound && bound == 0.04);
            }
            other => panic!("expected an invariant violation, got {other:?}"),
        }
    }

    #[test]
    fn invariant_check_flags_inadmissible_inputs() {
        // The recorded inputs reach magnitude ~2; an instance whose input
        // set stops at 0.5 must reject them.
        let res = run_integrator(2.0, 2.0, 1);
        let narrow_sys = SystemBuilder::new(
            "integrator",
            1,
            1,
            1,
            InputSet::symmetric(0.5).unwrap(),
            |_, u| vec![u[0]],
            |x| vec![x[0]],
            |_| vec![vec![1.0]],
        )
        .delays(0.2, 0.1)
        .build()
        .unwrap();
        let narrow_cert = quadratic_certificate(|x: &[f64]| vec![-x[0].clamp(-0.5, 0.5)]);
        let narrow = SystemInstance::new(narrow_sys, narrow_cert, scalar_shaping()).unwrap();
        let err = res.check_invariants(&narrow).unwrap_err();
        assert!(matches!(err, Error::Invariant { ref what, .. } if what.contains("input")));
    }
}
