//! Fixed-step simulation of the coupled plant/observer/controller system.
//!
//! One run integrates every agent's plant, the leader observers, and the
//! variant-specific follower machinery over a maneuver plan. Reference jumps
//! at segment switches are allowed: integration continues through them and
//! convergence is judged per segment tail. Error series are always recomputed
//! from stored states, never integrated as separate dynamics.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::agents::{self, Role};
use crate::error::{Error, Result};
use crate::formation::{edge_weights, FollowerMatrixSet, NominalFormation};
use crate::gains::{FollowerVariant, GainSet};
use crate::maneuver::{desired_leader_state, ManeuverPlan, ShapeSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
    Euler,
}

/// How observer states start relative to the plant states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObserverInit {
    /// All estimates start at zero.
    Zero,
    /// Estimates start on the true states (edge estimates on the true
    /// relative states).
    MatchState,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Signum boundary layer width.
    pub epsilon: f64,
    pub integrator: Integrator,
    /// Recorded for provenance; randomness is injected by the caller through
    /// the initial conditions.
    pub seed: u64,
    pub assert_bounds: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        if self.dt > 1e-2 {
            return Err(Error::invalid(
                "dt must not exceed 1e-2 (stability guard for the signum term)",
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !self.t_end.is_finite() {
            return Err(Error::invalid("t_end must be finite"));
        }
        Ok(())
    }
}

/// Initial plant states plus the observer seeding policy.
#[derive(Debug, Clone)]
pub struct InitialState {
    pub x0: Vec<DVector<f64>>,
    pub observer: ObserverInit,
}

const BLOWUP_LIMIT: f64 = 1e9;

/// Time series produced by one run.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub order: usize,
    pub n: usize,
    pub n_leaders: usize,
    pub variant: FollowerVariant,
    pub times: Vec<f64>,
    /// `[sample][agent]` plant states.
    pub states: Vec<Vec<DVector<f64>>>,
    /// Agents that carry a motion-state observer, ascending.
    pub observer_agents: Vec<usize>,
    /// `[sample][index into observer_agents]` estimates.
    pub estimates: Vec<Vec<DVector<f64>>>,
    /// Edges `(follower, neighbor)` of the relative-output variant.
    pub edges: Vec<(usize, usize)>,
    /// `[sample][index into edges]` per-edge relative estimates.
    pub edge_estimates: Vec<Vec<DVector<f64>>>,
    /// `[sample][agent]` control inputs.
    pub inputs: Vec<Vec<Vector3<f64>>>,
    /// `[sample][leader]` tracking error norms `‖x_i − x*_i‖`.
    pub leader_error_norms: Vec<Vec<f64>>,
    /// `[sample]` stacked follower error norm.
    pub follower_error_norm: Vec<f64>,
    /// `[sample][follower]` per-follower block of the stacked error.
    pub follower_block_norms: Vec<Vec<f64>>,
    /// `[sample][index into observer_agents]` estimation error norms.
    pub observer_error_norms: Vec<Vec<f64>>,
}

impl SimTrace {
    pub fn n_followers(&self) -> usize {
        self.n - self.n_leaders
    }

    pub fn samples(&self) -> usize {
        self.times.len()
    }

    pub fn role(&self, agent: usize) -> Role {
        if agent < self.n_leaders {
            Role::Leader
        } else {
            Role::Follower
        }
    }

    /// Error norm reported per agent: leaders their tracking error, followers
    /// their block of the stacked follower error.
    pub fn agent_error_norm(&self, sample: usize, agent: usize) -> f64 {
        if agent < self.n_leaders {
            self.leader_error_norms[sample][agent]
        } else {
            self.follower_block_norms[sample][agent - self.n_leaders]
        }
    }
}

/// Stacked follower tracking error from raw states.
///
/// With estimates available the per-agent stack is `z_i = (x_i, η_i)`,
/// otherwise just `x_i`; either way the error of follower block `f` is
/// `z_f + Σ_l map[f, l] · z_l`. This is the single arithmetic path used both
/// while recording and when summaries recompute errors.
pub fn follower_error_stack(
    map: &DMatrix<f64>,
    states: &[DVector<f64>],
    estimates: Option<&[DVector<f64>]>,
    n_leaders: usize,
) -> DVector<f64> {
    let n = states.len();
    let n_f = n - n_leaders;
    let xdim = states[0].len();
    let zdim = if estimates.is_some() { 2 * xdim } else { xdim };
    let stack = |i: usize| -> DVector<f64> {
        match estimates {
            Some(eta) => {
                let mut z = DVector::zeros(zdim);
                z.rows_mut(0, xdim).copy_from(&states[i]);
                z.rows_mut(xdim, xdim).copy_from(&eta[i]);
                z
            }
            None => states[i].clone(),
        }
    };
    let mut e = DVector::zeros(n_f * zdim);
    for f in 0..n_f {
        let mut block = stack(n_leaders + f);
        for l in 0..n_leaders {
            let w = map[(f, l)];
            if w != 0.0 {
                block += w * stack(l);
            }
        }
        e.rows_mut(f * zdim, zdim).copy_from(&block);
    }
    e
}

struct Layout {
    n: usize,
    n_leaders: usize,
    xdim: usize,
    observer_agents: Vec<usize>,
    edges: Vec<(usize, usize)>,
    total: usize,
}

impl Layout {
    fn new(n: usize, n_leaders: usize, xdim: usize, variant: FollowerVariant, edges: Vec<(usize, usize)>) -> Self {
        let observer_agents: Vec<usize> = if variant.has_follower_observers() {
            (0..n).collect()
        } else {
            (0..n_leaders).collect()
        };
        let total = n * xdim + observer_agents.len() * xdim + edges.len() * xdim;
        Self {
            n,
            n_leaders,
            xdim,
            observer_agents,
            edges,
            total,
        }
    }

    fn state(&self, flat: &DVector<f64>, agent: usize) -> DVector<f64> {
        flat.rows(agent * self.xdim, self.xdim).into_owned()
    }

    fn estimate_offset(&self, obs_idx: usize) -> usize {
        (self.n + obs_idx) * self.xdim
    }

    fn edge_offset(&self, edge_idx: usize) -> usize {
        (self.n + self.observer_agents.len() + edge_idx) * self.xdim
    }

    fn estimate_index(&self, agent: usize) -> Option<usize> {
        self.observer_agents.binary_search(&agent).ok()
    }
}

struct Engine<'a> {
    mats: &'a FollowerMatrixSet,
    plan: &'a ManeuverPlan,
    shape: &'a ShapeSolution,
    gains: &'a GainSet,
    layout: Layout,
    /// Per follower: edge weights of the variant's follower matrix.
    weights: Vec<BTreeMap<usize, f64>>,
    map: DMatrix<f64>,
    epsilon: f64,
}

impl<'a> Engine<'a> {
    fn new(
        formation: &'a NominalFormation,
        mats: &'a FollowerMatrixSet,
        plan: &'a ManeuverPlan,
        shape: &'a ShapeSolution,
        gains: &'a GainSet,
        epsilon: f64,
    ) -> Result<Self> {
        let n = formation.n();
        let n_l = formation.n_leaders();
        let n_f = formation.n_followers();
        if plan.n_leaders() != n_l {
            return Err(Error::DimensionMismatch {
                expected: n_l,
                got: plan.n_leaders(),
            });
        }
        if mats.n() != n || mats.n_leaders() != n_l {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: mats.n(),
            });
        }
        let variant = gains.variant;
        let matrix = match variant {
            FollowerVariant::OmegaHat => mats
                .omega_hat()
                .ok_or(Error::NotLocalizable)?,
            _ => mats.omega_bar().ok_or(Error::NotLocalizable)?,
        };
        let mut weights = Vec::with_capacity(n_f);
        for f in 0..n_f {
            weights.push(edge_weights(matrix, n_l, f)?);
        }
        let mut edges = Vec::new();
        if variant == FollowerVariant::RelativeOutput {
            for (f, w) in weights.iter().enumerate() {
                for &j in w.keys() {
                    if j >= n_l {
                        return Err(Error::invalid(
                            "relative-output variant requires leader-only neighbor weights",
                        ));
                    }
                    edges.push((n_l + f, j));
                }
            }
        }
        let map = mats.localization_map()?;
        let layout = Layout::new(n, n_l, gains.state_dim(), variant, edges);
        Ok(Self {
            mats,
            plan,
            shape,
            gains,
            layout,
            weights,
            map,
            epsilon,
        })
    }

    fn clamp_time(&self, t: f64) -> f64 {
        let end = self.plan.end();
        let start = self.plan.start();
        if t > end && t - end < 1e-9 * end.abs().max(1.0) {
            end
        } else if t < start && start - t < 1e-9 * start.abs().max(1.0) {
            start
        } else {
            t
        }
    }

    /// Derivative of the flat state plus every agent's control input at `t`.
    fn eval(&self, t: f64, flat: &DVector<f64>) -> Result<(DVector<f64>, Vec<Vector3<f64>>)> {
        let t = self.clamp_time(t);
        let lay = &self.layout;
        let n = lay.n;
        let n_l = lay.n_leaders;
        let xdim = lay.xdim;
        let m = self.gains.order();
        let plant = &self.gains.plant;

        let states: Vec<DVector<f64>> = (0..n).map(|i| lay.state(flat, i)).collect();
        let outputs: Vec<DVector<f64>> = states
            .iter()
            .map(|x| agents::measure_output(plant, x))
            .collect::<Result<_>>()?;

        let mut inputs = vec![Vector3::<f64>::zeros(); n];
        let mut deriv = DVector::<f64>::zeros(lay.total);

        // leaders: tracking law + observer
        for leader in 0..n_l {
            let desired = desired_leader_state(self.plan, self.shape, t, leader, m)?;
            let obs_idx = lay.estimate_index(leader).expect("leaders have observers");
            let eta = flat.rows(lay.estimate_offset(obs_idx), xdim).into_owned();
            let (u, eta_dot) = agents::leader_step(
                leader,
                Role::Leader,
                &states[leader],
                &eta,
                &desired,
                self.gains,
            )?;
            inputs[leader] = u;
            deriv
                .rows_mut(lay.estimate_offset(obs_idx), xdim)
                .copy_from(&eta_dot);
        }

        // followers, by variant
        match self.gains.variant {
            FollowerVariant::OmegaBar | FollowerVariant::OmegaHat => {
                for f in 0..(n - n_l) {
                    let agent = n_l + f;
                    let obs_idx = lay.estimate_index(agent).expect("followers have observers");
                    let eta_i = flat.rows(lay.estimate_offset(obs_idx), xdim).into_owned();
                    let mut neighbor_eta = BTreeMap::new();
                    let mut neighbor_y = BTreeMap::new();
                    for &j in self.weights[f].keys() {
                        let j_obs = lay.estimate_index(j).ok_or(Error::MissingNeighbor {
                            agent,
                            neighbor: j,
                        })?;
                        neighbor_eta
                            .insert(j, flat.rows(lay.estimate_offset(j_obs), xdim).into_owned());
                        neighbor_y.insert(j, outputs[j].clone());
                    }
                    let (u, eta_dot) = agents::follower_step_absolute(
                        agent,
                        Role::Follower,
                        &eta_i,
                        &neighbor_eta,
                        &self.weights[f],
                        &outputs[agent],
                        &neighbor_y,
                        self.gains,
                        self.epsilon,
                    )?;
                    inputs[agent] = u;
                    deriv
                        .rows_mut(lay.estimate_offset(obs_idx), xdim)
                        .copy_from(&eta_dot);
                }
            }
            FollowerVariant::RelativeOutput => {
                for f in 0..(n - n_l) {
                    let agent = n_l + f;
                    let mut eta_edges = BTreeMap::new();
                    let mut rel_outputs = BTreeMap::new();
                    let mut neighbor_inputs = BTreeMap::new();
                    for (edge_idx, &(i, j)) in lay.edges.iter().enumerate() {
                        if i != agent {
                            continue;
                        }
                        eta_edges.insert(j, flat.rows(lay.edge_offset(edge_idx), xdim).into_owned());
                        rel_outputs.insert(j, &outputs[agent] - &outputs[j]);
                        // weighted neighbors are leaders, whose inputs are ready
                        neighbor_inputs.insert(j, inputs[j]);
                    }
                    let (u, edge_dots) = agents::follower_step_relative(
                        agent,
                        &eta_edges,
                        &rel_outputs,
                        &neighbor_inputs,
                        &self.weights[f],
                        self.gains,
                        self.epsilon,
                    )?;
                    inputs[agent] = u;
                    for (edge_idx, &(i, j)) in lay.edges.iter().enumerate() {
                        if i != agent {
                            continue;
                        }
                        deriv
                            .rows_mut(lay.edge_offset(edge_idx), xdim)
                            .copy_from(&edge_dots[&j]);
                    }
                }
            }
            FollowerVariant::StateFeedback => {
                for f in 0..(n - n_l) {
                    let agent = n_l + f;
                    let mut neighbor_x = BTreeMap::new();
                    for &j in self.weights[f].keys() {
                        neighbor_x.insert(j, states[j].clone());
                    }
                    let u = agents::follower_step_state_feedback(
                        agent,
                        &states[agent],
                        &neighbor_x,
                        &self.weights[f],
                        self.gains,
                        self.epsilon,
                    )?;
                    inputs[agent] = u;
                }
            }
        }

        for i in 0..n {
            let dx = agents::plant_rhs(plant, &states[i], &inputs[i])?;
            deriv.rows_mut(i * xdim, xdim).copy_from(&dx);
        }
        Ok((deriv, inputs))
    }
}

/// Integrate the closed loop over the plan horizon.
///
/// The follower variant is taken from the gain set (the coupling gains are
/// variant-specific). Initial observer states follow `init.observer`.
#[allow(clippy::too_many_arguments)]
pub fn run_scenario(
    formation: &NominalFormation,
    mats: &FollowerMatrixSet,
    plan: &ManeuverPlan,
    shape: &ShapeSolution,
    gains: &GainSet,
    config: &SimConfig,
    init: &InitialState,
) -> Result<SimTrace> {
    config.validate()?;
    let n = formation.n();
    let n_l = formation.n_leaders();
    let xdim = gains.state_dim();
    let m = gains.order();
    if init.x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: init.x0.len(),
        });
    }
    for x in &init.x0 {
        if x.len() != xdim {
            return Err(Error::DimensionMismatch {
                expected: xdim,
                got: x.len(),
            });
        }
    }
    let t0 = plan.start();
    if config.t_end <= t0 || config.t_end > plan.end() + 1e-12 {
        return Err(Error::TimeOutOfRange {
            t: config.t_end,
            start: t0,
            end: plan.end(),
        });
    }

    let engine = Engine::new(formation, mats, plan, shape, gains, config.epsilon)?;
    let lay = &engine.layout;

    // flat initial state
    let mut flat = DVector::<f64>::zeros(lay.total);
    for i in 0..n {
        flat.rows_mut(i * xdim, xdim).copy_from(&init.x0[i]);
    }
    match init.observer {
        ObserverInit::Zero => {}
        ObserverInit::MatchState => {
            for (obs_idx, &agent) in lay.observer_agents.iter().enumerate() {
                let offset = lay.estimate_offset(obs_idx);
                let value = init.x0[agent].clone();
                flat.rows_mut(offset, xdim).copy_from(&value);
            }
            for (edge_idx, &(i, j)) in lay.edges.iter().enumerate() {
                let rel = &init.x0[i] - &init.x0[j];
                flat.rows_mut(lay.edge_offset(edge_idx), xdim).copy_from(&rel);
            }
        }
    }

    // the declared initial-error bound must hold before the run counts
    if config.assert_bounds {
        for leader in 0..n_l {
            let desired = desired_leader_state(plan, shape, t0, leader, m)?;
            let e0 = (&init.x0[leader] - &desired.x).norm();
            let obs_idx = lay.estimate_index(leader).expect("leaders have observers");
            let eta0 = flat.rows(lay.estimate_offset(obs_idx), xdim).into_owned();
            let e_eta0 = (eta0 - &init.x0[leader]).norm();
            let bound = gains.zeta * (1.0 + 1e-9) + 1e-12;
            for (norm, _which) in [(e0, "state"), (e_eta0, "estimate")] {
                if norm > bound {
                    return Err(Error::ZetaViolated {
                        agent: leader,
                        error_norm: norm,
                        zeta: gains.zeta,
                    });
                }
            }
        }
    }

    let dt = config.dt;
    let span = config.t_end - t0;
    let mut n_steps = (span / dt).floor() as usize;
    let mut last_dt = span - n_steps as f64 * dt;
    if last_dt < 1e-12 {
        last_dt = 0.0;
    } else {
        n_steps += 1;
    }
    let total_samples = n_steps + 1;

    let mut trace = SimTrace {
        order: m,
        n,
        n_leaders: n_l,
        variant: gains.variant,
        times: Vec::with_capacity(total_samples),
        states: Vec::with_capacity(total_samples),
        observer_agents: lay.observer_agents.clone(),
        estimates: Vec::with_capacity(total_samples),
        edges: lay.edges.clone(),
        edge_estimates: Vec::with_capacity(total_samples),
        inputs: Vec::with_capacity(total_samples),
        leader_error_norms: Vec::with_capacity(total_samples),
        follower_error_norm: Vec::with_capacity(total_samples),
        follower_block_norms: Vec::with_capacity(total_samples),
        observer_error_norms: Vec::with_capacity(total_samples),
    };

    let record = |trace: &mut SimTrace, t: f64, flat: &DVector<f64>, inputs: Vec<Vector3<f64>>| -> Result<()> {
        let states: Vec<DVector<f64>> = (0..n).map(|i| lay.state(flat, i)).collect();
        let estimates: Vec<DVector<f64>> = (0..lay.observer_agents.len())
            .map(|k| flat.rows(lay.estimate_offset(k), xdim).into_owned())
            .collect();
        let edge_estimates: Vec<DVector<f64>> = (0..lay.edges.len())
            .map(|k| flat.rows(lay.edge_offset(k), xdim).into_owned())
            .collect();

        let mut leader_errs = Vec::with_capacity(n_l);
        for leader in 0..n_l {
            let desired = desired_leader_state(plan, shape, engine.clamp_time(t), leader, m)?;
            leader_errs.push((&states[leader] - &desired.x).norm());
        }

        let estimates_for_error: Option<&[DVector<f64>]> =
            if gains.variant.has_follower_observers() {
                Some(&estimates)
            } else {
                None
            };
        let e_f = follower_error_stack(&engine.map, &states, estimates_for_error, n_l);
        let zdim = e_f.len() / (n - n_l);
        let block_norms: Vec<f64> = (0..(n - n_l))
            .map(|f| e_f.rows(f * zdim, zdim).norm())
            .collect();

        let obs_errs: Vec<f64> = lay
            .observer_agents
            .iter()
            .enumerate()
            .map(|(k, &agent)| (&estimates[k] - &states[agent]).norm())
            .collect();

        trace.times.push(t);
        trace.states.push(states);
        trace.estimates.push(estimates);
        trace.edge_estimates.push(edge_estimates);
        trace.inputs.push(inputs);
        trace.leader_error_norms.push(leader_errs);
        trace.follower_error_norm.push(e_f.norm());
        trace.follower_block_norms.push(block_norms);
        trace.observer_error_norms.push(obs_errs);
        Ok(())
    };

    let mut t = t0;
    for step in 0..=n_steps {
        let (k1, inputs) = engine.eval(t, &flat)?;
        record(&mut trace, t, &flat, inputs)?;
        if step == n_steps {
            break;
        }
        let h = if step + 1 == n_steps && last_dt > 0.0 {
            last_dt
        } else {
            dt
        };
        match config.integrator {
            Integrator::Euler => {
                flat += h * k1;
            }
            Integrator::Rk4 => {
                let (k2, _) = engine.eval(t + 0.5 * h, &(&flat + (0.5 * h) * &k1))?;
                let (k3, _) = engine.eval(t + 0.5 * h, &(&flat + (0.5 * h) * &k2))?;
                let (k4, _) = engine.eval(t + h, &(&flat + h * &k3))?;
                flat += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
        t = if step + 1 == n_steps {
            config.t_end
        } else {
            t0 + dt * (step + 1) as f64
        };
        let max_abs = flat.amax();
        if !max_abs.is_finite() || max_abs > BLOWUP_LIMIT {
            return Err(Error::NumericalBlowup {
                t,
                limit: BLOWUP_LIMIT,
            });
        }
    }
    Ok(trace)
}

/// Per-segment error statistics of a finished run.
#[derive(Debug, Clone)]
pub struct SegmentStats {
    pub t_start: f64,
    pub t_end: f64,
    /// Max over the segment's final 20% of the worst leader error.
    pub tail_max_leader_error: f64,
    /// Max over the segment's final 20% of the stacked follower error.
    pub tail_max_follower_error: f64,
    pub terminal_leader_error: f64,
    pub terminal_follower_error: f64,
}

#[derive(Debug, Clone)]
pub struct ErrorSummary {
    pub segments: Vec<SegmentStats>,
    pub max_leader_error: f64,
    pub max_follower_error: f64,
    pub max_observer_error: f64,
    pub final_leader_error: f64,
    pub final_follower_error: f64,
}

/// Summarize tracking errors; all series are recomputed from the stored
/// states through the same arithmetic used during recording.
pub fn tracking_errors(
    trace: &SimTrace,
    mats: &FollowerMatrixSet,
    plan: &ManeuverPlan,
    _shape: &ShapeSolution,
) -> Result<ErrorSummary> {
    let map = mats.localization_map()?;
    let mut segments = Vec::new();
    for seg in plan.segments() {
        let t_lo = seg.t_start;
        let t_hi = seg.t_end;
        let tail_lo = t_hi - 0.2 * (t_hi - t_lo);
        let mut tail_leader = 0.0_f64;
        let mut tail_follower = 0.0_f64;
        let mut terminal: Option<(f64, f64)> = None;
        let mut seen = false;
        for (idx, &t) in trace.times.iter().enumerate() {
            if t < t_lo || t > t_hi {
                continue;
            }
            seen = true;
            let worst_leader = trace.leader_error_norms[idx]
                .iter()
                .copied()
                .fold(0.0_f64, f64::max);
            // recompute instead of trusting the stored series
            let estimates: Option<&[DVector<f64>]> = if trace.variant.has_follower_observers() {
                Some(&trace.estimates[idx])
            } else {
                None
            };
            let e_f = follower_error_stack(&map, &trace.states[idx], estimates, trace.n_leaders);
            let ef_norm = e_f.norm();
            debug_assert_eq!(ef_norm, trace.follower_error_norm[idx]);
            if t >= tail_lo {
                tail_leader = tail_leader.max(worst_leader);
                tail_follower = tail_follower.max(ef_norm);
            }
            terminal = Some((worst_leader, ef_norm));
        }
        if seen {
            let (tl, tf) = terminal.unwrap();
            segments.push(SegmentStats {
                t_start: t_lo,
                t_end: t_hi,
                tail_max_leader_error: tail_leader,
                tail_max_follower_error: tail_follower,
                terminal_leader_error: tl,
                terminal_follower_error: tf,
            });
        }
    }

    let max_leader_error = trace
        .leader_error_norms
        .iter()
        .flat_map(|row| row.iter().copied())
        .fold(0.0_f64, f64::max);
    let max_follower_error = trace
        .follower_error_norm
        .iter()
        .copied()
        .fold(0.0_f64, f64::max);
    let max_observer_error = trace
        .observer_error_norms
        .iter()
        .flat_map(|row| row.iter().copied())
        .fold(0.0_f64, f64::max);
    let last = trace.samples() - 1;
    Ok(ErrorSummary {
        segments,
        max_leader_error,
        max_follower_error,
        max_observer_error,
        final_leader_error: trace.leader_error_norms[last]
            .iter()
            .copied()
            .fold(0.0_f64, f64::max),
        final_follower_error: trace.follower_error_norm[last],
    })
}

/// Leader input bound check over a finished run.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub gamma_u: f64,
    /// Per leader: the supremum of `‖u_i(t)‖` and when it occurred.
    pub per_leader_sup: Vec<(f64, f64)>,
    /// `(leader, t, norm)` samples that exceed the bound.
    pub violations: Vec<(usize, f64, f64)>,
    /// `γ_u − max_i sup_t ‖u_i‖`.
    pub slack: f64,
}

/// Check `sup_t ‖u_i(t)‖₂ ≤ γ_u` for every leader. With `assert` set, any
/// violation is returned as an error naming the first offender.
pub fn verify_bounds(trace: &SimTrace, gains: &GainSet, assert: bool) -> Result<BoundReport> {
    let gamma_u = gains.gamma_u;
    let mut per_leader_sup = vec![(0.0_f64, trace.times[0]); trace.n_leaders];
    let mut violations = Vec::new();
    for (idx, &t) in trace.times.iter().enumerate() {
        for leader in 0..trace.n_leaders {
            let norm = trace.inputs[idx][leader].norm();
            if norm > per_leader_sup[leader].0 {
                per_leader_sup[leader] = (norm, t);
            }
            if norm > gamma_u * (1.0 + 1e-9) + 1e-12 {
                violations.push((leader, t, norm));
            }
        }
    }
    let max_sup = per_leader_sup
        .iter()
        .map(|(s, _)| *s)
        .fold(0.0_f64, f64::max);
    let report = BoundReport {
        gamma_u,
        per_leader_sup,
        violations,
        slack: gamma_u - max_sup,
    };
    if assert {
        if let Some(&(agent, t, norm)) = report.violations.first() {
            return Err(Error::BoundViolated {
                agent,
                t,
                norm,
                gamma_u,
            });
        }
    }
    Ok(report)
}
