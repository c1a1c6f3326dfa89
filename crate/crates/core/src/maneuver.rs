//! Time-varying maneuver plans and the desired formation they induce.
//!
//! The desired formation is `p*(t) = a(t) [I_n ⊗ Q(t)] g(t) + 1_n ⊗ b(t)`
//! with scale `a`, rotation `Q`, translation `b`, and shape `g`. Leaders carry
//! the leader part `g_l` of the shape; the follower part solves the same
//! displacement constraints as the nominal formation. All time derivatives are
//! evaluated analytically through derivative arrays (jets), never by runtime
//! numerical differentiation, so the boundedness assumptions on the reference
//! derivatives can be certified per segment.

use nalgebra::{DVector, Matrix3, Unit, Vector3};

use crate::error::{Error, Result};
use crate::formation::FollowerMatrixSet;
use crate::linalg;

/// Binomial coefficient table row access for small orders.
fn binomial(n: usize, k: usize) -> f64 {
    let mut value = 1.0_f64;
    for i in 0..k {
        value = value * (n - i) as f64 / (i + 1) as f64;
    }
    value
}

/// Derivative array of a scalar signal at one time: `jet[k] = f^(k)(t)`.
pub type Jet = Vec<f64>;

fn jet_zero(order: usize) -> Jet {
    vec![0.0; order + 1]
}

fn jet_add(a: &Jet, b: &Jet) -> Jet {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn jet_axpy(acc: &mut Jet, s: f64, a: &Jet) {
    for (dst, x) in acc.iter_mut().zip(a) {
        *dst += s * x;
    }
}

/// Leibniz product rule on derivative arrays.
fn jet_mul(a: &Jet, b: &Jet) -> Jet {
    let ord = a.len() - 1;
    let mut out = jet_zero(ord);
    for (n, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..=n {
            acc += binomial(n, k) * a[k] * b[n - k];
        }
        *slot = acc;
    }
    out
}

/// One sinusoidal term `amplitude · sin(omega t + phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Sinusoid {
    fn eval_jet(&self, t: f64, order: usize) -> Jet {
        let arg = self.omega * t + self.phase;
        let (s, c) = arg.sin_cos();
        // derivatives of sin cycle through (sin, cos, −sin, −cos)
        let cycle = [s, c, -s, -c];
        (0..=order)
            .map(|k| self.amplitude * self.omega.powi(k as i32) * cycle[k % 4])
            .collect()
    }
}

/// Closed-form scalar time function: polynomial plus sinusoidal terms.
///
/// Polynomials are stored by ascending-degree coefficients in global time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarFn {
    pub coeffs: Vec<f64>,
    pub sines: Vec<Sinusoid>,
}

impl ScalarFn {
    pub fn constant(c: f64) -> Self {
        Self {
            coeffs: vec![c],
            sines: Vec::new(),
        }
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        Self {
            coeffs,
            sines: Vec::new(),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_jet(t, 0)[0]
    }

    /// Value and derivatives `0..=order` at `t`.
    pub fn eval_jet(&self, t: f64, order: usize) -> Jet {
        let mut jet = jet_zero(order);
        for (deg, &c) in self.coeffs.iter().enumerate() {
            for (k, slot) in jet.iter_mut().enumerate() {
                if k > deg {
                    break;
                }
                // d^k/dt^k t^deg = deg!/(deg-k)! t^(deg-k)
                let mut fall = 1.0;
                for i in 0..k {
                    fall *= (deg - i) as f64;
                }
                *slot += c * fall * t.powi((deg - k) as i32);
            }
        }
        for sine in &self.sines {
            let sj = sine.eval_jet(t, order);
            jet = jet_add(&jet, &sj);
        }
        jet
    }

    /// `self + s · other`, used to form follower shapes from leader shapes.
    fn axpy(&mut self, s: f64, other: &ScalarFn) {
        if s == 0.0 {
            return;
        }
        if self.coeffs.len() < other.coeffs.len() {
            self.coeffs.resize(other.coeffs.len(), 0.0);
        }
        for (dst, &c) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *dst += s * c;
        }
        for sine in &other.sines {
            self.sines.push(Sinusoid {
                amplitude: s * sine.amplitude,
                omega: sine.omega,
                phase: sine.phase,
            });
        }
    }
}

/// Rotation as a fixed axis with a time-varying angle.
#[derive(Debug, Clone)]
pub struct RotationSpec {
    axis: Unit<Vector3<f64>>,
    pub angle: ScalarFn,
}

impl RotationSpec {
    pub fn new(axis: Vector3<f64>, angle: ScalarFn) -> Result<Self> {
        let norm = axis.norm();
        if !norm.is_finite() || norm <= 1e-12 {
            return Err(Error::invalid("rotation axis must be nonzero"));
        }
        Ok(Self {
            axis: Unit::new_normalize(axis),
            angle,
        })
    }

    pub fn identity() -> Self {
        Self {
            axis: Unit::new_unchecked(Vector3::z()),
            angle: ScalarFn::constant(0.0),
        }
    }

    pub fn axis(&self) -> Vector3<f64> {
        self.axis.into_inner()
    }

    /// Rotation matrix and its time derivatives `0..=order` via the axis-angle
    /// (Rodrigues) form `Q = I + sin θ K + (1 − cos θ) K²`.
    pub fn eval_jet(&self, t: f64, order: usize) -> Vec<Matrix3<f64>> {
        let theta = self.angle.eval_jet(t, order);
        // sin/cos of a composed signal by the chain-rule recurrence
        let mut s = jet_zero(order);
        let mut c = jet_zero(order);
        s[0] = theta[0].sin();
        c[0] = theta[0].cos();
        for n in 0..order {
            let mut sn = 0.0;
            let mut cn = 0.0;
            for k in 0..=n {
                let b = binomial(n, k);
                sn += b * c[k] * theta[n - k + 1];
                cn -= b * s[k] * theta[n - k + 1];
            }
            s[n + 1] = sn;
            c[n + 1] = cn;
        }

        let k_mat = skew(&self.axis);
        let k2 = k_mat * k_mat;
        (0..=order)
            .map(|n| {
                let mut q = k_mat * s[n] + k2 * if n == 0 { 1.0 - c[0] } else { -c[n] };
                if n == 0 {
                    q += Matrix3::identity();
                }
                q
            })
            .collect()
    }

    pub fn eval(&self, t: f64) -> Matrix3<f64> {
        self.eval_jet(t, 0)[0]
    }
}

fn skew(axis: &Unit<Vector3<f64>>) -> Matrix3<f64> {
    let a = axis.into_inner();
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// One piecewise-smooth interval of a maneuver plan.
///
/// All fields are closed forms in global time, valid on `[t_start, t_end)`
/// (the final segment of a plan also covers its right endpoint). Switching
/// between segments may be discontinuous; the simulator treats such switches
/// as reference steps.
#[derive(Debug, Clone)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub scale: ScalarFn,
    pub rotation: RotationSpec,
    pub translation: [ScalarFn; 3],
    /// Shape entries of the leaders, one `[x, y, z]` triple per leader.
    pub shape_leaders: Vec<[ScalarFn; 3]>,
}

/// Piecewise maneuver plan for a fixed leader count.
#[derive(Debug, Clone)]
pub struct ManeuverPlan {
    segments: Vec<Segment>,
    n_leaders: usize,
}

impl ManeuverPlan {
    pub fn new(segments: Vec<Segment>, n_leaders: usize) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("maneuver plan needs at least one segment"));
        }
        for (i, seg) in segments.iter().enumerate() {
            if !(seg.t_end > seg.t_start) {
                return Err(Error::invalid(format!(
                    "segment {i} has empty interval [{}, {})",
                    seg.t_start, seg.t_end
                )));
            }
            if seg.shape_leaders.len() != n_leaders {
                return Err(Error::invalid(format!(
                    "segment {i} provides {} leader shapes, expected {n_leaders}",
                    seg.shape_leaders.len()
                )));
            }
            if i > 0 && (seg.t_start - segments[i - 1].t_end).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "segment {i} starts at {} but the previous one ends at {}",
                    seg.t_start,
                    segments[i - 1].t_end
                )));
            }
        }
        let plan = Self {
            segments,
            n_leaders,
        };
        plan.check_scale_positive()?;
        Ok(plan)
    }

    fn check_scale_positive(&self) -> Result<()> {
        for (i, seg) in self.segments.iter().enumerate() {
            let steps = 128;
            for k in 0..=steps {
                let t = seg.t_start + (seg.t_end - seg.t_start) * k as f64 / steps as f64;
                let a = seg.scale.eval(t);
                if !(a > 0.0) {
                    return Err(Error::invalid(format!(
                        "scale must stay positive: segment {i} gives a({t}) = {a}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_leaders(&self) -> usize {
        self.n_leaders
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].t_start
    }

    pub fn end(&self) -> f64 {
        self.segments[self.segments.len() - 1].t_end
    }

    /// Segment covering `t`; intervals are half-open except the last.
    pub fn segment_index(&self, t: f64) -> Result<usize> {
        if t < self.start() || t > self.end() {
            return Err(Error::TimeOutOfRange {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        let idx = self
            .segments
            .partition_point(|seg| seg.t_end <= t)
            .min(self.segments.len() - 1);
        Ok(idx)
    }

    pub fn segment_for(&self, t: f64) -> Result<&Segment> {
        Ok(&self.segments[self.segment_index(t)?])
    }
}

/// Follower shape entries per segment, derived from the leader shape by the
/// displacement constraints.
#[derive(Debug, Clone)]
pub struct ShapeSolution {
    per_segment: Vec<Vec<[ScalarFn; 3]>>,
    n_followers: usize,
}

impl ShapeSolution {
    pub fn n_followers(&self) -> usize {
        self.n_followers
    }

    pub fn follower_shape(&self, segment: usize, follower: usize) -> &[ScalarFn; 3] {
        &self.per_segment[segment][follower]
    }
}

/// Solve the shape constraint for a stacked constant leader shape:
/// `g_f = −(Ω_ff⁻¹ Ω_fl ⊗ I_3) g_l`.
pub fn solve_shape_point(g_l: &DVector<f64>, mats: &FollowerMatrixSet) -> Result<DVector<f64>> {
    if g_l.len() != 3 * mats.n_leaders() {
        return Err(Error::DimensionMismatch {
            expected: 3 * mats.n_leaders(),
            got: g_l.len(),
        });
    }
    let map = mats.localization_map()?;
    Ok(-(linalg::kron_i3(&map) * g_l))
}

/// Solve the shape constraint segment-by-segment, producing follower shape
/// closed forms so their derivatives stay analytic.
pub fn solve_shape(plan: &ManeuverPlan, mats: &FollowerMatrixSet) -> Result<ShapeSolution> {
    if plan.n_leaders() != mats.n_leaders() {
        return Err(Error::DimensionMismatch {
            expected: mats.n_leaders(),
            got: plan.n_leaders(),
        });
    }
    let map = mats.localization_map()?; // g_f = −(map ⊗ I_3) g_l
    let n_f = mats.n_followers();
    let mut per_segment = Vec::with_capacity(plan.segments().len());
    for seg in plan.segments() {
        let mut followers = Vec::with_capacity(n_f);
        for fi in 0..n_f {
            let mut triple = [ScalarFn::default(), ScalarFn::default(), ScalarFn::default()];
            for (li, leader_shape) in seg.shape_leaders.iter().enumerate() {
                let w = -map[(fi, li)];
                for axis in 0..3 {
                    triple[axis].axpy(w, &leader_shape[axis]);
                }
            }
            followers.push(triple);
        }
        per_segment.push(followers);
    }
    Ok(ShapeSolution {
        per_segment,
        n_followers: n_f,
    })
}

/// Desired motion state of one agent: the stacked reference (position through
/// derivative `m−1`) plus the m-th derivative used as feedforward.
#[derive(Debug, Clone)]
pub struct DesiredState {
    pub x: DVector<f64>,
    pub feedforward: Vector3<f64>,
}

impl DesiredState {
    pub fn order(&self) -> usize {
        self.x.len() / 3
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x[0], self.x[1], self.x[2])
    }
}

/// Position jet of agent `agent` under the plan: derivatives `0..=order` of
/// `p*_i(t) = a(t) Q(t) g_i(t) + b(t)`.
pub fn desired_position_jet(
    plan: &ManeuverPlan,
    shape: &ShapeSolution,
    t: f64,
    agent: usize,
    order: usize,
) -> Result<Vec<Vector3<f64>>> {
    let seg_idx = plan.segment_index(t)?;
    let seg = &plan.segments()[seg_idx];
    let n_l = plan.n_leaders();
    let g: &[ScalarFn; 3] = if agent < n_l {
        &seg.shape_leaders[agent]
    } else {
        let fi = agent - n_l;
        if fi >= shape.n_followers() {
            return Err(Error::IndexOutOfRange {
                index: agent,
                limit: n_l + shape.n_followers(),
            });
        }
        shape.follower_shape(seg_idx, fi)
    };

    let a = seg.scale.eval_jet(t, order);
    let q = seg.rotation.eval_jet(t, order);
    let b: [Jet; 3] = [
        seg.translation[0].eval_jet(t, order),
        seg.translation[1].eval_jet(t, order),
        seg.translation[2].eval_jet(t, order),
    ];
    let gj: [Jet; 3] = [
        g[0].eval_jet(t, order),
        g[1].eval_jet(t, order),
        g[2].eval_jet(t, order),
    ];

    // (Q g) componentwise with Leibniz over the matrix jet
    let mut qg: [Jet; 3] = [jet_zero(order), jet_zero(order), jet_zero(order)];
    for row in 0..3 {
        for col in 0..3 {
            let q_entry: Jet = (0..=order).map(|k| q[k][(row, col)]).collect();
            let prod = jet_mul(&q_entry, &gj[col]);
            jet_axpy(&mut qg[row], 1.0, &prod);
        }
    }

    let mut out = vec![Vector3::zeros(); order + 1];
    for row in 0..3 {
        let scaled = jet_mul(&a, &qg[row]);
        let total = jet_add(&scaled, &b[row]);
        for (k, v) in out.iter_mut().enumerate() {
            v[row] = total[k];
        }
    }
    Ok(out)
}

/// Desired positions of all agents at `t`.
pub fn desired_formation(
    plan: &ManeuverPlan,
    shape: &ShapeSolution,
    t: f64,
) -> Result<Vec<Vector3<f64>>> {
    let n = plan.n_leaders() + shape.n_followers();
    (0..n)
        .map(|agent| Ok(desired_position_jet(plan, shape, t, agent, 0)?[0]))
        .collect()
}

fn desired_state_from_jet(jet: &[Vector3<f64>], order: usize) -> DesiredState {
    let mut x = DVector::zeros(3 * order);
    for k in 0..order {
        x.fixed_rows_mut::<3>(3 * k).copy_from(&jet[k]);
    }
    DesiredState {
        x,
        feedforward: jet[order],
    }
}

/// Desired motion state of a leader, evaluated directly from the plan.
pub fn desired_leader_state(
    plan: &ManeuverPlan,
    shape: &ShapeSolution,
    t: f64,
    leader: usize,
    order: usize,
) -> Result<DesiredState> {
    if leader >= plan.n_leaders() {
        return Err(Error::RoleMismatch {
            agent: leader,
            actual: "follower",
        });
    }
    let jet = desired_position_jet(plan, shape, t, leader, order)?;
    Ok(desired_state_from_jet(&jet, order))
}

/// Desired motion states of all followers via the localization map
/// `x*_f = −(Ω_ff⁻¹ Ω_fl ⊗ I_{3m}) x*_l`. Used for error evaluation only; no
/// follower controller reads these.
pub fn desired_follower_states(
    plan: &ManeuverPlan,
    shape: &ShapeSolution,
    mats: &FollowerMatrixSet,
    t: f64,
    order: usize,
) -> Result<Vec<DesiredState>> {
    let n_l = plan.n_leaders();
    let n_f = mats.n_followers();
    let dim = 3 * order;
    let mut x_l = DVector::zeros(n_l * dim);
    let mut ff_l = DVector::zeros(n_l * 3);
    for leader in 0..n_l {
        let state = desired_leader_state(plan, shape, t, leader, order)?;
        x_l.rows_mut(leader * dim, dim).copy_from(&state.x);
        ff_l
            .fixed_rows_mut::<3>(leader * 3)
            .copy_from(&state.feedforward);
    }
    let map = mats.localization_map()?;
    let x_f = -(linalg::kron_ik(&map, dim) * x_l);
    let ff_f = -(linalg::kron_i3(&map) * ff_l);
    Ok((0..n_f)
        .map(|fi| DesiredState {
            x: x_f.rows(fi * dim, dim).into_owned(),
            feedforward: Vector3::new(ff_f[fi * 3], ff_f[fi * 3 + 1], ff_f[fi * 3 + 2]),
        })
        .collect())
}

/// Per-order suprema `γ_1 … γ_upto` of the leader reference derivatives over
/// a dense grid (step at most `1e-3` of the horizon, clamped per segment).
pub fn derivative_bounds(
    plan: &ManeuverPlan,
    shape: &ShapeSolution,
    upto: usize,
) -> Result<Vec<f64>> {
    let horizon = plan.end() - plan.start();
    let step = (1e-3 * horizon).max(1e-9);
    let mut bounds = vec![0.0_f64; upto];
    for seg in plan.segments() {
        let len = seg.t_end - seg.t_start;
        let steps = (len / step).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let t = seg.t_start + len * k as f64 / steps as f64;
            // stay strictly inside the segment at its right edge so the jet
            // uses this segment's closed forms
            let t = t.min(seg.t_end - 1e-12 * len.max(1.0)).max(seg.t_start);
            for leader in 0..plan.n_leaders() {
                let jet = desired_position_jet(plan, shape, t, leader, upto)?;
                for (ord, slot) in bounds.iter_mut().enumerate() {
                    *slot = slot.max(jet[ord + 1].norm());
                }
            }
        }
    }
    Ok(bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::{
        assemble_follower_matrix, build_constraints, check_localizable,
    };
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn sim_mats() -> (crate::formation::NominalFormation, FollowerMatrixSet) {
        let formation = crate::formation::NominalFormation::new(
            vec![
                Vector3::new(6.0, 0.0, 0.0),
                Vector3::new(0.0, 0.0, 6.0),
                Vector3::new(0.0, 6.0, 0.0),
                Vector3::new(0.0, -6.0, 0.0),
                Vector3::new(-6.0, 0.0, 6.0),
                Vector3::new(-6.0, 6.0, 0.0),
                Vector3::new(-6.0, -6.0, 0.0),
            ],
            4,
            vec![vec![0, 1, 2, 3], vec![0, 2, 3], vec![2, 3, 5]],
        )
        .unwrap();
        let constraints = build_constraints(&formation).unwrap();
        let mut set = assemble_follower_matrix(&formation, &constraints).unwrap();
        assert!(check_localizable(&mut set, &formation).localizable);
        (formation, set)
    }

    fn coplanar_leader_shape() -> Vec<[ScalarFn; 3]> {
        [
            [6.0, 0.0, -2.0],
            [0.0, 0.0, -2.0],
            [0.0, 6.0, -2.0],
            [0.0, -6.0, -2.0],
        ]
        .iter()
        .map(|row| {
            [
                ScalarFn::constant(row[0]),
                ScalarFn::constant(row[1]),
                ScalarFn::constant(row[2]),
            ]
        })
        .collect()
    }

    fn colinear_leader_shape() -> Vec<[ScalarFn; 3]> {
        [
            [6.0, 0.0, -2.0],
            [3.0, 0.0, -2.0],
            [0.0, 0.0, -2.0],
            [-2.0, 0.0, -2.0],
        ]
        .iter()
        .map(|row| {
            [
                ScalarFn::constant(row[0]),
                ScalarFn::constant(row[1]),
                ScalarFn::constant(row[2]),
            ]
        })
        .collect()
    }

    fn translating_plan(shape_leaders: Vec<[ScalarFn; 3]>, t0: f64, t1: f64) -> ManeuverPlan {
        ManeuverPlan::new(
            vec![Segment {
                t_start: t0,
                t_end: t1,
                scale: ScalarFn::constant(1.0),
                rotation: RotationSpec::identity(),
                translation: [
                    ScalarFn::polynomial(vec![0.0, 6.0]),
                    ScalarFn::constant(0.0),
                    ScalarFn::constant(0.0),
                ],
                shape_leaders,
            }],
            4,
        )
        .unwrap()
    }

    #[test]
    fn coplanar_shape_solution() {
        let (_, mats) = sim_mats();
        let g_l = DVector::from_row_slice(&[
            6.0, 0.0, -2.0, 0.0, 0.0, -2.0, 0.0, 6.0, -2.0, 0.0, -6.0, -2.0,
        ]);
        let g_f = solve_shape_point(&g_l, &mats).unwrap();
        let expected =
            DVector::from_row_slice(&[-6.0, 0.0, -2.0, -6.0, 6.0, -2.0, -6.0, -6.0, -2.0]);
        assert!((g_f - expected).norm() < 1e-9);
    }

    #[test]
    fn colinear_shape_solution() {
        let (_, mats) = sim_mats();
        let g_l = DVector::from_row_slice(&[
            6.0, 0.0, -2.0, 3.0, 0.0, -2.0, 0.0, 0.0, -2.0, -2.0, 0.0, -2.0,
        ]);
        let g_f = solve_shape_point(&g_l, &mats).unwrap();
        let expected =
            DVector::from_row_slice(&[-4.0, 0.0, -2.0, -7.0, 0.0, -2.0, -9.0, 0.0, -2.0]);
        assert!((g_f - expected).norm() < 1e-9);
    }

    #[test]
    fn nominal_leader_shape_recovers_nominal_followers() {
        let (formation, mats) = sim_mats();
        let g_f = solve_shape_point(&formation.stacked_leaders(), &mats).unwrap();
        assert!((g_f - formation.stacked_followers()).norm() < 1e-9);
    }

    #[test]
    fn desired_formation_matches_translated_shape() {
        let (_, mats) = sim_mats();
        let plan = translating_plan(coplanar_leader_shape(), 3.0, 5.0);
        let shape = solve_shape(&plan, &mats).unwrap();
        let t = 4.0;
        let p = desired_formation(&plan, &shape, t).unwrap();
        let g_full = [
            [6.0, 0.0, -2.0],
            [0.0, 0.0, -2.0],
            [0.0, 6.0, -2.0],
            [0.0, -6.0, -2.0],
            [-6.0, 0.0, -2.0],
            [-6.0, 6.0, -2.0],
            [-6.0, -6.0, -2.0],
        ];
        for (i, gi) in g_full.iter().enumerate() {
            let expected = Vector3::new(gi[0] + 6.0 * t, gi[1], gi[2]);
            assert!((p[i] - expected).norm() < 1e-9, "agent {i}: {:?}", p[i]);
        }
    }

    #[test]
    fn identity_plan_reproduces_nominal() {
        let (formation, mats) = sim_mats();
        let shape_leaders = (0..4)
            .map(|i| {
                let r = formation.position(i);
                [
                    ScalarFn::constant(r.x),
                    ScalarFn::constant(r.y),
                    ScalarFn::constant(r.z),
                ]
            })
            .collect();
        let plan = ManeuverPlan::new(
            vec![Segment {
                t_start: 0.0,
                t_end: 1.0,
                scale: ScalarFn::constant(1.0),
                rotation: RotationSpec::identity(),
                translation: [
                    ScalarFn::constant(0.0),
                    ScalarFn::constant(0.0),
                    ScalarFn::constant(0.0),
                ],
                shape_leaders,
            }],
            4,
        )
        .unwrap();
        let shape = solve_shape(&plan, &mats).unwrap();
        let p = desired_formation(&plan, &shape, 0.5).unwrap();
        for (i, pi) in p.iter().enumerate() {
            assert!((pi - formation.position(i)).norm() < 1e-9);
        }
    }

    #[test]
    fn leader_state_for_linear_translation() {
        let (_, mats) = sim_mats();
        let plan = translating_plan(coplanar_leader_shape(), 0.0, 5.0);
        let shape = solve_shape(&plan, &mats).unwrap();
        let state = desired_leader_state(&plan, &shape, 2.0, 0, 3).unwrap();
        assert_relative_eq!(state.x[0], 6.0 + 12.0, epsilon = 1e-12);
        assert_relative_eq!(state.x[3], 6.0, epsilon = 1e-12); // velocity x
        assert_relative_eq!(state.x[4], 0.0, epsilon = 1e-12);
        assert!(state.x.rows(6, 3).norm() < 1e-12); // acceleration
        assert!(state.feedforward.norm() < 1e-12);
    }

    #[test]
    fn constant_plan_has_zero_derivatives() {
        let (formation, mats) = sim_mats();
        let shape_leaders = (0..4)
            .map(|i| {
                let r = formation.position(i);
                [
                    ScalarFn::constant(r.x),
                    ScalarFn::constant(r.y),
                    ScalarFn::constant(r.z),
                ]
            })
            .collect();
        let plan = ManeuverPlan::new(
            vec![Segment {
                t_start: 0.0,
                t_end: 10.0,
                scale: ScalarFn::constant(1.0),
                rotation: RotationSpec::identity(),
                translation: [
                    ScalarFn::constant(1.0),
                    ScalarFn::constant(-2.0),
                    ScalarFn::constant(0.5),
                ],
                shape_leaders,
            }],
            4,
        )
        .unwrap();
        let shape = solve_shape(&plan, &mats).unwrap();
        for leader in 0..4 {
            let jet = desired_position_jet(&plan, &shape, 4.0, leader, 4).unwrap();
            for d in &jet[1..] {
                assert!(d.norm() < 1e-12);
            }
        }
    }

    /// One central-difference level applied to the analytic derivative below
    /// keeps round-off at bay while checking each differentiation order.
    fn central_diff(
        plan: &ManeuverPlan,
        shape: &ShapeSolution,
        agent: usize,
        t: f64,
        order: usize,
        h: f64,
    ) -> Vector3<f64> {
        let hi = desired_position_jet(plan, shape, t + h, agent, order - 1).unwrap()[order - 1];
        let lo = desired_position_jet(plan, shape, t - h, agent, order - 1).unwrap()[order - 1];
        (hi - lo) / (2.0 * h)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let (_, mats) = sim_mats();
        let mut shape_leaders = coplanar_leader_shape();
        // make it wiggle: polynomial scale, rotating frame, sinusoidal shape entry
        shape_leaders[0][1] = ScalarFn {
            coeffs: vec![0.0],
            sines: vec![Sinusoid {
                amplitude: 0.5,
                omega: 1.3,
                phase: 0.2,
            }],
        };
        let plan = ManeuverPlan::new(
            vec![Segment {
                t_start: 0.0,
                t_end: 6.0,
                scale: ScalarFn::polynomial(vec![1.0, 0.05, 0.01]),
                rotation: RotationSpec::new(
                    Vector3::new(1.0, 2.0, -1.0),
                    ScalarFn::polynomial(vec![0.1, 0.4, -0.03, 0.002]),
                )
                .unwrap(),
                translation: [
                    ScalarFn::polynomial(vec![0.0, 6.0]),
                    ScalarFn::polynomial(vec![1.0, 0.0, 0.2]),
                    ScalarFn::constant(0.0),
                ],
                shape_leaders,
            }],
            4,
        )
        .unwrap();
        let shape = solve_shape(&plan, &mats).unwrap();
        let h = 1e-4;
        for agent in [0, 2, 4, 6] {
            for t in [1.0, 2.5, 4.0] {
                let jet = desired_position_jet(&plan, &shape, t, agent, 4).unwrap();
                for order in 1..=4 {
                    let fd = central_diff(&plan, &shape, agent, t, order, h);
                    let scale = jet[order].norm().max(1.0);
                    assert!(
                        (jet[order] - fd).norm() <= 1e-5 * scale,
                        "agent {agent} order {order} at t={t}: analytic {:?} vs fd {:?}",
                        jet[order],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn rotation_stays_orthonormal() {
        let rot = RotationSpec::new(
            Vector3::new(0.3, -1.0, 2.0),
            ScalarFn::polynomial(vec![0.0, 0.7, 0.05]),
        )
        .unwrap();
        for k in 0..=40 {
            let t = k as f64 * 0.25;
            let q = rot.eval(t);
            assert!((q.transpose() * q - Matrix3::identity()).norm() <= 1e-12);
            assert!((q.determinant() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn follower_states_satisfy_constraint() {
        let (_, mats) = sim_mats();
        let plan = translating_plan(coplanar_leader_shape(), 0.0, 5.0);
        let shape = solve_shape(&plan, &mats).unwrap();
        let order = 3;
        let t = 2.3;
        let followers = desired_follower_states(&plan, &shape, &mats, t, order).unwrap();
        // follower positions from the map agree with the direct evaluation
        for (fi, state) in followers.iter().enumerate() {
            let direct = desired_position_jet(&plan, &shape, t, 4 + fi, order).unwrap();
            assert!((state.position() - direct[0]).norm() < 1e-9);
        }
        // and the stacked positions satisfy the displacement constraints
        let p = desired_formation(&plan, &shape, t).unwrap();
        let mut stacked = DVector::zeros(3 * p.len());
        for (i, pi) in p.iter().enumerate() {
            stacked.fixed_rows_mut::<3>(3 * i).copy_from(pi);
        }
        let residual = (linalg::kron_i3(mats.omega_f()) * stacked).norm();
        assert!(residual < 1e-9);
    }

    #[test]
    fn derivative_bounds_linear_translation() {
        let (_, mats) = sim_mats();
        let plan = translating_plan(coplanar_leader_shape(), 0.0, 5.0);
        let shape = solve_shape(&plan, &mats).unwrap();
        let bounds = derivative_bounds(&plan, &shape, 3).unwrap();
        assert_relative_eq!(bounds[0], 6.0, epsilon = 1e-9);
        assert!(bounds[1] < 1e-12);
        assert!(bounds[2] < 1e-12);
    }

    #[test]
    fn derivative_bounds_sinusoidal_scale() {
        let (formation, mats) = sim_mats();
        let shape_leaders: Vec<[ScalarFn; 3]> = (0..4)
            .map(|i| {
                let r = formation.position(i);
                [
                    ScalarFn::constant(r.x),
                    ScalarFn::constant(r.y),
                    ScalarFn::constant(r.z),
                ]
            })
            .collect();
        let plan = ManeuverPlan::new(
            vec![Segment {
                t_start: 0.0,
                t_end: 20.0,
                scale: ScalarFn {
                    coeffs: vec![1.0],
                    sines: vec![Sinusoid {
                        amplitude: 0.1,
                        omega: 1.0,
                        phase: 0.0,
                    }],
                },
                rotation: RotationSpec::identity(),
                translation: [
                    ScalarFn::constant(0.0),
                    ScalarFn::constant(0.0),
                    ScalarFn::constant(0.0),
                ],
                shape_leaders,
            }],
            4,
        )
        .unwrap();
        let shape = solve_shape(&plan, &mats).unwrap();
        let bounds = derivative_bounds(&plan, &shape, 3).unwrap();
        // p* = a(t) r with a = 1 + 0.1 sin t, so each derivative bound is
        // 0.1 · max_i ‖r_i‖ once the grid catches the extrema
        let max_r = (0..4)
            .map(|i| formation.position(i).norm())
            .fold(0.0_f64, f64::max);
        for b in &bounds {
            assert_relative_eq!(*b, 0.1 * max_r, max_relative = 0.01);
        }
    }

    #[test]
    fn out_of_range_time_is_rejected() {
        let (_, mats) = sim_mats();
        let plan = translating_plan(coplanar_leader_shape(), 3.0, 5.0);
        let shape = solve_shape(&plan, &mats).unwrap();
        assert!(matches!(
            desired_formation(&plan, &shape, 5.5),
            Err(Error::TimeOutOfRange { .. })
        ));
        assert!(desired_formation(&plan, &shape, 5.0).is_ok());
    }
}
