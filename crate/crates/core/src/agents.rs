//! Plant dynamics and the per-agent control laws.
//!
//! Leaders track their reference with an observer-based law that feeds back
//! the estimate against the desired state and adds the m-th derivative of the
//! reference as feedforward. Followers never see the maneuver parameters:
//! they run consensus on neighbor information weighted by one of the follower
//! matrices, with a signum term that out-muscles the bounded leader inputs.
//! The discontinuous signum is smoothed by a small boundary layer so a
//! fixed-step integrator can handle it.

use std::collections::BTreeMap;

use nalgebra::{DVector, Vector3};

use crate::error::{Error, Result};
use crate::gains::{GainSet, PlantMatrices};
use crate::maneuver::DesiredState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Leader,
    Follower,
}

impl Role {
    fn name(&self) -> &'static str {
        match self {
            Role::Leader => "leader",
            Role::Follower => "follower",
        }
    }
}

/// Boundary-layer signum: `v / max(‖v‖₂, ε)`.
///
/// Agrees with `v/‖v‖₂` outside the layer, stays linear inside it, and never
/// exceeds unit norm.
pub fn sgn_eps(v: &Vector3<f64>, epsilon: f64) -> Vector3<f64> {
    v / v.norm().max(epsilon)
}

/// `ẋ = Ax + Bu` for the integrator chain.
pub fn plant_rhs(plant: &PlantMatrices, x: &DVector<f64>, u: &Vector3<f64>) -> Result<DVector<f64>> {
    if x.len() != plant.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: plant.state_dim(),
            got: x.len(),
        });
    }
    let mut dx = plant.a() * x;
    let forced = plant.b() * u;
    dx += forced;
    Ok(dx)
}

/// `y = Cx`.
pub fn measure_output(plant: &PlantMatrices, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != plant.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: plant.state_dim(),
            got: x.len(),
        });
    }
    Ok(plant.c() * x)
}

fn to_vec3(v: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

/// Observer-based tracking law of one leader.
///
/// Returns the control input and the observer derivative. The input feeds
/// back the estimate (not the state) against the desired motion state.
pub fn leader_step(
    agent: usize,
    role: Role,
    x: &DVector<f64>,
    eta: &DVector<f64>,
    desired: &DesiredState,
    gains: &GainSet,
) -> Result<(Vector3<f64>, DVector<f64>)> {
    if role != Role::Leader {
        return Err(Error::RoleMismatch {
            agent,
            actual: role.name(),
        });
    }
    let dim = gains.state_dim();
    if x.len() != dim || eta.len() != dim || desired.x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len().max(eta.len()).max(desired.x.len()),
        });
    }
    let u = to_vec3(&(&gains.beta_gain * (eta - &desired.x))) + desired.feedforward;
    let y = measure_output(&gains.plant, x)?;
    let innovation = gains.plant.c() * eta - y;
    let mut eta_dot = plant_rhs(&gains.plant, eta, &u)?;
    eta_dot += &gains.l * innovation;
    Ok((u, eta_dot))
}

/// Absolute-output follower law: consensus on neighbor motion-state estimates
/// with the supplied edge weights (drawn from one of the derived follower
/// matrices), plus the boundary-layer signum term.
#[allow(clippy::too_many_arguments)]
pub fn follower_step_absolute(
    agent: usize,
    role: Role,
    eta_i: &DVector<f64>,
    neighbor_eta: &BTreeMap<usize, DVector<f64>>,
    weights: &BTreeMap<usize, f64>,
    y_i: &DVector<f64>,
    neighbor_y: &BTreeMap<usize, DVector<f64>>,
    gains: &GainSet,
    epsilon: f64,
) -> Result<(Vector3<f64>, DVector<f64>)> {
    if role != Role::Follower {
        return Err(Error::RoleMismatch {
            agent,
            actual: role.name(),
        });
    }
    let dim = gains.state_dim();
    let mut s = DVector::<f64>::zeros(dim);
    let mut consensus_innovation = DVector::<f64>::zeros(gains.plant.output_dim());
    let c = gains.plant.c();
    for (&j, &w) in weights {
        let eta_j = neighbor_eta
            .get(&j)
            .ok_or(Error::MissingNeighbor { agent, neighbor: j })?;
        let y_j = neighbor_y
            .get(&j)
            .ok_or(Error::MissingNeighbor { agent, neighbor: j })?;
        let diff = eta_i - eta_j;
        consensus_innovation += w * (c * &diff - (y_i - y_j));
        s += w * diff;
    }
    let v = to_vec3(&(&gains.k * &s));
    let u = gains.c1 * v + gains.c2 * sgn_eps(&v, epsilon);

    let own_innovation = c * eta_i - y_i;
    let mut eta_dot = plant_rhs(&gains.plant, eta_i, &u)?;
    eta_dot += &gains.l * own_innovation;
    eta_dot += gains.c1 * (&gains.l * consensus_innovation);
    Ok((u, eta_dot))
}

/// Relative-output follower law: one observer per weighted edge estimating the
/// relative motion state, driven by relative outputs and the exchanged
/// neighbor inputs.
pub fn follower_step_relative(
    agent: usize,
    eta_edges: &BTreeMap<usize, DVector<f64>>,
    relative_outputs: &BTreeMap<usize, DVector<f64>>,
    neighbor_inputs: &BTreeMap<usize, Vector3<f64>>,
    weights: &BTreeMap<usize, f64>,
    gains: &GainSet,
    epsilon: f64,
) -> Result<(Vector3<f64>, BTreeMap<usize, DVector<f64>>)> {
    let dim = gains.state_dim();
    let mut s = DVector::<f64>::zeros(dim);
    for (&j, &w) in weights {
        let eta_ij = eta_edges
            .get(&j)
            .ok_or(Error::MissingEdgeEstimate { agent, neighbor: j })?;
        s += w * eta_ij;
    }
    let v = to_vec3(&(&gains.k * &s));
    // the input enters its own edge observers; resolve the algebraic loop by
    // computing it from the current estimates first
    let u = gains.c1 * v + gains.c2 * sgn_eps(&v, epsilon);

    let c = gains.plant.c();
    let mut derivatives = BTreeMap::new();
    for &j in weights.keys() {
        let eta_ij = &eta_edges[&j];
        let y_rel = relative_outputs
            .get(&j)
            .ok_or(Error::MissingNeighbor { agent, neighbor: j })?;
        let u_j = neighbor_inputs
            .get(&j)
            .ok_or(Error::MissingNeighbor { agent, neighbor: j })?;
        let mut d = plant_rhs(&gains.plant, eta_ij, &(u - u_j))?;
        d += &gains.l * (c * eta_ij - y_rel);
        derivatives.insert(j, d);
    }
    Ok((u, derivatives))
}

/// State-feedback follower law for the case when relative motion states are
/// measurable; no observers involved.
pub fn follower_step_state_feedback(
    agent: usize,
    x_i: &DVector<f64>,
    neighbor_x: &BTreeMap<usize, DVector<f64>>,
    weights: &BTreeMap<usize, f64>,
    gains: &GainSet,
    epsilon: f64,
) -> Result<Vector3<f64>> {
    let dim = gains.state_dim();
    let mut s = DVector::<f64>::zeros(dim);
    for (&j, &w) in weights {
        let x_j = neighbor_x
            .get(&j)
            .ok_or(Error::MissingNeighbor { agent, neighbor: j })?;
        s += w * (x_i - x_j);
    }
    let v = to_vec3(&(&gains.k * &s));
    Ok(gains.c1 * v + gains.c2 * sgn_eps(&v, epsilon))
}
