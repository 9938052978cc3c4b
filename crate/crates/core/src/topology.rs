//! Network geometry: helper grid, user placement, pathloss and mobility.
//!
//! Helpers sit at the centers of a square grid of cells and are numbered
//! row-major from the bottom-left cell, left to right and bottom to top.
//! A user is linked to every helper within the service radius of its current
//! position; the edge set is recomputed from positions whenever it is needed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A trajectory point: the user is at `position` at slot `slot`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: Position,
    pub slot: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HelperNode {
    pub id: usize,
    pub position: Position,
    /// Transmit power relative to unit noise power.
    pub tx_power: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserNode {
    pub id: usize,
    /// Waypoints with strictly increasing slots. Static users have exactly one.
    pub trajectory: Vec<Waypoint>,
    pub file_id: usize,
    /// Position in the video sequence where the streaming session starts.
    pub start_offset: usize,
}

impl UserNode {
    pub fn fixed(id: usize, position: Position) -> Self {
        Self {
            id,
            trajectory: vec![Waypoint { position, slot: 0 }],
            file_id: 0,
            start_offset: 0,
        }
    }

    pub fn moving(id: usize, trajectory: Vec<Waypoint>) -> Result<Self> {
        if trajectory.is_empty() {
            return Err(Error::config(format!("user {id}: empty trajectory")));
        }
        if trajectory.windows(2).any(|w| w[1].slot <= w[0].slot) {
            return Err(Error::config(format!(
                "user {id}: waypoint slots must be strictly increasing"
            )));
        }
        Ok(Self {
            id,
            trajectory,
            file_id: 0,
            start_offset: 0,
        })
    }

    pub fn is_static(&self) -> bool {
        self.trajectory.len() == 1
    }

    pub fn position_at(&self, t: u64) -> Position {
        advance_mobility(self, t)
    }
}

/// Position of `user` at slot `t`: linear interpolation between the two
/// bracketing waypoints, clamped to the first and last waypoint.
pub fn advance_mobility(user: &UserNode, t: u64) -> Position {
    let path = &user.trajectory;
    let first = path[0];
    if t <= first.slot {
        return first.position;
    }
    let last = path[path.len() - 1];
    if t >= last.slot {
        return last.position;
    }
    let i = path.partition_point(|w| w.slot <= t);
    let (a, b) = (path[i - 1], path[i]);
    let frac = (t - a.slot) as f64 / (b.slot - a.slot) as f64;
    Position::new(
        a.position.x + frac * (b.position.x - a.position.x),
        a.position.y + frac * (b.position.y - a.position.y),
    )
}

/// Distance-dependent pathloss `1 / (1 + (d/delta)^alpha)`.
pub fn pathloss(a: &Position, b: &Position, delta: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + (a.distance(b) / delta).powf(alpha))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    pub area_side: f64,
    pub helpers: Vec<HelperNode>,
    pub users: Vec<UserNode>,
    pub service_radius: f64,
    pub pathloss_delta: f64,
    pub pathloss_alpha: f64,
}

impl NetworkGraph {
    /// Static users and unit-power helpers at the given positions, with the
    /// default pathloss parameters.
    pub fn with_nodes(area_side: f64, service_radius: f64, helpers: &[Position], users: &[Position]) -> Self {
        let defaults = GridParams::default();
        Self {
            area_side,
            helpers: helpers
                .iter()
                .enumerate()
                .map(|(id, &position)| HelperNode {
                    id,
                    position,
                    tx_power: 1.0,
                })
                .collect(),
            users: users
                .iter()
                .enumerate()
                .map(|(id, &p)| UserNode::fixed(id, p))
                .collect(),
            service_radius,
            pathloss_delta: defaults.pathloss_delta,
            pathloss_alpha: defaults.pathloss_alpha,
        }
    }

    pub fn num_helpers(&self) -> usize {
        self.helpers.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn gain(&self, h: usize, u: usize, t: u64) -> f64 {
        pathloss(
            &self.helpers[h].position,
            &self.users[u].position_at(t),
            self.pathloss_delta,
            self.pathloss_alpha,
        )
    }

    /// Helpers within the service radius of user `u` at slot `t`, ascending.
    pub fn neighborhood(&self, u: usize, t: u64) -> Vec<usize> {
        neighborhood(self, u, t)
    }

    /// The edge set at slot `t` as `(helper, user)` pairs, helper-major.
    pub fn edges(&self, t: u64) -> Vec<(usize, usize)> {
        let positions: Vec<Position> = self.users.iter().map(|u| u.position_at(t)).collect();
        let mut edges = Vec::new();
        for helper in &self.helpers {
            for (u, p) in positions.iter().enumerate() {
                if helper.position.distance(p) <= self.service_radius {
                    edges.push((helper.id, u));
                }
            }
        }
        edges
    }

    pub fn set_tx_power(&mut self, power: f64) {
        for h in &mut self.helpers {
            h.tx_power = power;
        }
    }

    /// Appends a user, returning its index.
    pub fn push_user(&mut self, mut user: UserNode) -> usize {
        let id = self.users.len();
        user.id = id;
        self.users.push(user);
        id
    }
}

pub fn neighborhood(graph: &NetworkGraph, u: usize, t: u64) -> Vec<usize> {
    let p = graph.users[u].position_at(t);
    graph
        .helpers
        .iter()
        .filter(|h| h.position.distance(&p) <= graph.service_radius)
        .map(|h| h.id)
        .collect()
}

/// Parameters of the square-grid deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridParams {
    pub area_side: f64,
    pub cells_per_side: usize,
    pub users_per_cell: usize,
    pub service_radius: f64,
    pub pathloss_delta: f64,
    pub pathloss_alpha: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            area_side: 400.0,
            cells_per_side: 5,
            users_per_cell: 2,
            service_radius: 60.0,
            pathloss_delta: 40.0,
            pathloss_alpha: 3.5,
        }
    }
}

impl GridParams {
    pub fn cell_side(&self) -> f64 {
        self.area_side / self.cells_per_side as f64
    }

    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.area_side.is_finite() && self.area_side > 0.0) {
            issues.push(format!("topology.area_side must be positive, got {}", self.area_side));
        }
        if self.cells_per_side == 0 {
            issues.push("topology.cells_per_side must be at least 1".to_string());
        }
        if !(self.service_radius.is_finite() && self.service_radius > 0.0) {
            issues.push(format!(
                "topology.service_radius must be positive, got {}",
                self.service_radius
            ));
        }
        if !(self.pathloss_delta.is_finite() && self.pathloss_delta > 0.0) {
            issues.push(format!(
                "topology.pathloss_delta must be positive, got {}",
                self.pathloss_delta
            ));
        }
        if !(self.pathloss_alpha.is_finite() && self.pathloss_alpha > 0.0) {
            issues.push(format!(
                "topology.pathloss_alpha must be positive, got {}",
                self.pathloss_alpha
            ));
        }
        issues
    }
}

/// One helper per cell center, `users_per_cell` users drawn uniformly and
/// independently inside each cell. Helpers get unit transmit power; the
/// channel configuration rescales it.
pub fn build_grid_topology(params: &GridParams, seed: u64) -> Result<NetworkGraph> {
    let issues = params.validate();
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    let k = params.cells_per_side;
    let side = params.cell_side();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut helpers = Vec::with_capacity(k * k);
    let mut users = Vec::with_capacity(k * k * params.users_per_cell);
    for row in 0..k {
        for col in 0..k {
            let x0 = col as f64 * side;
            let y0 = row as f64 * side;
            helpers.push(HelperNode {
                id: helpers.len(),
                position: Position::new(x0 + side / 2.0, y0 + side / 2.0),
                tx_power: 1.0,
            });
            for _ in 0..params.users_per_cell {
                let p = Position::new(
                    x0 + rng.random::<f64>() * side,
                    y0 + rng.random::<f64>() * side,
                );
                users.push(UserNode::fixed(users.len(), p));
            }
        }
    }

    Ok(NetworkGraph {
        area_side: params.area_side,
        helpers,
        users,
        service_radius: params.service_radius,
        pathloss_delta: params.pathloss_delta,
        pathloss_alpha: params.pathloss_alpha,
    })
}
