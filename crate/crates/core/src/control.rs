//! Drift-plus-penalty control: per-slot admission, scheduling and
//! auxiliary-variable decisions, and the queue dynamics they drive.
//!
//! The per-slot objective separates into three independent minimizations:
//!
//! * admission (per user): send the whole chunk to the eligible helper with
//!   the smallest backlog `Q_hu`, at the mode minimizing `Q_hu * size - Theta_u * quality`;
//! * scheduling (per helper): serve the user with the largest `Q_hu * C_hu`
//!   at its full link rate, everyone else idle;
//! * auxiliary variable (per user): maximize `V phi(gamma) - Theta_u gamma` on
//!   `[d_min, d_max]`.
//!
//! Ties always go to the smallest index.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{ChunkProfile, QualityBounds};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Utility {
    #[default]
    Log,
    Linear,
}

impl Utility {
    pub fn value(self, x: f64) -> f64 {
        match self {
            Utility::Log => x.ln(),
            Utility::Linear => x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DppConfig {
    pub v: f64,
    pub utility: Utility,
}

impl Default for DppConfig {
    fn default() -> Self {
        Self {
            v: 1e12,
            utility: Utility::Log,
        }
    }
}

impl DppConfig {
    pub fn validate(&self) -> Vec<String> {
        if self.v.is_finite() && self.v > 0.0 {
            Vec::new()
        } else {
            vec![format!("dpp.v must be positive, got {}", self.v)]
        }
    }
}

/// A chunk's bits still waiting in a transmission queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PendingChunk {
    pub chunk: u64,
    pub remaining_bits: u64,
}

/// FIFO of chunks queued at one helper for one user. `backlog_bits` is the
/// scalar queue length `Q_hu`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransmissionQueue {
    fifo: VecDeque<PendingChunk>,
    backlog_bits: u64,
}

impl TransmissionQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn backlog_bits(&self) -> u64 {
        self.backlog_bits
    }

    pub fn is_empty(&self) -> bool {
        self.backlog_bits == 0
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingChunk> {
        self.fifo.iter()
    }

    /// Drains `served_bits` head-first, then appends `arrivals`
    /// (chunk number, bits). Returns the chunks whose last bit left the queue.
    /// Service beyond the backlog is lost, so the scalar backlog follows
    /// `max(Q - served, 0) + arrivals`.
    pub fn update(&mut self, served_bits: u64, arrivals: &[(u64, u64)]) -> Vec<u64> {
        let mut budget = served_bits;
        let mut delivered = Vec::new();
        while budget > 0 {
            let Some(head) = self.fifo.front_mut() else { break };
            if head.remaining_bits <= budget {
                budget -= head.remaining_bits;
                self.backlog_bits -= head.remaining_bits;
                delivered.push(head.chunk);
                self.fifo.pop_front();
            } else {
                head.remaining_bits -= budget;
                self.backlog_bits -= budget;
                budget = 0;
            }
        }
        for &(chunk, bits) in arrivals {
            if bits > 0 {
                self.fifo.push_back(PendingChunk {
                    chunk,
                    remaining_bits: bits,
                });
                self.backlog_bits += bits;
            }
        }
        delivered
    }

    /// The FIFO records sum to the scalar backlog and none is empty.
    pub fn is_consistent(&self) -> bool {
        self.fifo.iter().all(|p| p.remaining_bits > 0)
            && self.fifo.iter().map(|p| p.remaining_bits).sum::<u64>() == self.backlog_bits
    }
}

pub fn update_queue(
    mut q: TransmissionQueue,
    served_bits: u64,
    arrivals: &[(u64, u64)],
) -> (TransmissionQueue, Vec<u64>) {
    let delivered = q.update(served_bits, arrivals);
    (q, delivered)
}

/// Virtual queue `Theta_u` enforcing `mean(gamma) <= mean(D)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VirtualQueue {
    theta: f64,
}

impl VirtualQueue {
    pub fn new(theta: f64) -> Self {
        Self { theta: theta.max(0.0) }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `None` marks a paused slot (no eligible helper): theta is left as is.
    pub fn update(&mut self, gamma: f64, delivered_quality: Option<f64>) {
        self.theta = update_virtual(self.theta, gamma, delivered_quality);
    }
}

pub fn update_virtual(theta: f64, gamma: f64, delivered_quality: Option<f64>) -> f64 {
    match delivered_quality {
        Some(d) => (theta + gamma - d).max(0.0),
        None => theta,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assignment {
    pub helper: usize,
    /// 1-based quality mode.
    pub mode: usize,
    pub size_bits: u64,
    pub quality: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdmissionDecision {
    /// No eligible helper this slot; the user makes no request.
    Deferred,
    Assigned(Assignment),
}

impl AdmissionDecision {
    pub fn assignment(&self) -> Option<&Assignment> {
        match self {
            AdmissionDecision::Deferred => None,
            AdmissionDecision::Assigned(a) => Some(a),
        }
    }

    pub fn is_deferred(&self) -> bool {
        matches!(self, AdmissionDecision::Deferred)
    }
}

fn admission_score(backlog: u64, size_bits: u64, theta: f64, quality: f64) -> f64 {
    backlog as f64 * size_bits as f64 - theta * quality
}

/// Admission for one user. `eligible` lists (helper, backlog bits) for the
/// helpers in range that hold the requested file.
pub fn admit(eligible: &[(usize, u64)], theta: f64, profile: &ChunkProfile) -> AdmissionDecision {
    let Some(&(helper, backlog)) = eligible
        .iter()
        .min_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)))
    else {
        return AdmissionDecision::Deferred;
    };
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (i, m) in profile.modes().iter().enumerate() {
        let score = admission_score(backlog, m.size_bits, theta, m.quality);
        if score < best_score {
            best = i;
            best_score = score;
        }
    }
    let mode = profile.modes()[best];
    AdmissionDecision::Assigned(Assignment {
        helper,
        mode: best + 1,
        size_bits: mode.size_bits,
        quality: mode.quality,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScheduleDecision {
    pub served_user: Option<usize>,
    /// `n * C` of the served link; the queue drains the whole bits of it.
    pub bits_served: f64,
}

/// Max-weight scheduling for one helper over (user, backlog, capacity)
/// candidates with `symbols_per_slot` channel symbols per slot.
pub fn schedule(candidates: &[(usize, u64, f64)], symbols_per_slot: f64) -> ScheduleDecision {
    let mut best: Option<(usize, f64, f64)> = None;
    for &(user, backlog, capacity) in candidates {
        // Same argmax as Q * C; this form matches the objective's service term.
        let weight = backlog as f64 * (symbols_per_slot * capacity);
        if weight <= 0.0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((bu, bw, _)) => weight > bw || (weight == bw && user < bu),
        };
        if better {
            best = Some((user, weight, capacity));
        }
    }
    match best {
        Some((user, _, capacity)) => ScheduleDecision {
            served_user: Some(user),
            bits_served: symbols_per_slot * capacity,
        },
        None => ScheduleDecision::default(),
    }
}

/// Whole bits a queue can drain from an offered service of `bits` (floor).
pub fn whole_bits(bits: f64) -> u64 {
    if bits.is_finite() && bits > 0.0 {
        bits.floor() as u64
    } else {
        0
    }
}

/// Auxiliary variable maximizing `V phi(gamma) - theta gamma` on the bounds.
pub fn aux_update(theta: f64, cfg: &DppConfig, bounds: &QualityBounds) -> f64 {
    match cfg.utility {
        Utility::Log => {
            if theta <= 0.0 {
                bounds.d_max
            } else {
                (cfg.v / theta).clamp(bounds.d_min, bounds.d_max)
            }
        }
        Utility::Linear => {
            if cfg.v >= theta {
                bounds.d_max
            } else {
                bounds.d_min
            }
        }
    }
}

/// Everything the controller observes at the start of a slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotView {
    pub num_helpers: usize,
    pub num_users: usize,
    /// `Q_hu`, helper-major.
    pub backlog: Vec<u64>,
    /// `C_hu` for links the helper may serve this slot, helper-major.
    pub capacity: Vec<Option<f64>>,
    /// Helpers each user may send its request to, ascending.
    pub eligible: Vec<Vec<usize>>,
    pub theta: Vec<f64>,
    pub profiles: Vec<ChunkProfile>,
    pub bounds: Vec<QualityBounds>,
    pub symbols_per_slot: f64,
}

impl SlotView {
    pub fn backlog(&self, h: usize, u: usize) -> u64 {
        self.backlog[h * self.num_users + u]
    }

    pub fn capacity(&self, h: usize, u: usize) -> Option<f64> {
        self.capacity[h * self.num_users + u]
    }

    pub fn eligible_backlogs(&self, u: usize) -> Vec<(usize, u64)> {
        self.eligible[u].iter().map(|&h| (h, self.backlog(h, u))).collect()
    }

    pub fn schedule_candidates(&self, h: usize) -> Vec<(usize, u64, f64)> {
        (0..self.num_users)
            .filter_map(|u| self.capacity(h, u).map(|c| (u, self.backlog(h, u), c)))
            .collect()
    }
}

/// One slot's decisions: per-user admission and gamma, per-helper schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlAction {
    pub admissions: Vec<AdmissionDecision>,
    pub schedules: Vec<ScheduleDecision>,
    pub gammas: Vec<f64>,
}

/// Solves the three subproblems against one snapshot.
pub fn decide(view: &SlotView, cfg: &DppConfig) -> ControlAction {
    let gammas = (0..view.num_users)
        .map(|u| aux_update(view.theta[u], cfg, &view.bounds[u]))
        .collect();
    let admissions = (0..view.num_users)
        .map(|u| admit(&view.eligible_backlogs(u), view.theta[u], &view.profiles[u]))
        .collect();
    let schedules = (0..view.num_helpers)
        .map(|h| schedule(&view.schedule_candidates(h), view.symbols_per_slot))
        .collect();
    ControlAction {
        admissions,
        schedules,
        gammas,
    }
}

/// The per-slot drift-plus-penalty expression
/// `R'Q - D'Theta - mu'Q - [V sum phi(gamma) - gamma'Theta]`, with `R` and `mu`
/// in bits. Fails if the action is not feasible for `view`.
pub fn dpp_objective(action: &ControlAction, view: &SlotView, cfg: &DppConfig) -> Result<f64> {
    if action.admissions.len() != view.num_users
        || action.gammas.len() != view.num_users
        || action.schedules.len() != view.num_helpers
    {
        return Err(Error::Infeasible("action dimensions do not match the network".into()));
    }

    let mut admission = 0.0;
    for (u, decision) in action.admissions.iter().enumerate() {
        let AdmissionDecision::Assigned(a) = decision else {
            continue;
        };
        if !view.eligible[u].contains(&a.helper) {
            return Err(Error::Infeasible(format!(
                "user {u} assigned to ineligible helper {}",
                a.helper
            )));
        }
        let Some(mode) = view.profiles[u].mode(a.mode) else {
            return Err(Error::Infeasible(format!("user {u}: no mode {}", a.mode)));
        };
        if mode.size_bits != a.size_bits || mode.quality != a.quality {
            return Err(Error::Infeasible(format!(
                "user {u}: assignment disagrees with mode {}",
                a.mode
            )));
        }
        admission += admission_score(view.backlog(a.helper, u), a.size_bits, view.theta[u], a.quality);
    }

    let mut service = 0.0;
    for (h, s) in action.schedules.iter().enumerate() {
        match s.served_user {
            None => {
                if s.bits_served != 0.0 {
                    return Err(Error::Infeasible(format!("helper {h} serves bits to nobody")));
                }
            }
            Some(u) => {
                let Some(c) = view.capacity(h, u) else {
                    return Err(Error::Infeasible(format!("helper {h} cannot reach user {u}")));
                };
                if s.bits_served != view.symbols_per_slot * c {
                    return Err(Error::Infeasible(format!(
                        "helper {h}: served bits must equal n * C for user {u}"
                    )));
                }
                service += view.backlog(h, u) as f64 * s.bits_served;
            }
        }
    }

    let mut penalty = 0.0;
    for (u, &gamma) in action.gammas.iter().enumerate() {
        let b = view.bounds[u];
        if !(b.d_min..=b.d_max).contains(&gamma) {
            return Err(Error::Infeasible(format!(
                "user {u}: gamma {gamma} outside [{}, {}]",
                b.d_min, b.d_max
            )));
        }
        penalty += cfg.v * cfg.utility.value(gamma) - gamma * view.theta[u];
    }

    Ok(admission - service - penalty)
}
