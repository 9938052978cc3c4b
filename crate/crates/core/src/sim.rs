//! The slot loop.
//!
//! Every slot runs the same fixed sequence:
//!
//! 1. refresh positions, neighborhoods and link capacities;
//! 2. snapshot `Q(t)` and `Theta(t)`;
//! 3. per user, choose `gamma` and admit the next chunk against the snapshot;
//! 4. per helper, schedule against the snapshot and drain the served queue;
//! 5. append the admitted chunks to their queues;
//! 6. hand delivered chunks to the playback buffers and advance playback;
//! 7. update the virtual queues;
//! 8. append the slot record.
//!
//! Arrivals of slot `t` are never served in slot `t`. Per-link conservation
//! and the scalar queue recursion are checked on every slot.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, CapacityEstimator, ChannelParams};
use crate::control::{self, ControlAction, DppConfig, SlotView, TransmissionQueue, VirtualQueue};
use crate::error::{Error, Result};
use crate::metrics::{LinkRecord, MetricsLog, SlotRecord, UserSlotRecord};
use crate::playback::{PlaybackBuffer, PlaybackPolicy};
use crate::seed;
use crate::topology::{build_grid_topology, GridParams, NetworkGraph, Position, UserNode, Waypoint};
use crate::video::{QualityBounds, VideoParams, VideoProfile};

const TOPOLOGY_STREAM: u64 = 1;
const OFFSET_STREAM: u64 = 2;
const CHANNEL_STREAM: u64 = 3;

/// Initial value of the virtual queues.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VirtualQueueStart {
    /// `Theta_u(0) = 0`. Over short horizons with large `V` the virtual
    /// queues stay far below `V` and every user keeps `gamma = d_max`.
    Zero,
    /// `Theta_u(0) = V / d_max`, the smallest backlog at which the auxiliary
    /// decision leaves the upper bound.
    #[default]
    Scaled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunParams {
    pub slots: u64,
    pub seed: u64,
    /// Channel symbols per slot (`n`).
    pub symbols_per_slot: f64,
    pub virtual_queue_start: VirtualQueueStart,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            slots: 1000,
            seed: 1,
            // 18 MHz for a 0.5 s slot.
            symbols_per_slot: 9e6,
            virtual_queue_start: VirtualQueueStart::Scaled,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaypointSpec {
    pub x: f64,
    pub y: f64,
    pub slot: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobileUserSpec {
    pub waypoints: Vec<WaypointSpec>,
}

/// Users added on top of the grid population, each following its waypoints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityParams {
    pub users: Vec<MobileUserSpec>,
}

impl MobilityParams {
    /// A single user crossing the five cells of the second row over the
    /// first 1000 slots.
    pub fn demo_crossing() -> Self {
        Self {
            users: vec![MobileUserSpec {
                waypoints: vec![
                    WaypointSpec { x: 10.0, y: 100.0, slot: 0 },
                    WaypointSpec { x: 390.0, y: 100.0, slot: 1000 },
                ],
            }],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub sim: RunParams,
    pub topology: GridParams,
    pub mobility: MobilityParams,
    pub channel: ChannelParams,
    pub video: VideoParams,
    pub dpp: DppConfig,
    pub playback: PlaybackPolicy,
}

impl SimConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.sim.slots == 0 {
            issues.push("sim.slots must be at least 1".to_string());
        }
        if !(self.sim.symbols_per_slot.is_finite() && self.sim.symbols_per_slot >= 1.0) {
            issues.push(format!(
                "sim.symbols_per_slot must be at least 1, got {}",
                self.sim.symbols_per_slot
            ));
        }
        issues.extend(self.topology.validate());
        issues.extend(self.channel.validate());
        issues.extend(self.dpp.validate());
        issues.extend(self.playback.validate());
        let side = self.topology.area_side;
        for (i, user) in self.mobility.users.iter().enumerate() {
            if user.waypoints.is_empty() {
                issues.push(format!("mobility.users[{i}] has no waypoints"));
            }
            if user.waypoints.windows(2).any(|w| w[1].slot <= w[0].slot) {
                issues.push(format!("mobility.users[{i}] waypoint slots must increase"));
            }
            for w in &user.waypoints {
                if !(w.x.is_finite() && w.y.is_finite())
                    || w.x < 0.0
                    || w.y < 0.0
                    || w.x > side
                    || w.y > side
                {
                    issues.push(format!(
                        "mobility.users[{i}] waypoint ({}, {}) outside the area",
                        w.x, w.y
                    ));
                }
            }
        }
        if self.video.trace.is_none() {
            let total: usize = self.video.segments.iter().map(|s| s.length).sum();
            if self.video.segments.is_empty() || total != self.video.num_chunks {
                issues.push(format!(
                    "video.segments must be non-empty and sum to num_chunks = {} (got {total})",
                    self.video.num_chunks
                ));
            }
        }
        issues
    }
}

/// Source of link capacities `C_hu(t)` in bits per channel symbol.
pub trait CapacityModel: Send + Sync {
    /// Capacities for `links`, in order, with users at their slot-`t` positions.
    fn capacities(&self, graph: &NetworkGraph, links: &[(usize, usize)], t: u64) -> Vec<f64>;
}

/// Rayleigh-fading ergodic capacities with every other helper interfering.
#[derive(Clone, Debug)]
pub struct FadingCapacities {
    pub estimator: CapacityEstimator,
    pub gain_cutoff: Option<f64>,
}

impl CapacityModel for FadingCapacities {
    fn capacities(&self, graph: &NetworkGraph, links: &[(usize, usize)], t: u64) -> Vec<f64> {
        let gains = channel::LinkGainMatrix::at_slot(graph, t);
        let powers: Vec<f64> = graph.helpers.iter().map(|h| h.tx_power).collect();
        channel::capacities_for(&gains, &powers, links, &self.estimator, self.gain_cutoff, t)
    }
}

/// Capacities fixed per link, independent of geometry.
#[derive(Clone, Debug, Default)]
pub struct FixedCapacities {
    pub values: BTreeMap<(usize, usize), f64>,
    /// Used for links without an explicit entry.
    pub fallback: f64,
}

impl CapacityModel for FixedCapacities {
    fn capacities(&self, _: &NetworkGraph, links: &[(usize, usize)], _: u64) -> Vec<f64> {
        links
            .iter()
            .map(|l| self.values.get(l).copied().unwrap_or(self.fallback))
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
struct CapacityCache {
    position: Option<Position>,
    by_helper: BTreeMap<usize, f64>,
}

#[derive(Clone, Copy, Debug, Default)]
struct LinkTotals {
    admitted: u64,
    drained: u64,
}

#[derive(Clone, Debug)]
struct UserState {
    next_chunk: u64,
    virtual_queue: VirtualQueue,
    buffer: PlaybackBuffer,
    bounds: QualityBounds,
    capacities: CapacityCache,
}

pub struct Simulation {
    graph: NetworkGraph,
    library: Vec<VideoProfile>,
    capacity_model: Box<dyn CapacityModel>,
    dpp: DppConfig,
    playback: PlaybackPolicy,
    symbols_per_slot: f64,
    slots: u64,
    t: u64,
    queues: Vec<TransmissionQueue>,
    totals: Vec<LinkTotals>,
    users: Vec<UserState>,
    log: MetricsLog,
}

impl Simulation {
    /// Builds the grid network, video profile and fading channel described
    /// by `config`.
    pub fn from_config(config: &SimConfig) -> Result<Self> {
        let issues = config.validate();
        if !issues.is_empty() {
            return Err(Error::Config(issues));
        }
        let seed = config.sim.seed;
        let mut graph = build_grid_topology(&config.topology, seed::derive(seed, &[TOPOLOGY_STREAM]))?;
        graph.set_tx_power(channel::power_for_center_snr(config.channel.center_snr_db));
        for spec in &config.mobility.users {
            let trajectory = spec
                .waypoints
                .iter()
                .map(|w| Waypoint {
                    position: Position::new(w.x, w.y),
                    slot: w.slot,
                })
                .collect();
            graph.push_user(UserNode::moving(0, trajectory)?);
        }
        let video = config.video.build()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[OFFSET_STREAM]));
        for user in &mut graph.users {
            user.file_id = 0;
            user.start_offset = rng.random_range(0..video.len());
        }
        let estimator = CapacityEstimator::new(
            config.channel.num_samples,
            seed::derive(seed, &[CHANNEL_STREAM]),
        )?;
        let model = FadingCapacities {
            estimator,
            gain_cutoff: config.channel.interferer_gain_cutoff,
        };
        Self::new(config, graph, vec![video], Box::new(model))
    }

    /// Runs `config`'s control, playback and horizon settings on an explicit
    /// network, library and capacity model. Users request
    /// `library[user.file_id]`.
    pub fn new(
        config: &SimConfig,
        graph: NetworkGraph,
        library: Vec<VideoProfile>,
        capacity_model: Box<dyn CapacityModel>,
    ) -> Result<Self> {
        let mut issues: Vec<String> = Vec::new();
        issues.extend(config.dpp.validate());
        issues.extend(config.playback.validate());
        if config.sim.slots == 0 {
            issues.push("sim.slots must be at least 1".to_string());
        }
        if !(config.sim.symbols_per_slot.is_finite() && config.sim.symbols_per_slot >= 1.0) {
            issues.push("sim.symbols_per_slot must be at least 1".to_string());
        }
        for u in &graph.users {
            if u.file_id >= library.len() {
                issues.push(format!("user {} requests missing file {}", u.id, u.file_id));
            }
        }
        if !issues.is_empty() {
            return Err(Error::Config(issues));
        }

        let h = graph.num_helpers();
        let n = graph.num_users();
        let users = graph
            .users
            .iter()
            .map(|u| {
                let bounds = library[u.file_id].quality_bounds();
                let theta = match config.sim.virtual_queue_start {
                    VirtualQueueStart::Zero => 0.0,
                    VirtualQueueStart::Scaled => config.dpp.v / bounds.d_max,
                };
                UserState {
                    next_chunk: 0,
                    virtual_queue: VirtualQueue::new(theta),
                    buffer: PlaybackBuffer::new(),
                    bounds,
                    capacities: CapacityCache::default(),
                }
            })
            .collect();
        Ok(Self {
            log: MetricsLog::new(h, n, config.dpp.utility),
            graph,
            library,
            capacity_model,
            dpp: config.dpp,
            playback: config.playback,
            symbols_per_slot: config.sim.symbols_per_slot,
            slots: config.sim.slots,
            t: 0,
            queues: vec![TransmissionQueue::new(); h * n],
            totals: vec![LinkTotals::default(); h * n],
            users,
        })
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn slot(&self) -> u64 {
        self.t
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn queue(&self, h: usize, u: usize) -> &TransmissionQueue {
        &self.queues[h * self.graph.num_users() + u]
    }

    pub fn theta(&self, u: usize) -> f64 {
        self.users[u].virtual_queue.theta()
    }

    pub fn playback(&self, u: usize) -> &PlaybackBuffer {
        &self.users[u].buffer
    }

    /// Capacity most recently used for link `(h, u)`.
    pub fn capacity(&self, h: usize, u: usize) -> Option<f64> {
        self.users[u].capacities.by_helper.get(&h).copied()
    }

    /// Runs `count` more slots, ignoring the configured horizon.
    pub fn run_slots(&mut self, count: u64) -> Result<()> {
        for _ in 0..count {
            self.step_slot()?;
        }
        Ok(())
    }

    /// Runs the remaining slots of the horizon.
    pub fn run(mut self) -> Result<MetricsLog> {
        while self.t < self.slots {
            self.step_slot()?;
        }
        Ok(self.log)
    }

    /// Refreshes cached capacities for every link a helper may serve this
    /// slot and returns the eligible helpers of each user.
    fn refresh_links(&mut self, t: u64) -> Vec<Vec<usize>> {
        let num_users = self.graph.num_users();
        let mut eligible = Vec::with_capacity(num_users);
        let mut missing = Vec::new();
        for u in 0..num_users {
            let pos = self.graph.users[u].position_at(t);
            let cache = &mut self.users[u].capacities;
            if cache.position != Some(pos) {
                cache.position = Some(pos);
                cache.by_helper.clear();
            }
            let nbrs = self.graph.neighborhood(u, t);
            for h in 0..self.graph.num_helpers() {
                let needed = nbrs.binary_search(&h).is_ok()
                    || self.queues[h * num_users + u].backlog_bits() > 0;
                if needed && !cache.by_helper.contains_key(&h) {
                    missing.push((h, u));
                }
            }
            eligible.push(nbrs);
        }
        if !missing.is_empty() {
            let caps = self.capacity_model.capacities(&self.graph, &missing, t);
            for (&(h, u), c) in missing.iter().zip(caps) {
                self.users[u].capacities.by_helper.insert(h, c);
            }
        }
        eligible
    }

    pub fn step_slot(&mut self) -> Result<()> {
        let t = self.t;
        let num_users = self.graph.num_users();
        let num_helpers = self.graph.num_helpers();

        // (1) network state
        let eligible = self.refresh_links(t);

        // (2) snapshot
        let backlog: Vec<u64> = self.queues.iter().map(|q| q.backlog_bits()).collect();
        let mut capacity = vec![None; num_helpers * num_users];
        for (u, user) in self.users.iter().enumerate() {
            for h in 0..num_helpers {
                let i = h * num_users + u;
                if eligible[u].binary_search(&h).is_ok() || backlog[i] > 0 {
                    capacity[i] = user.capacities.by_helper.get(&h).copied();
                }
            }
        }
        let view = SlotView {
            num_helpers,
            num_users,
            backlog,
            capacity,
            eligible,
            theta: self.users.iter().map(|u| u.virtual_queue.theta()).collect(),
            profiles: self
                .graph
                .users
                .iter()
                .zip(&self.users)
                .map(|(node, state)| {
                    self.library[node.file_id]
                        .chunk_profile(node.start_offset, state.next_chunk)
                        .clone()
                })
                .collect(),
            bounds: self.users.iter().map(|u| u.bounds).collect(),
            symbols_per_slot: self.symbols_per_slot,
        };

        // (3)-(4) decisions against the snapshot
        let ControlAction {
            admissions,
            schedules,
            gammas,
        } = control::decide(&view, &self.dpp);

        let mut served = vec![0u64; num_helpers * num_users];
        for (h, s) in schedules.iter().enumerate() {
            if let Some(u) = s.served_user {
                served[h * num_users + u] = control::whole_bits(s.bits_served);
            }
        }
        let mut arrivals: Vec<Option<(u64, u64, usize)>> = vec![None; num_helpers * num_users];
        let mut admitted = Vec::with_capacity(num_users);
        for (u, decision) in admissions.iter().enumerate() {
            match decision.assignment() {
                Some(a) => {
                    let chunk = self.users[u].next_chunk;
                    self.users[u].next_chunk += 1;
                    arrivals[a.helper * num_users + u] = Some((chunk, a.size_bits, a.mode));
                    admitted.push(Some((chunk, *a)));
                }
                None => admitted.push(None),
            }
        }

        // (4)-(5) drain, then enqueue, with per-link invariant checks
        let mut links = Vec::new();
        let mut delivered: Vec<Vec<u64>> = vec![Vec::new(); num_users];
        for h in 0..num_helpers {
            #[allow(clippy::needless_range_loop)]
            for u in 0..num_users {
                let i = h * num_users + u;
                let before = view.backlog[i];
                let arrival = arrivals[i];
                let offered = served[i];
                let tracked = view.capacity[i].is_some();
                if !tracked && arrival.is_none() && before == 0 {
                    continue;
                }
                let arriving: Vec<(u64, u64)> = arrival.map(|(c, b, _)| (c, b)).into_iter().collect();
                let done = self.queues[i].update(offered, &arriving);
                let after = self.queues[i].backlog_bits();
                let arrived_bits = arrival.map_or(0, |(_, b, _)| b);
                let drained = before + arrived_bits - after;
                self.totals[i].admitted += arrived_bits;
                self.totals[i].drained += drained;
                self.check_link(t, h, u, before, offered, arrived_bits)?;
                delivered[u].extend(done);
                links.push(LinkRecord {
                    helper: h,
                    user: u,
                    backlog_bits: before,
                    served_bits: drained,
                    admitted_bits: arrived_bits,
                    mode: arrival.map_or(0, |(_, _, m)| m),
                });
            }
        }

        // (6)-(7) playback and virtual queues
        let mut user_records = Vec::with_capacity(num_users);
        for (u, state) in self.users.iter_mut().enumerate() {
            delivered[u].sort_unstable();
            for &c in &delivered[u] {
                state.buffer.on_delivery(c);
            }
            let event = state.buffer.step(&self.playback, t);
            let theta = state.virtual_queue.theta();
            state
                .virtual_queue
                .update(gammas[u], admitted[u].map(|(_, a)| a.quality));
            if state.virtual_queue.theta() < 0.0 {
                return Err(Error::Invariant {
                    slot: t,
                    message: format!("virtual queue of user {u} is negative"),
                });
            }
            user_records.push(UserSlotRecord {
                gamma: gammas[u],
                theta,
                admitted: admitted[u],
                delivered: std::mem::take(&mut delivered[u]),
                event,
                buffered: state.buffer.contiguous_run(),
            });
        }

        // (8)
        self.log.push(SlotRecord {
            t,
            links,
            users: user_records,
        });
        self.t += 1;
        Ok(())
    }

    fn check_link(
        &mut self,
        t: u64,
        h: usize,
        u: usize,
        before: u64,
        offered: u64,
        arrived: u64,
    ) -> Result<()> {
        let i = h * self.graph.num_users() + u;
        let q = &self.queues[i];
        let after = q.backlog_bits();
        let fail = |message: String| Error::Invariant { slot: t, message };
        if after != before.saturating_sub(offered) + arrived {
            return Err(fail(format!(
                "link ({h}, {u}): backlog {after} != max({before} - {offered}, 0) + {arrived}"
            )));
        }
        let totals = self.totals[i];
        if totals.admitted != totals.drained + after {
            return Err(fail(format!(
                "link ({h}, {u}): admitted {} != drained {} + backlog {after}",
                totals.admitted, totals.drained
            )));
        }
        if !q.is_consistent() {
            return Err(fail(format!("link ({h}, {u}): FIFO does not sum to backlog")));
        }
        self.log.invariant_checks += 1;
        Ok(())
    }
}

/// Runs `config` to the end of its horizon.
pub fn run(config: &SimConfig) -> Result<MetricsLog> {
    Simulation::from_config(config)?.run()
}
