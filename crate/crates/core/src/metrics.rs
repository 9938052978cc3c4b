//! Per-slot records of a run and the per-user summaries derived from them.

use std::collections::HashMap;

use crate::control::{Assignment, Utility};
use crate::playback::{PlaybackEvent, PlaybackMetrics};

/// State and decisions of one link during one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkRecord {
    pub helper: usize,
    pub user: usize,
    /// `Q_hu(t)` when the slot's decisions were taken.
    pub backlog_bits: u64,
    /// Bits actually drained from the queue this slot.
    pub served_bits: u64,
    pub admitted_bits: u64,
    /// 1-based mode admitted on this link, 0 if none.
    pub mode: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserSlotRecord {
    pub gamma: f64,
    /// `Theta_u(t)` when the slot's decisions were taken.
    pub theta: f64,
    /// Chunk number and assignment of this slot's request, if any.
    pub admitted: Option<(u64, Assignment)>,
    pub delivered: Vec<u64>,
    pub event: PlaybackEvent,
    /// Contiguous chunks ready to play after this slot's playback step.
    pub buffered: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotRecord {
    pub t: u64,
    pub links: Vec<LinkRecord>,
    pub users: Vec<UserSlotRecord>,
}

/// Append-only log of a simulation run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsLog {
    pub num_helpers: usize,
    pub num_users: usize,
    pub utility: Utility,
    pub slots: Vec<SlotRecord>,
    /// Number of per-link queue invariant checks that passed.
    pub invariant_checks: u64,
}

impl MetricsLog {
    pub fn new(num_helpers: usize, num_users: usize, utility: Utility) -> Self {
        Self {
            num_helpers,
            num_users,
            utility,
            slots: Vec::new(),
            invariant_checks: 0,
        }
    }

    pub fn push(&mut self, record: SlotRecord) {
        self.slots.push(record);
    }

    /// (chunk, helper) for every chunk user `u` requested, in request order.
    pub fn association(&self, u: usize) -> Vec<(u64, usize)> {
        self.slots
            .iter()
            .filter_map(|s| s.users[u].admitted.map(|(c, a)| (c, a.helper)))
            .collect()
    }

    pub fn total_backlog(&self, t: usize) -> u64 {
        self.slots[t].links.iter().map(|l| l.backlog_bits).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserSummary {
    pub user: usize,
    /// Mean quality over delivered chunks; `None` if nothing was delivered.
    pub avg_quality: Option<f64>,
    pub utility: Option<f64>,
    pub delivered_chunks: u64,
    pub requested_chunks: u64,
    pub playback: PlaybackMetrics,
}

/// Rebuilds the per-user summaries from the slot records alone.
pub fn summarize(log: &MetricsLog) -> Vec<UserSummary> {
    (0..log.num_users).map(|u| summarize_user(log, u)).collect()
}

fn summarize_user(log: &MetricsLog, u: usize) -> UserSummary {
    let mut quality_of: HashMap<u64, f64> = HashMap::new();
    let mut quality_sum = 0.0;
    let mut delivered = 0u64;
    let mut requested = 0u64;
    let mut pb = PlaybackMetrics::default();
    for slot in &log.slots {
        let rec = &slot.users[u];
        if let Some((chunk, a)) = rec.admitted {
            quality_of.insert(chunk, a.quality);
            requested += 1;
        }
        for chunk in &rec.delivered {
            quality_sum += quality_of[chunk];
            delivered += 1;
        }
        match rec.event {
            PlaybackEvent::Prebuffering => pb.prebuffer_slots += 1,
            PlaybackEvent::Played(_) => {
                pb.played_chunks += 1;
                pb.start_slot.get_or_insert(slot.t);
            }
            PlaybackEvent::Skipped { skipped, .. } => {
                pb.played_chunks += 1;
                pb.start_slot.get_or_insert(slot.t);
                pb.skipped_chunks += skipped;
            }
            PlaybackEvent::Stalled => {
                pb.stall_slots += 1;
                pb.rebuffer_events += 1;
            }
            PlaybackEvent::Rebuffering => pb.stall_slots += 1,
        }
    }
    let avg_quality = (delivered > 0).then(|| quality_sum / delivered as f64);
    UserSummary {
        user: u,
        avg_quality,
        utility: avg_quality.map(|q| log.utility.value(q)),
        delivered_chunks: delivered,
        requested_chunks: requested,
        playback: pb,
    }
}

/// Empirical CDF of per-user average quality: (rank, quality, rank / N),
/// ascending. Users with no delivered chunk are left out.
pub fn quality_cdf(summaries: &[UserSummary]) -> Vec<(usize, f64, f64)> {
    let mut q: Vec<f64> = summaries.iter().filter_map(|s| s.avg_quality).collect();
    q.sort_by(f64::total_cmp);
    let n = q.len() as f64;
    q.into_iter()
        .enumerate()
        .map(|(i, v)| (i + 1, v, (i + 1) as f64 / n))
        .collect()
}

/// Nearest-rank quantile of an ascending sample, `p` in (0, 1].
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Average quality at the nine deciles of the user population.
pub fn quality_deciles(summaries: &[UserSummary]) -> Vec<f64> {
    let sorted: Vec<f64> = quality_cdf(summaries).into_iter().map(|(_, q, _)| q).collect();
    (1..=9)
        .filter_map(|k| quantile(&sorted, k as f64 / 10.0))
        .collect()
}
