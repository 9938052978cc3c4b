//! Client playback buffer with pre-buffering, re-buffering and chunk skipping.
//!
//! Playback starts once `prebuffer_target` consecutive chunks from the
//! playhead are buffered and then consumes one chunk per slot. When the
//! playhead chunk is missing the client skips ahead if some chunk within
//! `skip_window` starts a run of at least `skip_gain` buffered chunks;
//! otherwise it stalls and waits for `rebuffer_target` consecutive chunks.
//! Chunks that arrive after the playhead has passed them are dropped.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaybackPolicy {
    pub prebuffer_target: u64,
    pub rebuffer_target: u64,
    pub skip_window: u64,
    pub skip_gain: u64,
}

impl Default for PlaybackPolicy {
    fn default() -> Self {
        Self {
            prebuffer_target: 8,
            rebuffer_target: 4,
            skip_window: 8,
            skip_gain: 4,
        }
    }
}

impl PlaybackPolicy {
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        for (name, value) in [
            ("prebuffer_target", self.prebuffer_target),
            ("rebuffer_target", self.rebuffer_target),
            ("skip_window", self.skip_window),
            ("skip_gain", self.skip_gain),
        ] {
            if value == 0 {
                issues.push(format!("playback.{name} must be at least 1"));
            }
        }
        issues
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlaybackState {
    Prebuffering,
    Playing,
    Rebuffering,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlaybackEvent {
    Prebuffering,
    Played(u64),
    /// `skipped` missing chunks starting at `chunk` were passed over to reach
    /// a run of `jump` buffered chunks; the first of them is played this slot.
    Skipped { chunk: u64, skipped: u64, jump: u64 },
    Stalled,
    Rebuffering,
}

impl PlaybackEvent {
    pub fn label(&self) -> &'static str {
        match self {
            PlaybackEvent::Prebuffering => "prebuffering",
            PlaybackEvent::Played(_) => "played",
            PlaybackEvent::Skipped { .. } => "skipped",
            PlaybackEvent::Stalled => "stalled",
            PlaybackEvent::Rebuffering => "rebuffering",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PlaybackMetrics {
    pub stall_slots: u64,
    pub skipped_chunks: u64,
    pub prebuffer_slots: u64,
    pub played_chunks: u64,
    /// Chunks delivered after the playhead had moved past them.
    pub late_drops: u64,
    /// Number of times playback entered re-buffering.
    pub rebuffer_events: u64,
    /// Slot at which playback started, if it has.
    pub start_slot: Option<u64>,
}

impl PlaybackMetrics {
    pub fn skip_fraction(&self) -> f64 {
        let total = self.played_chunks + self.skipped_chunks;
        if total == 0 {
            0.0
        } else {
            self.skipped_chunks as f64 / total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlaybackBuffer {
    /// Delivered chunks at or beyond the playhead.
    received: BTreeSet<u64>,
    playhead: u64,
    state: PlaybackState,
    metrics: PlaybackMetrics,
}

impl Default for PlaybackBuffer {
    fn default() -> Self {
        Self::new()
    }
}

impl PlaybackBuffer {
    pub fn new() -> Self {
        Self {
            received: BTreeSet::new(),
            playhead: 0,
            state: PlaybackState::Prebuffering,
            metrics: PlaybackMetrics::default(),
        }
    }

    pub fn playhead(&self) -> u64 {
        self.playhead
    }

    pub fn state(&self) -> PlaybackState {
        self.state
    }

    pub fn start_slot(&self) -> Option<u64> {
        self.metrics.start_slot
    }

    /// Buffered chunks beyond the playhead (not necessarily contiguous).
    pub fn buffered(&self) -> usize {
        self.received.len()
    }

    pub fn on_delivery(&mut self, chunk: u64) {
        if chunk < self.playhead {
            self.metrics.late_drops += 1;
        } else {
            self.received.insert(chunk);
        }
    }

    /// Length of the run of buffered chunks starting at `from`.
    pub fn run_from(&self, from: u64) -> u64 {
        let mut next = from;
        for &c in self.received.range(from..) {
            if c != next {
                break;
            }
            next += 1;
        }
        next - from
    }

    pub fn contiguous_run(&self) -> u64 {
        self.run_from(self.playhead)
    }

    /// Advances playback by one slot.
    pub fn step(&mut self, policy: &PlaybackPolicy, t: u64) -> PlaybackEvent {
        match self.state {
            PlaybackState::Prebuffering => {
                if self.contiguous_run() >= policy.prebuffer_target {
                    self.state = PlaybackState::Playing;
                    self.metrics.start_slot = Some(t);
                    self.play()
                } else if let Some(event) =
                    self.try_skip(policy, policy.prebuffer_target.max(policy.skip_gain))
                {
                    // the first chunks are stuck somewhere, start further on
                    self.state = PlaybackState::Playing;
                    self.metrics.start_slot = Some(t);
                    event
                } else {
                    self.metrics.prebuffer_slots += 1;
                    PlaybackEvent::Prebuffering
                }
            }
            PlaybackState::Playing => {
                if self.received.contains(&self.playhead) {
                    self.play()
                } else if let Some(event) = self.try_skip(policy, policy.skip_gain) {
                    event
                } else {
                    self.state = PlaybackState::Rebuffering;
                    self.metrics.rebuffer_events += 1;
                    self.metrics.stall_slots += 1;
                    PlaybackEvent::Stalled
                }
            }
            PlaybackState::Rebuffering => {
                if self.contiguous_run() >= policy.rebuffer_target {
                    self.state = PlaybackState::Playing;
                    self.play()
                } else if let Some(event) = self.try_skip(policy, policy.skip_gain) {
                    self.state = PlaybackState::Playing;
                    event
                } else {
                    self.metrics.stall_slots += 1;
                    PlaybackEvent::Rebuffering
                }
            }
        }
    }

    fn play(&mut self) -> PlaybackEvent {
        let chunk = self.playhead;
        self.received.remove(&chunk);
        self.playhead += 1;
        self.metrics.played_chunks += 1;
        PlaybackEvent::Played(chunk)
    }

    /// Skips to the first chunk within the skip window that starts a run of
    /// at least `min_run` buffered chunks.
    fn try_skip(&mut self, policy: &PlaybackPolicy, min_run: u64) -> Option<PlaybackEvent> {
        let from = self.playhead;
        let (target, jump) = self
            .received
            .range(from + 1..=from + policy.skip_window)
            .map(|&c| (c, self.run_from(c)))
            .find(|&(_, run)| run >= min_run)?;
        let skipped = target - from;
        self.metrics.skipped_chunks += skipped;
        self.playhead = target;
        self.play();
        Some(PlaybackEvent::Skipped {
            chunk: from,
            skipped,
            jump,
        })
    }

    pub fn metrics(&self) -> PlaybackMetrics {
        self.metrics
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn policy(pre: u64, re: u64, window: u64, gain: u64) -> PlaybackPolicy {
        PlaybackPolicy {
            prebuffer_target: pre,
            rebuffer_target: re,
            skip_window: window,
            skip_gain: gain,
        }
    }

    #[test]
    fn playhead_delivery_extends_run() {
        let mut b = PlaybackBuffer::new();
        b.on_delivery(0);
        assert_eq!(b.contiguous_run(), 1);
    }

    #[test]
    fn late_chunks_are_dropped() {
        let mut b = PlaybackBuffer::new();
        b.on_delivery(0);
        let p = policy(1, 1, 2, 2);
        assert_eq!(b.step(&p, 0), PlaybackEvent::Played(0));
        let before = b.clone();
        b.on_delivery(0);
        assert_eq!(b.buffered(), before.buffered());
        assert_eq!(b.metrics().late_drops, 1);
    }

    #[test]
    fn out_of_order_deliveries_join_up() {
        let mut b = PlaybackBuffer::new();
        b.playhead = 3;
        for c in [5, 3, 4] {
            b.on_delivery(c);
        }
        assert_eq!(b.playhead() + b.contiguous_run(), 6);
    }

    #[test]
    fn prebuffering_ends_when_run_reaches_target() {
        let p = policy(4, 2, 8, 4);
        let mut b = PlaybackBuffer::new();
        // One chunk arrives per slot from t = 6 on, so the run is 4 at t = 9.
        for t in 0..9 {
            if t >= 6 {
                b.on_delivery(t - 6);
            }
            assert_eq!(b.step(&p, t), PlaybackEvent::Prebuffering);
        }
        b.on_delivery(3);
        assert_eq!(b.step(&p, 9), PlaybackEvent::Played(0));
        assert_eq!(b.state(), PlaybackState::Playing);
        assert_eq!(b.start_slot(), Some(9));
        assert_eq!(b.metrics().prebuffer_slots, 9);
    }

    #[test]
    fn prebuffering_skips_a_stuck_first_chunk() {
        let p = policy(4, 2, 8, 2);
        let mut b = PlaybackBuffer::new();
        for c in 1..=3 {
            b.on_delivery(c);
        }
        // run of 3 behind the gap is below the prebuffer target
        assert_eq!(b.step(&p, 0), PlaybackEvent::Prebuffering);
        b.on_delivery(4);
        assert_eq!(
            b.step(&p, 1),
            PlaybackEvent::Skipped { chunk: 0, skipped: 1, jump: 4 }
        );
        assert_eq!(b.state(), PlaybackState::Playing);
        assert_eq!(b.start_slot(), Some(1));
        assert_eq!(b.playhead(), 2);
    }

    #[test]
    fn skip_over_missing_playhead() {
        let p = policy(1, 1, 8, 4);
        let mut b = PlaybackBuffer::new();
        b.on_delivery(0);
        assert_eq!(b.step(&p, 0), PlaybackEvent::Played(0));
        for c in 2..=5 {
            b.on_delivery(c);
        }
        assert_eq!(
            b.step(&p, 1),
            PlaybackEvent::Skipped { chunk: 1, skipped: 1, jump: 4 }
        );
        assert_eq!(b.playhead(), 3);
        assert_eq!(b.metrics().skipped_chunks, 1);
    }

    #[test]
    fn stall_when_nothing_ahead() {
        let p = policy(1, 2, 8, 4);
        let mut b = PlaybackBuffer::new();
        b.on_delivery(0);
        b.step(&p, 0);
        assert_eq!(b.step(&p, 1), PlaybackEvent::Stalled);
        assert_eq!(b.state(), PlaybackState::Rebuffering);
        assert_eq!(b.step(&p, 2), PlaybackEvent::Rebuffering);
        b.on_delivery(1);
        b.on_delivery(2);
        assert_eq!(b.step(&p, 3), PlaybackEvent::Played(1));
        let m = b.metrics();
        assert_eq!((m.stall_slots, m.rebuffer_events), (2, 1));
    }

    #[test]
    fn short_runs_do_not_trigger_skips() {
        let p = policy(1, 1, 8, 4);
        let mut b = PlaybackBuffer::new();
        b.on_delivery(0);
        b.step(&p, 0);
        for c in [2, 3, 4] {
            b.on_delivery(c);
        }
        assert_eq!(b.step(&p, 1), PlaybackEvent::Stalled);
    }

    #[test]
    fn starved_buffer_counts_stalls_since_start() {
        let p = PlaybackPolicy::default();
        let mut b = PlaybackBuffer::new();
        for t in 0..20 {
            b.step(&p, t);
        }
        let m = b.metrics();
        assert_eq!((m.played_chunks, m.stall_slots, m.prebuffer_slots), (0, 0, 20));

        let p = policy(1, 1, 1, 1);
        let mut b = PlaybackBuffer::new();
        b.on_delivery(0);
        b.step(&p, 0);
        for t in 1..11 {
            b.step(&p, t);
        }
        assert_eq!(b.metrics().stall_slots, 10);
    }

    #[test]
    fn in_order_delivery_never_stalls() {
        let p = PlaybackPolicy::default();
        let mut b = PlaybackBuffer::new();
        for c in 0..100 {
            b.on_delivery(c);
        }
        for t in 0..100 {
            assert!(matches!(b.step(&p, t), PlaybackEvent::Played(_)));
        }
        let m = b.metrics();
        assert_eq!((m.stall_slots, m.skipped_chunks, m.played_chunks), (0, 0, 100));
    }

    #[test]
    fn scripted_gap_gives_exactly_one_skip() {
        // Ten chunks, chunk 4 never arrives, skip gain 2.
        let p = policy(2, 2, 3, 2);
        let mut b = PlaybackBuffer::new();
        let mut events = Vec::new();
        for t in 0..12u64 {
            if t < 10 && t != 4 {
                b.on_delivery(t);
            }
            events.push(b.step(&p, t));
        }
        let m = b.metrics();
        assert_eq!(m.skipped_chunks, 1);
        assert_eq!(m.played_chunks, 9);
        assert!(events.contains(&PlaybackEvent::Skipped { chunk: 4, skipped: 1, jump: 2 }));
    }

    proptest! {
        #[test]
        fn playhead_monotone_and_chunks_played_once(
            deliveries in proptest::collection::vec(proptest::collection::vec(0u64..60, 0..4), 1..80),
            pre in 1u64..6, re in 1u64..6, window in 1u64..6, gain in 1u64..6,
        ) {
            let p = policy(pre, re, window, gain);
            let mut b = PlaybackBuffer::new();
            let mut played = std::collections::HashSet::new();
            let mut last = 0;
            let mut distinct = std::collections::HashSet::new();
            for (t, batch) in deliveries.iter().enumerate() {
                for &c in batch {
                    b.on_delivery(c);
                    distinct.insert(c);
                }
                let event = b.step(&p, t as u64);
                match event {
                    PlaybackEvent::Played(c) => prop_assert!(played.insert(c)),
                    PlaybackEvent::Skipped { chunk, skipped, .. } => {
                        prop_assert!(played.insert(chunk + skipped));
                    }
                    _ => {}
                }
                prop_assert!(b.playhead() >= last);
                last = b.playhead();
            }
            let m = b.metrics();
            prop_assert_eq!(m.played_chunks as usize, played.len());
            prop_assert!(m.played_chunks as usize <= distinct.len());
        }
    }
}
