//! Ergodic link capacities under Rayleigh fading.
//!
//! Every helper transmits at constant power whether or not it is scheduled,
//! so a link sees interference from all other helpers, treated as noise.
//! The expectation over the small-scale fading is estimated by Monte Carlo
//! with unit-mean exponential power gains; capacities are in bits per
//! channel symbol (log base 2) with noise power normalized to one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::topology::NetworkGraph;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Where the fading variates of a link come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variates {
    /// Each link gets its own stream derived from (seed, helper, user, slot).
    PerLink,
    /// Every estimate reuses the base seed, so two estimates with the same
    /// number of interferers see identical variates.
    Common,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapacityEstimator {
    num_samples: usize,
    seed: u64,
    variates: Variates,
}

impl CapacityEstimator {
    pub fn new(num_samples: usize, seed: u64) -> Result<Self> {
        if num_samples == 0 {
            return Err(Error::config("channel.num_samples must be at least 1"));
        }
        Ok(Self {
            num_samples,
            seed,
            variates: Variates::PerLink,
        })
    }

    pub fn with_common_variates(mut self) -> Self {
        self.variates = Variates::Common;
        self
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    /// Capacities are always reported in bits.
    pub fn log_base(&self) -> f64 {
        2.0
    }

    /// Seed of the sample stream for link `(h, u)` estimated at slot `t`.
    pub fn link_seed(&self, h: usize, u: usize, t: u64) -> u64 {
        match self.variates {
            Variates::Common => self.seed,
            Variates::PerLink => seed::derive(self.seed, &[h as u64, u as u64, t]),
        }
    }

    /// Monte-Carlo mean of `log2(1 + S X0 / (1 + sum_j I_j X_j))` with the
    /// `X` i.i.d. unit-mean exponential.
    pub fn estimate(&self, signal_power: f64, interferer_powers: &[f64], stream: u64) -> f64 {
        if signal_power <= 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let mut acc = 0.0;
        for _ in 0..self.num_samples {
            let x0: f64 = Exp1.sample(&mut rng);
            let mut denom = 1.0;
            for &p in interferer_powers {
                let x: f64 = Exp1.sample(&mut rng);
                denom += p * x;
            }
            acc += (signal_power * x0 / denom).ln_1p();
        }
        acc / self.num_samples as f64 / std::f64::consts::LN_2
    }
}

/// Ergodic capacity of one link using the estimator's base stream.
pub fn ergodic_capacity(signal_power: f64, interferer_powers: &[f64], est: &CapacityEstimator) -> f64 {
    est.estimate(signal_power, interferer_powers, est.seed)
}

/// `e^x E1(x)` for `x > 0`.
fn scaled_exp_integral(x: f64) -> f64 {
    if x <= 1.0 {
        // E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let contrib = term / k as f64;
            sum += contrib;
            if contrib.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        (-EULER_GAMMA - x.ln() - sum) * x.exp()
    } else {
        // Continued fraction (modified Lentz), already scaled by e^x.
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h
    }
}

/// Closed-form Rayleigh ergodic capacity without interference,
/// `e^{1/s} E1(1/s) / ln 2`; zero for `s <= 0`.
pub fn ergodic_capacity_no_interference_closedform(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    scaled_exp_integral(1.0 / s) / std::f64::consts::LN_2
}

/// Pathloss gains for every helper-user pair, helper-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkGainMatrix {
    num_users: usize,
    gains: Vec<f64>,
}

impl LinkGainMatrix {
    pub fn at_slot(graph: &NetworkGraph, t: u64) -> Self {
        let num_users = graph.num_users();
        let mut gains = Vec::with_capacity(graph.num_helpers() * num_users);
        for h in 0..graph.num_helpers() {
            for u in 0..num_users {
                gains.push(graph.gain(h, u, t));
            }
        }
        Self { num_users, gains }
    }

    pub fn get(&self, h: usize, u: usize) -> f64 {
        self.gains[h * self.num_users + u]
    }

    pub fn num_helpers(&self) -> usize {
        self.gains.len().checked_div(self.num_users).unwrap_or(0)
    }
}

/// Signal and interference powers seen by user `u` from helper `h`.
/// Interferers whose pathloss gain falls below `gain_cutoff` are ignored.
pub fn link_powers(
    gains: &LinkGainMatrix,
    powers: &[f64],
    h: usize,
    u: usize,
    gain_cutoff: Option<f64>,
) -> (f64, Vec<f64>) {
    let signal = powers[h] * gains.get(h, u);
    let interferers = (0..powers.len())
        .filter(|&j| j != h)
        .filter(|&j| gain_cutoff.is_none_or(|c| gains.get(j, u) >= c))
        .map(|j| powers[j] * gains.get(j, u))
        .collect();
    (signal, interferers)
}

/// Capacity of each requested `(helper, user)` link, in the order given.
/// `slot` enters the per-link seed so mobile users draw fresh variates each
/// time their geometry changes.
pub fn capacities_for(
    gains: &LinkGainMatrix,
    powers: &[f64],
    links: &[(usize, usize)],
    est: &CapacityEstimator,
    gain_cutoff: Option<f64>,
    slot: u64,
) -> Vec<f64> {
    links
        .par_iter()
        .map(|&(h, u)| {
            let (signal, interferers) = link_powers(gains, powers, h, u, gain_cutoff);
            est.estimate(signal, &interferers, est.link_seed(h, u, slot))
        })
        .collect()
}

/// Capacities over the current edge set, keyed by edge.
pub fn link_capacities(
    graph: &NetworkGraph,
    gains: &LinkGainMatrix,
    powers: &[f64],
    est: &CapacityEstimator,
    t: u64,
) -> Vec<((usize, usize), f64)> {
    let edges = graph.edges(t);
    let caps = capacities_for(gains, powers, &edges, est, None, t);
    edges.into_iter().zip(caps).collect()
}

/// Helper power giving `center_snr_db` at zero distance (where pathloss is 1).
pub fn power_for_center_snr(center_snr_db: f64) -> f64 {
    10f64.powf(center_snr_db / 10.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub center_snr_db: f64,
    pub num_samples: usize,
    /// Interferers with a pathloss gain below this value are dropped.
    pub interferer_gain_cutoff: Option<f64>,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            center_snr_db: 20.0,
            num_samples: 4000,
            interferer_gain_cutoff: None,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !self.center_snr_db.is_finite() {
            issues.push("channel.center_snr_db must be finite".to_string());
        }
        if self.num_samples == 0 {
            issues.push("channel.num_samples must be at least 1".to_string());
        }
        if let Some(c) = self.interferer_gain_cutoff {
            if !(0.0..=1.0).contains(&c) {
                issues.push(format!("channel.interferer_gain_cutoff must lie in [0, 1], got {c}"));
            }
        }
        issues
    }
}
