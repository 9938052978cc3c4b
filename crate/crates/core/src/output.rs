//! CSV bundles for experiment runs.
//!
//! Each sweep point writes to its own subdirectory `v_<V>` of the output
//! directory:
//!
//! | file | columns |
//! |------|---------|
//! | users_summary.csv | `user,avg_quality,utility,stall_slots,skipped,prebuffer_slots` |
//! | quality_cdf.csv | `rank,avg_quality,cdf` |
//! | association_trace.csv | `chunk,helper` |
//! | slot_trace.csv (with tracing on) | `t,edge,helper,user,backlog_bits,served_bits,admitted_bits,mode,gamma,theta` |
//! | playback_trace.csv (with tracing on) | `t,user,event,chunk,buffered` |
//! | run_manifest.toml | the full configuration of the run |
//!
//! Qualities and utilities are written with 6 significant digits, bit counts
//! as integers, and `gamma`, `theta` and the CDF ordinate in the shortest form
//! that parses back to the same `f64`. A user with no delivered chunk has
//! empty quality and utility fields. A file named `INCOMPLETE` marks a
//! directory whose run did not finish.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ExperimentSpec;
use crate::error::Result;
use crate::playback::PlaybackEvent;
use crate::metrics::{quality_cdf, summarize, MetricsLog, UserSummary};
use crate::sim::Simulation;

pub const USERS_SUMMARY: &str = "users_summary.csv";
pub const QUALITY_CDF: &str = "quality_cdf.csv";
pub const ASSOCIATION_TRACE: &str = "association_trace.csv";
pub const SLOT_TRACE: &str = "slot_trace.csv";
pub const PLAYBACK_TRACE: &str = "playback_trace.csv";
pub const MANIFEST: &str = "run_manifest.toml";
pub const INCOMPLETE: &str = "INCOMPLETE";

/// `x` rounded to 6 significant digits, without exponent.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    // the exponent after rounding, so 0.9999996 counts as 1.00000
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    let decimals = (5 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

fn opt_sig6(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

/// Subdirectory name of the sweep point `v`.
pub fn run_dir_name(v: f64) -> String {
    format!("v_{v:e}")
}

pub fn write_users_summary<W: Write>(w: W, summaries: &[UserSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["user", "avg_quality", "utility", "stall_slots", "skipped", "prebuffer_slots"])?;
    for s in summaries {
        out.write_record([
            s.user.to_string(),
            opt_sig6(s.avg_quality),
            opt_sig6(s.utility),
            s.playback.stall_slots.to_string(),
            s.playback.skipped_chunks.to_string(),
            s.playback.prebuffer_slots.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_quality_cdf<W: Write>(w: W, summaries: &[UserSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rank", "avg_quality", "cdf"])?;
    for (rank, q, p) in quality_cdf(summaries) {
        out.write_record([rank.to_string(), sig6(q), p.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_association<W: Write>(w: W, log: &MetricsLog, user: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["chunk", "helper"])?;
    for (chunk, helper) in log.association(user) {
        out.write_record([chunk.to_string(), helper.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_slot_trace<W: Write>(w: W, log: &MetricsLog) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "t", "edge", "helper", "user", "backlog_bits", "served_bits", "admitted_bits", "mode",
        "gamma", "theta",
    ])?;
    for slot in &log.slots {
        for l in &slot.links {
            let user = &slot.users[l.user];
            out.write_record([
                slot.t.to_string(),
                (l.helper * log.num_users + l.user).to_string(),
                l.helper.to_string(),
                l.user.to_string(),
                l.backlog_bits.to_string(),
                l.served_bits.to_string(),
                l.admitted_bits.to_string(),
                l.mode.to_string(),
                user.gamma.to_string(),
                user.theta.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Playback event of every user in every slot. `chunk` is the chunk played,
/// empty when nothing was played; `buffered` the contiguous chunks ready after
/// the slot.
pub fn write_playback_trace<W: Write>(w: W, log: &MetricsLog) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "user", "event", "chunk", "buffered"])?;
    for slot in &log.slots {
        for (u, rec) in slot.users.iter().enumerate() {
            let chunk = match rec.event {
                PlaybackEvent::Played(c) => c.to_string(),
                PlaybackEvent::Skipped { chunk, skipped, .. } => (chunk + skipped).to_string(),
                _ => String::new(),
            };
            out.write_record([
                slot.t.to_string(),
                u.to_string(),
                rec.event.label().to_string(),
                chunk,
                rec.buffered.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn create(path: PathBuf) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path)?))
}

/// Runs the single sweep point `v` of `spec` into `dir`.
pub fn run_point(spec: &ExperimentSpec, v: f64, dir: &Path) -> Result<MetricsLog> {
    fs::create_dir_all(dir)?;
    let marker = dir.join(INCOMPLETE);
    fs::write(&marker, "run started\n")?;
    let mut single = spec.single(v);
    // the manifest reproduces the CSVs wherever it is rerun from
    single.experiment.out = PathBuf::from(".");
    let manifest = format!(
        "# dppsim {}\n# rerun with: dppsim --config {MANIFEST} --out <dir>\n{}",
        env!("CARGO_PKG_VERSION"),
        single.to_toml()
    );
    fs::write(dir.join(MANIFEST), manifest)?;

    let result = (|| {
        let log = Simulation::from_config(&single.config)?.run()?;
        let summaries = summarize(&log);
        write_users_summary(create(dir.join(USERS_SUMMARY))?, &summaries)?;
        write_quality_cdf(create(dir.join(QUALITY_CDF))?, &summaries)?;
        write_association(create(dir.join(ASSOCIATION_TRACE))?, &log, single.trace_user())?;
        if single.experiment.trace {
            write_slot_trace(create(dir.join(SLOT_TRACE))?, &log)?;
            write_playback_trace(create(dir.join(PLAYBACK_TRACE))?, &log)?;
        }
        Ok(log)
    })();
    match &result {
        Ok(_) => fs::remove_file(&marker)?,
        Err(e) => fs::write(&marker, format!("run failed: {e}\n"))?,
    }
    result
}

/// Runs every sweep point in parallel. Returns the run directories in sweep
/// order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
    spec.experiment
        .sweep
        .par_iter()
        .map(|&v| {
            let dir = spec.experiment.out.join(run_dir_name(v));
            run_point(spec, v, &dir).map(|_| dir)
        })
        .collect()
}
