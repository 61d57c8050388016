//! Deterministic fill-drain pipeline simulator.
//!
//! One iteration pushes `m` microbatches forward through the stages, then
//! drains the backward passes in reverse; backward work begins only after
//! the last stage has finished every forward microbatch. Each simulated
//! device executes one task at a time. Frozen stages run their backward at
//! a reduced factor (they still propagate input gradients but skip weight
//! gradient work), and with pre-inference enabled a contiguous frozen
//! prefix of stages leaves the per-iteration loop entirely, charged once
//! as build time plus an all-reduce term in the report.
//!
//! Ready tasks are ordered by (ready time, stage id, microbatch id), which
//! fixes the schedule and makes traces replayable.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub fwd_ms: f64,
    /// Backward time when the stage is trainable.
    pub bwd_ms: f64,
    #[serde(default)]
    pub frozen: bool,
    /// Simulated device; defaults to the stage's own index, so two stages
    /// may share one device by pointing at the same id.
    #[serde(default)]
    pub device: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: Vec<StageSpec>,
    pub microbatches: usize,
    /// Transfer time charged when adjacent stages sit on different devices.
    #[serde(default)]
    pub comm_ms: f64,
    /// Backward-time factor for frozen stages (input-gradient propagation
    /// only), in [0, 1].
    #[serde(default = "default_frozen_factor")]
    pub frozen_bwd_factor: f64,
    /// Elide the contiguous frozen stage prefix from the iteration loop.
    #[serde(default)]
    pub preinference: bool,
    /// One-time all-reduce cost added to the pre-inference build charge.
    #[serde(default)]
    pub allreduce_ms: f64,
    /// Measured iteration time to calibrate against; the report carries
    /// the model error relative to this target, nothing is asserted.
    #[serde(default)]
    pub target_iter_time_ms: Option<f64>,
}

fn default_frozen_factor() -> f64 {
    0.5
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("pipeline needs at least one stage".into()));
        }
        if self.microbatches == 0 {
            return Err(Error::InvalidConfig("microbatch count must be at least 1".into()));
        }
        if self
            .stages
            .iter()
            .any(|s| !(s.fwd_ms >= 0.0 && s.bwd_ms >= 0.0))
        {
            return Err(Error::InvalidConfig("stage times must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.frozen_bwd_factor) {
            return Err(Error::InvalidConfig("frozen_bwd_factor must lie in [0, 1]".into()));
        }
        if self.comm_ms < 0.0 || self.allreduce_ms < 0.0 {
            return Err(Error::InvalidConfig("communication times must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Forward,
    Backward,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceEvent {
    pub start_ms: f64,
    pub end_ms: f64,
    pub device: usize,
    pub kind: TaskKind,
    pub stage: usize,
    pub microbatch: usize,
}

impl TraceEvent {
    pub fn label(&self) -> String {
        let k = match self.kind {
            TaskKind::Forward => 'F',
            TaskKind::Backward => 'B',
        };
        format!("{k}{}.{}", self.stage, self.microbatch)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimReport {
    pub iter_time_ms: f64,
    /// Stages removed from the loop by pre-inference.
    pub elided_prefix_stages: usize,
    /// One-time charge for building the prefix dataset (prefix forward
    /// work for all microbatches, plus the all-reduce term). Zero when
    /// nothing was elided.
    pub preinference_build_ms: f64,
    /// Signed model error in percent against the config's measured
    /// target, when one was supplied. Reported only.
    pub calibration_error_pct: Option<f64>,
    pub trace: Vec<TraceEvent>,
}

impl SimReport {
    /// Writes the trace as CSV: `start_ms,end_ms,device,task`.
    pub fn write_trace_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "start_ms,end_ms,device,task")?;
        for e in &self.trace {
            writeln!(out, "{},{},{},{}", e.start_ms, e.end_ms, e.device, e.label())?;
        }
        Ok(())
    }

    /// Busiest-device utilization lower bound check helper: total busy
    /// time per device.
    pub fn device_busy_ms(&self) -> Vec<(usize, f64)> {
        let mut busy: std::collections::BTreeMap<usize, f64> = Default::default();
        for e in &self.trace {
            *busy.entry(e.device).or_default() += e.end_ms - e.start_ms;
        }
        busy.into_iter().collect()
    }
}

/// f64 ordering key for the ready queue (times are finite by validation).
#[derive(Clone, Copy, Debug, PartialEq)]
struct TimeKey(f64);

impl Eq for TimeKey {}

impl PartialOrd for TimeKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TimeKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Runs the simulation and returns the iteration makespan plus the trace.
pub fn simulate(cfg: &PipelineConfig) -> Result<SimReport> {
    cfg.validate()?;
    let elided = if cfg.preinference {
        cfg.stages.iter().take_while(|s| s.frozen).count()
    } else {
        0
    };
    if elided == cfg.stages.len() {
        return Err(Error::InvalidConfig(
            "every stage is frozen; nothing remains to train after pre-inference elision".into(),
        ));
    }
    let active = &cfg.stages[elided..];
    let build_ms = if elided > 0 {
        let prefix_fwd: f64 = cfg.stages[..elided].iter().map(|s| s.fwd_ms).sum();
        prefix_fwd * cfg.microbatches as f64 + cfg.allreduce_ms
    } else {
        0.0
    };
    let trace = run_events(active, cfg, elided)?;
    let iter_time_ms = trace.iter().map(|e| e.end_ms).fold(0.0, f64::max);
    let calibration_error_pct = cfg
        .target_iter_time_ms
        .map(|target| 100.0 * (iter_time_ms - target) / target);
    Ok(SimReport {
        iter_time_ms,
        elided_prefix_stages: elided,
        preinference_build_ms: build_ms,
        calibration_error_pct,
        trace,
    })
}

fn run_events(stages: &[StageSpec], cfg: &PipelineConfig, stage_offset: usize) -> Result<Vec<TraceEvent>> {
    let s = stages.len();
    let m = cfg.microbatches;
    let devices: Vec<usize> = stages
        .iter()
        .enumerate()
        .map(|(i, st)| st.device.unwrap_or(stage_offset + i))
        .collect();
    let comm = |a: usize, b: usize| if devices[a] == devices[b] { 0.0 } else { cfg.comm_ms };
    let duration = |kind: TaskKind, stage: usize| match kind {
        TaskKind::Forward => stages[stage].fwd_ms,
        TaskKind::Backward => {
            if stages[stage].frozen {
                cfg.frozen_bwd_factor * stages[stage].bwd_ms
            } else {
                stages[stage].bwd_ms
            }
        }
    };

    // Task index: forwards then backwards, stage-major.
    let task_id = |kind: TaskKind, stage: usize, mb: usize| match kind {
        TaskKind::Forward => stage * m + mb,
        TaskKind::Backward => s * m + stage * m + mb,
    };
    let total = 2 * s * m;
    let mut completion = vec![f64::NAN; total];
    let mut device_free: std::collections::BTreeMap<usize, f64> = Default::default();
    // Ready queue ordered by (ready time, stage, microbatch); the backward
    // flag only disambiguates the (impossible in practice) F/B tie.
    let mut ready: BTreeSet<(TimeKey, usize, usize, bool)> = BTreeSet::new();
    for mb in 0..m {
        ready.insert((TimeKey(0.0), 0, mb, false));
    }
    let mut trace = Vec::with_capacity(total);
    let mut forwards_done_last_stage = 0usize;
    while let Some(&(ready_at, stage, mb, is_bwd)) = ready.iter().next() {
        ready.remove(&(ready_at, stage, mb, is_bwd));
        let kind = if is_bwd { TaskKind::Backward } else { TaskKind::Forward };
        let dev = devices[stage];
        let free = device_free.get(&dev).copied().unwrap_or(0.0);
        let start = ready_at.0.max(free);
        let end = start + duration(kind, stage);
        device_free.insert(dev, end);
        completion[task_id(kind, stage, mb)] = end;
        trace.push(TraceEvent {
            start_ms: start,
            end_ms: end,
            device: dev,
            kind,
            stage: stage_offset + stage,
            microbatch: mb,
        });
        match kind {
            TaskKind::Forward => {
                if stage + 1 < s {
                    ready.insert((TimeKey(end + comm(stage, stage + 1)), stage + 1, mb, false));
                } else {
                    forwards_done_last_stage += 1;
                    if forwards_done_last_stage == m {
                        // Fill-drain barrier: all backwards for the last
                        // stage become ready at once; the queue order
                        // serializes them by microbatch.
                        for b in 0..m {
                            ready.insert((TimeKey(end), s - 1, b, true));
                        }
                    }
                }
            }
            TaskKind::Backward => {
                if stage > 0 {
                    ready.insert((TimeKey(end + comm(stage - 1, stage)), stage - 1, mb, true));
                }
            }
        }
    }
    debug_assert!(completion.iter().all(|c| c.is_finite()));
    Ok(trace)
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareRow {
    pub name: String,
    pub iter_time_ms: f64,
    /// Iteration-time ratio of the first config to this one (> 1 means
    /// faster than the baseline).
    pub speedup_vs_first: f64,
    pub preinference_build_ms: f64,
}

/// Simulates each named config and reports speedups relative to the first.
pub fn compare(configs: &[(String, PipelineConfig)]) -> Result<Vec<CompareRow>> {
    if configs.is_empty() {
        return Err(Error::EmptyInput("pipeline comparison".into()));
    }
    let mut rows = Vec::with_capacity(configs.len());
    let mut baseline = None;
    for (name, cfg) in configs {
        let report = simulate(cfg)?;
        let base = *baseline.get_or_insert(report.iter_time_ms);
        rows.push(CompareRow {
            name: name.clone(),
            iter_time_ms: report.iter_time_ms,
            speedup_vs_first: base / report.iter_time_ms,
            preinference_build_ms: report.preinference_build_ms,
        });
    }
    Ok(rows)
}

/// Writes comparison rows as CSV.
pub fn write_compare_csv<W: std::io::Write>(out: &mut W, rows: &[CompareRow]) -> std::io::Result<()> {
    writeln!(out, "name,iter_time_ms,speedup_vs_first,preinference_build_ms")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.name, r.iter_time_ms, r.speedup_vs_first, r.preinference_build_ms
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage(fwd: f64, bwd: f64) -> StageSpec {
        StageSpec { fwd_ms: fwd, bwd_ms: bwd, frozen: false, device: None }
    }

    fn config(stages: Vec<StageSpec>, m: usize, comm: f64) -> PipelineConfig {
        PipelineConfig {
            stages,
            microbatches: m,
            comm_ms: comm,
            frozen_bwd_factor: 0.5,
            preinference: false,
            allreduce_ms: 0.0,
            target_iter_time_ms: None,
        }
    }

    #[test]
    fn single_stage_single_microbatch() {
        let report = simulate(&config(vec![stage(2.0, 3.0)], 1, 0.0)).unwrap();
        assert_eq!(report.iter_time_ms, 5.0);
        assert_eq!(report.trace.len(), 2);
    }

    #[test]
    fn equal_stages_match_fill_drain_closed_form() {
        for s in 1..=4usize {
            for m in 1..=6usize {
                let (f, b) = (2.0, 3.0);
                let cfg = config(vec![stage(f, b); s], m, 0.0);
                let report = simulate(&cfg).unwrap();
                let expected = (m + s - 1) as f64 * (f + b);
                assert_eq!(
                    report.iter_time_ms, expected,
                    "s={s} m={m}: got {} expected {expected}",
                    report.iter_time_ms
                );
            }
        }
    }

    #[test]
    fn frozen_prefix_elision_equals_reduced_pipeline() {
        let mut stages = vec![stage(4.0, 6.0), stage(2.0, 3.0), stage(2.0, 3.0)];
        stages[0].frozen = true;
        let mut cfg = config(stages, 4, 0.5);
        cfg.preinference = true;
        cfg.allreduce_ms = 1.5;
        let report = simulate(&cfg).unwrap();
        assert_eq!(report.elided_prefix_stages, 1);
        // build charge: prefix forward x microbatches + allreduce
        assert_eq!(report.preinference_build_ms, 4.0 * 4.0 + 1.5);
        assert!(report.trace.iter().all(|e| e.stage != 0));

        let reduced = config(vec![stage(2.0, 3.0), stage(2.0, 3.0)], 4, 0.5);
        let reduced_report = simulate(&reduced).unwrap();
        assert_eq!(report.iter_time_ms, reduced_report.iter_time_ms);
    }

    #[test]
    fn fully_frozen_pipeline_with_preinference_is_rejected() {
        let mut stages = vec![stage(1.0, 1.0)];
        stages[0].frozen = true;
        let mut cfg = config(stages, 1, 0.0);
        cfg.preinference = true;
        assert!(simulate(&cfg).is_err());
    }

    #[test]
    fn freezing_a_stage_never_increases_makespan() {
        let base = config(vec![stage(2.0, 4.0), stage(3.0, 5.0), stage(1.0, 2.0)], 5, 0.25);
        let t0 = simulate(&base).unwrap().iter_time_ms;
        for i in 0..3 {
            let mut cfg = base.clone();
            cfg.stages[i].frozen = true;
            let t = simulate(&cfg).unwrap().iter_time_ms;
            assert!(t <= t0, "freezing stage {i} increased makespan {t0} -> {t}");
        }
    }

    #[test]
    fn shared_device_serializes_stages() {
        // two stages on one device: no overlap possible, makespan is the
        // serial sum
        let mut stages = vec![stage(2.0, 3.0), stage(2.0, 3.0)];
        stages[0].device = Some(0);
        stages[1].device = Some(0);
        let report = simulate(&config(stages, 2, 10.0)).unwrap();
        // comm is zero on the same device; all 8 tasks serialize
        assert_eq!(report.iter_time_ms, 2.0 * (2.0 + 2.0 + 3.0 + 3.0));
        let busy = report.device_busy_ms();
        assert_eq!(busy.len(), 1);
        assert_eq!(busy[0].1, report.iter_time_ms);
    }

    #[test]
    fn work_conservation_bound_holds() {
        let cfg = config(vec![stage(2.0, 1.0), stage(5.0, 4.0), stage(1.0, 2.0)], 3, 0.5);
        let report = simulate(&cfg).unwrap();
        for (_, busy) in report.device_busy_ms() {
            assert!(report.iter_time_ms >= busy - 1e-12);
        }
    }

    #[test]
    fn identical_configs_compare_at_ratio_one() {
        let cfg = config(vec![stage(2.0, 3.0), stage(2.0, 3.0)], 4, 0.1);
        let rows = compare(&[("a".into(), cfg.clone()), ("b".into(), cfg)]).unwrap();
        assert_eq!(rows[0].speedup_vs_first, 1.0);
        assert_eq!(rows[1].speedup_vs_first, 1.0);
        assert!(compare(&[]).is_err());
    }

    #[test]
    fn halving_stage_times_halves_makespan_without_comm() {
        let full = config(vec![stage(2.0, 4.0), stage(6.0, 2.0)], 3, 0.0);
        let halved = config(vec![stage(1.0, 2.0), stage(3.0, 1.0)], 3, 0.0);
        let t_full = simulate(&full).unwrap().iter_time_ms;
        let t_half = simulate(&halved).unwrap().iter_time_ms;
        assert_eq!(t_half * 2.0, t_full);
    }

    #[test]
    fn calibration_error_is_reported_not_asserted() {
        let mut cfg = config(vec![stage(2.0, 3.0), stage(2.0, 3.0)], 4, 0.0);
        // closed form gives 25 ms; a 20 ms target reports +25% model error
        cfg.target_iter_time_ms = Some(20.0);
        let report = simulate(&cfg).unwrap();
        assert_eq!(report.iter_time_ms, 25.0);
        assert_eq!(report.calibration_error_pct, Some(25.0));
        cfg.target_iter_time_ms = None;
        assert_eq!(simulate(&cfg).unwrap().calibration_error_pct, None);
    }

    #[test]
    fn traces_are_deterministic() {
        let cfg = config(vec![stage(2.0, 3.0), stage(1.0, 4.0)], 5, 0.3);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        let fmt = |r: &SimReport| {
            let mut buf = Vec::new();
            r.write_trace_csv(&mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        };
        assert_eq!(fmt(&a), fmt(&b));
    }
}
