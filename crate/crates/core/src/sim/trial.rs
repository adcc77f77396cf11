//! Closed-loop trials, their metrics and logs, and seeded robustness batches.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VehicleState};
use crate::error::Result;
use crate::ocp::{OcpConfig, SolveStatus, TraceRow};
use crate::potential::{FieldTerms, PFParams};

use super::controller::Controller;
use super::events::{detect_events, find_leader, Event, Obstacle, TrvKind};
use super::scenario::{CompiledScenario, Scenario};
use super::training::Predictors;
use super::world::{step_world, WorldState};

/// The ego counts as arrived this close to the route end, m.
pub const ARRIVAL_MARGIN: f64 = 2.0;

/// Controller settings of a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub ocp: OcpConfig,
    pub pf: PFParams,
    /// Feed predicted obstacle motion to the horizon; otherwise current poses.
    pub prediction: bool,
    /// Keep every solver iteration trace.
    pub trace_solver: bool,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            ocp: OcpConfig::default(),
            pf: PFParams::default(),
            prediction: true,
            trace_solver: false,
        }
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub scenario: String,
    pub seed: u64,
    pub success: bool,
    pub failure_cause: Option<String>,
    pub collisions: u32,
    pub trv: u32,
    pub ib: u32,
    /// Time with a leader TTC below the alarm threshold, s.
    pub ttc_alarm_duration: f64,
    /// Share of valid-leader ticks in alarm, %.
    pub ttc_alarm_percentage: f64,
    pub ttc_valid_ticks: u64,
    pub ttc_alarm_ticks: u64,
    pub min_ttc: Option<f64>,
    pub travel_time: f64,
    pub route_length: f64,
    pub reached_destination: bool,
    pub ticks: u64,
    /// Largest lateral offset from the route, m.
    pub max_lateral_offset: f64,
    pub final_lateral_offset: f64,
    pub comp_time_mean_ms: f64,
    pub comp_time_std_ms: f64,
    pub comp_time_max_ms: f64,
    /// Ticks whose solve stopped without meeting the tolerances.
    pub unconverged_solves: u64,
}

impl TrialMetrics {
    /// Copy with the wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            comp_time_mean_ms: 0.0,
            comp_time_std_ms: 0.0,
            comp_time_max_ms: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        round_numbers(&mut v);
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Round every float in a JSON tree to six decimals.
fn round_numbers(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(0.0);
            let r = (x * 1e6).round() / 1e6;
            if let Some(m) = serde_json::Number::from_f64(r) {
                *n = m;
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_numbers),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// One row of the trajectory log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub state: VehicleState,
    pub control: ControlInput,
    pub fields: FieldTerms,
    pub solve_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub metrics: TrialMetrics,
    pub log: Vec<LogRow>,
    /// Events with the time they were detected.
    pub events: Vec<(f64, Event)>,
    /// Solver iteration traces by tick, when requested.
    pub traces: Vec<(u64, Vec<TraceRow>)>,
}

const LOG_HEADER: [&str; 15] = [
    "t", "px", "py", "phi", "vx", "vy", "omega", "a", "delta", "pf_nr", "pf_cr", "pf_v", "pf_tl", "pf_ttc", "pf_pd",
];

/// Trajectory log as delimited text with six decimals. Solver wall time is
/// appended only when asked for, since it differs from run to run.
pub fn write_log<W: Write>(rows: &[LogRow], with_wall_time: bool, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = LOG_HEADER.to_vec();
    if with_wall_time {
        header.push("solve_ms");
    }
    wr.write_record(&header)?;
    for r in rows {
        let s = &r.state;
        let f = &r.fields;
        let mut vals = vec![
            r.t,
            s.px,
            s.py,
            s.phi,
            s.vx,
            s.vy,
            s.omega,
            r.control.a,
            r.control.delta,
            f.nr,
            f.cr,
            f.v,
            f.tl,
            f.ttc,
            f.pd,
        ];
        if with_wall_time {
            vals.push(r.solve_ms);
        }
        wr.write_record(vals.iter().map(|v| format!("{v:.6}")))?;
    }
    wr.flush()?;
    Ok(())
}

/// Per-tick solver wall time as its own table.
pub fn write_timing<W: Write>(rows: &[LogRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "solve_ms"])?;
    for r in rows {
        wr.write_record([format!("{:.6}", r.t), format!("{:.6}", r.solve_ms)])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_events<W: Write>(events: &[(f64, Event)], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "event"])?;
    for (t, e) in events {
        wr.write_record([format!("{t:.6}"), describe(e)])?;
    }
    wr.flush()?;
    Ok(())
}

fn describe(e: &Event) -> String {
    match e {
        Event::Collision(Obstacle::Vehicle(i)) => format!("collision with vehicle {i}"),
        Event::Collision(Obstacle::Pedestrian(i)) => format!("collision with pedestrian {i}"),
        Event::Trv(TrvKind::Marking(l)) => format!("non-crossable marking of lane {l} crossed"),
        Event::Trv(TrvKind::RedLight(l)) => format!("red light run on lane {l}"),
        Event::Trv(TrvKind::OffRoad) => "off road".into(),
        Event::ImpoliteBrake(i) => format!("sudden braking of vehicle {i}"),
        Event::TtcAlarm(t) => format!("ttc alarm {t:.3}"),
    }
}

impl TrialResult {
    /// Write `metrics.json`, `trajectory.csv`, `timing.csv` and `events.csv`
    /// (plus `solver_trace.csv` when traces were kept) into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.json"), self.metrics.to_json()?)?;
        write_log(&self.log, false, std::fs::File::create(dir.join("trajectory.csv"))?)?;
        write_timing(&self.log, std::fs::File::create(dir.join("timing.csv"))?)?;
        write_events(&self.events, std::fs::File::create(dir.join("events.csv"))?)?;
        if !self.traces.is_empty() {
            let mut wr = csv::Writer::from_writer(std::fs::File::create(dir.join("solver_trace.csv"))?);
            wr.write_record(["tick", "iter", "cost", "merit", "kkt", "defect", "step_norm", "alpha"])?;
            for (tick, rows) in &self.traces {
                for r in rows {
                    wr.write_record([
                        tick.to_string(),
                        r.iter.to_string(),
                        format!("{:.6}", r.cost),
                        format!("{:.6}", r.merit),
                        format!("{:.6e}", r.kkt),
                        format!("{:.6e}", r.defect),
                        format!("{:.6e}", r.step_norm),
                        format!("{:.6}", r.alpha),
                    ])?;
                }
            }
            wr.flush()?;
        }
        Ok(())
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Run the closed loop until arrival, timeout or collision.
pub fn run_trial(sc: &CompiledScenario, cfg: &TrialConfig, predictors: Option<&Predictors>) -> Result<TrialResult> {
    let ts = sc.scenario.ts;
    let mut ocp = cfg.ocp.clone();
    ocp.ts = ts;
    let mut controller = Controller::new(sc, ocp, cfg.pf, if cfg.prediction { predictors } else { None });
    let route_len = sc.route_length();
    let timeout = sc.timeout();

    let mut world = WorldState::initial(sc);
    let mut log = Vec::new();
    let mut events: Vec<(f64, Event)> = Vec::new();
    let mut traces = Vec::new();
    let mut solve_ms = Vec::new();
    let (mut collisions, mut trv, mut ib) = (0u32, 0u32, 0u32);
    let (mut valid, mut alarm) = (0u64, 0u64);
    let mut min_ttc = f64::INFINITY;
    let mut unconverged = 0u64;
    let mut max_lat: f64 = 0.0;
    let mut last_lat = 0.0;
    let mut s_hint: Option<f64> = None;
    let mut cause: Option<String> = None;
    let mut arrived = false;

    // Spawned already overlapping: nothing the controller could do.
    for e in detect_events(sc, &world, &world) {
        if let Event::Collision(_) = e {
            collisions += 1;
            cause.get_or_insert_with(|| format!("{} at t = 0.000", describe(&e)));
            events.push((0.0, e));
        }
    }

    while collisions == 0 {
        let here = sc.route.project([world.ego.px, world.ego.py], s_hint);
        s_hint = Some(here.s);
        last_lat = here.lateral;
        max_lat = max_lat.max(here.lateral.abs());
        if here.s >= route_len - ARRIVAL_MARGIN {
            arrived = true;
            break;
        }
        if world.t >= timeout {
            cause = Some(format!(
                "timeout after {:.1} s at {:.1} of {:.1} m",
                world.t, here.s, route_len
            ));
            break;
        }
        let out = controller.tick(&world)?;
        let ms = out.solution.wall_time * 1e3;
        solve_ms.push(ms);
        if out.solution.status != SolveStatus::Converged {
            unconverged += 1;
        }
        if cfg.trace_solver {
            traces.push((world.tick, out.solution.trace.clone()));
        }
        log.push(LogRow {
            t: world.t,
            state: world.ego,
            control: out.control,
            fields: out.fields,
            solve_ms: ms,
        });
        let next = step_world(&world, sc, out.control);
        for e in detect_events(sc, &world, &next) {
            match e {
                Event::Collision(_) => collisions += 1,
                Event::Trv(_) => trv += 1,
                Event::ImpoliteBrake(_) => ib += 1,
                Event::TtcAlarm(_) => {
                    alarm += 1;
                    continue;
                }
            }
            if cause.is_none() && matches!(e, Event::Collision(_) | Event::Trv(_)) {
                cause = Some(format!("{} at t = {:.3}", describe(&e), next.t));
            }
            events.push((next.t, e));
        }
        if let Some(l) = find_leader(sc, &next, None) {
            valid += 1;
            min_ttc = min_ttc.min(l.ttc);
        }
        world = next;
    }

    let success = arrived && collisions == 0 && trv == 0;
    if !success && cause.is_none() {
        cause = Some("destination not reached".into());
    }
    let (mean, std) = mean_std(&solve_ms);
    let metrics = TrialMetrics {
        scenario: sc.scenario.name.clone(),
        seed: sc.scenario.seed,
        success,
        failure_cause: if success { None } else { cause },
        collisions,
        trv,
        ib,
        ttc_alarm_duration: alarm as f64 * ts,
        ttc_alarm_percentage: if valid > 0 {
            100.0 * alarm as f64 / valid as f64
        } else {
            0.0
        },
        ttc_valid_ticks: valid,
        ttc_alarm_ticks: alarm,
        min_ttc: min_ttc.is_finite().then_some(min_ttc),
        travel_time: world.t,
        route_length: route_len,
        reached_destination: arrived,
        ticks: world.tick,
        max_lateral_offset: max_lat,
        final_lateral_offset: last_lat,
        comp_time_mean_ms: mean,
        comp_time_std_ms: std,
        comp_time_max_ms: solve_ms.iter().copied().fold(0.0, f64::max),
        unconverged_solves: unconverged,
    };
    Ok(TrialResult {
        metrics,
        log,
        events,
        traces,
    })
}

/// Aggregate of a seeded batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub scenario: String,
    pub trials: usize,
    pub seed_base: u64,
    pub successes: usize,
    pub success_rate: f64,
    /// `(seed, cause)` for every failed trial.
    pub failures: Vec<(u64, String)>,
    pub trial_metrics: Vec<TrialMetrics>,
}

impl BatchReport {
    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        round_numbers(&mut v);
        Ok(serde_json::to_string_pretty(&v)?)
    }

    /// One line per trial with the main metrics.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "seed",
            "success",
            "collisions",
            "trv",
            "ib",
            "ttc_alarm_duration",
            "travel_time",
            "comp_time_mean_ms",
            "failure_cause",
        ])?;
        for m in &self.trial_metrics {
            wr.write_record([
                m.seed.to_string(),
                m.success.to_string(),
                m.collisions.to_string(),
                m.trv.to_string(),
                m.ib.to_string(),
                format!("{:.6}", m.ttc_alarm_duration),
                format!("{:.6}", m.travel_time),
                format!("{:.6}", m.comp_time_mean_ms),
                m.failure_cause.clone().unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Run `trials` randomised copies of `template` with seeds `seed_base + i`
/// in parallel. Trials share nothing; results come back in seed order.
pub fn run_batch(
    template: &Scenario,
    trials: usize,
    seed_base: u64,
    cfg: &TrialConfig,
    predictors: Option<&Predictors>,
) -> Result<BatchReport> {
    if trials == 0 {
        return Err(crate::error::Error::InvalidParameter(
            "trials must be at least 1".into(),
        ));
    }
    let metrics: Vec<TrialMetrics> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let seed = seed_base + i as u64;
            let sc = CompiledScenario::new(template.randomized(seed)?)?;
            run_trial(&sc, cfg, predictors).map(|r| r.metrics)
        })
        .collect::<Result<_>>()?;
    let successes = metrics.iter().filter(|m| m.success).count();
    let failures = metrics
        .iter()
        .filter(|m| !m.success)
        .map(|m| (m.seed, m.failure_cause.clone().unwrap_or_default()))
        .collect();
    Ok(BatchReport {
        scenario: template.name.clone(),
        trials,
        seed_base,
        successes,
        success_rate: successes as f64 / trials as f64,
        failures,
        trial_metrics: metrics,
    })
}
