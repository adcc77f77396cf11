//! Training data for the motion predictors, recorded from the traffic autopilot.

use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VehicleState};
use crate::error::{Error, Result};
use crate::prediction::{
    fit, FitOptions, FuturePose, GpModel, HistoryState, TrajectoryDataset, FUTURE_LEN, HISTORY_LEN,
};

use super::scenario::{CompiledScenario, Scenario, BUILTIN_SCENARIOS};
use super::world::{step_world, WorldState};

/// Vehicle and pedestrian predictors used by the closed loop.
#[derive(Debug, Clone)]
pub struct Predictors {
    pub vehicle: GpModel,
    pub pedestrian: GpModel,
}

#[derive(Serialize, Deserialize)]
struct PredictorFile {
    vehicle: serde_json::Value,
    pedestrian: serde_json::Value,
}

impl Predictors {
    pub fn to_json(&self) -> Result<String> {
        let file = PredictorFile {
            vehicle: serde_json::from_str(&self.vehicle.to_json()?)?,
            pedestrian: serde_json::from_str(&self.pedestrian.to_json()?)?,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: PredictorFile = serde_json::from_str(s)?;
        Ok(Self {
            vehicle: GpModel::from_json(&f.vehicle.to_string())?,
            pedestrian: GpModel::from_json(&f.pedestrian.to_string())?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// How training data is generated and the models fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingOptions {
    pub vehicle_records: usize,
    pub pedestrian_records: usize,
    /// Simulated time per recording run, s.
    pub duration: f64,
    /// Randomised traffic draws per scenario.
    pub runs_per_scenario: usize,
    /// Ticks between consecutive windows cut from one trajectory.
    pub stride: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            vehicle_records: 400,
            pedestrian_records: 200,
            duration: 30.0,
            runs_per_scenario: 2,
            stride: 7,
            seed: 7,
            fit: FitOptions {
                restarts: 5,
                length_scales: 11,
                ..FitOptions::default()
            },
        }
    }
}

type Record = (Vec<HistoryState>, Vec<FuturePose>);

/// Windows of 15 history states and 10 future poses cut from one trajectory.
fn windows(track: &[HistoryState], stride: usize) -> Vec<Record> {
    let need = HISTORY_LEN + FUTURE_LEN;
    if track.len() < need {
        return Vec::new();
    }
    (0..=track.len() - need)
        .step_by(stride.max(1))
        .map(|i| {
            let hist = track[i..i + HISTORY_LEN].to_vec();
            let fut = track[i + HISTORY_LEN..i + need]
                .iter()
                .map(|h| [h[0], h[1], h[2]])
                .collect();
            (hist, fut)
        })
        .collect()
}

/// Surrounding-vehicle trajectories from autopilot-only runs of the given
/// scenarios; the ego is parked far outside the map.
pub fn record_vehicle_tracks(scenarios: &[Scenario], opts: &TrainingOptions) -> Result<Vec<Vec<HistoryState>>> {
    let mut tracks = Vec::new();
    for (si, base) in scenarios.iter().enumerate() {
        for run in 0..opts.runs_per_scenario.max(1) {
            let scen = base.randomized(opts.seed.wrapping_add((si * 1000 + run) as u64))?;
            let sc = CompiledScenario::new(scen)?;
            let mut world = WorldState::initial(&sc);
            world.ego = VehicleState::new(1e6, 1e6, 0.0, 0.0, 0.0, 0.0);
            let mut per_sv: Vec<Vec<HistoryState>> = world
                .svs
                .iter()
                .map(|s| vec![[s.pose[0], s.pose[1], s.pose[2], s.speed, 0.0]])
                .collect();
            let steps = (opts.duration / sc.scenario.ts).round() as usize;
            for _ in 0..steps {
                world = step_world(&world, &sc, ControlInput::new(0.0, 0.0));
                for (track, s) in per_sv.iter_mut().zip(&world.svs) {
                    if s.active {
                        track.push([s.pose[0], s.pose[1], s.pose[2], s.speed, 0.0]);
                    }
                }
            }
            tracks.extend(per_sv);
        }
    }
    Ok(tracks)
}

fn sample_records(mut pool: Vec<Record>, m: usize, rng: &mut ChaCha8Rng) -> Vec<Record> {
    pool.shuffle(rng);
    pool.truncate(m);
    pool
}

/// Vehicle dataset recorded on the built-in scenarios.
pub fn vehicle_dataset(opts: &TrainingOptions) -> Result<TrajectoryDataset> {
    let scenarios: Vec<Scenario> = BUILTIN_SCENARIOS
        .iter()
        .filter_map(|n| Scenario::builtin(n))
        .filter(|s| s.randomize.is_some())
        .collect();
    let tracks = record_vehicle_tracks(&scenarios, opts)?;
    let pool: Vec<Record> = tracks.iter().flat_map(|t| windows(t, opts.stride)).collect();
    if pool.len() < opts.vehicle_records {
        return Err(Error::TooFewRecords {
            min: opts.vehicle_records,
            got: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    TrajectoryDataset::from_world(&sample_records(pool, opts.vehicle_records, &mut rng))
}

/// Pedestrian dataset: straight walks at random headings and speeds, some of
/// which stop at the kerb partway through the record.
pub fn pedestrian_dataset(opts: &TrainingOptions, ts: f64) -> Result<TrajectoryDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let need = HISTORY_LEN + FUTURE_LEN;
    let records: Vec<Record> = (0..opts.pedestrian_records)
        .map(|_| {
            let start = [rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)];
            let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let speed = if rng.gen_bool(0.15) {
                0.0
            } else {
                rng.gen_range(0.5..2.0)
            };
            let stop_at = if rng.gen_bool(0.2) {
                rng.gen_range(0..need)
            } else {
                need
            };
            let mut pos = start;
            let track: Vec<HistoryState> = (0..need)
                .map(|k| {
                    let v = if k < stop_at { speed } else { 0.0 };
                    if k > 0 && k < stop_at {
                        pos = [pos[0] + speed * ts * heading.cos(), pos[1] + speed * ts * heading.sin()];
                    }
                    [pos[0], pos[1], heading, v, 0.0]
                })
                .collect();
            windows(&track, 1).remove(0)
        })
        .collect();
    TrajectoryDataset::from_world(&records)
}

pub fn train_predictors(opts: &TrainingOptions) -> Result<Predictors> {
    let vehicle = fit(&vehicle_dataset(opts)?, &opts.fit)?;
    let pedestrian = fit(&pedestrian_dataset(opts, crate::dynamics::DEFAULT_TS)?, &opts.fit)?;
    Ok(Predictors { vehicle, pedestrian })
}

/// Predictors trained once per process with the default options.
pub fn default_predictors() -> Result<&'static Predictors> {
    static CACHE: OnceLock<std::result::Result<Predictors, String>> = OnceLock::new();
    CACHE
        .get_or_init(|| train_predictors(&TrainingOptions::default()).map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| Error::Precondition(format!("predictor training failed: {e}")))
}
