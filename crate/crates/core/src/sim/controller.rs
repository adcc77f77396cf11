//! The ego's decision-and-control loop: perceive, predict, assemble the field
//! scene, sample the reference and solve the horizon problem.

use std::collections::VecDeque;

use crate::dynamics::{ControlInput, NU, NX};
use crate::error::Result;
use crate::ocp::{solve, OcpConfig, OcpSolution, Problem};
use crate::planner::{sample_reference, ReferenceOptions, ReferenceTrajectory};
use crate::potential::{
    build_virtual_fields, field_terms, stage_markings, FieldTerms, LightZone, ObstaclePose, PFParams, PotentialScene,
    RouteContext, StageScene,
};
use crate::prediction::{GpModel, HistoryState, FUTURE_LEN, HISTORY_LEN};

use super::events::find_leader;
use super::scenario::{CompiledScenario, LightPhase};
use super::training::Predictors;
use super::world::WorldState;

/// Below this kernel support the learned mean has decayed toward the prior
/// and constant-velocity extrapolation is used instead.
pub const MIN_SUPPORT: f64 = 1e-3;

/// Pad a short history by extrapolating its oldest state backwards at constant velocity.
pub fn padded_history(history: &VecDeque<HistoryState>, ts: f64) -> Vec<HistoryState> {
    let first = *history.front().expect("histories start with the spawn state");
    let missing = HISTORY_LEN.saturating_sub(history.len());
    let (s, c) = first[2].sin_cos();
    let mut out: Vec<HistoryState> = (0..missing)
        .map(|k| {
            let back = (missing - k) as f64 * ts;
            let vx = first[3] * c - first[4] * s;
            let vy = first[3] * s + first[4] * c;
            [first[0] - vx * back, first[1] - vy * back, first[2], first[3], first[4]]
        })
        .collect();
    out.extend(history.iter().skip(history.len().saturating_sub(HISTORY_LEN)));
    out
}

/// Constant-velocity poses for τ = 1..n from the newest history state.
pub fn constant_velocity(last: &HistoryState, ts: f64, n: usize) -> Vec<[f64; 3]> {
    let (s, c) = last[2].sin_cos();
    let vx = last[3] * c - last[4] * s;
    let vy = last[3] * s + last[4] * c;
    (1..=n)
        .map(|k| {
            let t = k as f64 * ts;
            [last[0] + vx * t, last[1] + vy * t, last[2]]
        })
        .collect()
}

/// Predicted poses for τ = 1..n. The learned model covers the first ten
/// steps; longer horizons continue at the last predicted velocity.
pub fn predict_poses(model: Option<&GpModel>, history: &VecDeque<HistoryState>, ts: f64, n: usize) -> Vec<[f64; 3]> {
    let last = *history.back().expect("non-empty history");
    let hist = padded_history(history, ts);
    let learned = model.and_then(|m| {
        let support = m.support(&hist).ok()?;
        if support < MIN_SUPPORT {
            return None;
        }
        m.predict_mean(&hist).ok().map(|p| p.waypoints)
    });
    let Some(mut poses) = learned else {
        return constant_velocity(&last, ts, n);
    };
    if n > FUTURE_LEN {
        let a = poses[FUTURE_LEN - 2];
        let b = poses[FUTURE_LEN - 1];
        for k in 1..=(n - FUTURE_LEN) {
            let f = k as f64;
            poses.push([b[0] + (b[0] - a[0]) * f, b[1] + (b[1] - a[1]) * f, b[2]]);
        }
    }
    poses.truncate(n);
    poses
}

/// Result of one controller tick.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub control: ControlInput,
    pub solution: OcpSolution,
    pub reference: ReferenceTrajectory,
    /// Field values by family at the current ego state.
    pub fields: FieldTerms,
}

/// Receding-horizon controller with its warm-start memory.
pub struct Controller<'a> {
    sc: &'a CompiledScenario,
    cfg: OcpConfig,
    pf: PFParams,
    predictors: Option<&'a Predictors>,
    warm: Option<OcpSolution>,
    u_prev: Option<[f64; NU]>,
    s_hint: Option<f64>,
}

impl<'a> Controller<'a> {
    /// `predictors = None` feeds the current obstacle poses to every stage.
    pub fn new(sc: &'a CompiledScenario, cfg: OcpConfig, pf: PFParams, predictors: Option<&'a Predictors>) -> Self {
        Self {
            sc,
            cfg,
            pf,
            predictors,
            warm: None,
            u_prev: None,
            s_hint: None,
        }
    }

    pub fn route_progress(&self) -> Option<f64> {
        self.s_hint
    }

    fn obstacle_poses(&self, history: &VecDeque<HistoryState>) -> Vec<[f64; 3]> {
        let ts = self.cfg.ts;
        let n = self.cfg.n;
        match self.predictors {
            Some(p) => predict_poses(Some(&p.vehicle), history, ts, n),
            None => {
                let h = history.back().expect("non-empty history");
                vec![[h[0], h[1], h[2]]; n]
            }
        }
    }

    fn pedestrian_points(&self, history: &VecDeque<HistoryState>) -> Vec<[f64; 2]> {
        let ts = self.cfg.ts;
        let n = self.cfg.n;
        match self.predictors {
            Some(p) => predict_poses(Some(&p.pedestrian), history, ts, n)
                .into_iter()
                .map(|q| [q[0], q[1]])
                .collect(),
            None => {
                let h = history.back().expect("non-empty history");
                vec![[h[0], h[1]]; n]
            }
        }
    }

    /// Field scene over the horizon for the given reference.
    pub fn build_scene(&self, world: &WorldState, refs: &ReferenceTrajectory) -> PotentialScene {
        let sc = self.sc;
        let n = self.cfg.n;
        let e = &world.ego;
        let here = sc.route.project([e.px, e.py], Some(refs.s0));
        let ctx = RouteContext {
            map: &sc.map,
            route: &sc.route,
            s_ego: refs.s0,
            lateral: here.lateral,
        };
        let in_range = |p: [f64; 2]| (p[0] - e.px).hypot(p[1] - e.py) <= self.pf.r_p;

        let mut vehicle_ids = Vec::new();
        let mut vehicle_preds = Vec::new();
        for (i, sv) in world.svs.iter().enumerate() {
            if sv.active && in_range([sv.pose[0], sv.pose[1]]) {
                vehicle_ids.push(i);
                vehicle_preds.push((sv.speed, self.obstacle_poses(&sv.history)));
            }
        }
        let ped_preds: Vec<Vec<[f64; 2]>> = world
            .peds
            .iter()
            .filter(|p| in_range(p.pos))
            .map(|p| self.pedestrian_points(&p.history))
            .collect();
        let leader = find_leader(sc, world, Some(refs.s0)).and_then(|l| vehicle_ids.iter().position(|&i| i == l.index));
        let light = sc
            .lights
            .iter()
            .zip(&world.lights)
            .filter_map(|(l, phase)| {
                let rs = l.route_s?;
                let ahead = rs - refs.s0;
                (ahead > 0.0 && ahead <= self.pf.r_p).then_some((ahead, l, *phase))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, l, phase)| LightZone {
                red: phase == LightPhase::Red,
                ..l.zone
            });

        let mut scene = PotentialScene {
            stages: Vec::with_capacity(n),
            tracking_boost: false,
        };
        for k in 0..n {
            let s_ref = refs.s[k];
            let vset = build_virtual_fields(&ctx, s_ref, &self.pf);
            scene.tracking_boost |= vset.tracking_penalty;
            scene.stages.push(StageScene {
                markings: stage_markings(&ctx, s_ref, &vset),
                vehicles: vehicle_preds
                    .iter()
                    .map(|(speed, poses)| ObstaclePose {
                        px: poses[k][0],
                        py: poses[k][1],
                        phi: poses[k][2],
                        speed: *speed,
                    })
                    .collect(),
                leader,
                pedestrians: ped_preds.iter().map(|p| p[k]).collect(),
                light,
            });
        }
        scene
    }

    pub fn tick(&mut self, world: &WorldState) -> Result<TickOutput> {
        let sc = self.sc;
        let refs = sample_reference(
            &sc.route,
            &world.ego,
            sc.scenario.ego.speed,
            self.cfg.ts,
            self.cfg.n,
            self.s_hint,
            ReferenceOptions::default(),
        );
        self.s_hint = Some(refs.s0);
        let scene = self.build_scene(world, &refs);
        let x_ref: Vec<[f64; NX]> = refs.states.iter().map(|s| s.to_array()).collect();
        let pb = Problem {
            x0: world.ego.to_array(),
            x_ref: &x_ref,
            scene: &scene,
            pf: &self.pf,
            u_prev: self.u_prev,
        };
        let shifted = self.warm.as_ref().map(|w| w.shifted());
        let warm = shifted.as_ref().map(|(x, u)| (x.as_slice(), u.as_slice()));
        let solution = solve(&self.cfg, &pb, warm)?;
        let u = solution.first_control();
        self.u_prev = Some(u);
        self.warm = Some(solution.clone());
        let fields = field_terms(&scene.stages[0], &world.ego, &self.pf, self.cfg.field_options());
        Ok(TickOutput {
            control: ControlInput::from_array(u),
            solution,
            reference: refs,
            fields,
        })
    }
}
