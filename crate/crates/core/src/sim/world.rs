//! World state and its advancement: ego dynamics, car-following traffic,
//! scripted pedestrians and signal schedules.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_array, ControlInput, VehicleState};
use crate::map::{LaneId, LaneMap, Polyline};
use crate::prediction::{HistoryState, HISTORY_LEN};

use super::scenario::{CompiledScenario, LightPhase, VehicleSpawn};

/// Car-following law and right-of-way rules of the surrounding vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutopilotParams {
    pub max_accel: f64,
    /// Comfortable deceleration of the desired-gap term, m/s².
    pub comfort_decel: f64,
    /// Desired time gap, s.
    pub time_gap: f64,
    /// Standstill gap, m.
    pub min_gap: f64,
    /// Hard deceleration limit, m/s².
    pub max_decel: f64,
    pub exponent: f64,
    /// Vehicle length used for bumper gaps, m.
    pub length: f64,
    /// Distance along the own path searched for leaders, m.
    pub lookahead: f64,
    /// Lateral slack beyond the half lane width for a vehicle to count as in-path, m.
    pub vehicle_margin: f64,
    pub pedestrian_margin: f64,
    /// Deceleration beyond which a vehicle runs a light that just turned red.
    pub dilemma_decel: f64,
    /// Other traffic due at a merge point within this time makes a vehicle
    /// wait before entering a junction, s.
    pub yield_time: f64,
    /// Any traffic this close to the merge point blocks entry, m.
    pub yield_clear: f64,
}

impl Default for AutopilotParams {
    fn default() -> Self {
        Self {
            max_accel: 1.5,
            comfort_decel: 2.0,
            time_gap: 1.5,
            min_gap: 2.0,
            max_decel: 6.0,
            exponent: 4.0,
            length: 4.8,
            lookahead: 60.0,
            vehicle_margin: 0.5,
            pedestrian_margin: 0.75,
            dilemma_decel: 4.0,
            yield_time: 4.0,
            yield_clear: 8.0,
        }
    }
}

/// Car-following acceleration for speed `v`, cruise speed `v0`, bumper gap
/// `gap` and approach rate `dv = v - v_leader`; `gap = ∞` means free road.
pub fn idm_accel(p: &AutopilotParams, v: f64, v0: f64, gap: f64, dv: f64) -> f64 {
    let free = if v0 > 0.1 {
        1.0 - (v / v0).powf(p.exponent)
    } else if v > 0.0 {
        -p.comfort_decel / p.max_accel
    } else {
        0.0
    };
    let interaction = if gap.is_finite() {
        let s_star = p.min_gap + (v * p.time_gap + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt())).max(0.0);
        (s_star / gap.max(0.1)).powi(2)
    } else {
        0.0
    };
    (p.max_accel * (free - interaction)).clamp(-p.max_decel, p.max_accel)
}

/// What a surrounding vehicle is currently reacting to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaderKind {
    Ego,
    Vehicle(usize),
    Pedestrian(usize),
    RedLight,
    Yield,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvState {
    /// Lane sequence; `route[lane_index]` is the current lane.
    pub route: Vec<LaneId>,
    pub lane_index: usize,
    /// Arc length on the current lane.
    pub s: f64,
    pub speed: f64,
    pub desired_speed: f64,
    /// Realised acceleration over the last step, m/s².
    pub accel: f64,
    pub leader: Option<LeaderKind>,
    pub active: bool,
    /// `[x, y, heading]`.
    pub pose: [f64; 3],
    pub history: VecDeque<HistoryState>,
}

impl SvState {
    pub fn lane(&self) -> LaneId {
        self.route[self.lane_index]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.speed * self.pose[2].cos(), self.speed * self.pose[2].sin()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PedState {
    pub pos: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    pub history: VecDeque<HistoryState>,
}

/// Everything that changes during a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub t: f64,
    pub ego: VehicleState,
    pub svs: Vec<SvState>,
    pub peds: Vec<PedState>,
    pub lights: Vec<LightPhase>,
}

fn push_history(h: &mut VecDeque<HistoryState>, s: HistoryState) {
    if h.len() == HISTORY_LEN {
        h.pop_front();
    }
    h.push_back(s);
}

fn pose_on(map: &LaneMap, lane: LaneId, s: f64) -> [f64; 3] {
    let l = map.lane(lane).expect("route lanes exist");
    let p = l.path.point_at(s);
    [p[0], p[1], l.path.heading_at(s)]
}

/// Lane sequence starting at `lane`: the explicit route when given, else the
/// first successor at every lane end.
fn initial_route(map: &LaneMap, spawn: &VehicleSpawn) -> Vec<LaneId> {
    let mut route = vec![spawn.lane];
    if !spawn.route.is_empty() {
        route.extend_from_slice(&spawn.route);
        return route;
    }
    let mut dist = 0.0;
    let mut cur = spawn.lane;
    while dist < 2000.0 && route.len() < 200 {
        let Some(next) = map.lane(cur).and_then(|l| l.spec.successors.first().copied()) else {
            break;
        };
        dist += map.lane(next).map_or(0.0, |l| l.path.length());
        route.push(next);
        cur = next;
    }
    route
}

fn pedestrian_at(path: &Polyline, speed: f64, start: f64, t: f64) -> ([f64; 2], f64, f64) {
    let d = speed * (t - start).max(0.0);
    let moving = t >= start && d < path.length() && speed > 0.0;
    let d = d.min(path.length());
    (path.point_at(d), path.heading_at(d), if moving { speed } else { 0.0 })
}

impl WorldState {
    pub fn initial(sc: &CompiledScenario) -> Self {
        let scen = &sc.scenario;
        let svs = scen
            .vehicles
            .iter()
            .map(|v| {
                let pose = pose_on(&sc.map, v.lane, v.s);
                let mut sv = SvState {
                    route: initial_route(&sc.map, v),
                    lane_index: 0,
                    s: v.s,
                    speed: v.speed,
                    desired_speed: v.desired(),
                    accel: 0.0,
                    leader: None,
                    active: true,
                    pose,
                    history: VecDeque::with_capacity(HISTORY_LEN),
                };
                push_history(&mut sv.history, [pose[0], pose[1], pose[2], v.speed, 0.0]);
                sv
            })
            .collect();
        let peds = scen
            .pedestrians
            .iter()
            .zip(&sc.ped_paths)
            .map(|(p, path)| {
                let (pos, heading, speed) = pedestrian_at(path, p.speed, p.start_time, 0.0);
                let mut history = VecDeque::with_capacity(HISTORY_LEN);
                push_history(&mut history, [pos[0], pos[1], heading, speed, 0.0]);
                PedState {
                    pos,
                    heading,
                    speed,
                    history,
                }
            })
            .collect();
        Self {
            tick: 0,
            t: 0.0,
            ego: scen.initial_ego(),
            svs,
            peds,
            lights: sc.lights.iter().map(|l| l.spec.phase_at(0.0)).collect(),
        }
    }
}

/// A moving object as seen by the autopilot.
#[derive(Debug, Clone, Copy)]
struct Agent {
    pos: [f64; 2],
    vel: [f64; 2],
    kind: LeaderKind,
    /// Current lane for surrounding vehicles.
    lane: Option<LaneId>,
}

fn agents(world: &WorldState) -> Vec<Agent> {
    let e = &world.ego;
    let (s, c) = e.phi.sin_cos();
    let mut out = vec![Agent {
        pos: [e.px, e.py],
        vel: [e.vx * c - e.vy * s, e.vx * s + e.vy * c],
        kind: LeaderKind::Ego,
        lane: None,
    }];
    for (i, sv) in world.svs.iter().enumerate().filter(|(_, s)| s.active) {
        out.push(Agent {
            pos: [sv.pose[0], sv.pose[1]],
            vel: sv.velocity(),
            kind: LeaderKind::Vehicle(i),
            lane: Some(sv.lane()),
        });
    }
    for (i, p) in world.peds.iter().enumerate() {
        out.push(Agent {
            pos: p.pos,
            vel: [p.speed * p.heading.cos(), p.speed * p.heading.sin()],
            kind: LeaderKind::Pedestrian(i),
            lane: None,
        });
    }
    out
}

/// Lanes ahead of a vehicle with the along-path distance from the vehicle to each lane start.
fn lookahead_chain(map: &LaneMap, sv: &SvState, horizon: f64) -> Vec<(LaneId, f64)> {
    let mut out = vec![(sv.lane(), -sv.s)];
    let mut off = map.lane(sv.lane()).map_or(0.0, |l| l.path.length()) - sv.s;
    for &id in &sv.route[sv.lane_index + 1..] {
        if off > horizon {
            break;
        }
        out.push((id, off));
        off += map.lane(id).map_or(0.0, |l| l.path.length());
    }
    out
}

fn command(sc: &CompiledScenario, world: &WorldState, agents: &[Agent], i: usize) -> (f64, Option<LeaderKind>) {
    let p = &sc.scenario.autopilot;
    let map = &sc.map;
    let sv = &world.svs[i];
    let chain = lookahead_chain(map, sv, p.lookahead);
    let me = [sv.pose[0], sv.pose[1]];
    let mut best = (idm_accel(p, sv.speed, sv.desired_speed, f64::INFINITY, 0.0), None);
    let mut consider = |gap: f64, v_lead: f64, kind: LeaderKind| {
        let a = idm_accel(p, sv.speed, sv.desired_speed, gap, sv.speed - v_lead);
        if a < best.0 {
            best = (a, Some(kind));
        }
    };

    for ag in agents {
        if ag.kind == LeaderKind::Vehicle(i) {
            continue;
        }
        if (ag.pos[0] - me[0]).hypot(ag.pos[1] - me[1]) > p.lookahead + 10.0 {
            continue;
        }
        let pedestrian = matches!(ag.kind, LeaderKind::Pedestrian(_));
        for &(lane_id, off) in &chain {
            let lane = map.lane(lane_id).expect("route lanes exist");
            let pr = lane.path.project(ag.pos);
            let margin = if pedestrian {
                p.pedestrian_margin
            } else {
                p.vehicle_margin
            };
            if pr.overshoot > 0.5 || pr.lateral.abs() > lane.width() / 2.0 + margin {
                continue;
            }
            let ds = off + pr.s;
            if ds <= 0.0 {
                continue;
            }
            let gap = if pedestrian {
                ds - p.length / 2.0 - 0.5
            } else {
                ds - p.length
            };
            let v_along = ag.vel[0] * pr.heading.cos() + ag.vel[1] * pr.heading.sin();
            consider(gap, v_along.max(0.0), ag.kind);
            break;
        }
    }

    for (li, light) in sc.lights.iter().enumerate() {
        if world.lights[li] != LightPhase::Red {
            continue;
        }
        if let Some(&(_, off)) = chain.iter().find(|(id, _)| *id == light.spec.lane) {
            let gap = off + light.stop_s - p.length / 2.0;
            let committed = gap < 0.0 || sv.speed * sv.speed / (2.0 * gap) > p.dilemma_decel;
            if !committed {
                consider(gap, 0.0, LeaderKind::RedLight);
            }
        }
    }

    if let Some((gap, merge)) = junction_entry(map, sv, &chain) {
        let committed = gap < 0.0 || sv.speed * sv.speed / (2.0 * gap.max(1e-3)) > p.dilemma_decel;
        let on_chain = |ag: &Agent| match ag.lane {
            Some(l) => chain.iter().any(|(id, _)| *id == l),
            None => chain.iter().any(|(id, _)| {
                let lane = map.lane(*id).expect("route lanes exist");
                let pr = lane.path.project(ag.pos);
                pr.overshoot < 0.5 && pr.lateral.abs() < lane.width() / 2.0
            }),
        };
        let blocked = agents.iter().any(|ag| {
            if ag.kind == LeaderKind::Vehicle(i) || matches!(ag.kind, LeaderKind::Pedestrian(_)) {
                return false;
            }
            let d = [merge[0] - ag.pos[0], merge[1] - ag.pos[1]];
            let dist = d[0].hypot(d[1]);
            let closing = (ag.vel[0] * d[0] + ag.vel[1] * d[1]) / dist.max(1e-9);
            let due = closing > 0.5 && dist < closing * p.yield_time;
            (dist < p.yield_clear || due) && !on_chain(ag)
        });
        if blocked && !committed {
            consider(gap, 0.0, LeaderKind::Yield);
        }
    }
    best
}

/// When the vehicle is on an ordinary lane whose next lane enters a junction:
/// the gap to the junction entry and the point where the junction path ends.
fn junction_entry(map: &LaneMap, sv: &SvState, chain: &[(LaneId, f64)]) -> Option<(f64, [f64; 2])> {
    let cur = map.lane(sv.lane())?;
    if cur.spec.junction || chain.len() < 2 {
        return None;
    }
    let (next, off) = chain[1];
    if !map.lane(next)?.spec.junction {
        return None;
    }
    // Follow the junction lanes of the route to the point where the path leaves them.
    let mut end = next;
    for &id in &sv.route[sv.lane_index + 1..] {
        if !map.lane(id)?.spec.junction {
            break;
        }
        end = id;
    }
    let lane = map.lane(end)?;
    let merge = lane.path.point_at(lane.path.length());
    Some((off - 2.4, merge))
}

/// Advance the world by one step under the given ego control.
pub fn step_world(world: &WorldState, sc: &CompiledScenario, control: ControlInput) -> WorldState {
    let scen = &sc.scenario;
    let ts = scen.ts;
    let tick = world.tick + 1;
    let t = tick as f64 * ts;

    let mut x = step_array(&world.ego.to_array(), &control.to_array(), &sc.plant, ts);
    if x[3] <= 0.0 {
        // A stopped car does not roll backwards or keep yawing.
        x[3] = 0.0;
        x[4] = 0.0;
        x[5] = 0.0;
    }
    let ego = VehicleState::from_array(x);

    let ags = agents(world);
    let commands: Vec<(f64, Option<LeaderKind>)> = (0..world.svs.len())
        .map(|i| {
            if world.svs[i].active {
                command(sc, world, &ags, i)
            } else {
                (0.0, None)
            }
        })
        .collect();
    let mut svs = world.svs.clone();
    for (sv, (a, leader)) in svs.iter_mut().zip(commands) {
        if !sv.active {
            continue;
        }
        let v1 = (sv.speed + a * ts).max(0.0);
        sv.s += 0.5 * (sv.speed + v1) * ts;
        sv.accel = (v1 - sv.speed) / ts;
        sv.speed = v1;
        sv.leader = leader;
        loop {
            let len = sc.map.lane(sv.lane()).map_or(0.0, |l| l.path.length());
            if sv.s <= len {
                break;
            }
            if sv.lane_index + 1 >= sv.route.len() {
                sv.active = false;
                break;
            }
            sv.s -= len;
            sv.lane_index += 1;
        }
        if sv.active {
            sv.pose = pose_on(&sc.map, sv.lane(), sv.s);
            push_history(&mut sv.history, [sv.pose[0], sv.pose[1], sv.pose[2], sv.speed, 0.0]);
        }
    }

    let peds = world
        .peds
        .iter()
        .zip(scen.pedestrians.iter().zip(&sc.ped_paths))
        .map(|(p, (spec, path))| {
            let (pos, heading, speed) = pedestrian_at(path, spec.speed, spec.start_time, t);
            let mut history = p.history.clone();
            push_history(&mut history, [pos[0], pos[1], heading, speed, 0.0]);
            PedState {
                pos,
                heading,
                speed,
                history,
            }
        })
        .collect();

    WorldState {
        tick,
        t,
        ego,
        svs,
        peds,
        lights: sc.lights.iter().map(|l| l.spec.phase_at(t)).collect(),
    }
}
