//! Scenario files: lane map, ego mission, traffic spawns, pedestrians and
//! signal schedules, plus the four built-in desk-scale scenarios.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::map::{LaneGeometry, LaneId, LaneMap, LaneSpec, MarkingKind, Polyline};
use crate::planner::{astar_route, build_graph, Pose, RoutePath};
use crate::potential::LightZone;

use super::world::AutopilotParams;

fn default_ts() -> f64 {
    crate::dynamics::DEFAULT_TS
}

fn default_timeout_factor() -> f64 {
    3.0
}

/// Ego mission: spawn pose, destination pose and cruise speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSpec {
    /// `[x, y, heading]`.
    pub start: [f64; 3],
    pub target: [f64; 3],
    /// Target speed, m/s.
    pub speed: f64,
    /// Speed at spawn; defaults to the target speed.
    #[serde(default)]
    pub initial_speed: Option<f64>,
}

/// A surrounding vehicle placed on a lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpawn {
    pub lane: LaneId,
    /// Arc length along the lane centerline.
    pub s: f64,
    /// Speed at spawn.
    pub speed: f64,
    /// Cruise speed of the car-following profile; defaults to `speed`.
    #[serde(default)]
    pub desired_speed: Option<f64>,
    /// Lanes to follow after the spawn lane. When empty the first successor
    /// is taken at every lane end.
    #[serde(default)]
    pub route: Vec<LaneId>,
}

impl VehicleSpawn {
    pub fn desired(&self) -> f64 {
        self.desired_speed.unwrap_or(self.speed)
    }
}

/// A pedestrian walking a polyline at constant speed once `start_time` is reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianSpec {
    pub path: Vec<[f64; 2]>,
    pub speed: f64,
    #[serde(default)]
    pub start_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightPhase {
    Red,
    Green,
}

impl LightPhase {
    fn flipped(self) -> Self {
        match self {
            LightPhase::Red => LightPhase::Green,
            LightPhase::Green => LightPhase::Red,
        }
    }
}

/// Two-phase signal controlling the end of one lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSpec {
    pub lane: LaneId,
    /// Stop-line arc length on the lane; the lane end when omitted.
    #[serde(default)]
    pub stop_s: Option<f64>,
    pub initial: LightPhase,
    /// Times at which the phase flips, s.
    #[serde(default)]
    pub switch_times: Vec<f64>,
}

impl LightSpec {
    /// Phase at time `t`; a switch takes effect at exactly its listed time.
    pub fn phase_at(&self, t: f64) -> LightPhase {
        let flips = self.switch_times.iter().filter(|&&s| t >= s).count();
        if flips % 2 == 0 {
            self.initial
        } else {
            self.initial.flipped()
        }
    }
}

/// Spawn randomisation used by robustness batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizeSpec {
    /// Lanes surrounding vehicles may spawn on.
    pub lanes: Vec<LaneId>,
    /// Inclusive range of the vehicle count.
    pub count: [usize; 2],
    /// Distance band from the ego spawn, m.
    #[serde(default = "default_band")]
    pub band: [f64; 2],
    /// Cruise speed range, m/s.
    pub speed: [f64; 2],
    /// Minimum centre distance between two spawned vehicles, m.
    #[serde(default = "default_spacing")]
    pub min_spacing: f64,
    /// Keep-out distance ahead of the ego along its own route, m.
    #[serde(default = "default_keep_out")]
    pub keep_out: f64,
}

fn default_band() -> [f64; 2] {
    [5.0, 300.0]
}

fn default_spacing() -> f64 {
    12.0
}

fn default_keep_out() -> f64 {
    30.0
}

/// Parameters of the event detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventParams {
    /// Radius of each footprint circle of a vehicle, m.
    pub vehicle_radius: f64,
    pub pedestrian_radius: f64,
    /// Sudden-brake threshold, m/s² (negative).
    pub brake_threshold: f64,
    /// Ego must be this close to the braking vehicle, m.
    pub brake_radius: f64,
    /// Half-angle of the braking vehicle's forward cone, deg.
    pub brake_cone_deg: f64,
    pub ttc_alarm: f64,
    /// Leader search range for the time-to-collision monitor, m.
    pub leader_range: f64,
    /// Lateral tolerance beyond the lane edge before the ego counts as off-road, m.
    pub offroad_margin: f64,
}

impl Default for EventParams {
    fn default() -> Self {
        Self {
            vehicle_radius: 1.4,
            pedestrian_radius: 0.5,
            brake_threshold: -4.0,
            brake_radius: 20.0,
            brake_cone_deg: 30.0,
            ttc_alarm: 1.5,
            leader_range: 50.0,
            offroad_margin: 1.0,
        }
    }
}

/// Complete scenario description as stored in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ts")]
    pub ts: f64,
    /// Timeout as a multiple of the kinematic lower-bound travel time.
    #[serde(default = "default_timeout_factor")]
    pub timeout_factor: f64,
    pub ego: EgoSpec,
    pub lanes: Vec<LaneSpec>,
    #[serde(default)]
    pub vehicles: Vec<VehicleSpawn>,
    #[serde(default)]
    pub pedestrians: Vec<PedestrianSpec>,
    #[serde(default)]
    pub lights: Vec<LightSpec>,
    #[serde(default)]
    pub autopilot: AutopilotParams,
    #[serde(default)]
    pub events: EventParams,
    #[serde(default)]
    pub randomize: Option<RandomizeSpec>,
}

/// Names accepted by [`Scenario::builtin`].
pub const BUILTIN_SCENARIOS: [&str; 5] = ["ml_acc", "roundabout", "sig_inter", "mix_t_u", "empty_road"];

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Self = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// A built-in scenario by name, or a scenario file path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::builtin(name_or_path) {
            Some(s) => Ok(s),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name.replace('-', "_").as_str() {
            "ml_acc" => Some(ml_acc()),
            "roundabout" => Some(roundabout()),
            "sig_inter" => Some(sig_inter()),
            "mix_t_u" => Some(mix_t_u()),
            "empty_road" => Some(empty_road()),
            _ => None,
        }
    }

    pub fn initial_ego(&self) -> VehicleState {
        let [x, y, phi] = self.ego.start;
        VehicleState::new(x, y, phi, self.ego.initial_speed.unwrap_or(self.ego.speed), 0.0, 0.0)
    }

    /// Structural checks: positive step and speeds, known lanes, spawns on
    /// their lanes, usable pedestrian paths.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return bad(format!("ts must be positive, got {}", self.ts));
        }
        if !(self.timeout_factor > 0.0) {
            return bad("timeout_factor must be positive".into());
        }
        if !(self.ego.speed > 0.0) || self.ego.initial_speed.is_some_and(|v| !(v >= 0.0)) {
            return bad("ego speeds must be positive".into());
        }
        let map = LaneMap::new(self.lanes.clone())?;
        for (i, v) in self.vehicles.iter().enumerate() {
            let Some(lane) = map.lane(v.lane) else {
                return bad(format!("vehicle {i} references unknown lane {}", v.lane));
            };
            if !(v.s >= 0.0 && v.s <= lane.path.length()) {
                return bad(format!("vehicle {i} spawn s = {} outside lane {}", v.s, v.lane));
            }
            if !(v.speed >= 0.0 && v.desired() >= 0.0) {
                return bad(format!("vehicle {i} has a negative speed"));
            }
            for l in &v.route {
                if map.lane(*l).is_none() {
                    return bad(format!("vehicle {i} route references unknown lane {l}"));
                }
            }
        }
        for (i, p) in self.pedestrians.iter().enumerate() {
            if p.path.len() < 2 || !(p.speed >= 0.0) {
                return bad(format!(
                    "pedestrian {i} needs a path of two points and a non-negative speed"
                ));
            }
            Polyline::new(p.path.clone())?;
        }
        for l in &self.lights {
            let Some(lane) = map.lane(l.lane) else {
                return bad(format!("light references unknown lane {}", l.lane));
            };
            if l.stop_s.is_some_and(|s| !(s >= 0.0 && s <= lane.path.length())) {
                return bad(format!("light stop line outside lane {}", l.lane));
            }
        }
        if let Some(r) = &self.randomize {
            if r.lanes.iter().any(|l| map.lane(*l).is_none()) {
                return bad("randomize references an unknown lane".into());
            }
            if r.count[0] > r.count[1] || r.band[0] > r.band[1] || r.speed[0] > r.speed[1] {
                return bad("randomize ranges must be ordered".into());
            }
        }
        Ok(())
    }

    /// Copy with the surrounding vehicles replaced by a random draw from the
    /// `randomize` section. Scenarios without one are returned with only the
    /// seed changed.
    pub fn randomized(&self, seed: u64) -> Result<Self> {
        let mut out = self.clone();
        out.seed = seed;
        let Some(spec) = &self.randomize else {
            return Ok(out);
        };
        let compiled = CompiledScenario::new(self.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.gen_range(spec.count[0]..=spec.count[1]);
        let ego = self.initial_ego();
        let total: f64 = spec
            .lanes
            .iter()
            .map(|l| compiled.map.lane(*l).map_or(0.0, |x| x.path.length()))
            .sum();
        let mut placed: Vec<([f64; 2], VehicleSpawn)> = Vec::new();
        let mut attempts = 0;
        while placed.len() < count && attempts < 5000 {
            attempts += 1;
            // Lanes are drawn proportionally to their length.
            let mut u = rng.gen_range(0.0..total);
            let mut lane_id = spec.lanes[0];
            for l in &spec.lanes {
                let len = compiled.map.lane(*l).map_or(0.0, |x| x.path.length());
                if u < len {
                    lane_id = *l;
                    break;
                }
                u -= len;
            }
            let lane = compiled.map.lane(lane_id).expect("validated lane");
            let len = lane.path.length();
            if len < 4.0 {
                continue;
            }
            let s = rng.gen_range(2.0..len - 2.0);
            let speed = rng.gen_range(spec.speed[0]..=spec.speed[1]);
            let p = lane.path.point_at(s);
            let d = (p[0] - ego.px).hypot(p[1] - ego.py);
            if d < spec.band[0] || d > spec.band[1] {
                continue;
            }
            if placed
                .iter()
                .any(|(q, _)| (q[0] - p[0]).hypot(q[1] - p[1]) < spec.min_spacing)
            {
                continue;
            }
            if compiled.blocks_ego_start(p, spec.keep_out) {
                continue;
            }
            placed.push((
                p,
                VehicleSpawn {
                    lane: lane_id,
                    s,
                    speed,
                    desired_speed: None,
                    route: random_route(&compiled.map, lane_id, &mut rng),
                },
            ));
        }
        out.vehicles = placed.into_iter().map(|(_, v)| v).collect();
        Ok(out)
    }
}

/// Successor chain chosen uniformly at each branch, long enough for any trial.
fn random_route(map: &LaneMap, start: LaneId, rng: &mut ChaCha8Rng) -> Vec<LaneId> {
    let mut out = Vec::new();
    let mut cur = start;
    let mut dist = 0.0;
    while dist < 2000.0 && out.len() < 200 {
        let Some(lane) = map.lane(cur) else { break };
        if lane.spec.successors.is_empty() {
            break;
        }
        let next = lane.spec.successors[rng.gen_range(0..lane.spec.successors.len())];
        out.push(next);
        dist += map.lane(next).map_or(0.0, |l| l.path.length());
        cur = next;
    }
    out
}

/// Signal attached to a lane with its stop line resolved.
#[derive(Debug, Clone)]
pub struct CompiledLight {
    pub spec: LightSpec,
    pub stop_s: f64,
    /// Zone with `red` reflecting the initial phase.
    pub zone: LightZone,
    /// Arc length of the stop line along the ego route, when the route passes it.
    pub route_s: Option<f64>,
}

/// Scenario with its lane map and ego route prepared.
#[derive(Debug, Clone)]
pub struct CompiledScenario {
    pub scenario: Scenario,
    pub map: LaneMap,
    pub route: RoutePath,
    pub lights: Vec<CompiledLight>,
    pub ped_paths: Vec<Polyline>,
    /// Parameters of the simulated ego vehicle.
    pub plant: VehicleParams,
}

impl CompiledScenario {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let map = LaneMap::new(scenario.lanes.clone())?;
        let graph = build_graph(&map, crate::planner::graph::DEFAULT_SPACING)?;
        let [sx, sy, sp] = scenario.ego.start;
        let [tx, ty, tp] = scenario.ego.target;
        let wps = astar_route(
            &graph,
            Pose::new(sx, sy, sp),
            Pose::new(tx, ty, tp),
            crate::planner::graph::DEFAULT_SNAP_RADIUS,
        )?;
        let route = RoutePath::from_waypoints(&wps)?;
        let lights = scenario
            .lights
            .iter()
            .map(|l| {
                let lane = map.lane(l.lane).expect("validated lane");
                let stop_s = l.stop_s.unwrap_or(lane.path.length());
                let stop = lane.path.point_at(stop_s);
                let phi = lane.path.heading_at((stop_s - 1e-6).max(0.0));
                let on_route = wps.iter().any(|w| w.lane_id == l.lane);
                let route_s = on_route.then(|| route.project(stop, None).s);
                CompiledLight {
                    spec: l.clone(),
                    stop_s,
                    zone: LightZone {
                        stop,
                        phi,
                        width: lane.width(),
                        red: l.initial == LightPhase::Red,
                    },
                    route_s,
                }
            })
            .collect();
        let ped_paths = scenario
            .pedestrians
            .iter()
            .map(|p| Polyline::new(p.path.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scenario,
            map,
            route,
            lights,
            ped_paths,
            plant: VehicleParams::default(),
        })
    }

    pub fn route_length(&self) -> f64 {
        self.route.length()
    }

    /// Kinematic lower bound on travel time times the timeout factor.
    pub fn timeout(&self) -> f64 {
        self.scenario.timeout_factor * self.route_length() / self.scenario.ego.speed
    }

    /// Whether a vehicle centred at `p` would sit on the ego's route just
    /// ahead of or next to its spawn, where no controller could react.
    pub fn blocks_ego_start(&self, p: [f64; 2], keep_out: f64) -> bool {
        let ego = self.scenario.initial_ego();
        if (p[0] - ego.px).hypot(p[1] - ego.py) < 8.0 {
            return true;
        }
        let s0 = self.route.project([ego.px, ego.py], None).s;
        let pr = self.route.project(p, Some(s0 + keep_out / 2.0));
        let ds = pr.s - s0;
        pr.lateral.abs() < 2.5 && ds > -10.0 && ds < keep_out
    }
}

// ---------------------------------------------------------------------------
// Geometry helpers
// ---------------------------------------------------------------------------

fn line(id: LaneId, from: [f64; 2], to: [f64; 2]) -> LaneSpec {
    LaneSpec {
        id,
        geometry: LaneGeometry::Line { from, to },
        width: crate::map::DEFAULT_LANE_WIDTH,
        left: None,
        right: None,
        successors: vec![],
        left_marking: MarkingKind::NonCrossable,
        right_marking: MarkingKind::NonCrossable,
        junction: false,
    }
}

fn with_geometry(id: LaneId, geometry: LaneGeometry) -> LaneSpec {
    LaneSpec {
        geometry,
        ..line(id, [0.0, 0.0], [1.0, 0.0])
    }
}

/// Cubic Hermite connector between two poses, sampled every metre or so.
pub fn hermite(p0: [f64; 2], h0: f64, p1: [f64; 2], h1: f64) -> Vec<[f64; 2]> {
    let chord = (p1[0] - p0[0]).hypot(p1[1] - p0[1]);
    let (m0, m1) = (
        [chord * h0.cos(), chord * h0.sin()],
        [chord * h1.cos(), chord * h1.sin()],
    );
    let n = (chord / 0.5).ceil().max(4.0) as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let (t2, t3) = (t * t, t * t * t);
            let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
            let h10 = t3 - 2.0 * t2 + t;
            let h01 = -2.0 * t3 + 3.0 * t2;
            let h11 = t3 - t2;
            [
                h00 * p0[0] + h10 * m0[0] + h01 * p1[0] + h11 * m1[0],
                h00 * p0[1] + h10 * m0[1] + h01 * p1[1] + h11 * m1[1],
            ]
        })
        .collect()
}

fn connector(id: LaneId, p0: [f64; 2], h0: f64, p1: [f64; 2], h1: f64, successor: LaneId) -> LaneSpec {
    LaneSpec {
        successors: vec![successor],
        junction: true,
        ..with_geometry(
            id,
            LaneGeometry::Polyline {
                points: hermite(p0, h0, p1, h1),
            },
        )
    }
}

fn polar(r: f64, deg: f64) -> [f64; 2] {
    let a = deg.to_radians();
    [r * a.cos(), r * a.sin()]
}

/// Arm of a four-way layout: unit direction from the centre and its left normal.
fn arm(deg: f64) -> ([f64; 2], [f64; 2]) {
    let d = polar(1.0, deg);
    (d, [-d[1], d[0]])
}

fn offset(d: [f64; 2], r: f64, n: [f64; 2], o: f64) -> [f64; 2] {
    [d[0] * r + n[0] * o, d[1] * r + n[1] * o]
}

const ARM_DEG: [f64; 4] = [-90.0, 0.0, 90.0, 180.0];

// ---------------------------------------------------------------------------
// Built-in scenarios
// ---------------------------------------------------------------------------

/// Straight single-lane road without traffic, used for calibration and smoke tests.
pub fn empty_road() -> Scenario {
    Scenario {
        name: "empty_road".into(),
        seed: 0,
        ts: default_ts(),
        timeout_factor: default_timeout_factor(),
        ego: EgoSpec {
            start: [10.0, 0.0, 0.0],
            target: [190.0, 0.0, 0.0],
            speed: 12.5,
            initial_speed: None,
        },
        lanes: vec![line(1, [0.0, 0.0], [200.0, 0.0])],
        vehicles: vec![],
        pedestrians: vec![],
        lights: vec![],
        autopilot: AutopilotParams::default(),
        events: EventParams::default(),
        randomize: None,
    }
}

/// Three-lane straight road with slower traffic ahead of the ego.
pub fn ml_acc() -> Scenario {
    let len = 400.0;
    let mut l1 = line(1, [0.0, 3.5], [len, 3.5]);
    l1.right = Some(2);
    l1.right_marking = MarkingKind::Crossable;
    let mut l2 = line(2, [0.0, 0.0], [len, 0.0]);
    l2.left = Some(1);
    l2.right = Some(3);
    l2.left_marking = MarkingKind::Crossable;
    l2.right_marking = MarkingKind::Crossable;
    let mut l3 = line(3, [0.0, -3.5], [len, -3.5]);
    l3.left = Some(2);
    l3.left_marking = MarkingKind::Crossable;
    let sv = |lane, s, v| VehicleSpawn {
        lane,
        s,
        speed: v,
        desired_speed: None,
        route: vec![],
    };
    Scenario {
        name: "ml_acc".into(),
        seed: 1,
        ts: default_ts(),
        timeout_factor: default_timeout_factor(),
        ego: EgoSpec {
            start: [20.0, 0.0, 0.0],
            target: [380.0, 0.0, 0.0],
            speed: 12.5,
            initial_speed: None,
        },
        lanes: vec![l1, l2, l3],
        // The leader brakes from 11 to 5 m/s while a faster car still occupies
        // the left lane, so the ego has to follow for a while before passing.
        vehicles: vec![
            sv(1, 12.0, 12.5),
            VehicleSpawn {
                desired_speed: Some(5.0),
                ..sv(2, 50.0, 11.0)
            },
            sv(3, 45.0, 8.0),
            sv(1, 230.0, 8.0),
            sv(2, 300.0, 8.5),
        ],
        pedestrians: vec![],
        lights: vec![],
        autopilot: AutopilotParams::default(),
        events: EventParams::default(),
        randomize: Some(RandomizeSpec {
            lanes: vec![1, 2, 3],
            count: [8, 12],
            band: default_band(),
            speed: [6.0, 11.0],
            min_spacing: default_spacing(),
            keep_out: default_keep_out(),
        }),
    }
}

const RING_IN: f64 = 23.25;
const RING_OUT: f64 = 26.75;
/// Ring break angles, counter-clockwise: exit and entry points of the four arms.
const RING_BREAKS: [f64; 8] = [-120.0, -60.0, -30.0, 30.0, 60.0, 120.0, 150.0, 210.0];

fn ring_index(deg: f64) -> usize {
    RING_BREAKS
        .iter()
        .position(|b| {
            let d = (b - deg).rem_euclid(360.0);
            d < 1e-9 || d > 360.0 - 1e-9
        })
        .expect("angle is a ring break")
}

/// Single two-lane ring with four approach arms; counter-clockwise traffic.
pub fn roundabout() -> Scenario {
    let (far, near) = (90.0, 36.0);
    let k = RING_BREAKS.len();
    let mut lanes = Vec::new();
    for i in 0..k {
        let (a, b) = (
            RING_BREAKS[i],
            if i + 1 < k {
                RING_BREAKS[i + 1]
            } else {
                RING_BREAKS[0] + 360.0
            },
        );
        let arc = |r| LaneGeometry::Arc {
            center: [0.0, 0.0],
            radius: r,
            start_deg: a,
            end_deg: b,
        };
        let mut inner = with_geometry(100 + i as LaneId, arc(RING_IN));
        inner.right = Some(200 + i as LaneId);
        inner.right_marking = MarkingKind::Crossable;
        inner.successors = vec![100 + ((i + 1) % k) as LaneId];
        let mut outer = with_geometry(200 + i as LaneId, arc(RING_OUT));
        outer.left = Some(100 + i as LaneId);
        outer.left_marking = MarkingKind::Crossable;
        // The outer edge is open wherever an arm joins the ring.
        outer.right_marking = MarkingKind::Crossable;
        outer.successors = vec![200 + ((i + 1) % k) as LaneId];
        lanes.push(inner);
        lanes.push(outer);
    }
    for (j, &deg) in ARM_DEG.iter().enumerate() {
        let j = j as LaneId;
        let (d, n) = arm(deg);
        let inbound = line(300 + j, offset(d, far, n, 1.75), offset(d, near, n, 1.75));
        let outbound = line(400 + j, offset(d, near, n, -1.75), offset(d, far, n, -1.75));
        let entry_deg = deg + 30.0;
        let exit_deg = deg - 30.0;
        let entry_seg = 200 + ring_index(entry_deg) as LaneId;
        let exit_from = 200 + ((ring_index(exit_deg) + k - 1) % k) as LaneId;
        lanes.push(LaneSpec {
            successors: vec![500 + j],
            ..inbound
        });
        lanes.push(outbound);
        lanes.push(connector(
            500 + j,
            offset(d, near, n, 1.75),
            (deg + 180.0).to_radians(),
            polar(RING_OUT, entry_deg),
            (entry_deg + 90.0).to_radians(),
            entry_seg,
        ));
        lanes.push(connector(
            600 + j,
            polar(RING_OUT, exit_deg),
            (exit_deg + 90.0).to_radians(),
            offset(d, near, n, -1.75),
            deg.to_radians(),
            400 + j,
        ));
        let seg = lanes.iter_mut().find(|l| l.id == exit_from).expect("ring segment");
        seg.successors.push(600 + j);
    }
    let sv = |lane, s, v, route: Vec<LaneId>| VehicleSpawn {
        lane,
        s,
        speed: v,
        desired_speed: None,
        route,
    };
    let arms: Vec<LaneId> = (300..304).chain(400..404).collect();
    let ring: Vec<LaneId> = (100..108).chain(200..208).collect();
    Scenario {
        name: "roundabout".into(),
        seed: 1,
        ts: default_ts(),
        timeout_factor: default_timeout_factor(),
        ego: EgoSpec {
            start: [1.75, -80.0, 90f64.to_radians()],
            target: [1.75, 80.0, 90f64.to_radians()],
            speed: 11.1,
            initial_speed: None,
        },
        lanes,
        vehicles: vec![
            sv(203, 5.0, 7.0, vec![204, 205, 602, 402]),
            sv(105, 10.0, 7.0, vec![106, 107, 100, 101]),
            sv(301, 20.0, 8.0, vec![501, 203, 204, 205, 206, 603, 403]),
            sv(303, 10.0, 8.0, vec![503, 200, 600, 400]),
        ],
        pedestrians: vec![],
        lights: vec![],
        autopilot: AutopilotParams::default(),
        events: EventParams::default(),
        randomize: Some(RandomizeSpec {
            lanes: arms.into_iter().chain(ring).collect(),
            count: [8, 12],
            band: default_band(),
            speed: [5.0, 9.0],
            min_spacing: default_spacing(),
            keep_out: default_keep_out(),
        }),
    }
}

/// Half size of the signalised intersection box, m.
const BOX: f64 = 7.0;

/// Signalised four-way intersection; the ego turns left once its light turns green.
pub fn sig_inter() -> Scenario {
    let far = 70.0;
    let mut lanes = Vec::new();
    for (j, &deg) in ARM_DEG.iter().enumerate() {
        let (d, n) = arm(deg);
        let j = j as LaneId;
        // Straight first so that default vehicle routes go straight on.
        let outs = [(j + 2) % 4, (j + 1) % 4, (j + 3) % 4];
        let mut inbound = line(10 + j, offset(d, far, n, 1.75), offset(d, BOX, n, 1.75));
        inbound.successors = outs.iter().map(|k| 100 + 10 * j + k).collect();
        lanes.push(inbound);
        lanes.push(line(20 + j, offset(d, BOX, n, -1.75), offset(d, far, n, -1.75)));
        for &k in &outs {
            let (dk, nk) = arm(ARM_DEG[k as usize]);
            lanes.push(connector(
                100 + 10 * j + k,
                offset(d, BOX, n, 1.75),
                (deg + 180.0).to_radians(),
                offset(dk, BOX, nk, -1.75),
                ARM_DEG[k as usize].to_radians(),
                20 + k,
            ));
        }
    }
    let light = |lane, initial, switch_times: Vec<f64>| LightSpec {
        lane,
        stop_s: None,
        initial,
        switch_times,
    };
    let sv = |lane, s, v| VehicleSpawn {
        lane,
        s,
        speed: v,
        desired_speed: None,
        route: vec![],
    };
    Scenario {
        name: "sig_inter".into(),
        seed: 1,
        ts: default_ts(),
        timeout_factor: default_timeout_factor(),
        ego: EgoSpec {
            start: [1.75, -37.0, 90f64.to_radians()],
            target: [-50.0, 1.75, 180f64.to_radians()],
            speed: 6.94,
            initial_speed: None,
        },
        lanes,
        vehicles: vec![
            sv(13, 43.0, 8.0),
            sv(11, 33.0, 8.0),
            sv(12, 55.0, 0.0),
            sv(11, 5.0, 8.0),
        ]
        .into_iter()
        .map(|mut v| {
            if v.speed == 0.0 {
                v.desired_speed = Some(8.0);
            }
            v
        })
        .collect(),
        pedestrians: vec![],
        lights: vec![
            light(10, LightPhase::Red, vec![4.5]),
            light(11, LightPhase::Green, vec![4.5]),
            light(12, LightPhase::Red, vec![]),
            light(13, LightPhase::Green, vec![4.5]),
        ],
        autopilot: AutopilotParams::default(),
        events: EventParams::default(),
        randomize: Some(RandomizeSpec {
            lanes: (10..14).chain(20..24).collect(),
            count: [8, 12],
            band: default_band(),
            speed: [4.0, 8.0],
            min_spacing: default_spacing(),
            keep_out: default_keep_out(),
        }),
    }
}

/// Boulevard with a T-junction, a crosswalk and a U-turn at its east end.
pub fn mix_t_u() -> Scenario {
    let y = 6.0;
    let (west, jx, uturn) = (-80.0, 10.0, 40.0);
    let mut lanes = Vec::new();
    let mut e1 = line(1, [west, -y], [-jx, -y]);
    e1.successors = vec![2, 9];
    let mut ej = line(2, [-jx, -y], [jx, -y]);
    ej.junction = true;
    ej.successors = vec![3];
    let mut e2 = line(3, [jx, -y], [uturn, -y]);
    e2.successors = vec![4];
    let mut u = with_geometry(
        4,
        LaneGeometry::Arc {
            center: [uturn, 0.0],
            radius: y,
            start_deg: -90.0,
            end_deg: 90.0,
        },
    );
    u.junction = true;
    u.successors = vec![5];
    let w = line(5, [uturn, y], [west, y]);
    let edge = -y - 1.75 - 2.0;
    let mut side_in = line(6, [1.75, -70.0], [1.75, edge]);
    side_in.successors = vec![8];
    let side_out = line(7, [-1.75, edge], [-1.75, -70.0]);
    lanes.extend([e1, ej, e2, u, w, side_in, side_out]);
    lanes.push(connector(8, [1.75, edge], 90f64.to_radians(), [jx, -y], 0.0, 3));
    lanes.push(connector(9, [-jx, -y], 0.0, [-1.75, edge], (-90f64).to_radians(), 7));
    let sv = |lane, s, v| VehicleSpawn {
        lane,
        s,
        speed: v,
        desired_speed: None,
        route: vec![],
    };
    let xw = -16.0;
    Scenario {
        name: "mix_t_u".into(),
        seed: 1,
        ts: default_ts(),
        timeout_factor: default_timeout_factor(),
        ego: EgoSpec {
            start: [-60.0, -y, 0.0],
            target: [-50.0, y, std::f64::consts::PI],
            speed: 9.72,
            initial_speed: None,
        },
        lanes,
        vehicles: vec![sv(5, 20.0, 8.0), sv(5, 75.0, 8.0), sv(6, 30.0, 6.0)],
        pedestrians: vec![
            PedestrianSpec {
                path: vec![[xw, -y - 3.5], [xw, y + 3.5], [xw, 30.0]],
                speed: 1.4,
                start_time: 0.0,
            },
            PedestrianSpec {
                path: vec![[xw - 2.0, y + 3.5], [xw - 2.0, -y - 3.5], [xw - 2.0, -30.0]],
                speed: 1.4,
                start_time: 12.0,
            },
        ],
        lights: vec![],
        autopilot: AutopilotParams::default(),
        events: EventParams::default(),
        randomize: Some(RandomizeSpec {
            lanes: vec![1, 3, 5, 6, 7],
            count: [8, 12],
            band: default_band(),
            speed: [5.0, 9.0],
            min_spacing: default_spacing(),
            keep_out: default_keep_out(),
        }),
    }
}
