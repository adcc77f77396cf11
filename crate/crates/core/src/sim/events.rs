//! Safety and rule events between two consecutive world states.

use serde::{Deserialize, Serialize};

use crate::map::{LaneId, LaneMap, MarkingKind, Projection};
use crate::potential::stop_line_distance;

use super::scenario::{CompiledScenario, EventParams, LightPhase};
use super::world::WorldState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Obstacle {
    Vehicle(usize),
    Pedestrian(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrvKind {
    /// A non-crossable marking of the given lane was crossed.
    Marking(LaneId),
    RedLight(LaneId),
    OffRoad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Collision(Obstacle),
    Trv(TrvKind),
    /// Sudden braking of the given surrounding vehicle with the ego in front of it.
    ImpoliteBrake(usize),
    TtcAlarm(f64),
}

/// Front and rear circle centres of a vehicle footprint.
pub fn footprint(px: f64, py: f64, phi: f64, offset: f64) -> [[f64; 2]; 2] {
    let (s, c) = phi.sin_cos();
    [[px + c * offset, py + s * offset], [px - c * offset, py - s * offset]]
}

pub fn min_pairwise_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    for p in a {
        for q in b {
            best = best.min((p[0] - q[0]).hypot(p[1] - q[1]));
        }
    }
    best
}

/// Circle sets with radii `ra` and `rb` overlap.
pub fn footprints_overlap(a: &[[f64; 2]], ra: f64, b: &[[f64; 2]], rb: f64) -> bool {
    min_pairwise_distance(a, b) < ra + rb
}

/// The vehicle directly ahead of the ego in its current corridor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderInfo {
    pub index: usize,
    /// Bumper-to-bumper gap along the route, m.
    pub gap: f64,
    /// Ego speed minus leader speed along the route, m/s.
    pub closing: f64,
    /// Gap over closing speed; infinite when not closing.
    pub ttc: f64,
}

/// Lateral half-width of the corridor in which a vehicle counts as the leader, m.
const LEADER_CORRIDOR: f64 = 2.0;

/// Nearest surrounding vehicle ahead of the ego whose route-frame lateral
/// offset is within the ego's corridor.
pub fn find_leader(sc: &CompiledScenario, world: &WorldState, s_hint: Option<f64>) -> Option<LeaderInfo> {
    let ev = &sc.scenario.events;
    let len = sc.scenario.autopilot.length;
    let e = &world.ego;
    let me = sc.route.project([e.px, e.py], s_hint);
    let ego_along = e.vx * (e.phi - me.heading).cos() - e.vy * (e.phi - me.heading).sin();
    let mut best: Option<LeaderInfo> = None;
    for (i, sv) in world.svs.iter().enumerate().filter(|(_, s)| s.active) {
        let d = (sv.pose[0] - e.px).hypot(sv.pose[1] - e.py);
        if d > ev.leader_range {
            continue;
        }
        let pr = sc.route.project([sv.pose[0], sv.pose[1]], Some(me.s + d));
        let ds = pr.s - me.s;
        if ds <= 0.0
            || (pr.lateral - me.lateral).abs() > LEADER_CORRIDOR
            || (pr.point[0] - sv.pose[0]).hypot(pr.point[1] - sv.pose[1]) > 6.0
        {
            continue;
        }
        let gap = (ds - len).max(0.0);
        if best.is_some_and(|b| b.gap <= gap) {
            continue;
        }
        let closing = ego_along - sv.speed * (sv.pose[2] - pr.heading).cos();
        let ttc = if closing > 0.0 { gap / closing } else { f64::INFINITY };
        best = Some(LeaderInfo {
            index: i,
            gap,
            closing,
            ttc,
        });
    }
    best
}

/// Nearest lane whose centerline projects onto `p`, tolerating small gaps at lane joints.
fn nearest_lane(map: &LaneMap, p: [f64; 2]) -> Option<(LaneId, Projection)> {
    let mut best: Option<(LaneId, Projection)> = None;
    for lane in map.lanes() {
        let pr = lane.path.project(p);
        if pr.overshoot > 0.5 {
            continue;
        }
        if best.is_none_or(|(_, b)| pr.lateral.abs() < b.lateral.abs()) {
            best = Some((lane.id(), pr));
        }
    }
    best
}

fn off_road(map: &LaneMap, p: [f64; 2], margin: f64) -> bool {
    match nearest_lane(map, p) {
        None => true,
        Some((id, pr)) => pr.lateral.abs() > map.lane(id).map_or(0.0, |l| l.width()) / 2.0 + margin,
    }
}

/// First lane whose non-crossable marking the ego centre crossed between the
/// two points.
fn marking_crossings(map: &LaneMap, before: [f64; 2], after: [f64; 2]) -> Option<LaneId> {
    let mut lanes: Vec<LaneId> = Vec::new();
    for p in [before, after] {
        if let Some((id, _)) = nearest_lane(map, p) {
            if map.lane(id).is_some_and(|l| l.spec.junction) {
                continue;
            }
            for g in map.lane_group(id) {
                if !lanes.contains(&g) {
                    lanes.push(g);
                }
            }
        }
    }
    for id in lanes {
        let lane = map.lane(id)?;
        let (pb, pa) = (lane.path.project(before), lane.path.project(after));
        if pb.overshoot > 0.5 || pa.overshoot > 0.5 {
            continue;
        }
        let half = lane.width() / 2.0;
        let group = map.lane_group(id);
        let leftmost = group.first() == Some(&id);
        let rightmost = group.last() == Some(&id);
        if lane.spec.left_marking == MarkingKind::NonCrossable {
            let (db, da) = (half - pb.lateral, half - pa.lateral);
            // Boundary markings count when leaving; interior ones both ways.
            if (db >= 0.0 && da < 0.0) || (!leftmost && db < 0.0 && da >= 0.0) {
                return Some(id);
            }
        }
        if lane.spec.right_marking == MarkingKind::NonCrossable {
            let (db, da) = (half + pb.lateral, half + pa.lateral);
            if (db >= 0.0 && da < 0.0) || (!rightmost && db < 0.0 && da >= 0.0) {
                return Some(id);
            }
        }
    }
    None
}

/// Events caused by the transition `before → after`. Collisions and the TTC
/// alarm describe the `after` state; rule violations and sudden braking are
/// reported on their rising edge.
pub fn detect_events(sc: &CompiledScenario, before: &WorldState, after: &WorldState) -> Vec<Event> {
    let ev: &EventParams = &sc.scenario.events;
    let mut out = Vec::new();
    let e = &after.ego;
    let ego_fp = footprint(e.px, e.py, e.phi, ev.vehicle_radius);

    for (i, sv) in after.svs.iter().enumerate().filter(|(_, s)| s.active) {
        let fp = footprint(sv.pose[0], sv.pose[1], sv.pose[2], ev.vehicle_radius);
        if footprints_overlap(&ego_fp, ev.vehicle_radius, &fp, ev.vehicle_radius) {
            out.push(Event::Collision(Obstacle::Vehicle(i)));
        }
    }
    for (i, p) in after.peds.iter().enumerate() {
        if footprints_overlap(&ego_fp, ev.vehicle_radius, &[p.pos], ev.pedestrian_radius) {
            out.push(Event::Collision(Obstacle::Pedestrian(i)));
        }
    }

    let (pb, pa) = ([before.ego.px, before.ego.py], [e.px, e.py]);
    if let Some(id) = marking_crossings(&sc.map, pb, pa) {
        out.push(Event::Trv(TrvKind::Marking(id)));
    }
    if !off_road(&sc.map, pb, ev.offroad_margin) && off_road(&sc.map, pa, ev.offroad_margin) {
        out.push(Event::Trv(TrvKind::OffRoad));
    }
    for (li, light) in sc.lights.iter().enumerate() {
        if after.lights[li] != LightPhase::Red {
            continue;
        }
        let lane = sc.map.lane(light.spec.lane).expect("validated lane");
        let pr = lane.path.project(pa);
        let in_lane = pr.lateral.abs() < lane.width() / 2.0 && (pr.s - light.stop_s).abs() < 10.0;
        if in_lane
            && stop_line_distance(pb[0], pb[1], &light.zone) > 0.0
            && stop_line_distance(pa[0], pa[1], &light.zone) <= 0.0
        {
            out.push(Event::Trv(TrvKind::RedLight(light.spec.lane)));
        }
    }

    let cone = ev.brake_cone_deg.to_radians().cos();
    for (i, (sb, sa)) in before.svs.iter().zip(&after.svs).enumerate() {
        if !sa.active || sa.accel > ev.brake_threshold || sb.accel <= ev.brake_threshold {
            continue;
        }
        let d = [e.px - sa.pose[0], e.py - sa.pose[1]];
        let dist = d[0].hypot(d[1]);
        let ahead = d[0] * sa.pose[2].cos() + d[1] * sa.pose[2].sin();
        if dist <= ev.brake_radius && dist > 0.0 && ahead >= cone * dist {
            out.push(Event::ImpoliteBrake(i));
        }
    }

    if let Some(l) = find_leader(sc, after, None) {
        if l.ttc < ev.ttc_alarm {
            out.push(Event::TtcAlarm(l.ttc));
        }
    }
    out
}
