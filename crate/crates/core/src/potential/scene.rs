//! Scene snapshots over the horizon and the virtual guidance fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{wrap_angle, LaneMap, MarkingKind};
use crate::planner::RoutePath;

use super::{LaneMarking, ObstaclePose, PFParams, Side};

/// Stop line of a signalised lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightZone {
    /// Stop-line point on the lane centerline.
    pub stop: [f64; 2],
    /// Travel direction of the controlled lane.
    pub phi: f64,
    pub width: f64,
    pub red: bool,
}

/// Every potential-field source at one horizon stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageScene {
    pub markings: Vec<LaneMarking>,
    pub vehicles: Vec<ObstaclePose>,
    /// Index into `vehicles` of the leader the TTC field acts on.
    pub leader: Option<usize>,
    pub pedestrians: Vec<[f64; 2]>,
    pub light: Option<LightZone>,
}

impl StageScene {
    fn is_finite(&self) -> bool {
        let m = self
            .markings
            .iter()
            .all(|m| m.px.is_finite() && m.py.is_finite() && m.phi.is_finite() && m.width > 0.0);
        let v = self
            .vehicles
            .iter()
            .all(|o| o.px.is_finite() && o.py.is_finite() && o.phi.is_finite() && o.speed.is_finite());
        let p = self.pedestrians.iter().all(|q| q[0].is_finite() && q[1].is_finite());
        m && v && p
    }
}

/// Scene over the whole horizon: one stage per shooting node `τ = 1..N`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PotentialScene {
    pub stages: Vec<StageScene>,
    /// Raised by the turning guidance when the vehicle has left its lane.
    pub tracking_boost: bool,
}

pub type ObstacleHorizon = PotentialScene;

impl PotentialScene {
    pub fn empty(n: usize) -> Self {
        Self {
            stages: vec![StageScene::default(); n],
            tracking_boost: false,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.stages.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "scene has {} stages, horizon is {n}",
                self.stages.len()
            )));
        }
        for (i, st) in self.stages.iter().enumerate() {
            if !st.is_finite() {
                return Err(Error::InvalidParameter(format!("non-finite scene entry at stage {i}")));
            }
            if st.leader.is_some_and(|l| l >= st.vehicles.len()) {
                return Err(Error::InvalidParameter(format!(
                    "leader index out of range at stage {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Two virtual non-crossable markings around a guidance path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualField {
    pub center: [f64; 2],
    pub phi: f64,
    pub r_g: f64,
    pub markings: [LaneMarking; 2],
}

impl VirtualField {
    pub fn new(center: [f64; 2], phi: f64, lane_width: f64, params: &PFParams) -> Self {
        let r_g = lane_width / 2.0 + params.r_offset;
        let left = LaneMarking::new(
            center[0],
            center[1],
            phi,
            Side::Left,
            MarkingKind::NonCrossable,
            2.0 * r_g,
        );
        let right = LaneMarking {
            side: Side::Right,
            ..left
        };
        Self {
            center,
            phi,
            r_g,
            markings: [left, right],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VirtualFieldSet {
    pub fields: Vec<VirtualField>,
    /// Turn ahead with the vehicle still in its lane: the lane's crossable
    /// markings are treated as non-crossable.
    pub lock_lane: bool,
    /// Turn ahead with the vehicle outside its lane: stronger tracking.
    pub tracking_penalty: bool,
}

/// Where the vehicle is relative to its global route.
#[derive(Debug, Clone, Copy)]
pub struct RouteContext<'a> {
    pub map: &'a LaneMap,
    pub route: &'a RoutePath,
    /// Route arc length of the vehicle's projection.
    pub s_ego: f64,
    /// Signed lateral offset from the route.
    pub lateral: f64,
}

/// Arc-length lookahead distances used to detect an upcoming turn.
pub const TURN_LOOKAHEAD: [f64; 3] = [10.0, 20.0, 30.0];
/// Heading change that counts as a turn.
pub const TURN_ANGLE: f64 = std::f64::consts::FRAC_PI_6;

impl RouteContext<'_> {
    fn lane_width_at(&self, s: f64) -> f64 {
        self.map
            .lane(self.route.lane_at(s))
            .map_or(crate::map::DEFAULT_LANE_WIDTH, |l| l.width())
    }

    fn in_junction(&self, s: f64) -> bool {
        self.map.lane(self.route.lane_at(s)).is_some_and(|l| l.spec.junction)
    }

    /// Turn detection from the route heading at the lookahead points.
    pub fn turn_ahead(&self) -> bool {
        let h0 = self.route.heading(self.s_ego);
        TURN_LOOKAHEAD.iter().any(|d| {
            let s = (self.s_ego + d).min(self.route.length());
            wrap_angle(self.route.heading(s) - h0).abs() >= TURN_ANGLE
        })
    }
}

/// Virtual guidance for the stage whose reference point sits at route arc
/// length `s_ref`.
pub fn build_virtual_fields(ctx: &RouteContext<'_>, s_ref: f64, params: &PFParams) -> VirtualFieldSet {
    let mut out = VirtualFieldSet::default();
    if ctx.in_junction(s_ref) {
        out.fields.push(VirtualField::new(
            ctx.route.point(s_ref),
            ctx.route.heading(s_ref),
            ctx.lane_width_at(s_ref),
            params,
        ));
        return out;
    }
    if !ctx.in_junction(ctx.s_ego) && ctx.turn_ahead() {
        let r_lane = ctx.lane_width_at(ctx.s_ego) / 2.0;
        if ctx.lateral.abs() < r_lane {
            out.lock_lane = true;
        } else {
            out.tracking_penalty = true;
        }
    }
    out
}

/// Markings active at a stage: the virtual pair inside junctions, otherwise
/// every marking of the route's lane group at the reference point.
pub fn stage_markings(ctx: &RouteContext<'_>, s_ref: f64, vset: &VirtualFieldSet) -> Vec<LaneMarking> {
    if let Some(v) = vset.fields.first() {
        return v.markings.to_vec();
    }
    let route_lane = ctx.route.lane_at(s_ref);
    let point = ctx.route.point(s_ref);
    let group = ctx.map.lane_group(route_lane);
    let mut out = Vec::with_capacity(group.len() + 1);
    for (i, id) in group.iter().enumerate() {
        let Some(lane) = ctx.map.lane(*id) else { continue };
        let pr = lane.path.project(point);
        let lock = vset.lock_lane && *id == route_lane;
        let kind = |k: MarkingKind| if lock { MarkingKind::NonCrossable } else { k };
        let make = |side, k| LaneMarking::new(pr.point[0], pr.point[1], pr.heading, side, k, lane.width());
        if i == 0 {
            out.push(make(Side::Left, kind(lane.spec.left_marking)));
        }
        // Each right marking is shared with the next lane of the group.
        let right_kind = match group.get(i + 1) {
            Some(next) if vset.lock_lane && *next == route_lane => MarkingKind::NonCrossable,
            _ => kind(lane.spec.right_marking),
        };
        out.push(make(Side::Right, right_kind));
    }
    out
}
