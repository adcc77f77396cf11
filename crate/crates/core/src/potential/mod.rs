//! Artificial potential fields for lane markings, vehicles, pedestrians,
//! traffic lights and time to collision.
//!
//! Every field is written once against [`Real`] so the solver can evaluate it
//! with plain floats, dual numbers or second-order jets.

mod params;
pub mod scene;

pub use params::PFParams;
pub use scene::{
    build_virtual_fields, stage_markings, LightZone, ObstacleHorizon, PotentialScene, RouteContext, StageScene,
    VirtualField, VirtualFieldSet,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet, Real};
use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::map::MarkingKind;

/// Exact-coincidence threshold for the checked field operations.
const COINCIDENCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// A lane marking referenced to the centerline state `p^i` of the lane it bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneMarking {
    pub px: f64,
    pub py: f64,
    pub phi: f64,
    pub side: Side,
    pub kind: MarkingKind,
    /// Width of the bounded lane; the marking sits at `width / 2` from the centerline.
    pub width: f64,
}

impl LaneMarking {
    pub fn new(px: f64, py: f64, phi: f64, side: Side, kind: MarkingKind, width: f64) -> Self {
        Self {
            px,
            py,
            phi,
            side,
            kind,
            width,
        }
    }
}

/// Pose and speed of a surrounding vehicle at one horizon stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstaclePose {
    pub px: f64,
    pub py: f64,
    pub phi: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleFieldVariant {
    Circles,
    #[default]
    Ellipse,
}

impl std::str::FromStr for VehicleFieldVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circles" => Ok(Self::Circles),
            "ellipse" => Ok(Self::Ellipse),
            other => Err(Error::InvalidParameter(format!(
                "unknown vehicle field variant '{other}'"
            ))),
        }
    }
}

/// Which optional field families are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldOptions {
    pub variant: VehicleFieldVariant,
    pub ttc: bool,
}

impl Default for FieldOptions {
    fn default() -> Self {
        Self {
            variant: VehicleFieldVariant::Ellipse,
            ttc: true,
        }
    }
}

/// The part of the ego state the fields depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ego<T> {
    pub px: T,
    pub py: T,
    pub phi: T,
    pub vx: T,
}

impl Ego<f64> {
    pub fn from_state(x: &VehicleState) -> Self {
        Self {
            px: x.px,
            py: x.py,
            phi: x.phi,
            vx: x.vx,
        }
    }
}

impl Ego<Jet<4>> {
    /// Jet seeded in (px, py, phi, vx).
    pub fn seeded(x: &VehicleState) -> Self {
        Self {
            px: Jet::var(x.px, 0),
            py: Jet::var(x.py, 1),
            phi: Jet::var(x.phi, 2),
            vx: Jet::var(x.vx, 3),
        }
    }
}

impl<T: Real> Ego<T> {
    /// Front and rear wrapping-circle centers.
    pub fn circles(&self, r_v: f64) -> [[T; 2]; 2] {
        let (c, s) = (self.phi.cos() * r_v, self.phi.sin() * r_v);
        [[self.px + c, self.py + s], [self.px - c, self.py - s]]
    }
}

/// `x^{-p}` above `floor`, continued by its tangent line below, so the value
/// stays finite and the derivative stays continuous.
#[inline]
fn inv_pow_floor<T: Real>(x: T, p: f64, floor: f64) -> T {
    if x.val() >= floor {
        x.powf(-p)
    } else {
        let f = floor.powf(-p);
        (x - floor) * (-p * f / floor) + f
    }
}

/// Signed lateral distance `s_R` from the vehicle to the marking; positive
/// while the vehicle is on the lane side of the marking.
pub fn lateral_distance_generic<T: Real>(px: T, py: T, m: &LaneMarking) -> T {
    let (s, c) = m.phi.sin_cos();
    let center = -m.px * s + m.py * c;
    let ego = py * c - px * s;
    match m.side {
        Side::Left => -ego + (center + m.width / 2.0),
        Side::Right => ego - (center - m.width / 2.0),
    }
}

pub fn lateral_distance(state: &VehicleState, marking: &LaneMarking) -> f64 {
    lateral_distance_generic(state.px, state.py, marking)
}

pub fn noncrossable_generic<T: Real>(s: T, p: &PFParams) -> T {
    let v = s.val();
    if v <= 0.1 {
        T::cst(p.m_s())
    } else if v < 1.5 {
        s.powf(-p.b_nr) * p.a_nr - p.e_s()
    } else {
        T::cst(0.0)
    }
}

pub fn f_noncrossable(s: f64, params: &PFParams) -> f64 {
    noncrossable_generic(s, params)
}

pub fn crossable_generic<T: Real>(s: T, p: &PFParams) -> T {
    if s.val() < p.b_cr {
        (s - p.b_cr).square() * p.a_cr
    } else {
        T::cst(0.0)
    }
}

pub fn f_crossable(s: f64, params: &PFParams) -> f64 {
    crossable_generic(s, params)
}

/// Field of one marking. Crossable markings act on the unsigned distance so
/// that a completed lane change is not penalised from the far side.
pub fn marking_generic<T: Real>(ego: &Ego<T>, m: &LaneMarking, p: &PFParams) -> T {
    let s = lateral_distance_generic(ego.px, ego.py, m);
    match m.kind {
        MarkingKind::NonCrossable => noncrossable_generic(s, p),
        MarkingKind::Crossable => {
            let d = if s.val() < 0.0 { -s } else { s };
            crossable_generic(d, p)
        }
    }
}

pub fn vehicle_circles_generic<T: Real>(ego: &Ego<T>, ob: &ObstaclePose, p: &PFParams) -> T {
    let (c, s) = (ob.phi.cos() * p.r_v, ob.phi.sin() * p.r_v);
    let obs = [[ob.px + c, ob.py + s], [ob.px - c, ob.py - s]];
    let floor = p.dist_floor * p.dist_floor;
    let mut acc = T::cst(0.0);
    for e in ego.circles(p.r_v) {
        for o in obs {
            let d2 = (e[0] - o[0]).square() + (e[1] - o[1]).square();
            acc = acc + inv_pow_floor(d2, p.b_v, floor) * p.a_v;
        }
    }
    acc
}

/// Ellipse field of one obstacle seen from a single point, with the offset
/// expressed in the obstacle's body frame.
pub fn ellipse_term_generic<T: Real>(x: T, y: T, ob: &ObstaclePose, p: &PFParams) -> T {
    let (s, c) = ob.phi.sin_cos();
    let (ra2, rb2) = (p.r_a * p.r_a, p.r_b * p.r_b);
    let (dx, dy) = (x - ob.px, y - ob.py);
    let xb = dx * c + dy * s;
    let yb = dy * c - dx * s;
    let q = xb.square() * rb2 + yb.square() * ra2;
    inv_pow_floor(q, p.b_v, p.dist_floor * p.dist_floor * rb2) * (p.a_v * ra2 * rb2)
}

pub fn vehicle_ellipse_generic<T: Real>(ego: &Ego<T>, ob: &ObstaclePose, p: &PFParams) -> T {
    let [a, b] = ego.circles(p.r_v);
    ellipse_term_generic(a[0], a[1], ob, p) + ellipse_term_generic(b[0], b[1], ob, p)
}

pub fn vehicle_generic<T: Real>(ego: &Ego<T>, ob: &ObstaclePose, p: &PFParams, variant: VehicleFieldVariant) -> T {
    match variant {
        VehicleFieldVariant::Circles => vehicle_circles_generic(ego, ob, p),
        VehicleFieldVariant::Ellipse => vehicle_ellipse_generic(ego, ob, p),
    }
}

fn check_distinct(points: &[[f64; 2]], others: &[[f64; 2]]) -> Result<()> {
    for a in points {
        for b in others {
            let d = (a[0] - b[0]).hypot(a[1] - b[1]);
            if d <= COINCIDENCE {
                return Err(Error::CoincidentCenters(d));
            }
        }
    }
    Ok(())
}

pub fn f_vehicle_circles(ego: &VehicleState, obstacle: &ObstaclePose, params: &PFParams) -> Result<f64> {
    let e = Ego::from_state(ego);
    let o = Ego {
        px: obstacle.px,
        py: obstacle.py,
        phi: obstacle.phi,
        vx: obstacle.speed,
    };
    check_distinct(&e.circles(params.r_v), &o.circles(params.r_v))?;
    Ok(vehicle_circles_generic(&e, obstacle, params))
}

pub fn f_vehicle_ellipse_term(point: [f64; 2], obstacle: &ObstaclePose, params: &PFParams) -> Result<f64> {
    check_distinct(&[point], &[[obstacle.px, obstacle.py]])?;
    Ok(ellipse_term_generic(point[0], point[1], obstacle, params))
}

pub fn f_vehicle_ellipse(ego: &VehicleState, obstacle: &ObstaclePose, params: &PFParams) -> Result<f64> {
    let e = Ego::from_state(ego);
    check_distinct(&e.circles(params.r_v), &[[obstacle.px, obstacle.py]])?;
    Ok(vehicle_ellipse_generic(&e, obstacle, params))
}

/// Exponential time-to-collision term alone (without the leader's vehicle field).
pub fn ttc_term_generic<T: Real>(ego: &Ego<T>, leader: &ObstaclePose, p: &PFParams) -> T {
    let closing = ego.vx - leader.speed;
    let s = if closing.val() <= 0.0 {
        T::cst(-p.s_cap)
    } else {
        let d2 = (ego.px - leader.px).square() + (ego.py - leader.py).square();
        let s = -(d2 / closing.square());
        if s.val() < -p.s_cap {
            T::cst(-p.s_cap)
        } else {
            s
        }
    };
    (((s + p.t_alarm * p.t_alarm) * p.b_t).exp() - 1.0) * p.a_t
}

/// Time-to-collision field: exponential term plus the leader's ellipse field.
pub fn f_ttc(ego: &VehicleState, leader: &ObstaclePose, params: &PFParams) -> f64 {
    let e = Ego::from_state(ego);
    ttc_term_generic(&e, leader, params) + vehicle_ellipse_generic(&e, leader, params)
}

pub fn pedestrian_term_generic<T: Real>(x: T, y: T, ped: [f64; 2], p: &PFParams) -> T {
    let d2 = (x - ped[0]).square() + (y - ped[1]).square();
    inv_pow_floor(d2, p.b_pd, p.dist_floor * p.dist_floor) * p.a_pd
}

/// Pedestrian field summed over both ego wrapping circles.
pub fn pedestrian_generic<T: Real>(ego: &Ego<T>, ped: [f64; 2], p: &PFParams) -> T {
    let [a, b] = ego.circles(p.r_v);
    pedestrian_term_generic(a[0], a[1], ped, p) + pedestrian_term_generic(b[0], b[1], ped, p)
}

/// Pedestrian field from a single ego reference point.
pub fn f_pedestrian_point(point: [f64; 2], ped: [f64; 2], params: &PFParams) -> Result<f64> {
    check_distinct(&[point], &[ped])?;
    Ok(pedestrian_term_generic(point[0], point[1], ped, params))
}

pub fn f_pedestrian(ego: &VehicleState, ped: [f64; 2], params: &PFParams) -> Result<f64> {
    let e = Ego::from_state(ego);
    check_distinct(&e.circles(params.r_v), &[ped])?;
    Ok(pedestrian_generic(&e, ped, params))
}

/// Longitudinal distance to the stop line along the lane direction.
pub fn stop_line_distance(px: f64, py: f64, zone: &LightZone) -> f64 {
    let (s, c) = zone.phi.sin_cos();
    (zone.stop[0] - px) * c + (zone.stop[1] - py) * s
}

pub fn traffic_light_generic<T: Real>(ego: &Ego<T>, zone: &LightZone, p: &PFParams) -> T {
    if !zone.red {
        return T::cst(0.0);
    }
    let (s, c) = zone.phi.sin_cos();
    let dx = (-ego.px + zone.stop[0]) * c + (-ego.py + zone.stop[1]) * s;
    let left = LaneMarking::new(
        zone.stop[0],
        zone.stop[1],
        zone.phi,
        Side::Left,
        MarkingKind::NonCrossable,
        zone.width,
    );
    let right = LaneMarking {
        side: Side::Right,
        ..left
    };
    let dyl = lateral_distance_generic(ego.px, ego.py, &left);
    let dyr = lateral_distance_generic(ego.px, ego.py, &right);
    let f = p.dist_floor;
    inv_pow_floor(dx, 1.0, f) * p.a_tl1 + inv_pow_floor(dyl, 1.0, f) * p.a_tl2 + inv_pow_floor(dyr, 1.0, f) * p.a_tl2
}

/// Traffic-light field; zero when green or once the vehicle is past the stop line.
pub fn f_trafficlight(ego: &VehicleState, zone: &LightZone, params: &PFParams) -> f64 {
    if stop_line_distance(ego.px, ego.py, zone) <= 0.0 {
        return 0.0;
    }
    traffic_light_generic(&Ego::from_state(ego), zone, params)
}

/// Per-family field values at one stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldTerms {
    pub nr: f64,
    pub cr: f64,
    pub v: f64,
    pub tl: f64,
    pub ttc: f64,
    pub pd: f64,
}

impl FieldTerms {
    pub fn total(&self) -> f64 {
        self.nr + self.cr + self.ttc + self.v + self.pd + self.tl
    }

    pub fn add(&mut self, o: &FieldTerms) {
        self.nr += o.nr;
        self.cr += o.cr;
        self.v += o.v;
        self.tl += o.tl;
        self.ttc += o.ttc;
        self.pd += o.pd;
    }
}

/// Sum of all active fields at one stage. The leader enters the vehicle sum
/// once; the TTC family contributes only its exponential term.
pub fn total_field_generic<T: Real>(stage: &StageScene, ego: &Ego<T>, p: &PFParams, opts: FieldOptions) -> T {
    let mut acc = T::cst(0.0);
    for m in &stage.markings {
        acc = acc + marking_generic(ego, m, p);
    }
    if opts.ttc {
        if let Some(l) = stage.leader {
            acc = acc + ttc_term_generic(ego, &stage.vehicles[l], p);
        }
    }
    for ob in &stage.vehicles {
        acc = acc + vehicle_generic(ego, ob, p, opts.variant);
    }
    for ped in &stage.pedestrians {
        acc = acc + pedestrian_generic(ego, *ped, p);
    }
    if let Some(zone) = &stage.light {
        acc = acc + traffic_light_generic(ego, zone, p);
    }
    acc
}

pub fn total_field(stage: &StageScene, ego: &VehicleState, p: &PFParams, opts: FieldOptions) -> f64 {
    total_field_generic(stage, &Ego::from_state(ego), p, opts)
}

/// Value, gradient and Hessian in (px, py, phi, vx).
pub fn total_field_jet(stage: &StageScene, ego: &VehicleState, p: &PFParams, opts: FieldOptions) -> Jet<4> {
    total_field_generic(stage, &Ego::seeded(ego), p, opts)
}

/// The same sum split by family, for logging.
pub fn field_terms(stage: &StageScene, ego: &VehicleState, p: &PFParams, opts: FieldOptions) -> FieldTerms {
    let e = Ego::from_state(ego);
    let mut t = FieldTerms::default();
    for m in &stage.markings {
        let v = marking_generic(&e, m, p);
        match m.kind {
            MarkingKind::NonCrossable => t.nr += v,
            MarkingKind::Crossable => t.cr += v,
        }
    }
    if opts.ttc {
        if let Some(l) = stage.leader {
            t.ttc = ttc_term_generic(&e, &stage.vehicles[l], p);
        }
    }
    t.v = stage
        .vehicles
        .iter()
        .map(|ob| vehicle_generic(&e, ob, p, opts.variant))
        .sum();
    t.pd = stage.pedestrians.iter().map(|q| pedestrian_generic(&e, *q, p)).sum();
    t.tl = stage.light.as_ref().map_or(0.0, |z| traffic_light_generic(&e, z, p));
    t
}

#[cfg(test)]
mod tests;
