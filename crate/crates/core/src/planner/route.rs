//! Smoothed global route and velocity-aware reference sampling.

use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::map::{unwrap_near, LaneId, Polyline};

use super::graph::Waypoint;
use super::spline::PathSpline;

/// Waypoints closer than this are merged before splining (lane joints).
const MERGE_DIST: f64 = 0.3;
/// Waypoints dropped on each side of a lane-change edge so the spline blends smoothly.
const LANE_CHANGE_TRIM: usize = 2;
/// Resolution of the dense sampling used for projection and the speed profile.
const DENSE_STEP: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedProfileOptions {
    /// Lateral acceleration allowed in curves, m/s².
    pub lat_accel: f64,
    /// Deceleration used to propagate curve limits backwards, m/s².
    pub decel: f64,
}

impl Default for SpeedProfileOptions {
    fn default() -> Self {
        Self {
            lat_accel: 3.0,
            decel: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteProjection {
    pub s: f64,
    pub lateral: f64,
    pub point: [f64; 2],
    pub heading: f64,
}

/// Global route after smoothing: a spline path plus the lane each part belongs to.
#[derive(Debug, Clone)]
pub struct RoutePath {
    pub spline: PathSpline,
    knot_s: Vec<f64>,
    knot_lanes: Vec<LaneId>,
    dense: Polyline,
    dense_u: Vec<f64>,
    speed_cap: Vec<f64>,
}

impl RoutePath {
    pub fn from_waypoints(route: &[Waypoint]) -> Result<Self> {
        Self::with_options(route, SpeedProfileOptions::default())
    }

    pub fn with_options(route: &[Waypoint], opts: SpeedProfileOptions) -> Result<Self> {
        let mut keep = vec![true; route.len()];
        for (k, w) in route.windows(2).enumerate() {
            let lane_change = w[0].left == Some(w[1].id) || w[0].right == Some(w[1].id);
            if lane_change {
                let lo = (k + 1).saturating_sub(LANE_CHANGE_TRIM);
                let hi = (k + LANE_CHANGE_TRIM).min(route.len() - 1);
                for flag in keep.iter_mut().take(hi + 1).skip(lo) {
                    *flag = false;
                }
            }
        }
        // Endpoints always survive.
        if let Some(f) = keep.first_mut() {
            *f = true;
        }
        if let Some(l) = keep.last_mut() {
            *l = true;
        }
        let mut pts: Vec<[f64; 2]> = Vec::new();
        let mut lanes: Vec<LaneId> = Vec::new();
        for (w, _) in route.iter().zip(&keep).filter(|(_, k)| **k) {
            let p = [w.px, w.py];
            if let Some(q) = pts.last() {
                if (p[0] - q[0]).hypot(p[1] - q[1]) < MERGE_DIST {
                    *lanes.last_mut().unwrap() = w.lane_id;
                    continue;
                }
            }
            pts.push(p);
            lanes.push(w.lane_id);
        }
        if pts.len() < 3 {
            return Err(Error::Precondition(format!(
                "route too short to smooth: {} distinct waypoints",
                pts.len()
            )));
        }
        let spline = PathSpline::fit(&pts)?;
        let knot_s = spline.sx.x.clone();
        let len = spline.length();
        let m = (len / DENSE_STEP).ceil() as usize;
        let dense_u: Vec<f64> = (0..=m).map(|j| len * j as f64 / m as f64).collect();
        let dense = Polyline::new(dense_u.iter().map(|&u| spline.point(u)).collect())?;

        let mut speed_cap: Vec<f64> = dense_u
            .iter()
            .map(|&u| {
                let k = spline.curvature(u).abs();
                if k > 1e-6 {
                    (opts.lat_accel / k).sqrt()
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        for j in (0..m).rev() {
            let ds = dense_u[j + 1] - dense_u[j];
            let reachable = (speed_cap[j + 1].powi(2) + 2.0 * opts.decel * ds).sqrt();
            speed_cap[j] = speed_cap[j].min(reachable);
        }
        Ok(Self {
            spline,
            knot_s,
            knot_lanes: lanes,
            dense,
            dense_u,
            speed_cap,
        })
    }

    pub fn length(&self) -> f64 {
        self.spline.length()
    }

    pub fn point(&self, s: f64) -> [f64; 2] {
        self.spline.point(s.clamp(0.0, self.length()))
    }

    pub fn heading(&self, s: f64) -> f64 {
        self.spline.heading(s.clamp(0.0, self.length()))
    }

    pub fn curvature(&self, s: f64) -> f64 {
        self.spline.curvature(s.clamp(0.0, self.length()))
    }

    /// Lane the route follows at arc length `s`.
    pub fn lane_at(&self, s: f64) -> LaneId {
        let i = match self.knot_s.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        self.knot_lanes[i.min(self.knot_lanes.len() - 1)]
    }

    /// Curve and braking limited speed at `s`.
    pub fn speed_cap(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let j = self.dense_index(s);
        let (u0, u1) = (self.dense_u[j], self.dense_u[j + 1]);
        let t = (s - u0) / (u1 - u0);
        let (a, b) = (self.speed_cap[j], self.speed_cap[j + 1]);
        if a.is_infinite() || b.is_infinite() {
            a.min(b)
        } else {
            a + t * (b - a)
        }
    }

    fn dense_index(&self, u: f64) -> usize {
        let n = self.dense_u.len() - 1;
        match self.dense_u.binary_search_by(|v| v.total_cmp(&u)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Project a point onto the route. With a hint only the neighbourhood of the
    /// hinted arc length is searched, which keeps loops and U-turns unambiguous.
    pub fn project(&self, p: [f64; 2], hint: Option<f64>) -> RouteProjection {
        let pr = match hint {
            Some(h) => self.dense.project_near(p, h, 20.0),
            None => self.dense.project(p),
        };
        let cum = self.dense.cumulative();
        let j = match cum.binary_search_by(|v| v.total_cmp(&pr.s)) {
            Ok(i) => i.min(cum.len() - 2),
            Err(i) => i.saturating_sub(1).min(cum.len() - 2),
        };
        let frac = (pr.s - cum[j]) / (cum[j + 1] - cum[j]);
        let s = self.dense_u[j] + frac * (self.dense_u[j + 1] - self.dense_u[j]);
        RouteProjection {
            s,
            lateral: pr.lateral,
            point: pr.point,
            heading: self.heading(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    /// Speed used for the first spacing when the vehicle is slower, m/s.
    pub v_floor: f64,
    /// Ramp rate from the current speed toward the target, m/s².
    pub ramp: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            v_floor: 1.0,
            ramp: 2.0,
        }
    }
}

/// Reference states `x_ref,τ` for τ = 1..N.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub states: Vec<VehicleState>,
    /// Route arc length of each point.
    pub s: Vec<f64>,
    /// Arc length of the vehicle's own projection.
    pub s0: f64,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Sample `n` reference points ahead of the vehicle. The first spacing is
/// `max(v, v_floor)·ts`; the speed then ramps toward `min(v_target, cap(s))`.
/// Past the route end every point repeats the terminal point with zero speed.
pub fn sample_reference(
    route: &RoutePath,
    state: &VehicleState,
    v_target: f64,
    ts: f64,
    n: usize,
    s_hint: Option<f64>,
    opts: ReferenceOptions,
) -> ReferenceTrajectory {
    let s0 = route.project([state.px, state.py], s_hint).s;
    let len = route.length();
    let mut states = Vec::with_capacity(n);
    let mut ss = Vec::with_capacity(n);
    let mut v = state.vx.max(opts.v_floor);
    let mut s = s0;
    let mut heading_ref = state.phi;
    for k in 0..n {
        if k > 0 {
            let goal = v_target.min(route.speed_cap(s));
            let dv = opts.ramp * ts;
            v = if v < goal {
                (v + dv).min(goal)
            } else {
                (v - dv).max(goal)
            };
        }
        s += v * ts;
        let (s_k, v_k) = if s >= len { (len, 0.0) } else { (s, v) };
        let p = route.point(s_k);
        let phi = unwrap_near(route.heading(s_k), heading_ref);
        heading_ref = phi;
        states.push(VehicleState {
            px: p[0],
            py: p[1],
            phi,
            vx: v_k,
            vy: 0.0,
            omega: route.curvature(s_k) * v_k,
        });
        ss.push(s_k);
    }
    ReferenceTrajectory { states, s: ss, s0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{LaneGeometry, LaneMap, LaneSpec, MarkingKind};
    use crate::planner::graph::{astar_route, build_graph, Pose};

    fn straight_map(len: f64) -> LaneMap {
        LaneMap::new(vec![LaneSpec {
            id: 1,
            geometry: LaneGeometry::Line {
                from: [0.0, 0.0],
                to: [len, 0.0],
            },
            width: 3.5,
            left: None,
            right: None,
            successors: vec![],
            left_marking: MarkingKind::NonCrossable,
            right_marking: MarkingKind::NonCrossable,
            junction: false,
        }])
        .unwrap()
    }

    fn straight_route(len: f64) -> RoutePath {
        let map = straight_map(len);
        let g = build_graph(&map, 2.0).unwrap();
        let wps = astar_route(&g, Pose::new(0.0, 0.0, 0.0), Pose::new(len, 0.0, 0.0), 5.0).unwrap();
        RoutePath::from_waypoints(&wps).unwrap()
    }

    fn at(x: f64, v: f64) -> VehicleState {
        VehicleState {
            px: x,
            py: 0.0,
            phi: 0.0,
            vx: v,
            vy: 0.0,
            omega: 0.0,
        }
    }

    #[test]
    fn constant_speed_spacing_is_speed_times_ts() {
        let r = straight_route(100.0);
        let refs = sample_reference(&r, &at(10.0, 10.0), 10.0, 0.05, 10, None, ReferenceOptions::default());
        assert_eq!(refs.len(), 10);
        let mut prev = 10.0;
        for st in &refs.states {
            assert!((st.px - prev - 0.5).abs() < 1e-6);
            assert!(st.py.abs() < 1e-12);
            assert_eq!(st.vx, 10.0);
            prev = st.px;
        }
    }

    #[test]
    fn standstill_first_spacing_uses_speed_floor() {
        let r = straight_route(100.0);
        let refs = sample_reference(&r, &at(20.0, 0.0), 10.0, 0.05, 5, None, ReferenceOptions::default());
        assert!((refs.states[0].px - 20.05).abs() < 1e-9);
        // Second point ramps by 2 m/s² · 0.05 s.
        assert!((refs.states[1].px - refs.states[0].px - 1.1 * 0.05).abs() < 1e-9);
    }

    #[test]
    fn truncation_repeats_terminal_point() {
        let r = straight_route(40.0);
        let refs = sample_reference(&r, &at(40.0, 10.0), 10.0, 0.05, 8, None, ReferenceOptions::default());
        for st in &refs.states {
            assert!((st.px - 40.0).abs() < 1e-9);
            assert_eq!(st.vx, 0.0);
        }
    }

    #[test]
    fn lane_change_route_is_smooth_and_tracks_lanes() {
        let spec = |id, y: f64, left, right| LaneSpec {
            id,
            geometry: LaneGeometry::Line {
                from: [0.0, y],
                to: [60.0, y],
            },
            width: 3.5,
            left,
            right,
            successors: vec![],
            left_marking: MarkingKind::Crossable,
            right_marking: MarkingKind::Crossable,
            junction: false,
        };
        let map = LaneMap::new(vec![spec(1, 3.5, None, Some(2)), spec(2, 0.0, Some(1), None)]).unwrap();
        let g = build_graph(&map, 2.0).unwrap();
        let wps = astar_route(&g, Pose::new(0.0, 0.0, 0.0), Pose::new(60.0, 3.5, 0.0), 5.0).unwrap();
        let r = RoutePath::from_waypoints(&wps).unwrap();
        assert_eq!(r.lane_at(0.0), 2);
        assert_eq!(r.lane_at(r.length()), 1);
        let max_k = (0..=200)
            .map(|i| r.curvature(r.length() * i as f64 / 200.0).abs())
            .fold(0.0, f64::max);
        assert!(max_k < 0.5, "{max_k}");
    }

    #[test]
    fn projection_with_hint_and_speed_cap() {
        let pts: Vec<[f64; 2]> = (0..=60)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / 60.0;
                [10.0 * a.cos(), 10.0 * a.sin()]
            })
            .collect();
        let wps: Vec<Waypoint> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| Waypoint {
                id: i,
                px: p[0],
                py: p[1],
                phi: 0.0,
                lane_id: 7,
                predecessor: None,
                successor: None,
                left: None,
                right: None,
            })
            .collect();
        let r = RoutePath::from_waypoints(&wps).unwrap();
        let pr = r.project([0.0, 11.0], Some(15.0));
        assert!((pr.s - r.length() / 2.0).abs() < 0.05);
        assert!((pr.lateral + 1.0).abs() < 0.01);
        let cap = r.speed_cap(r.length() / 2.0);
        assert!((cap - 30.0f64.sqrt()).abs() < 0.1, "{cap}");
    }
}
