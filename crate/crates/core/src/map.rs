//! Lane map: centerline polylines, lateral adjacency, successors and marking kinds.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type LaneId = u32;

pub const DEFAULT_LANE_WIDTH: f64 = 3.5;

/// Arc sampling resolution, m.
const ARC_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkingKind {
    Crossable,
    NonCrossable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LaneGeometry {
    Polyline {
        points: Vec<[f64; 2]>,
    },
    Line {
        from: [f64; 2],
        to: [f64; 2],
    },
    /// Circular arc; counter-clockwise when `end_deg > start_deg`.
    Arc {
        center: [f64; 2],
        radius: f64,
        start_deg: f64,
        end_deg: f64,
    },
}

impl LaneGeometry {
    pub fn to_points(&self) -> Vec<[f64; 2]> {
        match self {
            LaneGeometry::Polyline { points } => points.clone(),
            LaneGeometry::Line { from, to } => vec![*from, *to],
            LaneGeometry::Arc {
                center,
                radius,
                start_deg,
                end_deg,
            } => {
                let sweep = (end_deg - start_deg).to_radians();
                let n = ((sweep.abs() * radius) / ARC_STEP).ceil().max(2.0) as usize;
                (0..=n)
                    .map(|i| {
                        let a = start_deg.to_radians() + sweep * i as f64 / n as f64;
                        [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
                    })
                    .collect()
            }
        }
    }
}

fn default_width() -> f64 {
    DEFAULT_LANE_WIDTH
}

fn default_marking() -> MarkingKind {
    MarkingKind::NonCrossable
}

/// Declarative lane description as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub id: LaneId,
    pub geometry: LaneGeometry,
    #[serde(default = "default_width")]
    pub width: f64,
    /// Same-direction neighbour on the left.
    #[serde(default)]
    pub left: Option<LaneId>,
    #[serde(default)]
    pub right: Option<LaneId>,
    #[serde(default)]
    pub successors: Vec<LaneId>,
    #[serde(default = "default_marking")]
    pub left_marking: MarkingKind,
    #[serde(default = "default_marking")]
    pub right_marking: MarkingKind,
    /// Lane inside an unmarked junction area.
    #[serde(default)]
    pub junction: bool,
}

/// Arc-length parameterised polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pts: Vec<[f64; 2]>,
    cum: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point, clamped to `[0, len]`.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the direction of travel.
    pub lateral: f64,
    pub point: [f64; 2],
    pub heading: f64,
    /// Distance beyond the ends when the foot point was clamped.
    pub overshoot: f64,
}

impl Polyline {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().is_none_or(|q| (p[0] - q[0]).hypot(p[1] - q[1]) > 1e-9) {
                pts.push(p);
            }
        }
        if pts.len() < 2 {
            return Err(Error::InvalidParameter(
                "polyline needs at least two distinct points".into(),
            ));
        }
        let mut cum = vec![0.0; pts.len()];
        for i in 1..pts.len() {
            cum[i] = cum[i - 1] + (pts[i][0] - pts[i - 1][0]).hypot(pts[i][1] - pts[i - 1][1]);
        }
        Ok(Self { pts, cum })
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.pts
    }

    /// Cumulative arc length at each vertex.
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.pts.len() - 1;
        match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let seg = self.cum[i + 1] - self.cum[i];
        let t = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s.clamp(0.0, self.length()));
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    pub fn project(&self, p: [f64; 2]) -> Projection {
        self.project_window(p, 0, self.pts.len() - 1)
    }

    /// Projection restricted to segments `[first, last)`.
    fn project_window(&self, p: [f64; 2], first: usize, last: usize) -> Projection {
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for i in first..last {
            let (a, b) = (self.pts[i], self.pts[i + 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let l2 = dx * dx + dy * dy;
            let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0);
            let (fx, fy) = (a[0] + t * dx, a[1] + t * dy);
            let d2 = (p[0] - fx).powi(2) + (p[1] - fy).powi(2);
            if d2 < best.0 {
                best = (d2, i, t);
            }
        }
        let (_, i, t) = best;
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let seg = dx.hypot(dy);
        let heading = dy.atan2(dx);
        let foot = [a[0] + t * dx, a[1] + t * dy];
        let (ux, uy) = (dx / seg, dy / seg);
        let rel = [p[0] - foot[0], p[1] - foot[1]];
        let lateral = ux * rel[1] - uy * rel[0];
        // Longitudinal overshoot past the polyline ends.
        let along = rel[0] * ux + rel[1] * uy;
        let overshoot = if (i == 0 && t == 0.0 && along < 0.0) || (i + 2 == self.pts.len() && t == 1.0 && along > 0.0) {
            along.abs()
        } else {
            0.0
        };
        Projection {
            s: self.cum[i] + t * seg,
            lateral,
            point: foot,
            heading,
            overshoot,
        }
    }

    /// Projection searching only within `window` metres of arc length around `s_hint`.
    pub fn project_near(&self, p: [f64; 2], s_hint: f64, window: f64) -> Projection {
        let first = self.segment_at((s_hint - window).max(0.0));
        let last = (self.segment_at((s_hint + window).min(self.length())) + 1).min(self.pts.len() - 1);
        self.project_window(p, first, last.max(first + 1))
    }

    /// Resample at (approximately) uniform spacing; the spacing is adjusted so
    /// that samples are exactly equidistant along the arc.
    pub fn resample(&self, spacing: f64) -> Vec<[f64; 2]> {
        let len = self.length();
        let n = (len / spacing).round().max(1.0) as usize;
        (0..=n).map(|i| self.point_at(len * i as f64 / n as f64)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub spec: LaneSpec,
    pub path: Polyline,
}

impl Lane {
    pub fn id(&self) -> LaneId {
        self.spec.id
    }
    pub fn width(&self) -> f64 {
        self.spec.width
    }
}

#[derive(Debug, Clone)]
pub struct LaneMap {
    lanes: Vec<Lane>,
    index: BTreeMap<LaneId, usize>,
}

/// Where a point sits on the map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub lane: LaneId,
    pub projection: Projection,
}

impl LaneMap {
    pub fn new(specs: Vec<LaneSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::EmptyMap);
        }
        let mut index = BTreeMap::new();
        let mut lanes = Vec::with_capacity(specs.len());
        for spec in specs {
            if !(spec.width > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "lane {} has non-positive width",
                    spec.id
                )));
            }
            if index.insert(spec.id, lanes.len()).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate lane id {}", spec.id)));
            }
            let path = Polyline::new(spec.geometry.to_points())?;
            lanes.push(Lane { spec, path });
        }
        for lane in &lanes {
            let refs = lane
                .spec
                .left
                .iter()
                .chain(lane.spec.right.iter())
                .chain(lane.spec.successors.iter());
            for r in refs {
                if !index.contains_key(r) {
                    return Err(Error::InvalidParameter(format!(
                        "lane {} references unknown lane {r}",
                        lane.spec.id
                    )));
                }
            }
        }
        Ok(Self { lanes, index })
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn lane(&self, id: LaneId) -> Option<&Lane> {
        self.index.get(&id).map(|&i| &self.lanes[i])
    }

    pub fn specs(&self) -> Vec<LaneSpec> {
        self.lanes.iter().map(|l| l.spec.clone()).collect()
    }

    /// Lateral group of same-direction lanes containing `id`, ordered from the
    /// leftmost to the rightmost.
    pub fn lane_group(&self, id: LaneId) -> Vec<LaneId> {
        let mut left = Vec::new();
        let mut cur = self.lane(id).and_then(|l| l.spec.left);
        while let Some(l) = cur {
            if left.contains(&l) || l == id {
                break;
            }
            left.push(l);
            cur = self.lane(l).and_then(|x| x.spec.left);
        }
        left.reverse();
        left.push(id);
        let mut cur = self.lane(id).and_then(|l| l.spec.right);
        while let Some(r) = cur {
            if left.contains(&r) {
                break;
            }
            left.push(r);
            cur = self.lane(r).and_then(|x| x.spec.right);
        }
        left
    }

    /// Nearest lane whose centerline projects onto the point without overshoot.
    pub fn locate(&self, p: [f64; 2]) -> Option<Location> {
        let mut best: Option<Location> = None;
        for lane in &self.lanes {
            let pr = lane.path.project(p);
            if pr.overshoot > 1e-6 {
                continue;
            }
            if best.is_none_or(|b| pr.lateral.abs() < b.projection.lateral.abs()) {
                best = Some(Location {
                    lane: lane.id(),
                    projection: pr,
                });
            }
        }
        best
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// `a` shifted by a multiple of 2π to lie closest to `reference`.
pub fn unwrap_near(a: f64, reference: f64) -> f64 {
    reference + wrap_angle(a - reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(id: LaneId, y: f64, left: Option<LaneId>, right: Option<LaneId>) -> LaneSpec {
        LaneSpec {
            id,
            geometry: LaneGeometry::Line {
                from: [0.0, y],
                to: [100.0, y],
            },
            width: 3.5,
            left,
            right,
            successors: vec![],
            left_marking: MarkingKind::Crossable,
            right_marking: MarkingKind::Crossable,
            junction: false,
        }
    }

    #[test]
    fn projection_reports_signed_lateral_offset() {
        let pl = Polyline::new(vec![[0.0, 0.0], [10.0, 0.0]]).unwrap();
        let p = pl.project([4.0, 1.5]);
        assert!((p.s - 4.0).abs() < 1e-12);
        assert!((p.lateral - 1.5).abs() < 1e-12);
        assert_eq!(p.overshoot, 0.0);
        let p = pl.project([12.0, -1.0]);
        assert!((p.lateral + 1.0).abs() < 1e-12);
        assert!((p.overshoot - 2.0).abs() < 1e-12);
    }

    #[test]
    fn arc_geometry_is_counter_clockwise() {
        let g = LaneGeometry::Arc {
            center: [0.0, 0.0],
            radius: 10.0,
            start_deg: 0.0,
            end_deg: 90.0,
        };
        let pts = g.to_points();
        assert!((pts[0][0] - 10.0).abs() < 1e-12);
        assert!((pts.last().unwrap()[1] - 10.0).abs() < 1e-12);
        let pl = Polyline::new(pts).unwrap();
        assert!((pl.length() - 10.0 * std::f64::consts::FRAC_PI_2).abs() < 0.01);
        assert!((pl.heading_at(0.0) - std::f64::consts::FRAC_PI_2).abs() < 0.05);
    }

    #[test]
    fn lane_group_orders_left_to_right() {
        let map = LaneMap::new(vec![
            straight(1, 3.5, None, Some(2)),
            straight(2, 0.0, Some(1), Some(3)),
            straight(3, -3.5, Some(2), None),
        ])
        .unwrap();
        assert_eq!(map.lane_group(2), vec![1, 2, 3]);
        assert_eq!(map.lane_group(3), vec![1, 2, 3]);
        let loc = map.locate([50.0, -3.0]).unwrap();
        assert_eq!(loc.lane, 3);
    }

    #[test]
    fn unknown_references_rejected() {
        assert!(LaneMap::new(vec![straight(1, 0.0, Some(9), None)]).is_err());
        assert!(matches!(LaneMap::new(vec![]), Err(Error::EmptyMap)));
    }

    #[test]
    fn angle_helpers() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((unwrap_near(-3.1, 3.1) - (std::f64::consts::TAU - 3.1)).abs() < 1e-12);
    }
}
