use super::*;
use crate::map::{LaneGeometry, LaneMap, LaneSpec};
use crate::planner::{astar_route, build_graph, Pose, RoutePath};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{FRAC_PI_2, PI};

fn p() -> PFParams {
    PFParams::default()
}

fn state(px: f64, py: f64, phi: f64, vx: f64) -> VehicleState {
    VehicleState {
        px,
        py,
        phi,
        vx,
        vy: 0.0,
        omega: 0.0,
    }
}

fn ob(px: f64, py: f64, phi: f64, speed: f64) -> ObstaclePose {
    ObstaclePose { px, py, phi, speed }
}

fn left_marking(phi: f64, kind: MarkingKind) -> LaneMarking {
    LaneMarking::new(0.0, 0.0, phi, Side::Left, kind, 3.5)
}

#[test]
fn lateral_distance_on_straight_and_rotated_lanes() {
    let m = left_marking(0.0, MarkingKind::NonCrossable);
    assert_eq!(lateral_distance(&state(0.0, 0.0, 0.0, 0.0), &m), 1.75);
    assert_eq!(lateral_distance(&state(7.0, 1.75, 0.0, 0.0), &m), 0.0);
    let r = left_marking(FRAC_PI_2, MarkingKind::NonCrossable);
    assert!((lateral_distance(&state(0.0, 0.0, FRAC_PI_2, 0.0), &r) - 1.75).abs() < 1e-15);
    // Driving north, the left marking lies to the west.
    assert!(lateral_distance(&state(-1.75, 3.0, FRAC_PI_2, 0.0), &r).abs() < 1e-12);
    let right = LaneMarking { side: Side::Right, ..m };
    assert_eq!(lateral_distance(&state(0.0, -1.75, 0.0, 0.0), &right), 0.0);
}

#[test]
fn noncrossable_values() {
    let p = p();
    assert_eq!(f_noncrossable(2.0, &p), 0.0);
    assert!((f_noncrossable(1.0, &p) - 55.555_555_555_555_555).abs() < 1e-9);
    assert!((f_noncrossable(0.05, &p) - 9955.555_555_555_555).abs() < 1e-9);
    let gap = |b: f64, eps: f64| (f_noncrossable(b - eps, &p) - f_noncrossable(b + eps, &p)).abs();
    assert!(gap(1.5, 1e-6) <= 1e-3);
    // The slope at 0.1 is -2e5, so the two-sided gap is about 2e5 * eps and
    // vanishes with eps: the plateau joins continuously.
    for eps in [1e-6, 1e-8, 1e-10] {
        assert!(
            (gap(0.1, eps) - 2e5 * eps).abs() <= 1e-3 * 2e5 * eps + 1e-9,
            "{}",
            gap(0.1, eps)
        );
    }
    let mut prev = f64::INFINITY;
    for i in 1..140 {
        let v = f_noncrossable(0.1 + 0.01 * i as f64, &p);
        assert!(v < prev);
        prev = v;
    }
}

#[test]
fn crossable_values() {
    let p = p();
    assert_eq!(f_crossable(0.5, &p), 0.0);
    assert_eq!(f_crossable(0.0, &p), 2.5);
    assert_eq!(f_crossable(0.25, &p), 0.625);
    assert_eq!(f_crossable(3.0, &p), 0.0);
    assert!((f_crossable(0.5 - 1e-6, &p) - f_crossable(0.5 + 1e-6, &p)).abs() <= 1e-3);
}

#[test]
fn crossable_marking_is_symmetric_about_the_line() {
    let p = p();
    let m = left_marking(0.0, MarkingKind::Crossable);
    let a = marking_generic(&Ego::from_state(&state(0.0, 1.5, 0.0, 0.0)), &m, &p);
    let b = marking_generic(&Ego::from_state(&state(0.0, 2.0, 0.0, 0.0)), &m, &p);
    assert!((a - b).abs() < 1e-12 && a > 0.0);
}

#[test]
fn circle_field_values() {
    let p = p();
    let v = f_vehicle_circles(&state(0.0, 0.0, 0.0, 0.0), &ob(10.0, 0.0, 0.0, 0.0), &p).unwrap();
    // Pair distances 7.2, 10, 10, 12.8.
    assert!((v - 22.696_819_540_895_061).abs() < 1e-10, "{v}");
    let swapped = f_vehicle_circles(&state(10.0, 0.0, 0.0, 0.0), &ob(0.0, 0.0, 0.0, 0.0), &p).unwrap();
    assert!((v - swapped).abs() < 1e-12);
    assert!(f_vehicle_circles(&state(0.0, 0.0, 0.0, 0.0), &ob(1000.0, 0.0, 0.3, 0.0), &p).unwrap() < 0.01);
    assert!(matches!(
        f_vehicle_circles(&state(0.0, 0.0, 0.0, 0.0), &ob(0.0, 0.0, 0.0, 0.0), &p),
        Err(Error::CoincidentCenters(_))
    ));
}

#[test]
fn ellipse_field_values() {
    let p = p();
    let o = ob(0.0, 0.0, 0.0, 0.0);
    assert!((f_vehicle_ellipse_term([4.0, 0.0], &o, &p).unwrap() - 180.0).abs() < 1e-9);
    assert!((f_vehicle_ellipse_term([0.0, 4.0], &o, &p).unwrap() - 31.25).abs() < 1e-9);
    assert!(f_vehicle_ellipse_term([0.0, 0.0], &o, &p).is_err());
}

#[test]
fn ellipse_is_invariant_under_rigid_rotation() {
    let p = p();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let o = ob(
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-PI..PI),
            0.0,
        );
        let e = state(
            o.px + rng.gen_range(-8.0..8.0),
            o.py + rng.gen_range(-8.0..8.0),
            rng.gen_range(-PI..PI),
            0.0,
        );
        let a: f64 = rng.gen_range(-PI..PI);
        let (s, c) = a.sin_cos();
        let (dx, dy) = (e.px - o.px, e.py - o.py);
        let e2 = state(o.px + c * dx - s * dy, o.py + s * dx + c * dy, e.phi + a, 0.0);
        let o2 = ObstaclePose { phi: o.phi + a, ..o };
        let v1 = f_vehicle_ellipse(&e, &o, &p).unwrap();
        let v2 = f_vehicle_ellipse(&e2, &o2, &p).unwrap();
        assert!((v1 - v2).abs() <= 1e-9 * v1.max(1.0));
    }
}

#[test]
fn ttc_field_values() {
    let p = p();
    let ego = state(0.0, 0.0, 0.0, 15.0);
    let e = Ego::from_state(&ego);
    let at_threshold = ob(15.0, 0.0, 0.0, 5.0);
    assert!(ttc_term_generic(&e, &at_threshold, &p).abs() < 1e-12);
    let ve = vehicle_ellipse_generic(&e, &at_threshold, &p);
    assert!((f_ttc(&ego, &at_threshold, &p) - ve).abs() < 1e-12);

    let opening = ob(15.0, 0.0, 0.0, 20.0);
    assert_eq!(ttc_term_generic(&e, &opening, &p), -10.0);

    let close = ob(5.0, 0.0, 0.0, 5.0);
    let term = ttc_term_generic(&e, &close, &p);
    assert!((term - 63.890_560_989_306_502).abs() < 1e-9);
    assert!(term > ttc_term_generic(&e, &at_threshold, &p));
}

#[test]
fn pedestrian_values() {
    let p = p();
    assert!((f_pedestrian_point([0.0, 0.0], [10.0, 0.0], &p).unwrap() - 5.0).abs() < 1e-12);
    let far = f_pedestrian_point([0.0, 0.0], [20.0, 0.0], &p).unwrap();
    assert!((far - 1.25).abs() < 1e-12);
    assert!(f_pedestrian(&state(0.0, 0.0, 0.0, 0.0), [500.0, 0.0], &p).unwrap() < 0.01);
    assert!(f_pedestrian_point([1.0, 1.0], [1.0, 1.0], &p).is_err());
}

fn red_zone(red: bool) -> LightZone {
    LightZone {
        stop: [10.0, 0.0],
        phi: 0.0,
        width: 3.5,
        red,
    }
}

#[test]
fn traffic_light_values() {
    let p = p();
    let ego = state(0.0, 0.0, 0.0, 5.0);
    assert_eq!(f_trafficlight(&ego, &red_zone(false), &p), 0.0);
    let v = f_trafficlight(&ego, &red_zone(true), &p);
    assert!((v - 1162.857_142_857_142_9).abs() < 1e-9, "{v}");
    let closer = f_trafficlight(&state(5.0, 0.0, 0.0, 5.0), &red_zone(true), &p);
    assert!((closer - v - 20.0).abs() < 1e-9);
    assert_eq!(f_trafficlight(&state(11.0, 0.0, 0.0, 5.0), &red_zone(true), &p), 0.0);
}

#[test]
fn total_field_is_additive() {
    let p = p();
    let opts = FieldOptions::default();
    let ego = state(0.0, 0.3, 0.05, 12.0);
    assert_eq!(total_field(&StageScene::default(), &ego, &p, opts), 0.0);

    let far = ob(300.0, 40.0, 1.0, 3.0);
    let one = StageScene {
        vehicles: vec![far],
        ..Default::default()
    };
    let alone = f_vehicle_ellipse(&ego, &far, &p).unwrap();
    assert!((total_field(&one, &ego, &p, opts) - alone).abs() < 1e-12);

    let leader = ob(12.0, 0.0, 0.0, 6.0);
    let zone = LightZone {
        stop: [30.0, 0.0],
        ..red_zone(true)
    };
    let scene = StageScene {
        vehicles: vec![leader],
        leader: Some(0),
        light: Some(zone),
        ..Default::default()
    };
    let expected = f_trafficlight(&ego, &zone, &p) + f_ttc(&ego, &leader, &p);
    assert!((total_field(&scene, &ego, &p, opts) - expected).abs() < 1e-12);
    let terms = field_terms(&scene, &ego, &p, opts);
    assert!((terms.total() - expected).abs() < 1e-12);
}

fn busy_scene() -> StageScene {
    let lane = |y: f64, side, kind| LaneMarking::new(0.0, y, 0.0, side, kind, 3.5);
    StageScene {
        markings: vec![
            lane(0.0, Side::Left, MarkingKind::NonCrossable),
            lane(0.0, Side::Right, MarkingKind::Crossable),
            lane(-3.5, Side::Right, MarkingKind::NonCrossable),
        ],
        vehicles: vec![ob(14.0, 0.2, 0.05, 5.0), ob(4.0, -3.5, 0.0, 8.0)],
        leader: Some(0),
        pedestrians: vec![[25.0, 4.0]],
        light: Some(LightZone {
            stop: [40.0, -1.0],
            phi: 0.0,
            width: 7.0,
            red: true,
        }),
    }
}

#[test]
fn jet_gradient_matches_finite_differences() {
    let p = p();
    let scene = busy_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // 100 accepted points per vehicle-field variant.
    for variant in [VehicleFieldVariant::Ellipse, VehicleFieldVariant::Circles] {
        let opts = FieldOptions { variant, ttc: true };
        let mut checked = 0;
        while checked < 100 {
            let x = state(
                rng.gen_range(-5.0..10.0),
                rng.gen_range(-4.5..1.2),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(6.0..14.0),
            );
            let j = total_field_jet(&scene, &x, &p, opts);
            let f = |d: [f64; 4]| {
                total_field(
                    &scene,
                    &state(x.px + d[0], x.py + d[1], x.phi + d[2], x.vx + d[3]),
                    &p,
                    opts,
                )
            };
            // Skip points straddling a piecewise boundary.
            let h = 1e-6;
            let mut ok = true;
            let mut fd = [0.0; 4];
            for (k, slot) in fd.iter_mut().enumerate() {
                let mut e = [0.0; 4];
                e[k] = h;
                let fwd = (f(e) - j.v) / h;
                e[k] = -h;
                let bwd = (j.v - f(e)) / h;
                if (fwd - bwd).abs() > 1e-2 * (1.0 + fwd.abs()) {
                    ok = false;
                }
                *slot = 0.5 * (fwd + bwd);
            }
            if !ok {
                continue;
            }
            for k in 0..4 {
                let rel = (j.g[k] - fd[k]).abs() / j.g[k].abs().max(fd[k].abs()).max(1.0);
                assert!(rel <= 1e-4, "coord {k}: {} vs {}", j.g[k], fd[k]);
            }
            checked += 1;
        }
    }
}

fn spec(id: u32, geometry: LaneGeometry, left: Option<u32>, right: Option<u32>, junction: bool) -> LaneSpec {
    LaneSpec {
        id,
        geometry,
        width: 3.5,
        left,
        right,
        successors: vec![],
        left_marking: MarkingKind::NonCrossable,
        right_marking: MarkingKind::NonCrossable,
        junction,
    }
}

fn route_for(map: &LaneMap, start: Pose, goal: Pose) -> RoutePath {
    let g = build_graph(map, 2.0).unwrap();
    RoutePath::from_waypoints(&astar_route(&g, start, goal, 5.0).unwrap()).unwrap()
}

#[test]
fn straight_route_has_no_virtual_fields() {
    let p = p();
    let map = LaneMap::new(vec![spec(
        1,
        LaneGeometry::Line {
            from: [0.0, 0.0],
            to: [100.0, 0.0],
        },
        None,
        None,
        false,
    )])
    .unwrap();
    let route = route_for(&map, Pose::new(0.0, 0.0, 0.0), Pose::new(100.0, 0.0, 0.0));
    let ctx = RouteContext {
        map: &map,
        route: &route,
        s_ego: 10.0,
        lateral: 0.0,
    };
    assert_eq!(build_virtual_fields(&ctx, 12.0, &p), VirtualFieldSet::default());
    let marks = scene::stage_markings(&ctx, 12.0, &VirtualFieldSet::default());
    assert_eq!(marks.len(), 2);
}

#[test]
fn junction_gets_two_virtual_markings() {
    let p = p();
    let mut a = spec(
        1,
        LaneGeometry::Line {
            from: [0.0, 0.0],
            to: [20.0, 0.0],
        },
        None,
        None,
        false,
    );
    a.successors = vec![2];
    let j = spec(
        2,
        LaneGeometry::Line {
            from: [20.0, 0.0],
            to: [40.0, 0.0],
        },
        None,
        None,
        true,
    );
    let map = LaneMap::new(vec![a, j]).unwrap();
    let route = route_for(&map, Pose::new(0.0, 0.0, 0.0), Pose::new(40.0, 0.0, 0.0));
    let ctx = RouteContext {
        map: &map,
        route: &route,
        s_ego: 25.0,
        lateral: 0.0,
    };
    let v = build_virtual_fields(&ctx, 30.0, &p);
    assert_eq!(v.fields.len(), 1);
    let marks = scene::stage_markings(&ctx, 30.0, &v);
    assert_eq!(marks.len(), 2);
    for (m, expected) in marks.iter().zip([2.0, -2.0]) {
        assert_eq!(m.kind, MarkingKind::NonCrossable);
        // The marking line is where the lateral distance vanishes.
        let offset = lateral_distance(&state(30.0, 0.0, 0.0, 0.0), m);
        assert!((offset - 2.0).abs() < 1e-9);
        assert!(lateral_distance(&state(30.0, expected, 0.0, 0.0), m).abs() < 1e-9);
    }
}

#[test]
fn turn_ahead_locks_the_lane_or_raises_tracking_penalty() {
    let p = p();
    let mut inner = spec(
        1,
        LaneGeometry::Line {
            from: [0.0, 0.0],
            to: [30.0, 0.0],
        },
        Some(3),
        Some(2),
        false,
    );
    inner.right_marking = MarkingKind::Crossable;
    inner.successors = vec![4];
    let mut outer = spec(
        2,
        LaneGeometry::Line {
            from: [0.0, -3.5],
            to: [30.0, -3.5],
        },
        Some(1),
        None,
        false,
    );
    outer.left_marking = MarkingKind::Crossable;
    let opposite = spec(
        3,
        LaneGeometry::Line {
            from: [30.0, 3.5],
            to: [0.0, 3.5],
        },
        None,
        None,
        false,
    );
    let turn = spec(
        4,
        LaneGeometry::Arc {
            center: [30.0, 12.0],
            radius: 12.0,
            start_deg: -90.0,
            end_deg: 0.0,
        },
        None,
        None,
        true,
    );
    // Lane 3 runs the other way, so it is not part of lane 1's group.
    inner.left = None;
    let map = LaneMap::new(vec![inner, outer, opposite, turn]).unwrap();
    let route = route_for(&map, Pose::new(0.0, 0.0, 0.0), Pose::new(42.0, 12.0, FRAC_PI_2));
    let mut ctx = RouteContext {
        map: &map,
        route: &route,
        s_ego: 10.0,
        lateral: 0.3,
    };
    let v = build_virtual_fields(&ctx, 11.0, &p);
    assert!(v.lock_lane && !v.tracking_penalty);
    let marks = scene::stage_markings(&ctx, 11.0, &v);
    assert!(marks.iter().all(|m| m.kind == MarkingKind::NonCrossable));
    let unlocked = scene::stage_markings(&ctx, 11.0, &VirtualFieldSet::default());
    assert!(unlocked.iter().any(|m| m.kind == MarkingKind::Crossable));

    ctx.lateral = -2.5;
    let v = build_virtual_fields(&ctx, 11.0, &p);
    assert!(v.tracking_penalty && !v.lock_lane);
}

#[test]
fn params_file_round_trip_uses_symbol_names() {
    let p = p();
    let text = p.to_toml_string().unwrap();
    assert!(text.contains("a_NR = 100.0"));
    assert!(text.contains("a_TL2 = 1000.0"));
    assert_eq!(PFParams::from_toml_str(&text).unwrap(), p);
    let partial = PFParams::from_toml_str("a_NR = 50.0\nt_alarm = 2.0\n").unwrap();
    assert_eq!(partial.a_nr, 50.0);
    assert_eq!(partial.b_nr, 2.0);
    assert!(PFParams::from_toml_str("a_NR = -1.0").is_err());
    assert!(PFParams::from_toml_str("bogus = 1.0").is_err());
    assert!((p.m_s() - 9955.555_555_555_555).abs() < 1e-9);
}
