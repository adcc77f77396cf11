use proptest::prelude::*;

use udmc_core::dynamics::{step_array, ControlInput};
use udmc_core::sim::scenario::{LightPhase, VehicleSpawn};
use udmc_core::sim::trial::write_log;
use udmc_core::sim::*;

fn compiled(s: Scenario) -> CompiledScenario {
    CompiledScenario::new(s).unwrap()
}

fn spawn(lane: u32, s: f64, speed: f64) -> VehicleSpawn {
    VehicleSpawn {
        lane,
        s,
        speed,
        desired_speed: None,
        route: vec![],
    }
}

fn quick() -> TrialConfig {
    TrialConfig {
        prediction: false,
        ..TrialConfig::default()
    }
}

#[test]
fn coasting_in_an_empty_world_follows_the_dynamics() {
    let sc = compiled(Scenario::builtin("empty_road").unwrap());
    let w0 = WorldState::initial(&sc);
    let u = ControlInput::new(0.0, 0.0);
    let w1 = step_world(&w0, &sc, u);
    let expected = step_array(&w0.ego.to_array(), &u.to_array(), &sc.plant, sc.scenario.ts);
    assert_eq!(w1.ego.to_array(), expected);
    assert_eq!(w1.tick, 1);
    assert!(w1.svs.is_empty() && w1.peds.is_empty());
}

#[test]
fn car_following_law_matches_hand_evaluation() {
    let p = AutopilotParams::default();
    // Desired gap at 8 m/s with no closing speed: 2 + 8 * 1.5 = 14 m.
    let a = idm_accel(&p, 8.0, 8.0, 20.0, 0.0);
    assert!((a - 1.5 * (-(14.0f64 / 20.0).powi(2))).abs() < 1e-12);
    // Far below the desired gap the command saturates at the hard limit.
    assert_eq!(idm_accel(&p, 8.0, 8.0, 5.0, 0.0), -p.max_decel);
    assert!((idm_accel(&p, 4.0, 8.0, f64::INFINITY, 0.0) - 1.5 * (1.0 - 0.5f64.powi(4))).abs() < 1e-12);
}

#[test]
fn follower_five_metres_behind_brakes() {
    let mut s = Scenario::builtin("empty_road").unwrap();
    s.vehicles = vec![spawn(1, 105.0, 8.0), spawn(1, 100.0, 8.0)];
    let sc = compiled(s);
    let w1 = step_world(&WorldState::initial(&sc), &sc, ControlInput::new(0.0, 0.0));
    assert!(w1.svs[1].accel < 0.0);
    assert!(w1.svs[1].speed < 8.0);
    assert_eq!(w1.svs[0].accel, 0.0);
}

#[test]
fn light_flips_exactly_at_its_switch_time() {
    let s = Scenario::builtin("sig_inter").unwrap();
    let light = &s.lights[0];
    assert_eq!(light.phase_at(4.5 - 1e-9), LightPhase::Red);
    assert_eq!(light.phase_at(4.5), LightPhase::Green);

    let sc = compiled(s);
    let mut w = WorldState::initial(&sc);
    while w.tick < 90 {
        assert_eq!(w.lights[0], LightPhase::Red, "t = {}", w.t);
        w = step_world(&w, &sc, ControlInput::new(0.0, 0.0));
    }
    assert_eq!(w.t, 4.5);
    assert_eq!(w.lights[0], LightPhase::Green);
}

#[test]
fn circle_footprints() {
    let r = 1.4;
    // Centres 2.7 m apart along the heading line: rear circle of one against
    // the front circle of the other.
    let a = footprint(0.0, 0.0, 0.0, r);
    let b = footprint(2.0 * r + 2.7, 0.0, 0.0, r);
    assert!(footprints_overlap(&a, r, &b, r));
    let b = footprint(2.0 * r + 2.81, 0.0, 0.0, r);
    assert!(!footprints_overlap(&a, r, &b, r));
    // Centres farther apart than 2(r + r) never overlap, whatever the headings.
    for k in 0..16 {
        let phi = k as f64 * 0.4;
        let c = footprint(4.0 * r + 0.01, 0.0, phi, r);
        assert!(!footprints_overlap(&footprint(0.0, 0.0, -phi, r), r, &c, r));
    }
}

proptest! {
    #[test]
    fn overlap_is_symmetric(
        x1 in -10.0f64..10.0, y1 in -10.0f64..10.0, p1 in -3.2f64..3.2,
        x2 in -10.0f64..10.0, y2 in -10.0f64..10.0, p2 in -3.2f64..3.2,
    ) {
        let a = footprint(x1, y1, p1, 1.4);
        let b = footprint(x2, y2, p2, 1.4);
        prop_assert_eq!(footprints_overlap(&a, 1.4, &b, 1.4), footprints_overlap(&b, 1.4, &a, 1.4));
        prop_assert_eq!(footprints_overlap(&a, 1.4, &[[x2, y2]], 0.5), footprints_overlap(&[[x2, y2]], 0.5, &a, 1.4));
    }
}

#[test]
fn standing_before_a_red_line_is_not_a_violation() {
    let mut s = Scenario::builtin("sig_inter").unwrap();
    s.vehicles.clear();
    s.ego.start = [1.75, -12.0, 90f64.to_radians()];
    s.ego.initial_speed = Some(0.0);
    let sc = compiled(s);
    let mut w = WorldState::initial(&sc);
    assert_eq!(w.lights[0], LightPhase::Red);
    for _ in 0..20 {
        let next = step_world(&w, &sc, ControlInput::new(0.0, 0.0));
        assert!(detect_events(&sc, &w, &next).is_empty());
        w = next;
    }
}

#[test]
fn crossing_a_red_line_is_a_violation() {
    let mut s = Scenario::builtin("sig_inter").unwrap();
    s.vehicles.clear();
    let sc = compiled(s);
    let before = WorldState::initial(&sc);
    let mut a = before.clone();
    let mut b = before.clone();
    a.ego.py = -7.6;
    b.ego.py = -6.9;
    let events = detect_events(&sc, &a, &b);
    assert!(events.contains(&Event::Trv(TrvKind::RedLight(10))), "{events:?}");
    // Once the light is green the same move is legal.
    a.lights[0] = LightPhase::Green;
    b.lights[0] = LightPhase::Green;
    assert!(detect_events(&sc, &a, &b).is_empty());
}

#[test]
fn leaving_the_road_and_crossing_the_outer_marking() {
    let sc = compiled(Scenario::builtin("empty_road").unwrap());
    let w = WorldState::initial(&sc);
    let mut a = w.clone();
    let mut b = w.clone();
    a.ego.py = 1.7;
    b.ego.py = 1.8;
    assert_eq!(detect_events(&sc, &a, &b), vec![Event::Trv(TrvKind::Marking(1))]);
    a.ego.py = 2.7;
    b.ego.py = 2.8;
    assert_eq!(detect_events(&sc, &a, &b), vec![Event::Trv(TrvKind::OffRoad)]);
}

#[test]
fn empty_road_travel_time_is_near_the_kinematic_bound() {
    let sc = compiled(Scenario::builtin("empty_road").unwrap());
    let r = run_trial(&sc, &quick(), None).unwrap();
    let m = &r.metrics;
    assert!(m.success, "{m:?}");
    let bound = (sc.route_length() - trial::ARRIVAL_MARGIN) / sc.scenario.ego.speed;
    assert!(
        (m.travel_time - bound).abs() <= 0.1 * bound,
        "{} vs {bound}",
        m.travel_time
    );
    assert_eq!(m.min_ttc, None);
    assert_eq!(m.ttc_valid_ticks, 0);
}

#[test]
fn spawning_on_top_of_the_ego_fails_immediately() {
    let mut s = Scenario::builtin("empty_road").unwrap();
    s.vehicles = vec![spawn(1, 11.0, 0.0)];
    let sc = compiled(s);
    let r = run_trial(&sc, &quick(), None).unwrap();
    assert_eq!(r.metrics.collisions, 1);
    assert!(!r.metrics.success);
    assert_eq!(r.metrics.ticks, 0);
    assert!(r.metrics.failure_cause.unwrap().contains("t = 0.000"));
}

#[test]
fn ttc_metrics_are_consistent() {
    let mut s = Scenario::builtin("empty_road").unwrap();
    // A slow car far enough ahead that the ego closes in on it.
    s.vehicles = vec![spawn(1, 60.0, 3.0)];
    let sc = compiled(s);
    let m = run_trial(&sc, &quick(), None).unwrap().metrics;
    assert!(m.ttc_valid_ticks > 0);
    assert!((m.ttc_alarm_duration - m.ttc_alarm_ticks as f64 * sc.scenario.ts).abs() < 1e-12);
    let pct = 100.0 * m.ttc_alarm_ticks as f64 / m.ttc_valid_ticks as f64;
    assert!((m.ttc_alarm_percentage - pct).abs() < 1e-12);
    assert!(m.ttc_valid_ticks <= m.ticks);
    assert_eq!(m.success, m.collisions == 0 && m.trv == 0 && m.reached_destination);
}

#[test]
fn reruns_are_identical() {
    let sc = compiled(Scenario::builtin("ml_acc").unwrap().randomized(3).unwrap());
    let cfg = quick();
    let a = run_trial(&sc, &cfg, None).unwrap();
    let b = run_trial(&sc, &cfg, None).unwrap();
    assert_eq!(a.metrics.without_timing(), b.metrics.without_timing());
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    write_log(&a.log, false, &mut la).unwrap();
    write_log(&b.log, false, &mut lb).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.events, b.events);
}

#[test]
fn empty_road_batch_always_succeeds() {
    let s = Scenario::builtin("empty_road").unwrap();
    let a = run_batch(&s, 40, 100, &quick(), None).unwrap();
    assert_eq!(a.success_rate, 1.0);
    assert!(a.failures.is_empty());
    let b = run_batch(&s, 40, 100, &quick(), None).unwrap();
    let strip = |r: &BatchReport| r.trial_metrics.iter().map(|m| m.without_timing()).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    assert!(run_batch(&s, 0, 0, &quick(), None).is_err());
}

#[test]
fn randomised_spawns_respect_the_band_and_spacing() {
    let s = Scenario::builtin("ml_acc").unwrap();
    let spec = s.randomize.clone().unwrap();
    for seed in 0..10 {
        let r = s.randomized(seed).unwrap();
        assert_eq!(r.seed, seed);
        assert!((spec.count[0]..=spec.count[1]).contains(&r.vehicles.len()));
        let sc = compiled(r.clone());
        let w = WorldState::initial(&sc);
        let ego = [w.ego.px, w.ego.py];
        for (i, a) in w.svs.iter().enumerate() {
            let d = (a.pose[0] - ego[0]).hypot(a.pose[1] - ego[1]);
            assert!(d >= spec.band[0] && d <= spec.band[1], "seed {seed}: {d}");
            for b in &w.svs[i + 1..] {
                assert!((a.pose[0] - b.pose[0]).hypot(a.pose[1] - b.pose[1]) >= spec.min_spacing);
            }
        }
        assert_eq!(s.randomized(seed).unwrap(), r);
    }
}

#[test]
fn scenario_files_round_trip() {
    for name in BUILTIN_SCENARIOS {
        let s = Scenario::builtin(name).unwrap();
        let text = s.to_toml_string().unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), s, "{name}");
        compiled(s);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("road.toml");
    std::fs::write(
        &path,
        Scenario::builtin("empty_road").unwrap().to_toml_string().unwrap(),
    )
    .unwrap();
    assert_eq!(Scenario::resolve(path.to_str().unwrap()).unwrap().name, "empty_road");
    assert!(Scenario::resolve("no_such_scenario").is_err());
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut s = Scenario::builtin("empty_road").unwrap();
    s.vehicles = vec![spawn(42, 10.0, 5.0)];
    assert_eq!(CompiledScenario::new(s).unwrap_err().category(), "scenario");
    let mut s = Scenario::builtin("empty_road").unwrap();
    s.ts = 0.0;
    assert!(CompiledScenario::new(s).is_err());
    assert!(Scenario::from_toml_str("name = 3").is_err());
}

#[test]
fn trial_outputs_are_written() {
    let sc = compiled(Scenario::builtin("empty_road").unwrap());
    let r = run_trial(
        &sc,
        &TrialConfig {
            trace_solver: true,
            ..quick()
        },
        None,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.write_to(dir.path()).unwrap();
    let log = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let header = log.lines().next().unwrap();
    assert_eq!(
        header,
        "t,px,py,phi,vx,vy,omega,a,delta,pf_nr,pf_cr,pf_v,pf_tl,pf_ttc,pf_pd"
    );
    assert_eq!(log.lines().count(), r.log.len() + 1);
    assert!(log
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .all(|f| f.split('.').nth(1).is_some_and(|d| d.len() == 6)));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["success"], true);
    assert!(dir.path().join("timing.csv").exists());
    assert!(dir.path().join("solver_trace.csv").exists());
}
