use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};

use quadclimb::gait::{
    self, compute_metrics, metrics_from_raw, metrics_from_speed, plan_climb_sequence, plan_shift_cycle, plan_trot,
    Diagonal, GaitError, PhaseKind, PhasePlan, StanceGeometry, TimingModel,
};
use quadclimb::model::{default_model, Configuration, LimbId, RobotModel};
use quadclimb::scenario::{load_map, start_stance, Scenario};
use quadclimb::sdm::{Ellipsoid, Hold, HoldId};

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn shift_cycle(model: &RobotModel, stroke: f64) -> Result<PhasePlan, GaitError> {
    plan_shift_cycle(model, &Vector3::x(), stroke, &TimingModel::default(), &StanceGeometry::for_model(model))
}

fn walking() -> RobotModel {
    default_model().with_configuration(Configuration::Walking3DoF)
}

fn check_plan(model: &RobotModel, plan: &PhasePlan) {
    plan.check_invariants().unwrap();
    plan.replay(model, 20.0).unwrap();
}

#[test]
fn shift_cycle_matches_reference_cycle() {
    let m = default_model();
    let t = Instant::now();
    let plan = shift_cycle(&m, 0.075).unwrap();
    assert!(t.elapsed().as_secs_f64() < 1.0);
    let travel = plan.body_travel_m();
    assert!((0.14..=0.15 + 1e-9).contains(&travel), "{travel}");
    let d = plan.total_duration_s();
    assert!((d - 52.0).abs() <= 0.2 * 52.0, "{d}");
    let speed = compute_metrics(&plan, &m, 0.0).speed_m_min;
    assert!((speed - 0.16).abs() <= 0.2 * 0.16, "{speed}");
    check_plan(&m, &plan);

    // each side runs front swing, lift, back swing
    let kinds: Vec<_> = plan.phases.iter().map(|p| p.kind).collect();
    for side in kinds.chunks(3) {
        assert!(matches!(side[0], PhaseKind::SwingLimb(id) if id.is_front()));
        assert!(matches!(side[1], PhaseKind::BodyLift(_)));
        assert!(matches!(side[2], PhaseKind::SwingLimb(id) if !id.is_front()));
    }
}

#[test]
fn zero_stroke_is_well_formed() {
    let m = default_model();
    let plan = shift_cycle(&m, 0.0).unwrap();
    assert!(plan.body_travel_m().abs() < 1e-12);
    check_plan(&m, &plan);
    assert!(matches!(shift_cycle(&m, 1.0), Err(GaitError::StrokeExceeded { .. })));
}

#[test]
fn bouldering_climb_reaches_the_top_row() {
    let s = Scenario::load(scenario_path("bouldering_vertical.json")).unwrap();
    let m = s.model(None).unwrap();
    let (map, names) = load_map(&s).unwrap();
    let start = start_stance(&m, &map, &names, &s).unwrap();
    let goals: Vec<(LimbId, HoldId)> = s
        .gait
        .goals
        .iter()
        .map(|(l, h)| (LimbId::ALL.into_iter().find(|id| id.short_name() == l).unwrap(), names[h]))
        .collect();
    let t = Instant::now();
    let plan = plan_climb_sequence(&m, &map, &start, &goals, &s.gait.timing, &s.gait.climb).unwrap();
    assert!(t.elapsed().as_secs_f64() < 5.0);
    assert!((plan.body_travel_m() - 0.35).abs() < 1e-3, "{}", plan.body_travel_m());
    assert!(plan.total_duration_s() <= 60.0, "{}", plan.total_duration_s());
    assert!(compute_metrics(&plan, &m, 0.0).speed_m_min >= 0.35);
    assert_eq!(plan.phases.iter().filter(|p| matches!(p.kind, PhaseKind::SwingLimb(_))).count(), 4);
    check_plan(&m, &plan);
    for p in &plan.phases {
        if matches!(p.kind, PhaseKind::SwingLimb(_)) {
            assert!(p.attached_count() >= 3);
        }
    }

    // every limb already on its goal: nothing to do
    let stay: Vec<_> = s
        .gait
        .start
        .iter()
        .map(|(l, h)| (LimbId::ALL.into_iter().find(|id| id.short_name() == l).unwrap(), names[h]))
        .collect();
    let empty = plan_climb_sequence(&m, &map, &start, &stay, &s.gait.timing, &s.gait.climb).unwrap();
    assert!(empty.phases.is_empty());

    let mut far_map = map.clone();
    let far = far_map.next_id();
    let e = Ellipsoid {
        center_m: Vector3::new(1.5, -0.2, 0.0),
        semi_axes_m: Vector3::new(0.03, 0.025, 0.015),
        orientation: Matrix3::identity(),
    };
    far_map.add_hold(Hold::from_ellipsoid(far, &e, &Vector3::z())).unwrap();
    let r = plan_climb_sequence(&m, &far_map, &start, &[(LimbId::FrontRight, far)], &s.gait.timing, &s.gait.climb);
    assert_eq!(r.unwrap_err(), GaitError::HoldUnreachable(LimbId::FrontRight, far));
}

#[test]
fn trot_speeds() {
    let m = walking();
    let plan = plan_trot(&m, 0.56, 0.2, 0.5, &TimingModel::default()).unwrap();
    check_plan(&m, &plan);
    let metrics = compute_metrics(&plan, &m, 14.7);
    assert!((metrics.normalized_speed_per_s - 1.87).abs() < 0.005);
    assert!((metrics.normalized_payload - 2.33).abs() < 0.005);

    let slow = plan_trot(&m, 0.13, 0.2, 0.5, &TimingModel::default()).unwrap();
    check_plan(&m, &slow);
    assert!(matches!(
        plan_trot(&m, 10.0, 0.2, 0.5, &TimingModel::default()),
        Err(GaitError::SpeedInfeasible { .. })
    ));
    assert!(matches!(
        plan_trot(&default_model(), 0.5, 0.2, 0.5, &TimingModel::default()),
        Err(GaitError::WrongConfiguration(_))
    ));
}

#[test]
fn trot_alternates_diagonals_without_gaps() {
    let m = walking();
    let plan = plan_trot(&m, 0.3, 0.2, 0.5, &TimingModel::default()).unwrap();
    let mut last: Option<Diagonal> = None;
    let mut stance_time = [0.0; 4];
    for p in &plan.phases {
        let PhaseKind::TrotPair(d) = p.kind else { panic!("{:?}", p.kind) };
        if let Some(prev) = last {
            assert_ne!(prev, d);
        }
        last = Some(d);
        let swing = d.limbs();
        for id in LimbId::ALL {
            assert_eq!(p.attached[id.index()], !swing.contains(&id));
            if p.attached[id.index()] {
                stance_time[id.index()] += p.duration_s;
            }
        }
    }
    let total = plan.total_duration_s();
    for t in stance_time {
        assert!((t / total - 0.5).abs() < 1e-9);
    }
}

#[test]
fn metric_definitions() {
    let g = metrics_from_speed(0.56, 0.30, 14.7, 6.3, 0.0, 0.0);
    assert!((g.normalized_speed_per_s - 1.8666666666666667).abs() < 1e-12);
    assert!((g.normalized_payload - 2.3333333333333335).abs() < 1e-12);
    assert_eq!(g.normalized_workload, g.normalized_speed_per_s * g.normalized_payload);
    assert_eq!(g.normalized_speed_per_min, g.normalized_speed_per_s * 60.0);

    let c = metrics_from_raw(0.35, 60.0, 0.35, 0.0, 9.6);
    assert!((c.normalized_speed_per_min - 1.0).abs() < 1e-12);
    assert!((c.speed_m_min - 0.35).abs() < 1e-12);

    let z = metrics_from_raw(0.0, 12.0, 0.35, 3.4, 9.6);
    assert_eq!((z.speed_m_s, z.normalized_workload), (0.0, 0.0));
}

#[test]
fn plans_round_trip_through_json() {
    let m = default_model();
    let plan = shift_cycle(&m, 0.075).unwrap();
    let back: PhasePlan = serde_json::from_str(&plan.to_json().unwrap()).unwrap();
    assert_eq!(back, plan);
    let mut csv = Vec::new();
    plan.write_csv(&m, gait::COMMAND_RATE_HZ, &mut csv).unwrap();
    assert!(csv.len() > 1000);
}
