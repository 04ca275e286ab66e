use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quadclimb::gait::{self, StanceGeometry, TimingModel};
use quadclimb::model::{default_model, rot_x, rot_y, rot_z, GravityFrame, RobotModel};
use quadclimb::scenario::{self, CapacityRequest};
use quadclimb::stability::{
    certify_plan, contact_limits, distribute_forces, equilibrium_residual, ContactSpec, StabilityError, Surface, Wrench,
};

fn grasp(p: Vector3<f64>, slope_deg: f64, preload_n: f64) -> ContactSpec {
    ContactSpec::on_wall(p, Surface::Grasp { slope_deg, preload_n })
}

// Admissible-set rows with unit normals, as (a, b) for a·f ≤ b.
fn admissible_rows(model: &RobotModel, c: &ContactSpec) -> Vec<(Vector3<f64>, f64)> {
    let lim = contact_limits(model, c);
    let t1: Vector3<f64> = c.frame.column(0).into_owned();
    let t2: Vector3<f64> = c.frame.column(1).into_owned();
    let n = c.normal();
    let mut rows = vec![(n, lim.compression_cap_n), (-n, lim.pull_cap_n)];
    let facet = (std::f64::consts::PI / 8.0).cos();
    for j in 0..8 {
        let a = std::f64::consts::TAU * j as f64 / 8.0;
        rows.push((t1 * a.cos() + t2 * a.sin(), lim.shear_cap_n * facet));
    }
    rows
}

fn weight(mass_kg: f64, inclination_deg: f64, com: Vector3<f64>) -> Wrench {
    let g = GravityFrame::new(inclination_deg).unwrap().gravity_m_s2;
    Wrench::point_force(&com, &(g * mass_kg))
}

fn check_solution(model: &RobotModel, contacts: &[ContactSpec], external: &Wrench) -> Option<f64> {
    let sol = distribute_forces(model, contacts, external, None).ok()?;
    let r = equilibrium_residual(contacts, &sol.forces, external);
    assert!(r.force.norm() < 1e-6 && r.torque.norm() < 1e-6, "{r:?}");
    assert!(sol.residual_force.norm() < 1e-6 && sol.residual_torque.norm() < 1e-6);
    for (c, f) in contacts.iter().zip(&sol.forces) {
        for (a, b) in admissible_rows(model, c) {
            assert!(a.dot(f) <= b + 1e-9 * b.abs().max(1.0), "{} > {b}", a.dot(f));
        }
    }
    Some(sol.objective)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_solution_balances_and_respects_bounds(
        xs in prop::collection::vec((-0.3f64..0.3, -0.3f64..0.3, 0.0f64..60.0, 20.0f64..90.0), 2..5),
        mass in 1.0f64..40.0,
        incl in 0.0f64..180.0,
        h in 0.1f64..0.3,
    ) {
        let model = default_model();
        let contacts: Vec<_> = xs.iter().map(|&(x, y, s, p)| grasp(Vector3::new(x, y, 0.0), s, p)).collect();
        check_solution(&model, &contacts, &weight(mass, incl, Vector3::new(0.0, 0.0, h)));
    }

    #[test]
    fn residual_matches_summation(
        fs in prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 1..6),
        ps in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 6),
        ext in prop::array::uniform6(-50.0f64..50.0),
    ) {
        let contacts: Vec<_> = fs.iter().zip(&ps).map(|(_, p)| grasp(Vector3::from(*p), 0.0, 70.0)).collect();
        let forces: Vec<_> = fs.iter().map(|f| Vector3::from(*f)).collect();
        let external = Wrench { force: Vector3::new(ext[0], ext[1], ext[2]), torque: Vector3::new(ext[3], ext[4], ext[5]) };
        let r = equilibrium_residual(&contacts, &forces, &external);
        let (mut sf, mut st) = (external.force, external.torque);
        for (f, p) in forces.iter().zip(&ps) {
            sf += f;
            st += Vector3::new(p[1] * f.z - p[2] * f.y, p[2] * f.x - p[0] * f.z, p[0] * f.y - p[1] * f.x);
        }
        prop_assert!((r.force - sf).norm() < 1e-12 && (r.torque - st).norm() < 1e-12);
    }
}

// Equilibrium matrix about the origin and its SVD-based particular solution and null space.
fn equilibrium_space(contacts: &[ContactSpec], external: &Wrench) -> (DVector<f64>, DMatrix<f64>) {
    let n = 3 * contacts.len();
    let mut a = DMatrix::zeros(6, n);
    for (i, c) in contacts.iter().enumerate() {
        let p = c.position;
        for k in 0..3 {
            a[(k, 3 * i + k)] = 1.0;
        }
        let s = Matrix3::new(0.0, -p.z, p.y, p.z, 0.0, -p.x, -p.y, p.x, 0.0);
        a.view_mut((3, 3 * i), (3, 3)).copy_from(&s);
    }
    let b = DVector::from_iterator(6, external.force.iter().chain(external.torque.iter()).map(|v| -v));
    let f0 = a.clone().pseudo_inverse(1e-12).unwrap() * &b;
    let full = DMatrix::from_fn(n, n, |r, c| if r < 6 { a[(r, c)] } else { 0.0 });
    let svd = full.svd(false, true);
    let vt = svd.v_t.unwrap();
    let null: Vec<DVector<f64>> = (0..n)
        .filter(|&i| svd.singular_values[i] < 1e-9)
        .map(|i| vt.row(i).transpose())
        .collect();
    (f0, DMatrix::from_columns(&null))
}

// Largest worst-row slack over a uniform grid of the null space.
fn grid_best_slack(model: &RobotModel, contacts: &[ContactSpec], external: &Wrench, steps: usize) -> (f64, f64) {
    let (f0, null) = equilibrium_space(contacts, external);
    assert_eq!(null.ncols(), 3);
    let rows: Vec<Vec<(Vector3<f64>, f64)>> = contacts.iter().map(|c| admissible_rows(model, c)).collect();
    let per_contact = rows
        .iter()
        .map(|r| r.iter().map(|(_, b)| b.abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let radius = (contacts.len() as f64).sqrt() * per_contact * 2f64.sqrt();
    let h = 2.0 * radius / steps as f64;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=steps {
        for j in 0..=steps {
            for k in 0..=steps {
                let z = DVector::from_vec(vec![-radius + h * i as f64, -radius + h * j as f64, -radius + h * k as f64]);
                let f = &f0 + &null * z;
                let mut worst = f64::INFINITY;
                'c: for (ci, r) in rows.iter().enumerate() {
                    let fc = Vector3::new(f[3 * ci], f[3 * ci + 1], f[3 * ci + 2]);
                    for (a, b) in r {
                        worst = worst.min(b - a.dot(&fc));
                        if worst < best {
                            break 'c;
                        }
                    }
                }
                best = best.max(worst);
            }
        }
    }
    (best, h * 3f64.sqrt() / 2.0)
}

#[test]
fn solver_agrees_with_grid_search() {
    let mut model = default_model();
    model.compression_limit_n = 150.0;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut feasible, mut infeasible) = (0, 0);
    for _ in 0..40 {
        let contacts: Vec<_> = (0..3)
            .map(|_| {
                grasp(
                    Vector3::new(rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25), 0.0),
                    rng.random_range(0.0..60.0),
                    rng.random_range(20.0..90.0),
                )
            })
            .collect();
        let ext = weight(rng.random_range(2.0..40.0), rng.random_range(0.0..180.0), Vector3::new(0.0, 0.0, 0.2));
        let solver = distribute_forces(&model, &contacts, &ext, None);
        let (best, resolution) = grid_best_slack(&model, &contacts, &ext, 48);
        if best >= 0.0 {
            assert!(solver.is_ok(), "grid found an admissible point the solver missed");
        }
        match solver {
            Ok(sol) => {
                if sol.margin_n > resolution {
                    assert!(best >= 0.0, "margin {} but grid best {best}", sol.margin_n);
                }
                feasible += 1;
            }
            Err(StabilityError::Infeasible) => {
                assert!(best < 0.0);
                infeasible += 1;
            }
            Err(e) => panic!("{e}"),
        }
    }
    assert!(feasible > 5 && infeasible > 5, "{feasible} {infeasible}");
}

#[test]
fn feasibility_is_covariant_under_world_rotation() {
    let model = default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut compared = 0;
    for _ in 0..60 {
        let contacts: Vec<_> = (0..4)
            .map(|_| grasp(Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0), 20.0, 70.0))
            .collect();
        let ext = weight(rng.random_range(5.0..30.0), rng.random_range(60.0..180.0), Vector3::new(0.05, 0.0, 0.25));
        let r = rot_z(rng.random_range(-3.0..3.0)) * rot_y(rng.random_range(-1.5..1.5)) * rot_x(rng.random_range(-3.0..3.0));
        let rotated: Vec<_> = contacts
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.position = r * c.position;
                c.frame = r * c.frame;
                c
            })
            .collect();
        let ext_r = Wrench { force: r * ext.force, torque: r * ext.torque };
        let a = check_solution(&model, &contacts, &ext);
        let b = check_solution(&model, &rotated, &ext_r);
        assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            assert!((a - b).abs() < 1e-9 * a.max(1.0), "{a} {b}");
            compared += 1;
        }
    }
    assert!(compared > 10);
}

#[test]
fn spec_examples() {
    let model = default_model();
    // two grippers on the ceiling hold the climbing mass
    let ceiling = [grasp(Vector3::new(0.175, 0.2, 0.0), 90.0, 70.0), grasp(Vector3::new(-0.175, -0.2, 0.0), 90.0, 70.0)];
    assert!(check_solution(&model, &ceiling, &weight(9.6, 180.0, Vector3::new(0.0, 0.0, 0.25))).is_some());

    let three = [
        grasp(Vector3::new(0.175, 0.2, 0.0), 0.0, 70.0),
        grasp(Vector3::new(-0.175, 0.2, 0.0), 0.0, 70.0),
        grasp(Vector3::new(-0.175, -0.2, 0.0), 0.0, 70.0),
    ];
    assert!(check_solution(&model, &three, &weight(13.0, 90.0, Vector3::new(0.0, 0.0, 0.25))).is_some());
    let two = &three[..2];
    assert_eq!(
        distribute_forces(&model, two, &weight(960.0, 90.0, Vector3::new(0.0, 0.0, 0.25)), None),
        Err(StabilityError::Infeasible)
    );
    assert_eq!(distribute_forces(&model, &three[..1], &Wrench::zero(), None), Err(StabilityError::TooFewContacts(1)));
}

fn request(inclination_deg: f64) -> CapacityRequest {
    serde_json::from_value(serde_json::json!({ "inclination_deg": inclination_deg })).unwrap()
}

#[test]
fn shifting_stance_payload_depends_on_thrust() {
    let mut req = request(90.0);
    req.moving = vec!["FL".into(), "FR".into()];
    req.thrust_n = Some(30.0);
    let with = scenario::capacity(None, &req).unwrap().max_payload_kg.unwrap();
    req.thrust_n = Some(0.0);
    let without = scenario::capacity(None, &req).unwrap().max_payload_kg.unwrap_or(0.0);
    assert!(with >= 3.4, "{with}");
    assert!(without < with, "{without} {with}");
}

#[test]
fn ground_payload_reaches_reference() {
    let mut req = request(0.0);
    req.configuration = quadclimb::model::Configuration::Walking3DoF;
    req.mu = Some(0.6);
    let r = scenario::capacity(None, &req).unwrap();
    assert!(r.feasible);
    assert!(r.max_payload_kg.unwrap() >= 14.7, "{r}");
}

#[test]
fn payload_is_non_increasing_in_inclination() {
    let mut last = f64::INFINITY;
    for k in 0..=9 {
        let incl = 90.0 + 10.0 * k as f64;
        let p = scenario::capacity(None, &request(incl)).unwrap().max_payload_kg.unwrap_or(0.0);
        assert!(p <= last + 0.01, "{incl}: {p} > {last}");
        last = p;
    }
}

#[test]
fn shift_cycle_certification() {
    let model = default_model();
    let plan = gait::plan_shift_cycle(
        &model,
        &Vector3::x(),
        0.075,
        &TimingModel::default(),
        &StanceGeometry::for_model(&model),
    )
    .unwrap();
    let vertical = GravityFrame::vertical();
    assert!(certify_plan(&plan, None, &model, &vertical, 13.0 - model.mass_kg()).all_feasible);
    let overhang = GravityFrame::new(125.0).unwrap();
    assert!(certify_plan(&plan, None, &model, &overhang, 0.0).all_feasible);
    assert!(!certify_plan(&plan, None, &model, &overhang, 13.0 - model.mass_kg()).all_feasible);
}

// Smallest intercept (before the safety factor) keeping the whole vertical cycle feasible at 13 kg.
#[test]
fn calibrated_intercept_is_reproduced_by_bisection() {
    let base = default_model();
    let plan = gait::plan_shift_cycle(&base, &Vector3::x(), 0.075, &TimingModel::default(), &StanceGeometry::for_model(&base))
        .unwrap();
    let feasible = |a: f64| {
        let mut m = base.clone();
        m.grasp_bound.intercept_n = a;
        certify_plan(&plan, None, &m, &GravityFrame::vertical(), 13.0 - m.mass_kg()).all_feasible
    };
    let (mut lo, mut hi) = (50.0, 300.0);
    assert!(!feasible(lo) && feasible(hi));
    while hi - lo > 0.01 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert!((hi - quadclimb::gripper::CALIBRATED_MIN_INTERCEPT_N).abs() < 0.02, "{hi}");
}
