use proptest::prelude::*;

use quadclimb::gripper::{adapt_grasp, fingertip_force, max_withstanding_force, spine_shear_capacity, GraspBound, GripperParams, SpineCellParams};

proptest! {
    #[test]
    fn whippletree_balances_finger_forces(offset in -1.0f64..1.0, width in 0.0f64..1.0) {
        let g = GripperParams::default();
        let offset = offset * g.lateral_travel_m;
        let width = g.min_opening_m + width * (g.max_opening_m - g.min_opening_m);
        let a = adapt_grasp(&g, offset, width).unwrap();
        prop_assert!((a.contact_forces_n[0] - a.contact_forces_n[1]).abs() < 1e-9);
        prop_assert!((a.cell_orientations_rad[0] - a.cell_orientations_rad[1]).abs() < 1e-9);
        prop_assert!((a.finger_positions_m[1] - a.finger_positions_m[0] - width).abs() < 1e-12);
        prop_assert!((a.lateral_shift_m - offset).abs() < 1e-12);
    }

    #[test]
    fn fingertip_force_is_monotone(f1 in 0.0f64..500.0, df in 0.0f64..500.0, t in 0.0f64..1.0) {
        let g = GripperParams::default();
        let opening = g.min_opening_m + t * (g.max_opening_m - g.min_opening_m);
        let a = fingertip_force(&g, f1, opening).unwrap();
        let b = fingertip_force(&g, f1 + df, opening).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn bound_decreases_with_slope(s1 in 0.0f64..90.0, ds in 0.0f64..90.0) {
        let b = GraspBound::default();
        let s2 = (s1 + ds).min(90.0);
        prop_assert!(max_withstanding_force(&b, s2).unwrap() <= max_withstanding_force(&b, s1).unwrap());
    }

    #[test]
    fn shear_capacity_grows_with_preload(n1 in 0.0f64..300.0, dn in 0.0f64..300.0) {
        let sc = SpineCellParams::default();
        prop_assert!(spine_shear_capacity(&sc, n1) <= spine_shear_capacity(&sc, n1 + dn));
        prop_assert!(spine_shear_capacity(&sc, n1 + dn) <= sc.spines_per_cell as f64 * sc.per_spine_shear_n);
    }
}

#[test]
fn nominal_opening_gives_reference_fingertip_force() {
    let g = GripperParams::default();
    let f = fingertip_force(&g, g.nominal_actuator_force_n, g.nominal_opening_m).unwrap();
    assert!((f - 70.0).abs() < 1e-9, "{f}");
}

#[test]
fn out_of_range_inputs_are_rejected() {
    let g = GripperParams::default();
    assert!(adapt_grasp(&g, 2.0 * g.lateral_travel_m, 0.05).is_err());
    assert!(adapt_grasp(&g, 0.0, 2.0 * g.max_opening_m).is_err());
    assert!(fingertip_force(&g, -1.0, 0.05).is_err());
    assert!(fingertip_force(&g, 10.0, 0.5 * g.min_opening_m).is_err());
    assert!(max_withstanding_force(&GraspBound::default(), 120.0).is_err());
}
