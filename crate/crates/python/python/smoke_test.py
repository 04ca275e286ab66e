"""Smoke test for the compiled bindings: run with `python python/smoke_test.py`."""

import json
import math
from pathlib import Path

import quadclimb_py as qc

ROOT = Path(__file__).resolve().parents[3]


def main():
    model = qc.RobotModel()
    assert abs(model.mass_kg - 9.6) < 1e-9

    q = model.limb_ik("FL", [0.175, 0.25, -0.25])
    p = model.limb_fk("FL", q)
    assert math.dist(p, [0.175, 0.25, -0.25]) < 1e-9

    plan = qc.plan_shift_cycle(model, 0.075)
    assert 0.14 <= plan.travel_m <= 0.15
    feasible, margins = plan.certify(90.0, 3.4)
    assert feasible and all(m is not None for m in margins)

    trot = qc.plan_trot(model, 0.56)
    assert abs(trot.metrics()["normalized_speed_per_s"] - 1.87) < 0.005

    s = 1.0 / math.sqrt(3.0)
    octahedron = [[x, y, z] for x, y, z in
                  [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]]
    _, axes, _ = qc.inscribe_ellipsoid(octahedron)
    assert all(abs(a - s) < 1e-6 for a in axes)

    ok, payload = qc.capacity(json.dumps({"inclination_deg": 90.0}))
    assert ok and payload > 0.0

    rms, _ = qc.force_tracking(1.0)
    _, attenuation = qc.force_tracking(10.0)
    assert rms < 0.1 and attenuation > 0.5

    passed, values, _ = qc.run_scenario(str(ROOT / "scenarios" / "trot_ground.json"))
    assert passed, values
    print("smoke test passed")


if __name__ == "__main__":
    main()
