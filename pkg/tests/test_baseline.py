import math

import numpy as np
import pytest

from opftrack.baseline import DroopCurve, droop_q
from opftrack.controller import OperatingRegion

REGION = OperatingRegion("joint", 1.0, 0.8)  # headroom sqrt(1 - 0.64) = 0.6
CURVE = DroopCurve(v_zero=1.0, v_sat=1.05)


@pytest.mark.parametrize(
    "v, expected",
    [
        (1.0, 0.0),
        (1.025, -0.3),
        (1.05, -0.6),
        (1.2, -0.6),      # clamped at full headroom
        (0.975, 0.3),     # mirrored injection branch
        (0.9, 0.6),
    ],
)
def test_droop_hand_points(v, expected):
    assert droop_q(v, REGION, CURVE) == pytest.approx(expected, abs=1e-12)


def test_droop_monotone_and_within_headroom():
    grid = np.linspace(0.85, 1.25, 200)
    vals = [droop_q(float(v), REGION, CURVE) for v in grid]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    cap = math.sqrt(1.0 - 0.64)
    assert all(abs(q) <= cap + 1e-12 for q in vals)


def test_droop_asymmetric_disables_injection():
    curve = DroopCurve(v_zero=1.0, v_sat=1.05, symmetric=False)
    assert droop_q(0.95, REGION, curve) == 0.0
    # overvoltage branch unchanged: frac 0.02/0.05 of the 0.6 headroom
    assert droop_q(1.02, REGION, curve) == pytest.approx(-0.24)
    assert droop_q(1.05, REGION, curve) == pytest.approx(-0.6)


def test_droop_no_headroom_at_full_rating():
    reg = OperatingRegion("joint", 0.5, 0.5)
    assert droop_q(1.2, reg, CURVE) == 0.0


def test_curve_validation():
    with pytest.raises(ValueError):
        DroopCurve(v_zero=1.05, v_sat=1.0)
