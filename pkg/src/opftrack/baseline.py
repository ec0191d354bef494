"""Local Volt/VAr droop control without deadband, the comparison strategy.

Each inverter reacts only to its own terminal voltage: zero reactive power
at ``v_zero``, linear absorption down to the full reactive headroom
``-sqrt(S^2 - P_av^2)`` at ``v_sat``, clamped beyond. Active power is never
curtailed. Absorption is negative, injection positive.
"""

from __future__ import annotations

from dataclasses import dataclass

from .controller import OperatingRegion

__all__ = ["DroopCurve", "droop_q"]


@dataclass(frozen=True)
class DroopCurve:
    """Droop breakpoints. ``symmetric`` mirrors the curve for undervoltage.

    The mirrored branch (reactive injection below ``2 v_zero - v_sat``) is
    an extrapolation of the overvoltage rule, provided for completeness and
    enabled by default.
    """

    v_zero: float = 1.0
    v_sat: float = 1.05
    symmetric: bool = True

    def __post_init__(self) -> None:
        if not self.v_zero < self.v_sat:
            raise ValueError("v_zero must be below v_sat")


def droop_q(v_meas: float, region: OperatingRegion, curve: DroopCurve) -> float:
    """Reactive setpoint of the droop rule at measured local voltage ``v_meas``."""
    cap = region.q_headroom
    span = curve.v_sat - curve.v_zero
    if v_meas >= curve.v_zero:
        frac = min((v_meas - curve.v_zero) / span, 1.0)
        return -frac * cap
    if not curve.symmetric:
        return 0.0
    frac = min((curve.v_zero - v_meas) / span, 1.0)
    return frac * cap
