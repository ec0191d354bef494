"""AC power flow and a linearized voltage-magnitude model.

The AC solver is a Z-bus fixed-point iteration on the slack-reduced
network equations; the linear model maps net nodal injections to
approximate voltage magnitudes around the no-load profile and supplies the
sensitivities used by the voltage-regulation controller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .feeder import AdmittanceMatrix, FeederModel

__all__ = [
    "PowerInjection",
    "VoltageProfile",
    "PFSolution",
    "LinearModel",
    "PowerFlowError",
    "VoltageCollapseError",
    "no_load_voltage",
    "build_linear_model",
    "predict_voltage_magnitude",
    "solve_ac",
    "constraint_offsets",
]

# magnitudes outside this band abort the fixed-point iteration
COLLAPSE_LO = 0.3
COLLAPSE_HI = 3.0


class PowerFlowError(RuntimeError):
    """Fixed-point iteration failed to converge."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class VoltageCollapseError(PowerFlowError):
    """Iterates left the physically meaningful magnitude band."""


@dataclass(frozen=True)
class PowerInjection:
    """Net complex injections at buses 1..N (generation positive, pu)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError("p and q must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("injections must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def s(self) -> np.ndarray:
        return self.p + 1j * self.q

    @classmethod
    def zeros(cls, n: int) -> "PowerInjection":
        return cls(np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class VoltageProfile:
    """Complex bus voltages for buses 1..N."""

    v: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "v", np.asarray(self.v, dtype=complex))

    @property
    def rho(self) -> np.ndarray:
        """Voltage magnitudes; derived, so always consistent with ``v``."""
        return np.abs(self.v)


@dataclass(frozen=True)
class PFSolution:
    voltages: VoltageProfile
    iterations: int
    residual: float


@dataclass(frozen=True)
class LinearModel:
    """First-order voltage-magnitude model around the no-load profile.

    ``predict_voltage_magnitude`` evaluates ``R p + B q + a``. ``R`` and
    ``B`` combine the resistive/reactive parts of the network impedance
    matrix with the no-load phase rotation; ``a`` is the no-load magnitude
    profile.
    """

    R: np.ndarray
    B: np.ndarray
    a: np.ndarray
    vbar: np.ndarray
    ZR: np.ndarray
    ZI: np.ndarray
    xi_bar: np.ndarray
    theta_bar: np.ndarray

    @property
    def H(self) -> np.ndarray:
        """Complex-voltage sensitivity, ``R + jB``."""
        return self.R + 1j * self.B

    @property
    def J(self) -> np.ndarray:
        """Complex-voltage sensitivity to reactive power, ``B - jR``."""
        return self.B - 1j * self.R

    @property
    def b(self) -> np.ndarray:
        """Affine term of the complex-voltage model (the no-load profile)."""
        return self.vbar


def no_load_voltage(adm: AdmittanceMatrix, v0: complex) -> np.ndarray:
    """Zero-injection voltage profile, ``-Y^{-1} ybar V0``."""
    return np.linalg.solve(adm.Y, -adm.ybar * v0)


def build_linear_model(adm: AdmittanceMatrix, v0: complex) -> LinearModel:
    """Linearize voltage magnitudes around the no-load profile.

    With ``Z = Y^{-1}`` split into real/imaginary parts and the no-load
    voltages written as ``rho_bar * exp(j theta)``, the magnitude response
    to injections (p, q) is ``R p + B q + a`` where the rows of R and B are
    scaled by ``1/rho_bar`` and rotated by the no-load angles.
    """
    Z = np.linalg.inv(adm.Y)
    ZR, ZI = Z.real.copy(), Z.imag.copy()
    vbar = no_load_voltage(adm, v0)
    rho = np.abs(vbar)
    if np.any(rho <= 0):
        raise ValueError("no-load profile has a zero-magnitude bus")
    ang = np.angle(vbar)
    xi = np.cos(ang)
    th = np.sin(ang)
    # right-multiplication by diag(xi or th) then diag(1/rho): column scaling
    cs = xi / rho
    ss = th / rho
    R = ZR * cs[None, :] - ZI * ss[None, :]
    B = ZI * cs[None, :] + ZR * ss[None, :]
    return LinearModel(
        R=R, B=B, a=rho, vbar=vbar, ZR=ZR, ZI=ZI, xi_bar=xi, theta_bar=th
    )


def predict_voltage_magnitude(lm: LinearModel, inj: PowerInjection) -> np.ndarray:
    return lm.R @ inj.p + lm.B @ inj.q + lm.a


def solve_ac(
    adm: AdmittanceMatrix,
    inj: PowerInjection,
    v0: complex,
    init: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int = 1000,
) -> PFSolution:
    """Z-bus fixed-point AC solve, ``v <- Y^{-1}(conj(s / v) - ybar V0)``.

    Parameters
    ----------
    init : array or None
        Warm-start voltages; defaults to the no-load profile. Magnitudes
        must stay in ``[0.3, 3]`` pu, otherwise the run aborts with
        :class:`VoltageCollapseError`.
    tol : float
        Convergence threshold on the infinity norm of the complex power
        mismatch, evaluated by substituting the iterate back into the
        network equations.
    """
    n = adm.Y.shape[0]
    if inj.p.shape[0] != n:
        raise ValueError(f"injection length {inj.p.shape[0]} != network size {n}")
    lu = lu_factor(adm.Y)
    yv0 = adm.ybar * v0
    if init is None:
        v = lu_solve(lu, -yv0)
    else:
        v = np.asarray(init, dtype=complex).copy()
        mags = np.abs(v)
        if np.any(mags < COLLAPSE_LO):
            raise ValueError("warm-start magnitudes must be >= 0.3 pu")
    s = inj.s
    residual = float("inf")
    for it in range(1, max_iter + 1):
        v = lu_solve(lu, np.conj(s / v) - yv0)
        mags = np.abs(v)
        if np.any(mags < COLLAPSE_LO) or np.any(mags > COLLAPSE_HI):
            raise VoltageCollapseError(
                f"collapse: |v| outside [{COLLAPSE_LO}, {COLLAPSE_HI}] at iteration {it}",
                residual,
            )
        s_model = v * np.conj(adm.Y @ v + yv0)
        residual = float(np.max(np.abs(s_model - s)))
        if residual <= tol:
            return PFSolution(VoltageProfile(v), it, residual)
    raise PowerFlowError(
        f"no convergence after {max_iter} iterations, residual {residual:.3e}",
        residual,
    )


def constraint_offsets(
    lm: LinearModel,
    p_load: np.ndarray,
    q_load: np.ndarray,
    feeder: FeederModel,
) -> np.ndarray:
    """Load-dependent offsets of the monitored-voltage model.

    ``p_load``/``q_load`` are full-length demand vectors (positive =
    consumption) for buses 1..N. Contributions from DER buses are excluded
    here; they enter the constraint functions through the net DER
    injections instead.
    """
    p_load = np.asarray(p_load, dtype=float)
    q_load = np.asarray(q_load, dtype=float)
    n = lm.a.shape[0]
    if p_load.shape != (n,) or q_load.shape != (n,):
        raise ValueError("load vectors must have one entry per non-slack bus")
    mask = np.ones(n, dtype=bool)
    mask[feeder.der_indices()] = False
    drop = lm.R[:, mask] @ p_load[mask] + lm.B[:, mask] @ q_load[mask]
    c_full = lm.a - drop
    return c_full[feeder.monitored_indices()]
