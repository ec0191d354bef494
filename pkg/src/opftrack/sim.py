"""Closed-loop simulation engine, scenario handling, and tracking metrics.

One simulation step: apply the current setpoints and loads to the plant
(an algebraic AC power-flow solve, or the linear model), read the metered
magnitudes plus bounded noise, then advance the controller state. The
controller update is simultaneous: the new setpoints use the previous
duals, matching the analyzed step map.

Tracking reports compare the recorded primal-dual trajectory against
per-step saddle-point oracles and evaluate the asymptotic error bound
``(sqrt(2) alpha e + sigma_z) / (1 - rho(alpha))``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .baseline import DroopCurve, droop_q
from .controller import (
    ControllerParams,
    ConvergenceConstants,
    CostParams,
    DualState,
    OperatingRegion,
    SaddleProblem,
    VoltageCoupling,
    convergence_constants,
    dual_step_feedback,
    eval_constraints,
    pack_state,
    primal_step,
    solve_saddle_oracle,
)
from .feeder import FeederModel, build_admittance
from .powerflow import (
    LinearModel,
    PowerFlowError,
    PowerInjection,
    build_linear_model,
    no_load_voltage,
    predict_voltage_magnitude,
    solve_ac,
)

__all__ = [
    "Scenario",
    "ScenarioParams",
    "ControlSetup",
    "StepRecord",
    "TrackingReport",
    "PlantError",
    "STRATEGIES",
    "generate_scenario",
    "read_scenario",
    "write_scenario",
    "run_closed_loop",
    "step_problem",
    "eval_cost",
    "measure_tracking",
    "write_trajectory",
    "read_trajectory",
]

STRATEGIES = ("pursuit", "droop", "none")

DUAL_DIAG_LIMIT = 1e6


class PlantError(RuntimeError):
    """AC plant failure during a closed-loop run."""

    def __init__(self, step: int, cause: PowerFlowError):
        super().__init__(f"plant failure at step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class Scenario:
    """Time series driving a run: loads, DER availability, voltage band.

    Loads are positive demands over buses 1..N; ``p_av`` is per DER in the
    feeder's DER order. ``noise_amp`` is the half-width of the uniform
    measurement noise.
    """

    tau: float
    p_load: np.ndarray
    q_load: np.ndarray
    p_av: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    noise_amp: float = 0.0

    def __post_init__(self) -> None:
        for name in ("p_load", "q_load", "p_av", "v_min", "v_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        k = self.p_load.shape[0]
        if not (
            self.q_load.shape == self.p_load.shape
            and self.p_av.shape[0] == k
            and self.v_min.shape == (k,)
            and self.v_max.shape == (k,)
        ):
            raise ValueError("scenario series must share the same number of steps")
        if np.any(self.p_av < 0):
            raise ValueError("p_av must be nonnegative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def n_steps(self) -> int:
        return self.p_load.shape[0]


@dataclass(frozen=True)
class ScenarioParams:
    """Knobs of the synthetic scenario generators.

    ``load_p`` is the per-bus active demand (scalar broadcast or length-N
    array); availability fractions are relative to each DER's rating. Time
    profiles are functions of wall-clock time ``k * tau``, so refining tau
    samples the same underlying trace more densely.
    """

    n_steps: int = 600
    tau: float = 0.33
    v_min: float = 0.95
    v_max: float = 1.05
    load_p: float | np.ndarray = 0.008
    load_q_ratio: float = 0.4
    load_swing: float = 0.1
    pav_floor: float = 0.15
    pav_peak: float = 0.9
    ramp_start: float = 0.2
    ramp_end: float = 0.9
    bell_center: float = 0.5
    bell_width: float = 0.28
    bell_clip: float = 1.0
    bell_fall: float = 1.0
    n_dips: int = 3
    dip_depth: float = 0.4
    dip_width_s: float | None = None
    vmax_plateaus: tuple[float, float, float] = (1.05, 1.035, 1.02)
    vmax_fractions: tuple[float, float, float] = (7 / 12, 1 / 12, 4 / 12)
    noise_amp: float = 0.0


def _load_series(feeder: FeederModel, par: ScenarioParams, t: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    n = feeder.n_nodes
    base = np.broadcast_to(np.asarray(par.load_p, dtype=float), (n,)).copy()
    horizon = max(t[-1], 1e-9) if len(t) else 1.0
    if par.load_swing > 0:
        phases = rng.uniform(0.0, 2.0 * math.pi, n)
        wave = 1.0 + par.load_swing * np.sin(
            2.0 * math.pi * t[:, None] / horizon + phases[None, :]
        )
        p = base[None, :] * wave
    else:
        p = np.tile(base, (len(t), 1))
    return p, par.load_q_ratio * p


def _irradiance(kind: str, par: ScenarioParams, t: np.ndarray, rng) -> np.ndarray:
    horizon = max(t[-1], 1e-9) if len(t) else 1.0
    if kind == "static":
        return np.full(len(t), par.pav_peak)
    if kind == "ramp":
        if len(t) < 2:
            return np.full(len(t), par.ramp_start)
        return par.ramp_start + (par.ramp_end - par.ramp_start) * t / horizon
    if kind == "vmax_steps":
        # constant clear-sky availability: the stepped voltage limit is the
        # only disturbance, so limit-step response can be read off directly
        return np.full(len(t), par.pav_peak)
    # diurnal bell for cloud_transient; bell_clip < 1 gives a flat clear-sky
    # plateau around the apex, bell_fall > 1 slows the afternoon decay
    dt = t - par.bell_center * horizon
    width = par.bell_width * horizon * np.where(dt > 0, par.bell_fall, 1.0)
    g = np.exp(-((dt / width) ** 2))
    frac = par.pav_floor + (par.pav_peak - par.pav_floor) * np.minimum(
        g / par.bell_clip, 1.0
    )
    if kind == "cloud_transient" and par.n_dips > 0:
        factor = np.ones(len(t))
        width = par.dip_width_s if par.dip_width_s is not None else 0.02 * horizon
        for _ in range(par.n_dips):
            center = rng.uniform(0.25 * horizon, 0.75 * horizon)
            w = rng.uniform(0.5, 1.5) * width
            depth = rng.uniform(0.3, 1.0) * par.dip_depth
            factor -= depth * np.exp(-(((t - center) / w) ** 2))
        frac = frac * np.clip(factor, 1.0 - par.dip_depth, 1.0)
    return frac


def generate_scenario(
    kind: str,
    feeder: FeederModel,
    seed: int,
    params: ScenarioParams | None = None,
) -> Scenario:
    """Deterministic synthetic scenario of the requested kind.

    Kinds: ``static`` (all series constant), ``ramp`` (linear availability
    ramp), ``cloud_transient`` (diurnal bell with bounded fast irradiance
    dips), ``vmax_steps`` (bell without dips plus a piecewise-constant
    upper voltage limit taking the three plateau values).
    """
    if kind not in ("static", "ramp", "cloud_transient", "vmax_steps"):
        raise ValueError(f"unknown scenario kind {kind!r}")
    par = params or ScenarioParams()
    rng = np.random.default_rng(seed)
    k = par.n_steps
    t = np.arange(k) * par.tau
    if kind == "static":
        p = np.broadcast_to(
            np.asarray(par.load_p, dtype=float), (feeder.n_nodes,)
        ).copy()
        p_load = np.tile(p, (k, 1))
        q_load = par.load_q_ratio * p_load
    else:
        p_load, q_load = _load_series(feeder, par, t, rng)
    frac = _irradiance(kind, par, t, rng)
    ratings = np.asarray(feeder.der_ratings)
    p_av = np.minimum(frac[:, None] * ratings[None, :], ratings[None, :])
    v_min = np.full(k, par.v_min)
    if kind == "vmax_steps":
        v_max = np.empty(k)
        f1, f2, _ = par.vmax_fractions
        b1 = int(round(f1 * k))
        b2 = int(round((f1 + f2) * k))
        v_max[:b1] = par.vmax_plateaus[0]
        v_max[b1:b2] = par.vmax_plateaus[1]
        v_max[b2:] = par.vmax_plateaus[2]
    else:
        v_max = np.full(k, par.v_max)
    return Scenario(
        tau=par.tau,
        p_load=p_load,
        q_load=q_load,
        p_av=p_av,
        v_min=v_min,
        v_max=v_max,
        noise_amp=par.noise_amp,
    )


# ---------------------------------------------------------------------------
# scenario files: columnar text, one row per step


def _fmt(x: float) -> str:
    # repr of a Python float round-trips exactly; numpy scalars do not
    return repr(float(x))


def write_scenario(scenario: Scenario, feeder: FeederModel, path: str) -> None:
    n = feeder.n_nodes
    header = (
        ["time_s", "v_min", "v_max"]
        + [f"pl_{i}" for i in range(1, n + 1)]
        + [f"ql_{i}" for i in range(1, n + 1)]
        + [f"pav_{i}" for i in feeder.der_nodes]
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(scenario.n_steps):
            row = (
                [_fmt(k * scenario.tau), _fmt(scenario.v_min[k]), _fmt(scenario.v_max[k])]
                + [_fmt(x) for x in scenario.p_load[k]]
                + [_fmt(x) for x in scenario.q_load[k]]
                + [_fmt(x) for x in scenario.p_av[k]]
            )
            w.writerow(row)


def read_scenario(path: str, feeder: FeederModel, noise_amp: float = 0.0) -> Scenario:
    """Parse a columnar scenario file; the column set must match the feeder."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader if row]
    n = feeder.n_nodes
    expected = (
        ["time_s", "v_min", "v_max"]
        + [f"pl_{i}" for i in range(1, n + 1)]
        + [f"ql_{i}" for i in range(1, n + 1)]
        + [f"pav_{i}" for i in feeder.der_nodes]
    )
    if header != expected:
        raise ValueError(
            f"{path}: scenario columns do not match the feeder "
            f"(expected {len(expected)} columns starting with time_s)"
        )
    data = np.asarray(rows, dtype=float)
    if data.shape[0] < 2:
        tau = 1.0 if data.shape[0] < 2 else float(data[1, 0] - data[0, 0])
    else:
        tau = float(data[1, 0] - data[0, 0])
    g = feeder.n_der
    return Scenario(
        tau=tau,
        v_min=data[:, 1],
        v_max=data[:, 2],
        p_load=data[:, 3 : 3 + n],
        q_load=data[:, 3 + n : 3 + 2 * n],
        p_av=data[:, 3 + 2 * n : 3 + 2 * n + g],
        noise_amp=noise_amp,
    )


# ---------------------------------------------------------------------------
# closed loop


@dataclass(frozen=True)
class ControlSetup:
    """Controller/baseline configuration shared by all strategies."""

    params: ControllerParams
    costs: tuple[CostParams, ...]
    region_kind: str = "joint"
    droop: DroopCurve = field(default_factory=DroopCurve)
    lag_beta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "costs", tuple(self.costs))
        if not 0.0 <= self.lag_beta < 1.0:
            raise ValueError("lag_beta must be in [0, 1)")


@dataclass(frozen=True)
class StepRecord:
    """State of one closed-loop step (commanded setpoints, plant response)."""

    k: int
    y: np.ndarray
    u: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray
    v_mag: np.ndarray
    cost: float
    max_violation: float
    pf_residual: float


def _regions_at(feeder: FeederModel, setup: ControlSetup, p_av_k: np.ndarray) -> tuple:
    return tuple(
        OperatingRegion(setup.region_kind, s, float(p))
        for s, p in zip(feeder.der_ratings, p_av_k)
    )


def run_closed_loop(
    feeder: FeederModel,
    scenario: Scenario,
    strategy: str,
    setup: ControlSetup,
    seed: int = 0,
    z0: tuple[np.ndarray, DualState] | None = None,
    plant: str = "ac",
) -> list[StepRecord]:
    """Run the measurement-driven loop and record every step.

    Strategies: ``pursuit`` (primal-dual controller), ``droop`` (local
    Volt/VAr on each inverter's own bus voltage), ``none`` (full available
    power at unity power factor). ``plant`` selects the AC fixed-point
    solve or the linear magnitude model. Deterministic for fixed inputs
    and seed.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if plant not in ("ac", "linear"):
        raise ValueError(f"unknown plant {plant!r}")
    if scenario.p_av.shape[1] != feeder.n_der:
        raise ValueError("scenario DER columns do not match the feeder")
    if scenario.p_load.shape[1] != feeder.n_nodes:
        raise ValueError("scenario load columns do not match the feeder")

    adm = build_admittance(feeder)
    v0 = feeder.slack_voltage
    lm = build_linear_model(adm, v0)
    coupling = VoltageCoupling.from_linear_model(lm, feeder)
    mon = feeder.monitored_indices()
    der = feeder.der_indices()
    rng = np.random.default_rng(seed)
    g = feeder.n_der

    if z0 is not None:
        u = np.asarray(z0[0], dtype=float).copy()
        duals = z0[1]
    else:
        u = np.column_stack([scenario.p_av[0], np.zeros(g)])
        duals = DualState.zeros(len(mon))
    u_applied = u.copy()
    v_warm = no_load_voltage(adm, v0)
    dual_warned = False

    records: list[StepRecord] = []
    for k in range(scenario.n_steps):
        params_k = replace(
            setup.params, v_min=float(scenario.v_min[k]), v_max=float(scenario.v_max[k])
        )
        regions_k = _regions_at(feeder, setup, scenario.p_av[k])
        if setup.lag_beta > 0.0:
            u_applied = u_applied + (1.0 - setup.lag_beta) * (u - u_applied)
        else:
            u_applied = u

        p_net = -scenario.p_load[k].copy()
        q_net = -scenario.q_load[k].copy()
        p_net[der] += u_applied[:, 0]
        q_net[der] += u_applied[:, 1]
        inj = PowerInjection(p_net, q_net)

        if plant == "ac":
            try:
                sol = solve_ac(adm, inj, v0, init=v_warm)
            except PowerFlowError as exc:
                raise PlantError(k, exc) from exc
            v_warm = sol.voltages.v
            v_mag = sol.voltages.rho
            pf_residual = sol.residual
        else:
            v_mag = predict_voltage_magnitude(lm, inj)
            pf_residual = 0.0

        y = v_mag[mon].copy()
        if scenario.noise_amp > 0.0:
            y = y + rng.uniform(-scenario.noise_amp, scenario.noise_amp, len(mon))

        mon_mag = v_mag[mon]
        viol = max(
            0.0,
            float(np.max(params_k.v_min - mon_mag)),
            float(np.max(mon_mag - params_k.v_max)),
        )
        cost = float(
            sum(
                c.value(u[i, 0], u[i, 1], scenario.p_av[k, i])
                for i, c in enumerate(setup.costs)
            )
        )
        records.append(
            StepRecord(
                k=k,
                y=y,
                u=u.copy(),
                gamma=duals.gamma.copy(),
                mu=duals.mu.copy(),
                v_mag=np.asarray(v_mag, dtype=float).copy(),
                cost=cost,
                max_violation=viol,
                pf_residual=pf_residual,
            )
        )

        if strategy == "pursuit":
            # simultaneous update: the primal step reads the pre-update duals
            u_next = primal_step(u, duals, setup.costs, regions_k, coupling, params_k)
            duals = dual_step_feedback(duals, y, params_k)
            u = u_next
            if not dual_warned and (
                np.max(duals.gamma, initial=0.0) > DUAL_DIAG_LIMIT
                or np.max(duals.mu, initial=0.0) > DUAL_DIAG_LIMIT
            ):
                dual_warned = True
                warnings.warn(
                    f"dual magnitude exceeded {DUAL_DIAG_LIMIT:.0e} at step {k}; "
                    "the instance may lack a strictly feasible point",
                    stacklevel=2,
                )
        elif strategy == "droop":
            v_local = v_mag[der].copy()
            if scenario.noise_amp > 0.0:
                v_local = v_local + rng.uniform(
                    -scenario.noise_amp, scenario.noise_amp, g
                )
            q_new = np.asarray(
                [
                    droop_q(float(v_local[i]), regions_k[i], setup.droop)
                    for i in range(g)
                ]
            )
            u = np.column_stack([scenario.p_av[k], q_new])
        else:  # none
            u = np.column_stack([scenario.p_av[k], np.zeros(g)])
    return records


def step_problem(
    feeder: FeederModel,
    lm: LinearModel,
    scenario: Scenario,
    setup: ControlSetup,
    k: int,
) -> SaddleProblem:
    """Time-frozen saddle instance for step ``k`` of a scenario."""
    from .powerflow import constraint_offsets

    c = constraint_offsets(lm, scenario.p_load[k], scenario.q_load[k], feeder)
    coupling = VoltageCoupling.from_linear_model(lm, feeder, c=c)
    der = feeder.der_indices()
    params_k = replace(
        setup.params, v_min=float(scenario.v_min[k]), v_max=float(scenario.v_max[k])
    )
    return SaddleProblem(
        costs=setup.costs,
        regions=_regions_at(feeder, setup, scenario.p_av[k]),
        coupling=coupling,
        p_load_der=scenario.p_load[k][der],
        q_load_der=scenario.q_load[k][der],
        params=params_k,
    )


def eval_cost(
    records: list[StepRecord],
    costs: tuple[CostParams, ...],
    p_av: np.ndarray,
    reactive_only: bool = False,
) -> np.ndarray:
    """Per-step generation cost of a recorded run.

    With ``reactive_only`` the curtailment term is dropped, which is the
    reporting convention for the droop baseline (whose P always equals
    P_av, making both conventions coincide for it).
    """
    out = np.empty(len(records))
    for j, rec in enumerate(records):
        if reactive_only:
            out[j] = sum(c.c_q * rec.u[i, 1] ** 2 for i, c in enumerate(costs))
        else:
            out[j] = sum(
                c.value(rec.u[i, 0], rec.u[i, 1], p_av[rec.k, i])
                for i, c in enumerate(costs)
            )
    return out


@dataclass(frozen=True)
class TrackingReport:
    """Tracking-bound certificate of a recorded pursuit run.

    ``bound_satisfied`` is None when the configured stepsize carries no
    contraction guarantee (``rho_alpha >= 1``).
    """

    constants: ConvergenceConstants
    sigma_z_measured: float
    e_measured: float
    bound_rhs: float
    tracking_error_tail: float
    bound_satisfied: bool | None
    decimation: int
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "constants": {
                "L": self.constants.L,
                "G": self.constants.G,
                "eta": self.constants.eta,
                "L_reg": self.constants.L_reg,
                "rho_alpha": self.constants.rho_alpha,
                "alpha_max": self.constants.alpha_max,
            },
            "sigma_z_measured": self.sigma_z_measured,
            "e_measured": self.e_measured,
            # strict JSON has no Infinity; a vacuous bound serializes as null
            "bound_rhs": self.bound_rhs if math.isfinite(self.bound_rhs) else None,
            "tracking_error_tail": self.tracking_error_tail,
            "bound_satisfied": self.bound_satisfied,
            "decimation": self.decimation,
            "note": self.note,
        }


def measure_tracking(
    feeder: FeederModel,
    scenario: Scenario,
    setup: ControlSetup,
    records: list[StepRecord],
    decimation: int = 10,
    oracle_tol: float = 1e-11,
) -> TrackingReport:
    """Compare a recorded pursuit run against per-step saddle oracles.

    Oracles are solved on every ``decimation``-th step (warm started along
    the sweep); ``sigma_z_measured`` is the largest per-step optimizer
    drift inferred from consecutive oracle pairs, and ``e_measured`` the
    largest gap between measurement-based and model-based dual gradients
    across all recorded steps.
    """
    if decimation < 1:
        raise ValueError("decimation must be >= 1")
    adm = build_admittance(feeder)
    lm = build_linear_model(adm, feeder.slack_voltage)
    der = feeder.der_indices()

    coupling0 = VoltageCoupling.from_linear_model(lm, feeder)
    consts = convergence_constants(setup.costs, coupling0, setup.params)

    ks = list(range(0, scenario.n_steps, decimation))
    stars: dict[int, np.ndarray] = {}
    warm = None
    for k in ks:
        prob = step_problem(feeder, lm, scenario, setup, k)
        sol = solve_saddle_oracle(prob, tol=oracle_tol, z0=warm)
        warm = (sol.u, DualState(sol.gamma, sol.mu))
        stars[k] = pack_state(sol.u, sol.gamma, sol.mu)

    sigma_z = 0.0
    for k1, k2 in zip(ks, ks[1:]):
        drift = float(np.linalg.norm(stars[k2] - stars[k1])) / (k2 - k1)
        sigma_z = max(sigma_z, drift)

    e_measured = 0.0
    eps = setup.params.epsilon
    for rec in records:
        prob = step_problem(feeder, lm, scenario, setup, rec.k)
        g, g_bar = eval_constraints(
            prob.coupling, rec.u, prob.p_load_der, prob.q_load_der, prob.params
        )
        fb_gamma = (prob.params.v_min - rec.y - eps * rec.gamma) - (g - eps * rec.gamma)
        fb_mu = (rec.y - prob.params.v_max - eps * rec.mu) - (g_bar - eps * rec.mu)
        e_measured = max(
            e_measured,
            float(np.linalg.norm(fb_gamma)),
            float(np.linalg.norm(fb_mu)),
        )

    tail_from = int(math.ceil(0.75 * scenario.n_steps))
    tail = 0.0
    for k in ks:
        if k >= tail_from:
            rec = records[k]
            zk = pack_state(rec.u, rec.gamma, rec.mu)
            tail = max(tail, float(np.linalg.norm(zk - stars[k])))

    rho = consts.rho_alpha
    if rho < 1.0:
        bound_rhs = (
            math.sqrt(2.0) * setup.params.alpha * e_measured + sigma_z
        ) / (1.0 - rho)
        satisfied: bool | None = tail <= bound_rhs
        note = ""
    else:
        bound_rhs = math.inf
        satisfied = None
        note = "no contraction guarantee: alpha >= alpha_max"
    return TrackingReport(
        constants=consts,
        sigma_z_measured=sigma_z,
        e_measured=e_measured,
        bound_rhs=bound_rhs,
        tracking_error_tail=tail,
        bound_satisfied=satisfied,
        decimation=decimation,
        note=note,
    )


def write_trajectory(
    records: list[StepRecord], feeder: FeederModel, scenario: Scenario, path: str
) -> None:
    """Flatten records to columnar text, one row per step, byte-stable."""
    header = (
        ["k", "time_s", "cost", "max_violation", "pf_residual"]
        + [f"y_{n}" for n in feeder.monitored_nodes]
        + [f"p_{n}" for n in feeder.der_nodes]
        + [f"q_{n}" for n in feeder.der_nodes]
        + [f"gamma_{n}" for n in feeder.monitored_nodes]
        + [f"mu_{n}" for n in feeder.monitored_nodes]
        + [f"vmag_{n}" for n in range(1, feeder.n_nodes + 1)]
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rec in records:
            row = (
                [str(rec.k), _fmt(rec.k * scenario.tau), _fmt(rec.cost),
                 _fmt(rec.max_violation), _fmt(rec.pf_residual)]
                + [_fmt(x) for x in rec.y]
                + [_fmt(x) for x in rec.u[:, 0]]
                + [_fmt(x) for x in rec.u[:, 1]]
                + [_fmt(x) for x in rec.gamma]
                + [_fmt(x) for x in rec.mu]
                + [_fmt(x) for x in rec.v_mag]
            )
            w.writerow(row)


def read_trajectory(path: str, feeder: FeederModel) -> list[StepRecord]:
    """Inverse of write_trajectory for the given feeder layout."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    m = len(feeder.monitored_nodes)
    g = feeder.n_der
    n = feeder.n_nodes
    expected_len = 5 + m + 2 * g + 2 * m + n
    if len(header) != expected_len:
        raise ValueError(
            f"{path}: trajectory columns do not match the feeder "
            f"(expected {expected_len}, found {len(header)})"
        )
    records = []
    for row in rows:
        vals = [float(x) for x in row]
        o = 5
        y = np.asarray(vals[o : o + m])
        o += m
        p = np.asarray(vals[o : o + g])
        o += g
        q = np.asarray(vals[o : o + g])
        o += g
        gamma = np.asarray(vals[o : o + m])
        o += m
        mu = np.asarray(vals[o : o + m])
        o += m
        v_mag = np.asarray(vals[o : o + n])
        records.append(
            StepRecord(
                k=int(row[0]),
                y=y,
                u=np.column_stack([p, q]),
                gamma=gamma,
                mu=mu,
                v_mag=v_mag,
                cost=vals[2],
                max_violation=vals[3],
                pf_residual=vals[4],
            )
        )
    return records
