"""Feeder data model, validation, and nodal admittance assembly.

Models a single-phase (balanced equivalent) distribution network: buses
``0..N`` with bus 0 the slack at the substation transformer, pi-model line
segments, and per-unit quantities throughout. ``base_power`` is carried
only for unit conversion at the I/O boundary; all internal math is in pu.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RCOND_LIMIT",
    "FeederError",
    "LineSegment",
    "FeederModel",
    "AdmittanceMatrix",
    "validate_feeder",
    "build_admittance",
    "feeder_from_dict",
    "feeder_to_dict",
    "load_feeder",
    "save_feeder",
]

# reciprocal-condition threshold below which the reduced admittance block
# is treated as numerically singular
RCOND_LIMIT = 1e-10

SLACK = 0


class FeederError(ValueError):
    """Structurally invalid or numerically degenerate network."""


@dataclass(frozen=True)
class LineSegment:
    """Pi-model line segment.

    Parameters
    ----------
    from_node, to_node : int
        Terminal buses; 0 denotes the slack bus.
    z : complex
        Series impedance in pu. Must be nonzero.
    y_shunt : complex
        Total line-charging admittance in pu; half is lumped at each
        terminal.
    """

    from_node: int
    to_node: int
    z: complex
    y_shunt: complex = 0j


@dataclass(frozen=True)
class FeederModel:
    """Static network description.

    ``der_nodes`` are the buses hosting controllable inverters (ordered,
    no duplicates, slack excluded) and ``der_ratings`` their apparent
    power ratings in pu; ``monitored_nodes`` are the buses whose voltage
    magnitudes are metered and regulated.
    """

    n_nodes: int
    lines: tuple[LineSegment, ...]
    der_nodes: tuple[int, ...]
    monitored_nodes: tuple[int, ...]
    der_ratings: tuple[float, ...] = ()
    slack_voltage: complex = 1.0 + 0j
    base_power: float = 1.0e6

    def __post_init__(self) -> None:
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "der_nodes", tuple(int(n) for n in self.der_nodes))
        object.__setattr__(
            self, "monitored_nodes", tuple(int(n) for n in self.monitored_nodes)
        )
        ratings = tuple(float(s) for s in self.der_ratings)
        if not ratings:
            ratings = tuple(1.0 for _ in self.der_nodes)
        object.__setattr__(self, "der_ratings", ratings)

    @property
    def n_der(self) -> int:
        return len(self.der_nodes)

    def der_indices(self) -> np.ndarray:
        """0-based row indices of the DER buses in the reduced ordering."""
        return np.asarray([n - 1 for n in self.der_nodes], dtype=int)

    def monitored_indices(self) -> np.ndarray:
        """0-based row indices of the metered buses in the reduced ordering."""
        return np.asarray([n - 1 for n in self.monitored_nodes], dtype=int)


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Partitioned bus admittance matrix.

    The full ``(N+1) x (N+1)`` matrix is stored as the slack self term
    ``y00``, the slack-to-network column ``ybar`` and the reduced network
    block ``Y``, with ``ordering`` giving the bus id of each reduced row.
    """

    y00: complex
    ybar: np.ndarray
    Y: np.ndarray
    ordering: tuple[int, ...]

    def full(self) -> np.ndarray:
        """Reassemble the full admittance matrix including the slack row."""
        n = self.Y.shape[0]
        out = np.zeros((n + 1, n + 1), dtype=complex)
        out[0, 0] = self.y00
        out[1:, 0] = self.ybar
        out[0, 1:] = self.ybar
        out[1:, 1:] = self.Y
        return out


def validate_feeder(feeder: FeederModel) -> list[str]:
    """Run structural checks and return a list of diagnostics (empty if clean).

    Checks: bus indices in range, no self loops, nonzero series impedances,
    no duplicate line corridors, graph connectivity over all buses including
    the slack, and nonempty in-range DER / monitored sets.
    """
    diags: list[str] = []
    n = feeder.n_nodes
    if n < 1:
        diags.append(f"n_nodes must be >= 1, got {n}")
        return diags

    seen: set[tuple[int, int]] = set()
    indexable: list[LineSegment] = []
    for ln in feeder.lines:
        if not (0 <= ln.from_node <= n and 0 <= ln.to_node <= n):
            diags.append(
                f"line ({ln.from_node},{ln.to_node}) has endpoint outside 0..{n}"
            )
            continue
        if ln.from_node == ln.to_node:
            diags.append(f"line ({ln.from_node},{ln.to_node}) is a self loop")
            continue
        if ln.z == 0:
            diags.append(
                f"line ({ln.from_node},{ln.to_node}) has zero series impedance"
            )
            continue
        key = (min(ln.from_node, ln.to_node), max(ln.from_node, ln.to_node))
        if key in seen:
            diags.append(f"duplicate line corridor ({key[0]},{key[1]})")
            continue
        seen.add(key)
        indexable.append(ln)

    # connectivity over buses 0..N via union-find on the usable lines
    parent = list(range(n + 1))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for ln in indexable:
        ra, rb = find(ln.from_node), find(ln.to_node)
        if ra != rb:
            parent[ra] = rb
    roots = {find(i) for i in range(n + 1)}
    if len(roots) != 1:
        diags.append(f"disconnected: {len(roots)} components over buses 0..{n}")

    if not feeder.der_nodes:
        diags.append("no DER buses declared")
    if not feeder.monitored_nodes:
        diags.append("no monitored buses declared")
    for label, nodes in (("DER", feeder.der_nodes), ("monitored", feeder.monitored_nodes)):
        if len(set(nodes)) != len(nodes):
            diags.append(f"duplicate {label} bus ids")
        for node in nodes:
            if not (1 <= node <= n):
                diags.append(f"{label} bus {node} outside 1..{n}")
    if len(feeder.der_ratings) != len(feeder.der_nodes):
        diags.append("der_ratings length does not match der_nodes")
    elif any(s <= 0 for s in feeder.der_ratings):
        diags.append("DER ratings must be positive")
    return diags


def build_admittance(feeder: FeederModel) -> AdmittanceMatrix:
    """Assemble the partitioned bus admittance matrix.

    Each line contributes ``1/z`` between its terminals plus half of
    ``y_shunt`` at each terminal. Raises :class:`FeederError` if the
    feeder fails validation or if the reduced block is numerically
    singular (reciprocal condition below ``RCOND_LIMIT``).
    """
    diags = validate_feeder(feeder)
    if diags:
        raise FeederError("; ".join(diags))

    n = feeder.n_nodes
    full = np.zeros((n + 1, n + 1), dtype=complex)
    for ln in feeder.lines:
        ys = 1.0 / ln.z
        a, b = ln.from_node, ln.to_node
        full[a, b] -= ys
        full[b, a] -= ys
        full[a, a] += ys + ln.y_shunt / 2.0
        full[b, b] += ys + ln.y_shunt / 2.0

    Y = full[1:, 1:].copy()
    sv = np.linalg.svd(Y, compute_uv=False)
    rcond = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
    if rcond < RCOND_LIMIT:
        raise FeederError(
            f"degenerate network: reduced admittance rcond {rcond:.3e} < {RCOND_LIMIT:.0e}"
        )
    return AdmittanceMatrix(
        y00=complex(full[0, 0]),
        ybar=full[1:, 0].copy(),
        Y=Y,
        ordering=tuple(range(1, n + 1)),
    )


# ---------------------------------------------------------------------------
# feeder description files (JSON, strict keys)

_TOP_KEYS = {
    "n_nodes",
    "slack",
    "base_power_va",
    "lines",
    "der_nodes",
    "monitored_nodes",
}
_SLACK_KEYS = {"magnitude_pu", "angle_deg"}
_LINE_KEYS = {"from", "to", "r_pu", "x_pu", "b_shunt_pu"}
_DER_KEYS = {"node", "s_rating_pu"}


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise FeederError(f"unknown key(s) {sorted(unknown)} in {where}")


def feeder_from_dict(data: dict) -> FeederModel:
    """Build a :class:`FeederModel` from the documented mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise FeederError("feeder description must be a mapping")
    _check_keys(data, _TOP_KEYS, "feeder description")
    try:
        n_nodes = int(data["n_nodes"])
        slack = data.get("slack", {"magnitude_pu": 1.0, "angle_deg": 0.0})
        _check_keys(slack, _SLACK_KEYS, "slack")
        v0 = cmath.rect(
            float(slack.get("magnitude_pu", 1.0)),
            math.radians(float(slack.get("angle_deg", 0.0))),
        )
        lines = []
        for i, row in enumerate(data["lines"]):
            _check_keys(row, _LINE_KEYS, f"lines[{i}]")
            lines.append(
                LineSegment(
                    from_node=int(row["from"]),
                    to_node=int(row["to"]),
                    z=complex(float(row["r_pu"]), float(row["x_pu"])),
                    y_shunt=complex(0.0, float(row.get("b_shunt_pu", 0.0))),
                )
            )
        ders = []
        ratings = []
        for i, row in enumerate(data["der_nodes"]):
            _check_keys(row, _DER_KEYS, f"der_nodes[{i}]")
            ders.append(int(row["node"]))
            ratings.append(float(row.get("s_rating_pu", 1.0)))
        monitored = [int(m) for m in data["monitored_nodes"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FeederError(f"malformed feeder description: {exc}") from exc
    return FeederModel(
        n_nodes=n_nodes,
        lines=tuple(lines),
        der_nodes=tuple(ders),
        monitored_nodes=tuple(monitored),
        der_ratings=tuple(ratings),
        slack_voltage=v0,
        base_power=float(data.get("base_power_va", 1.0e6)),
    )


def feeder_to_dict(feeder: FeederModel) -> dict:
    """Inverse of :func:`feeder_from_dict` (round-trips exactly)."""
    return {
        "n_nodes": feeder.n_nodes,
        "slack": {
            "magnitude_pu": abs(feeder.slack_voltage),
            "angle_deg": math.degrees(cmath.phase(feeder.slack_voltage)),
        },
        "base_power_va": feeder.base_power,
        "lines": [
            {
                "from": ln.from_node,
                "to": ln.to_node,
                "r_pu": ln.z.real,
                "x_pu": ln.z.imag,
                "b_shunt_pu": ln.y_shunt.imag,
            }
            for ln in feeder.lines
        ],
        "der_nodes": [
            {"node": n, "s_rating_pu": s}
            for n, s in zip(feeder.der_nodes, feeder.der_ratings)
        ],
        "monitored_nodes": list(feeder.monitored_nodes),
    }


def load_feeder(path: str) -> FeederModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FeederError(f"{path}: not valid JSON: {exc}") from exc
    return feeder_from_dict(data)


def save_feeder(feeder: FeederModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(feeder_to_dict(feeder), fh, indent=2, sort_keys=True)
        fh.write("\n")
