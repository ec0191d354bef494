"""Ready-made feeder instances for tests, demos, and benchmarks."""

from __future__ import annotations

import numpy as np

from .feeder import FeederModel, LineSegment

__all__ = ["two_bus", "chain", "random_radial", "feeder36"]


def two_bus(
    z: complex = 0.01 + 0.01j,
    y_shunt: complex = 0j,
    s_rating: float = 1.0,
    v0: complex = 1.0 + 0j,
) -> FeederModel:
    """Slack plus one bus hosting a single metered DER."""
    return FeederModel(
        n_nodes=1,
        lines=(LineSegment(0, 1, z, y_shunt),),
        der_nodes=(1,),
        monitored_nodes=(1,),
        der_ratings=(s_rating,),
        slack_voltage=v0,
    )


def chain(
    n: int,
    z: complex = 0.01 + 0.01j,
    der_nodes: tuple[int, ...] | None = None,
    monitored_nodes: tuple[int, ...] | None = None,
    der_ratings: tuple[float, ...] = (),
    y_shunt: complex = 0j,
) -> FeederModel:
    """Radial chain 0-1-...-n with identical segments."""
    lines = tuple(LineSegment(i, i + 1, z, y_shunt) for i in range(n))
    if der_nodes is None:
        der_nodes = (n,)
    if monitored_nodes is None:
        monitored_nodes = tuple(range(1, n + 1))
    return FeederModel(
        n_nodes=n,
        lines=lines,
        der_nodes=der_nodes,
        monitored_nodes=monitored_nodes,
        der_ratings=der_ratings,
    )


def random_radial(
    n: int,
    seed: int,
    z_mag_range: tuple[float, float] = (0.005, 0.05),
    shunt_prob: float = 0.0,
    der_nodes: tuple[int, ...] | None = None,
) -> FeederModel:
    """Random radial feeder: bus i attaches to a uniform random earlier bus.

    Impedance magnitudes are uniform in ``z_mag_range`` with impedance
    angles in [27, 63] degrees; optional small line charging.
    """
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(1, n + 1):
        parent = 0 if i == 1 else int(rng.integers(0, i))
        zm = rng.uniform(*z_mag_range)
        ang = rng.uniform(0.47, 1.1)
        ysh = 0j
        if shunt_prob > 0 and rng.uniform() < shunt_prob:
            ysh = 1j * rng.uniform(0.0, 0.01)
        lines.append(LineSegment(parent, i, zm * np.cos(ang) + 1j * zm * np.sin(ang), ysh))
    if der_nodes is None:
        der_nodes = (n,)
    return FeederModel(
        n_nodes=n,
        lines=tuple(lines),
        der_nodes=der_nodes,
        monitored_nodes=tuple(range(1, n + 1)),
    )


# 36-bus synthetic feeder: a trunk with five laterals, two of them deep.
# Parent of bus i is _PARENT36[i-1]. 18 inverters rated 0.3 / 0.35 / 0.2 pu
# on a 1 MVA base (300 / 350 / 200 kVA).
_PARENT36 = (
    0, 1, 2, 3, 4, 5,          # 1..6  trunk
    2, 7, 8, 9,                # 7..10 lateral at bus 2
    3, 11, 12, 13, 14,         # 11..15 lateral at bus 3
    4, 16, 17, 18, 19,         # 16..20 lateral at bus 4
    5, 21, 22, 23, 24,         # 21..25 lateral at bus 5
    6, 26, 27, 28,             # 26..29 lateral at bus 6
    29, 30, 31,                # 30..32 continuation
    28, 33, 34, 35,            # 33..36 deep branch at bus 28
)

DER36 = (4, 7, 10, 13, 17, 20, 22, 23, 26, 28, 29, 30, 31, 32, 33, 34, 35, 36)


def feeder36(impedance_scale: float = 1.0) -> FeederModel:
    """36-bus synthetic feeder with 18 inverters on the laterals.

    Trunk segments are stiffer than lateral ones, and the two deep branches
    below bus 28 are deliberately asymmetric (the 33-36 chain is longer
    electrically and carries the two largest inverters) so that the feeder
    has a single dominant overvoltage node. ``impedance_scale`` multiplies
    every impedance (used to tune the severity of the midday voltage rise
    in the shipped scenarios).
    """
    lines = []
    for i, parent in enumerate(_PARENT36, start=1):
        if parent < 7 and i < 7:
            z = 0.0056 + 0.0112j     # trunk
        elif 30 <= i <= 32:
            z = 0.0141 + 0.0141j     # deep branch, stiffer twin
        elif i >= 33:
            z = 0.0176 + 0.0176j     # deep branch carrying the big units
        else:
            z = 0.0112 + 0.0144j     # laterals
        lines.append(LineSegment(parent, i, z * impedance_scale))
    ratings = []
    for pos in range(1, len(DER36) + 1):
        if pos == 3:
            ratings.append(0.3)
        elif pos in (17, 18):
            ratings.append(0.35)
        else:
            ratings.append(0.2)
    # branch sentinels: tree ends plus trunk junctions. Monitoring long runs
    # of consecutive same-chain nodes gives near-identical sensitivity rows
    # and therefore nearly unobservable (glacial) dual modes; sentinels keep
    # the dual dynamics well conditioned while still seeing the radial
    # voltage maxima.
    monitored = (2, 4, 6, 10, 13, 17, 20, 23, 32, 36)
    return FeederModel(
        n_nodes=36,
        lines=tuple(lines),
        der_nodes=DER36,
        monitored_nodes=monitored,
        der_ratings=tuple(ratings),
    )
