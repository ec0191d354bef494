import numpy as np
import pytest

from opftrack import networks
from opftrack.feeder import build_admittance
from opftrack.powerflow import (
    LinearModel,
    PowerFlowError,
    PowerInjection,
    VoltageCollapseError,
    build_linear_model,
    constraint_offsets,
    no_load_voltage,
    predict_voltage_magnitude,
    solve_ac,
)


def test_no_load_profile_is_flat_without_shunts():
    adm = build_admittance(networks.chain(5))
    vbar = no_load_voltage(adm, 1.0 + 0j)
    assert np.allclose(vbar, 1.0, atol=1e-12)
    sol = solve_ac(adm, PowerInjection.zeros(5), 1.0 + 0j)
    assert np.allclose(sol.voltages.v, 1.0, atol=1e-9)
    assert sol.residual <= 1e-9


def test_two_bus_linear_model_hand_values():
    lm = build_linear_model(build_admittance(networks.two_bus()), 1.0 + 0j)
    assert np.allclose(lm.R, [[0.01]], atol=1e-15)
    assert np.allclose(lm.B, [[0.01]], atol=1e-15)
    assert np.allclose(lm.a, [1.0], atol=1e-15)
    w = predict_voltage_magnitude(lm, PowerInjection([-0.1], [-0.05]))
    # 1 + 0.01*(-0.1) + 0.01*(-0.05)
    assert w[0] == pytest.approx(0.9985, abs=1e-12)


def test_two_bus_ac_matches_independent_fixed_point():
    # independent scalar route: v <- (conj(s/v) + y) / y for ybar = -y, V0 = 1
    z = 0.01 + 0.01j
    y = 1.0 / z
    s = complex(-0.1, -0.05)
    v = 1.0 + 0j
    for _ in range(200):
        v = (np.conj(s / v) + y) / y
    sol = solve_ac(
        build_admittance(networks.two_bus()), PowerInjection([-0.1], [-0.05]), 1.0 + 0j
    )
    assert sol.voltages.v[0] == pytest.approx(v, abs=1e-10)
    assert sol.voltages.rho[0] == pytest.approx(0.9984976, abs=1e-7)
    assert sol.residual <= 1e-9


def test_linear_model_is_derivative_at_no_load():
    fd = networks.random_radial(12, seed=3)
    adm = build_admittance(fd)
    lm = build_linear_model(adm, fd.slack_voltage)
    h = 1e-5
    base = solve_ac(adm, PowerInjection.zeros(12), fd.slack_voltage, tol=1e-12)
    rho0 = base.voltages.rho
    for j in (0, 5, 11):
        p = np.zeros(12)
        p[j] = h
        rho_p = solve_ac(adm, PowerInjection(p, np.zeros(12)), fd.slack_voltage, tol=1e-12).voltages.rho
        assert np.allclose((rho_p - rho0) / h, lm.R[:, j], atol=1e-3)
        rho_q = solve_ac(adm, PowerInjection(np.zeros(12), p), fd.slack_voltage, tol=1e-12).voltages.rho
        assert np.allclose((rho_q - rho0) / h, lm.B[:, j], atol=1e-3)


def test_prediction_error_small_at_light_loading():
    # one instance of the accuracy property: 0.02 pu loading, error <= 1e-3
    fd = networks.random_radial(15, seed=9)
    adm = build_admittance(fd)
    lm = build_linear_model(adm, fd.slack_voltage)
    rng = np.random.default_rng(1)
    inj = PowerInjection(
        rng.uniform(-0.02, 0.02, 15), rng.uniform(-0.02, 0.02, 15)
    )
    rho = solve_ac(adm, inj, fd.slack_voltage, tol=1e-12).voltages.rho
    w = predict_voltage_magnitude(lm, inj)
    assert np.max(np.abs(w - rho)) <= 1e-3


def test_complex_sensitivity_identities():
    lm = build_linear_model(build_admittance(networks.feeder36()), 1.0 + 0j)
    assert np.allclose(lm.J, -1j * lm.H)
    assert np.allclose(lm.b, lm.vbar)
    assert np.allclose(lm.a, np.abs(lm.vbar))
    w0 = predict_voltage_magnitude(lm, PowerInjection.zeros(36))
    assert np.allclose(w0, lm.a)


def test_collapse_detected():
    adm = build_admittance(networks.two_bus())
    with pytest.raises(VoltageCollapseError):
        solve_ac(adm, PowerInjection([-50.0], [0.0]), 1.0 + 0j)


def test_non_convergence_reports_residual():
    adm = build_admittance(networks.two_bus())
    with pytest.raises(PowerFlowError) as err:
        solve_ac(adm, PowerInjection([-0.5], [-0.2]), 1.0 + 0j, max_iter=1)
    assert not isinstance(err.value, VoltageCollapseError)
    assert np.isfinite(err.value.residual) and err.value.residual > 1e-9


def test_warm_start_accepted_and_validated():
    adm = build_admittance(networks.two_bus())
    inj = PowerInjection([-0.3], [-0.1])
    cold = solve_ac(adm, inj, 1.0 + 0j)
    warm = solve_ac(adm, inj, 1.0 + 0j, init=cold.voltages.v)
    assert warm.iterations <= cold.iterations
    assert warm.voltages.v[0] == pytest.approx(cold.voltages.v[0], abs=1e-9)
    with pytest.raises(ValueError, match="warm-start"):
        solve_ac(adm, inj, 1.0 + 0j, init=np.asarray([0.1 + 0j]))


def test_injection_validation():
    with pytest.raises(ValueError):
        PowerInjection([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        PowerInjection([np.nan], [0.0])
    adm = build_admittance(networks.two_bus())
    with pytest.raises(ValueError, match="length"):
        solve_ac(adm, PowerInjection.zeros(4), 1.0 + 0j)


def test_constraint_offsets_consistent_with_full_model():
    # coupling form r(P - Pl) + b(Q - Ql) + c must equal the feeder-wide
    # prediction with loads netted in, at the monitored rows
    from opftrack.controller import VoltageCoupling

    fd = networks.feeder36()
    lm = build_linear_model(build_admittance(fd), fd.slack_voltage)
    rng = np.random.default_rng(4)
    p_load = rng.uniform(0.0, 0.01, 36)
    q_load = rng.uniform(0.0, 0.004, 36)
    u = np.column_stack([rng.uniform(0, 0.2, 18), rng.uniform(-0.1, 0.1, 18)])
    der = fd.der_indices()

    c = constraint_offsets(lm, p_load, q_load, fd)
    coup = VoltageCoupling.from_linear_model(lm, fd, c=c)
    via_coupling = coup.predict(u, p_load[der], q_load[der])

    p_net = -p_load.copy()
    q_net = -q_load.copy()
    p_net[der] += u[:, 0]
    q_net[der] += u[:, 1]
    full = predict_voltage_magnitude(lm, PowerInjection(p_net, q_net))
    assert np.allclose(via_coupling, full[fd.monitored_indices()], atol=1e-12)

    with pytest.raises(ValueError, match="one entry per"):
        constraint_offsets(lm, p_load[:5], q_load[:5], fd)


def test_linear_model_requires_nonzero_profile():
    lm = build_linear_model(build_admittance(networks.two_bus()), 1.0 + 0j)
    assert isinstance(lm, LinearModel)
    with pytest.raises(ValueError, match="zero-magnitude"):
        build_linear_model(build_admittance(networks.two_bus()), 0j)
