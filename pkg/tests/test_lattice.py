import math

import numpy as np
import pytest

from ambsde import DelaySpec, GridError, build_grid, shifted_index, shifted_indices, validate_delays


def test_grid_endpoints_are_exact():
    g = build_grid(1.0, 0.2, 240)
    assert g.dt == pytest.approx(0.005)
    assert g.n_T == 200 and g.n_total == 240 and g.n_window == 40
    assert g.times[g.n_T] == 1.0
    assert g.times[-1] == 1.2
    assert g.index_of(1.0) == 200


def test_grid_rejects_off_grid_horizon():
    with pytest.raises(GridError):
        build_grid(1.0, 0.3, 7)


def test_grid_times_read_only():
    g = build_grid(1.0, 0.0, 10)
    with pytest.raises(ValueError):
        g.times[0] = 3.0


def test_shifted_index_rounds_to_nearest_with_ties_up():
    g = build_grid(1.0, 0.5, 150)  # dt = 0.01
    assert shifted_index(g, 10, 0.05) == 15
    assert shifted_index(g, 10, 0.054) == 15
    assert shifted_index(g, 10, 0.055) == 16  # half step rounds up
    assert shifted_index(g, 10, 0.0) == 10
    assert shifted_index(g, 100, 0.5) == 150


def test_shifted_indices_matches_scalar_version():
    g = build_grid(1.0, 0.5, 150)
    d = DelaySpec.affine((0.3, -0.2)).evaluate(1, g)
    vec = shifted_indices(g, d)
    assert list(vec) == [shifted_index(g, i, d) for i in range(g.n_T + 1)]


def test_constant_delay_certifies_one():
    g = build_grid(1.0, 0.25, 250)
    rep = validate_delays(g, DelaySpec.constant(0.25, 0.1, 0.0))
    assert rep.passed and rep.L == 1.0


def test_affine_delay_certifies_inverse_slope():
    g = build_grid(1.0, 0.3, 260)
    rep = validate_delays(g, DelaySpec.affine((0.3, -0.2)))
    assert rep.passed
    assert rep.L == pytest.approx(1.0 / 0.8, rel=1e-15)
    rep2 = validate_delays(g, DelaySpec.affine((0.1, 0.1)))
    assert rep2.L == pytest.approx(1.0 / 1.1, rel=1e-15)


def test_delay_past_window_is_reported():
    g = build_grid(1.0, 0.2, 240)
    rep = validate_delays(g, DelaySpec.constant(0.5))
    assert not rep.passed
    assert any("anticipation bound" in m for m in rep.messages())


def test_delay_exactly_at_window_end_passes():
    g = build_grid(1.0, 0.2, 240)
    assert validate_delays(g, DelaySpec.constant(0.2)).passed


@pytest.mark.parametrize("b", [-1.0, -1.5])
def test_affine_slope_at_or_below_minus_one_rejected(b):
    g = build_grid(0.5, 0.5, 100)
    rep = validate_delays(g, DelaySpec.affine((0.6, b)))
    assert not rep.passed and rep.L is None


def test_negative_delay_rejected():
    g = build_grid(1.0, 0.5, 150)
    rep = validate_delays(g, DelaySpec.affine((0.1, -0.5)))
    assert not rep.passed
    assert any("negative" in m for m in rep.messages())


def test_tabulated_delay_spot_check():
    g = build_grid(1.0, 0.25, 100)
    table = np.full(g.n_T + 1, 0.25)
    good = DelaySpec.tabulated(table, table, table, L=1.0)
    assert validate_delays(g, good).passed
    # every early time maps into the same point: no small L can work
    squash = np.maximum(0.0, 1.0 - g.times[: g.n_T + 1])
    bad = DelaySpec.tabulated(squash, squash, squash, L=1.0)
    rep = validate_delays(g, bad)
    assert not rep.passed
    assert any("spot check" in m for m in rep.messages())


def test_tabulated_needs_declared_L():
    t = np.zeros(5)
    with pytest.raises(ValueError):
        DelaySpec("tabulated", tables=(t, t, t))
