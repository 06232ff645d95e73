import json
import math

import numpy as np
import pytest

from multicurve.curves import (
    CurveSet,
    NelsonSiegelParams,
    TenorGrid,
    basis_swap_value,
    build_curveset,
    curveset_from_tables,
    fair_basis_spread,
    fair_swap_rate,
    read_discount_table,
    read_libor_table,
    swap_value,
    zero_rate,
)
from multicurve.errors import AlignmentError, ConsistencyError, ParseError

OIS = NelsonSiegelParams(0.0003, 0.01, 0.07, 0.06)
M3 = NelsonSiegelParams(0.0032, 0.01, 0.07, 0.06)
M6 = NelsonSiegelParams(0.0050, 0.01, 0.07, 0.06)
G3 = TenorGrid("3m", 0.25, 18, 0.25)
G6 = TenorGrid("6m", 0.5, 9, 0.25)

# Published strike/spread grids for the 2Y-into-2Y window on these curves.
STRIKES = (0.013238, 0.023535, 0.033831, 0.044128)
SPREADS = (0.0010945, 0.0019458, 0.0027971, 0.0036484)
MULTIPLIERS = (0.6, 1.6 / 1.5, 23.0 / 15.0, 2.0)


@pytest.fixture(scope="module")
def curves():
    return build_curveset(
        OIS, {"3m": M3, "6m": M6}, {"3m": G3, "6m": G6}, require_positive=True
    )


def test_zero_rate_limit_at_zero():
    assert zero_rate(OIS, 0.0) == pytest.approx(0.0103, abs=1e-15)


def test_zero_rate_at_terminal():
    # Frozen from a 30-digit Decimal evaluation of the defining expression.
    assert zero_rate(OIS, 4.5) == pytest.approx(0.016973214852167483, abs=1e-15)


def test_zero_rate_flat_curve():
    flat = NelsonSiegelParams(0.02, 0.0, 0.0, 1.0)
    for t in (0.0, 0.25, 1.0, 10.0):
        assert zero_rate(flat, t) == 0.02


def test_zero_rate_vectorized(curves):
    t = np.array([0.0, 0.25, 4.5])
    vals = zero_rate(OIS, t)
    assert vals.shape == (3,)
    assert vals[0] == zero_rate(OIS, 0.0)
    assert vals[2] == zero_rate(OIS, 4.5)


def test_tenor_grid_validation():
    with pytest.raises(ValueError):
        TenorGrid("x", 0.3, 10, 0.25)
    with pytest.raises(ValueError):
        TenorGrid("x", 0.25, 0, 0.25)
    g = TenorGrid("6m", 0.5, 9, 0.25)
    assert g.step_multiple == 2
    assert g.terminal == 4.5
    assert g.map_to_fine(9) == 18
    with pytest.raises(IndexError):
        g.map_to_fine(10)


def test_nelson_siegel_validation():
    with pytest.raises(ValueError):
        NelsonSiegelParams(0.01, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        NelsonSiegelParams(math.nan, 0.0, 0.0, 1.0)


def test_flat_zero_ois_gives_unit_discounts():
    flat = NelsonSiegelParams(0.0, 0.0, 0.0, 1.0)
    cs = build_curveset(flat, {"3m": flat}, {"3m": G3})
    np.testing.assert_allclose(cs.ois_discounts, 1.0, atol=1e-16)
    for k in range(1, 19):
        assert cs.forward_rate("3m", k) == pytest.approx(0.0, abs=1e-15)


def test_single_curve_degeneration_kills_spreads():
    cs = build_curveset(OIS, {"3m": OIS, "6m": OIS}, {"3m": G3, "6m": G6})
    for name, grid in cs.grids.items():
        for k in range(1, grid.n_points + 1):
            assert cs.additive_spread(name, k) == pytest.approx(0.0, abs=1e-14)
            assert cs.multiplicative_spread(name, k) == pytest.approx(0.0, abs=1e-14)


def test_reference_curveset_values(curves):
    # Frozen values from the Nelson-Siegel table driving every later example.
    assert curves.discount(0) == 1.0
    assert curves.discount(18) == pytest.approx(0.9264645772671274, rel=1e-14)
    assert curves.libor("3m", 1) == pytest.approx(0.013668453273643522, rel=1e-13)
    assert curves.libor("3m", 18) == pytest.approx(0.0251015889639854, rel=1e-13)
    assert curves.libor("6m", 9) == pytest.approx(0.026755549984928795, rel=1e-13)


def test_spreads_positive_on_reference_curves(curves):
    for name, grid in curves.grids.items():
        for k in range(1, grid.n_points + 1):
            assert curves.multiplicative_spread(name, k) > 0


def test_libor_matches_direct_evaluation(curves):
    for k in range(1, 10):
        t0, t1 = (k - 1) * 0.5, k * 0.5
        df0 = math.exp(-zero_rate(M6, t0) * t0)
        df1 = math.exp(-zero_rate(M6, t1) * t1)
        assert curves.libor("6m", k) == pytest.approx((df0 / df1 - 1) / 0.5, rel=1e-14)


def test_positivity_check_rejects_negative_spread():
    low = NelsonSiegelParams(0.0001, 0.01, 0.07, 0.06)
    with pytest.raises(ConsistencyError):
        build_curveset(OIS, {"3m": low}, {"3m": G3}, require_positive=True)


def test_positivity_check_rejects_increasing_discounts():
    neg = NelsonSiegelParams(-0.05, 0.0, 0.0, 1.0)
    with pytest.raises(ConsistencyError):
        build_curveset(neg, {"3m": neg}, {"3m": G3}, require_positive=True)
    # without the flag the same curves build fine
    cs = build_curveset(neg, {"3m": neg}, {"3m": G3})
    assert cs.libor("3m", 1) < 0


def test_fair_swap_rate_single_period(curves):
    assert fair_swap_rate(curves, "3m", 8, 9) == curves.libor("3m", 9)


def test_fair_swap_rate_flat_fixings():
    flat = NelsonSiegelParams(0.02, 0.0, 0.0, 1.0)
    cs = build_curveset(OIS, {"3m": flat}, {"3m": G3})
    r = cs.libor("3m", 1)
    assert fair_swap_rate(cs, "3m", 0, 18) == pytest.approx(r, rel=1e-14)


def test_fair_swap_rate_reference_window(curves):
    # Frozen; 0.6x..2.0x of this rate reproduces the published strike grid.
    atm = fair_swap_rate(curves, "3m", 8, 16)
    assert atm == pytest.approx(0.02206395572248448, rel=1e-13)
    for m, strike in zip(MULTIPLIERS, STRIKES):
        assert m * atm == pytest.approx(strike, abs=5e-7)


def test_swap_value_zero_at_fair_rate(curves):
    atm = fair_swap_rate(curves, "3m", 8, 16)
    assert abs(swap_value(curves, "3m", 8, 16, atm)) < 1e-14


def test_swap_value_positive_at_zero_strike(curves):
    assert swap_value(curves, "3m", 8, 16, 0.0) > 0


def test_swap_value_empty_window(curves):
    assert swap_value(curves, "3m", 5, 5, 0.02) == 0.0


def test_swap_index_errors(curves):
    with pytest.raises(IndexError):
        fair_swap_rate(curves, "3m", 8, 19)
    with pytest.raises(IndexError):
        fair_swap_rate(curves, "3m", 8, 8)
    with pytest.raises(IndexError):
        swap_value(curves, "3m", -1, 5, 0.0)


def test_fair_basis_spread_reference_window(curves):
    # Frozen; 0.6x..2.0x of this spread reproduces the published spread grid.
    s = fair_basis_spread(curves, "3m", "6m", 8, 16, 4, 8)
    assert s == pytest.approx(0.001824228477869244, rel=1e-13)
    for m, spread in zip(MULTIPLIERS, SPREADS):
        assert m * s == pytest.approx(spread, abs=5e-7)


def test_basis_swap_value_zero_at_fair_spread(curves):
    s = fair_basis_spread(curves, "3m", "6m", 8, 16, 4, 8)
    assert abs(basis_swap_value(curves, "3m", "6m", 8, 16, 4, 8, s)) < 1e-14


def test_basis_swap_value_affine_in_spread(curves):
    v0 = basis_swap_value(curves, "3m", "6m", 8, 16, 4, 8, 0.0)
    v1 = basis_swap_value(curves, "3m", "6m", 8, 16, 4, 8, 0.001)
    v2 = basis_swap_value(curves, "3m", "6m", 8, 16, 4, 8, 0.002)
    slope = (v1 - v0) / 0.001
    annuity = 0.25 * sum(curves.ois_discounts[G3.map_to_fine(k)] for k in range(9, 17))
    assert slope == pytest.approx(-annuity, rel=1e-12)
    assert v2 - v1 == pytest.approx(v1 - v0, rel=1e-10)


def test_basis_spread_zero_when_legs_identical():
    ga = TenorGrid("a", 0.5, 9, 0.25)
    gb = TenorGrid("b", 0.5, 9, 0.25)
    cs = build_curveset(OIS, {"a": M6, "b": M6}, {"a": ga, "b": gb})
    assert fair_basis_spread(cs, "a", "b", 4, 8, 4, 8) == pytest.approx(0.0, abs=1e-15)


def test_basis_spread_zero_long_leg(curves):
    zeroed = dict(curves.libor_initial)
    zeroed["6m"] = np.zeros(9)
    cs = CurveSet(
        ois_discounts=curves.ois_discounts,
        libor_initial=zeroed,
        grids=curves.grids,
        fine_step=0.25,
        terminal=4.5,
    )
    s = fair_basis_spread(cs, "3m", "6m", 8, 16, 4, 8)
    assert s == pytest.approx(-fair_swap_rate(cs, "3m", 8, 16), rel=1e-13)


def test_basis_alignment_errors(curves):
    with pytest.raises(AlignmentError):
        fair_basis_spread(curves, "3m", "6m", 8, 16, 3, 8)
    with pytest.raises(AlignmentError):
        fair_basis_spread(curves, "6m", "3m", 4, 8, 8, 16)


def test_curveset_consistency_checks(curves):
    with pytest.raises(ConsistencyError):
        CurveSet(
            ois_discounts=np.ones(10),
            libor_initial={"3m": np.zeros(18)},
            grids={"3m": G3},
            fine_step=0.25,
            terminal=4.5,
        )
    with pytest.raises(ConsistencyError):
        CurveSet(
            ois_discounts=np.ones(19),
            libor_initial={},
            grids={"3m": G3},
            fine_step=0.25,
            terminal=4.5,
        )


def _write_reference_tables(tmp_path, curves, coarse=False):
    dpath = tmp_path / "discounts.csv"
    step = 2 if coarse else 1
    lines = ["maturity,discount"]
    for l in range(0, 19, step):
        lines.append(f"{l * 0.25:.10f},{curves.ois_discounts[l]:.15g}")
    dpath.write_text("\n".join(lines) + "\n")
    lpaths = {}
    for name, grid in curves.grids.items():
        rows = ["maturity_end,rate"]
        for k in range(1, grid.n_points + 1):
            rows.append(f"{k * grid.delta:.10f},{curves.libor(name, k):.15g}")
        lpaths[name] = tmp_path / f"libor_{name}.csv"
        lpaths[name].write_text("\n".join(rows) + "\n")
    return dpath, lpaths


def test_csv_round_trip(tmp_path, curves):
    dpath, lpaths = _write_reference_tables(tmp_path, curves)
    cs = curveset_from_tables(
        read_discount_table(dpath),
        {name: read_libor_table(p) for name, p in lpaths.items()},
        {"3m": G3, "6m": G6},
    )
    np.testing.assert_allclose(cs.ois_discounts, curves.ois_discounts, rtol=1e-12)
    np.testing.assert_allclose(cs.libor_initial["3m"], curves.libor_initial["3m"], rtol=1e-12)
    np.testing.assert_allclose(cs.libor_initial["6m"], curves.libor_initial["6m"], rtol=1e-12)


def test_log_linear_interpolation(tmp_path, curves):
    dpath, lpaths = _write_reference_tables(tmp_path, curves, coarse=True)
    cs = curveset_from_tables(
        read_discount_table(dpath),
        {name: read_libor_table(p) for name, p in lpaths.items()},
        {"3m": G3, "6m": G6},
    )
    # nodes reproduced exactly, midpoints are geometric means of neighbors
    np.testing.assert_allclose(cs.ois_discounts[::2], curves.ois_discounts[::2], rtol=1e-12)
    mid = np.sqrt(cs.ois_discounts[:-2:2] * cs.ois_discounts[2::2])
    np.testing.assert_allclose(cs.ois_discounts[1::2], mid, rtol=1e-12)


def test_json_tables(tmp_path, curves):
    dpath = tmp_path / "discounts.json"
    dpath.write_text(
        json.dumps(
            [
                {"maturity": l * 0.25, "discount": float(curves.ois_discounts[l])}
                for l in range(19)
            ]
        )
    )
    rows = read_discount_table(dpath)
    assert len(rows) == 19
    assert rows[0] == (0.0, 1.0)


def test_table_errors(tmp_path):
    bad_header = tmp_path / "discounts.csv"
    bad_header.write_text("T,df\n1.0,0.99\n")
    with pytest.raises(ParseError):
        read_discount_table(bad_header)
    empty = tmp_path / "empty.csv"
    empty.write_text("maturity,discount\n")
    with pytest.raises(ParseError):
        read_discount_table(empty)
    bad_row = tmp_path / "bad.csv"
    bad_row.write_text("maturity,discount\n1.0,oops\n")
    with pytest.raises(ParseError):
        read_discount_table(bad_row)


def test_table_alignment_errors(tmp_path, curves):
    # discount table too short for the terminal date
    short = [(l * 0.25, float(curves.ois_discounts[l])) for l in range(10)]
    full_libor = {
        name: [(k * g.delta, curves.libor(name, k)) for k in range(1, g.n_points + 1)]
        for name, g in curves.grids.items()
    }
    with pytest.raises(AlignmentError):
        curveset_from_tables(short, full_libor, {"3m": G3, "6m": G6})
    # libor table missing one period end
    full_disc = [(l * 0.25, float(curves.ois_discounts[l])) for l in range(19)]
    broken = dict(full_libor)
    broken["6m"] = full_libor["6m"][:-1]
    with pytest.raises(AlignmentError):
        curveset_from_tables(full_disc, broken, {"3m": G3, "6m": G6})
