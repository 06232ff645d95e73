"""Initial term structures and linear-product valuation.

Everything here lives on an equidistant fine grid of dates 0 = T_0 < ... <
T_N with step ``fine_step``.  Each floating-rate tenor x has its own coarser
payment schedule T_k^x = k * delta_x sharing the same endpoint T_N, and every
payment date sits on the fine grid.  A :class:`CurveSet` collects the OIS
discount factors B(0, T_l) on the fine grid together with the initial
forward LIBOR fixings L_k^x(0) per tenor, and is the normalized input for
model construction and for valuing linear products (swaps and basis swaps)
at time zero.

Curves come either from a Nelson-Siegel zero-rate parametrization
(:func:`build_curveset`) or from raw discount/rate tables in CSV or JSON
form (:func:`curveset_from_tables`).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConsistencyError, ParseError

__all__ = [
    "TenorGrid",
    "NelsonSiegelParams",
    "CurveSet",
    "zero_rate",
    "build_curveset",
    "curveset_from_tables",
    "read_discount_table",
    "read_libor_table",
    "fair_swap_rate",
    "swap_value",
    "fair_basis_spread",
    "basis_swap_value",
]

_REL_TOL = 1e-9


@dataclass(frozen=True)
class TenorGrid:
    """Payment schedule of one floating-rate tenor on the common fine grid.

    Parameters
    ----------
    name : str
        Label used to key curves and files, e.g. ``"3m"``.
    delta : float
        Accrual fraction of one period, in years.
    n_points : int
        Number of accrual periods; the schedule ends at ``n_points * delta``,
        which must equal the terminal date of the fine grid.
    fine_step : float
        Step of the underlying fine grid; ``delta`` must be an integer
        multiple of it so every payment date lies on the fine grid.
    """

    name: str
    delta: float
    n_points: int
    fine_step: float

    def __post_init__(self):
        if not (self.delta > 0 and self.fine_step > 0):
            raise ValueError("delta and fine_step must be positive")
        if self.n_points < 1:
            raise ValueError("n_points must be at least 1")
        ratio = self.delta / self.fine_step
        if abs(ratio - round(ratio)) > _REL_TOL * ratio:
            raise ValueError(
                f"delta={self.delta} is not an integer multiple of "
                f"fine_step={self.fine_step}"
            )

    @property
    def step_multiple(self) -> int:
        return round(self.delta / self.fine_step)

    @property
    def terminal(self) -> float:
        return self.n_points * self.delta

    def date(self, k: int) -> float:
        """Payment date T_k^x in years."""
        if not 0 <= k <= self.n_points:
            raise IndexError(f"period index {k} outside 0..{self.n_points}")
        return k * self.delta

    def map_to_fine(self, k: int) -> int:
        """Fine-grid index l with T_l = T_k^x."""
        if not 0 <= k <= self.n_points:
            raise IndexError(f"period index {k} outside 0..{self.n_points}")
        return k * self.step_multiple


@dataclass(frozen=True)
class NelsonSiegelParams:
    """Level/slope/curvature parametrization of the zero coupon rate."""

    beta0: float
    beta1: float
    beta2: float
    gamma: float

    def __post_init__(self):
        vals = (self.beta0, self.beta1, self.beta2, self.gamma)
        if not all(np.isfinite(vals)):
            raise ValueError("parameters must be finite")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def zero_rate(params: NelsonSiegelParams, T):
    """Continuously compounded zero rate R(T).

    Evaluates beta0 + beta1 (1-e^{-g T})/(g T) + beta2 ((1-e^{-g T})/(g T)
    - e^{-g T}); at T = 0 the limit beta0 + beta1.  Accepts scalars or
    arrays of year-fractions.
    """
    t = np.asarray(T, dtype=float)
    x = params.gamma * t
    safe = np.where(x > 0, x, 1.0)
    loading = np.where(x > 0, -np.expm1(-safe) / safe, 1.0)
    decay = np.exp(-x)
    out = params.beta0 + params.beta1 * loading + params.beta2 * (loading - decay)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CurveSet:
    """Initial OIS discount curve and LIBOR fixings on consistent grids.

    ``ois_discounts[l]`` is B(0, T_l) for fine-grid index l = 0..N, and
    ``libor_initial[x][k-1]`` is L_k^x(0) for tenor x and period k in
    1..N^x.  Immutable after construction; all methods are read-only.
    """

    ois_discounts: np.ndarray
    libor_initial: dict
    grids: dict
    fine_step: float
    terminal: float

    def __post_init__(self):
        b = np.asarray(self.ois_discounts, dtype=float)
        object.__setattr__(self, "ois_discounts", b)
        n_fine = round(self.terminal / self.fine_step)
        if abs(n_fine * self.fine_step - self.terminal) > _REL_TOL * self.terminal:
            raise ConsistencyError("terminal is not a multiple of fine_step")
        if b.shape != (n_fine + 1,):
            raise ConsistencyError(
                f"expected {n_fine + 1} discount factors, got {b.shape}"
            )
        if not np.all(b > 0):
            raise ConsistencyError("discount factors must be positive")
        if set(self.libor_initial) != set(self.grids):
            raise ConsistencyError("libor_initial and grids must share tenors")
        for name, grid in self.grids.items():
            if abs(grid.fine_step - self.fine_step) > _REL_TOL:
                raise ConsistencyError(f"tenor {name} uses a different fine grid")
            if abs(grid.terminal - self.terminal) > _REL_TOL * self.terminal:
                raise ConsistencyError(f"tenor {name} does not end at the terminal date")
            fixings = np.asarray(self.libor_initial[name], dtype=float)
            self.libor_initial[name] = fixings
            if fixings.shape != (grid.n_points,):
                raise ConsistencyError(
                    f"tenor {name}: expected {grid.n_points} fixings, got {fixings.shape}"
                )

    @property
    def n_fine(self) -> int:
        return len(self.ois_discounts) - 1

    def grid(self, tenor: str) -> TenorGrid:
        return self.grids[tenor]

    def discount(self, l: int) -> float:
        """B(0, T_l) at fine-grid index l."""
        if not 0 <= l <= self.n_fine:
            raise IndexError(f"fine index {l} outside 0..{self.n_fine}")
        return float(self.ois_discounts[l])

    def tenor_discounts(self, tenor: str, periods) -> np.ndarray:
        """B(0, T_k^x) for the given period indices of tenor x."""
        grid = self.grids[tenor]
        ks = np.asarray(periods, dtype=int)
        if np.any(ks < 0) or np.any(ks > grid.n_points):
            raise IndexError(f"period index outside 0..{grid.n_points}")
        return self.ois_discounts[ks * grid.step_multiple]

    def libor(self, tenor: str, k: int) -> float:
        """Initial fixing L_k^x(0), k in 1..N^x."""
        grid = self.grids[tenor]
        if not 1 <= k <= grid.n_points:
            raise IndexError(f"period index {k} outside 1..{grid.n_points}")
        return float(self.libor_initial[tenor][k - 1])

    def forward_rate(self, tenor: str, k: int) -> float:
        """OIS forward F_k^x(0) over the k-th accrual period of tenor x."""
        grid = self.grids[tenor]
        if not 1 <= k <= grid.n_points:
            raise IndexError(f"period index {k} outside 1..{grid.n_points}")
        b0 = self.ois_discounts[(k - 1) * grid.step_multiple]
        b1 = self.ois_discounts[k * grid.step_multiple]
        return float((b0 / b1 - 1.0) / grid.delta)

    def additive_spread(self, tenor: str, k: int) -> float:
        """S_k^x(0) = L_k^x(0) - F_k^x(0)."""
        return self.libor(tenor, k) - self.forward_rate(tenor, k)

    def multiplicative_spread(self, tenor: str, k: int) -> float:
        """R_k^x(0) with 1 + delta R = (1 + delta L)/(1 + delta F)."""
        grid = self.grids[tenor]
        d = grid.delta
        ratio = (1.0 + d * self.libor(tenor, k)) / (1.0 + d * self.forward_rate(tenor, k))
        return (ratio - 1.0) / d


def _check_positive_rates(curves: CurveSet) -> None:
    b = curves.ois_discounts
    if np.any(np.diff(b) > 0):
        raise ConsistencyError(
            "positive rates requested but discount factors are not non-increasing"
        )
    for name, grid in curves.grids.items():
        for k in range(1, grid.n_points + 1):
            if curves.libor(name, k) < curves.forward_rate(name, k) - 1e-15:
                raise ConsistencyError(
                    f"positive rates requested but L < F for tenor {name}, period {k}"
                )


def _common_grid_geometry(grids: dict):
    if not grids:
        raise ConsistencyError("at least one tenor grid is required")
    steps = {g.fine_step for g in grids.values()}
    ends = {g.terminal for g in grids.values()}
    if len(steps) > 1 or max(ends) - min(ends) > _REL_TOL * max(ends):
        raise ConsistencyError("tenor grids must share fine_step and terminal date")
    return next(iter(steps)), next(iter(ends))


def build_curveset(
    ois: NelsonSiegelParams,
    tenor_curves: dict,
    grids: dict,
    require_positive: bool = False,
) -> CurveSet:
    """Build a :class:`CurveSet` from Nelson-Siegel zero-rate curves.

    Parameters
    ----------
    ois : NelsonSiegelParams
        Parametrization of the OIS zero rate; discounting uses
        B(0, T) = exp(-R(T) T) on the fine grid.
    tenor_curves : dict
        Tenor name -> NelsonSiegelParams of that tenor's zero rate.  The
        fixing over [T_{k-1}, T_k] is the simple forward implied by the
        tenor curve's own pseudo-discount factors.
    grids : dict
        Tenor name -> :class:`TenorGrid`; keys must match ``tenor_curves``.
    require_positive : bool
        When True, raise :class:`ConsistencyError` unless discounts are
        non-increasing and every L_k^x(0) dominates the OIS forward, the
        admissibility conditions of the non-negative-rates construction.
    """
    if set(tenor_curves) != set(grids):
        raise ConsistencyError("tenor_curves and grids must share tenor names")
    fine_step, terminal = _common_grid_geometry(grids)
    n_fine = round(terminal / fine_step)
    t_fine = np.arange(n_fine + 1) * fine_step
    discounts = np.exp(-zero_rate(ois, t_fine) * t_fine)
    libor = {}
    for name, grid in grids.items():
        params = tenor_curves[name]
        t_end = np.arange(1, grid.n_points + 1) * grid.delta
        t_start = t_end - grid.delta
        df_start = np.exp(-zero_rate(params, t_start) * t_start)
        df_end = np.exp(-zero_rate(params, t_end) * t_end)
        libor[name] = (df_start / df_end - 1.0) / grid.delta
    curves = CurveSet(
        ois_discounts=discounts,
        libor_initial=libor,
        grids=dict(grids),
        fine_step=fine_step,
        terminal=terminal,
    )
    if require_positive:
        _check_positive_rates(curves)
    return curves


def _read_two_column(path, fields) -> list:
    """Rows of a two-column CSV or JSON table with the given field names."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {p}: {exc}") from exc
    rows = []
    if p.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{p}: invalid JSON: {exc}") from exc
        if not isinstance(data, list):
            raise ParseError(f"{p}: expected a JSON array of records")
        for rec in data:
            try:
                rows.append((float(rec[fields[0]]), float(rec[fields[1]])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{p}: bad record {rec!r}") from exc
    else:
        reader = csv.DictReader(text.splitlines())
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != list(fields):
            raise ParseError(
                f"{p}: expected header {','.join(fields)}, got {reader.fieldnames}"
            )
        for rec in reader:
            try:
                rows.append((float(rec[fields[0]]), float(rec[fields[1]])))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{p}: bad record {rec!r}") from exc
    if not rows:
        raise ParseError(f"{p}: table is empty")
    return sorted(rows)


def read_discount_table(path) -> list:
    """(maturity, discount) pairs from ``discounts.csv`` or its JSON twin."""
    return _read_two_column(path, ("maturity", "discount"))


def read_libor_table(path) -> list:
    """(maturity_end, rate) pairs from ``libor_<tenor>.csv`` or JSON twin."""
    return _read_two_column(path, ("maturity_end", "rate"))


def _interp_log_discount(table, t_fine: np.ndarray) -> np.ndarray:
    mats = np.array([m for m, _ in table])
    dfs = np.array([d for _, d in table])
    if np.any(dfs <= 0):
        raise ParseError("discount factors must be positive")
    if np.any(np.diff(mats) <= 0):
        raise ParseError("discount maturities must be strictly increasing")
    if mats[0] > _REL_TOL:
        mats = np.insert(mats, 0, 0.0)
        dfs = np.insert(dfs, 0, 1.0)
    if t_fine[-1] > mats[-1] * (1 + _REL_TOL):
        raise AlignmentError(
            f"discount table ends at {mats[-1]}, cannot reach {t_fine[-1]}"
        )
    return np.exp(np.interp(t_fine, mats, np.log(dfs)))


def _match_grid_rates(table, grid: TenorGrid) -> np.ndarray:
    out = np.full(grid.n_points, np.nan)
    mats = np.array([m for m, _ in table])
    for k in range(1, grid.n_points + 1):
        target = k * grid.delta
        hits = np.nonzero(np.abs(mats - target) <= _REL_TOL * max(target, 1.0))[0]
        if len(hits) != 1:
            raise AlignmentError(
                f"tenor {grid.name}: need exactly one rate at maturity_end={target}"
            )
        out[k - 1] = table[hits[0]][1]
    return out


def curveset_from_tables(
    discounts,
    libor_tables: dict,
    grids: dict,
    require_positive: bool = False,
) -> CurveSet:
    """Build a :class:`CurveSet` from raw tables.

    ``discounts`` holds (maturity, discount) pairs, interpolated
    log-linearly onto the fine grid; ``libor_tables`` maps tenor name to
    (maturity_end, rate) pairs that must cover every period end date of
    that tenor's grid exactly.  Dates outside the discount table's range
    raise :class:`AlignmentError` rather than extrapolating.
    """
    if set(libor_tables) != set(grids):
        raise ConsistencyError("libor_tables and grids must share tenor names")
    fine_step, terminal = _common_grid_geometry(grids)
    n_fine = round(terminal / fine_step)
    t_fine = np.arange(n_fine + 1) * fine_step
    b = _interp_log_discount(sorted(discounts), t_fine)
    libor = {
        name: _match_grid_rates(sorted(libor_tables[name]), grid)
        for name, grid in grids.items()
    }
    curves = CurveSet(
        ois_discounts=b,
        libor_initial=libor,
        grids=dict(grids),
        fine_step=fine_step,
        terminal=terminal,
    )
    if require_positive:
        _check_positive_rates(curves)
    return curves


def _leg_arrays(curves: CurveSet, tenor: str, p: int, q: int):
    grid = curves.grids[tenor]
    if not 0 <= p <= q <= grid.n_points:
        raise IndexError(f"need 0 <= p <= q <= {grid.n_points}, got p={p}, q={q}")
    ks = np.arange(p + 1, q + 1)
    b = curves.tenor_discounts(tenor, ks)
    fix = curves.libor_initial[tenor][ks - 1]
    return grid, b, fix


def fair_swap_rate(curves: CurveSet, tenor: str, p: int, q: int) -> float:
    """Fixed rate that makes the p-into-q swap on tenor x worth zero.

    Returns the annuity-weighted average of the initial fixings,
    sum B(0,T_k^x) L_k^x(0) / sum B(0,T_k^x) over k = p+1..q.
    """
    if p >= q:
        raise IndexError(f"need p < q, got p={p}, q={q}")
    _, b, fix = _leg_arrays(curves, tenor, p, q)
    return float(np.sum(b * fix) / np.sum(b))


def swap_value(curves: CurveSet, tenor: str, p: int, q: int, K: float) -> float:
    """Time-zero value of a payer swap: delta_x sum B(0,T_k^x)(L_k^x(0) - K)."""
    grid, b, fix = _leg_arrays(curves, tenor, p, q)
    return float(grid.delta * np.sum(b * (fix - K)))


def _aligned_legs(curves, tenor1, tenor2, p1, q1, p2, q2):
    g1, b1, f1 = _leg_arrays(curves, tenor1, p1, q1)
    g2, b2, f2 = _leg_arrays(curves, tenor2, p2, q2)
    mult = g2.delta / g1.delta
    if abs(mult - round(mult)) > _REL_TOL or round(mult) < 1:
        raise AlignmentError(
            f"tenor {tenor2} dates must be a subset of tenor {tenor1} dates"
        )
    if abs(p1 * g1.delta - p2 * g2.delta) > _REL_TOL or abs(
        q1 * g1.delta - q2 * g2.delta
    ) > _REL_TOL:
        raise AlignmentError("legs must share their start and end dates")
    return g1, b1, f1, g2, b2, f2


def fair_basis_spread(
    curves: CurveSet, tenor1: str, tenor2: str, p1: int, q1: int, p2: int, q2: int
) -> float:
    """Spread over the shorter-tenor leg that zeroes the basis swap.

    The swap exchanges tenor2 floating for tenor1 floating plus spread over
    a common window; the fair spread is the value gap of the floating legs
    divided by the shorter leg's annuity.
    """
    g1, b1, f1, g2, b2, f2 = _aligned_legs(curves, tenor1, tenor2, p1, q1, p2, q2)
    gap = g2.delta * np.sum(b2 * f2) - g1.delta * np.sum(b1 * f1)
    return float(gap / (g1.delta * np.sum(b1)))


def basis_swap_value(
    curves: CurveSet,
    tenor1: str,
    tenor2: str,
    p1: int,
    q1: int,
    p2: int,
    q2: int,
    S: float,
) -> float:
    """Time-zero value of receiving tenor2 floating against tenor1 + S."""
    g1, b1, f1, g2, b2, f2 = _aligned_legs(curves, tenor1, tenor2, p1, q1, p2, q2)
    return float(g2.delta * np.sum(b2 * f2) - g1.delta * np.sum(b1 * (f1 + S)))
