"""Fitting the ordered parameter sequences that pin the model to the market.

The martingale family M^u indexed by vectors u turns curve fitting into a
sequence of scalar root-finding problems: each fine-grid date l needs a
vector u_l with M_0^{u_l} = B(0, T_l)/B(0, T_N), and each tenor period k
needs v_k^x with M_0^{v_k^x} = (1 + delta_x L_{k+1}^x(0)) M_0^{u_{k+1}^x}.
The fit is underdetermined in more than one dimension, so the caller
prescribes per index which coordinates are frozen and which single
coordinate is solved (:class:`FitDirective`).

:class:`FactorLayout` generates those directives for the "diagonal plus
common" structure: coordinate 0 is a common factor shared by all rates,
coordinate i is idiosyncratic to the caplet maturing in year i, and below
each maturity the idiosyncratic coordinate freezes at its last solved
value so that every rate depends on exactly two factors.

:func:`build_negative_rate_model` covers the variant with a real-valued
first factor: OIS rates may go negative while the LIBOR-OIS spreads stay
non-negative because they load only on the second, non-negative factor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .affine import (
    ProcessSpec,
    fitting_capacity,
    martingale_value,
    spec_from_dict,
    spec_to_dict,
    validate_domain,
)
from .curves import CurveSet, TenorGrid
from .errors import FitError, LayoutError, OrderingError, SpreadSignError

__all__ = [
    "FitDirective",
    "FactorLayout",
    "ModelParams",
    "ModelReport",
    "fit_u_sequence",
    "fit_v_sequence",
    "build_factor_layout",
    "build_model",
    "build_negative_rate_model",
    "validate_model",
    "model_to_json",
    "model_from_json",
]

_ORDER_TOL = 1e-12
_VERIFY_TOL = 1e-12


@dataclass(frozen=True)
class FitDirective:
    """One scalar fitting problem: solve coordinate ``solve_index`` of
    ``base`` so the martingale hits its target; all other coordinates stay
    frozen at the base values."""

    base: np.ndarray
    solve_index: int

    def __post_init__(self):
        base = np.atleast_1d(np.asarray(self.base, dtype=float))
        object.__setattr__(self, "base", base)
        if not 0 <= self.solve_index < len(base):
            raise ValueError(f"solve_index {self.solve_index} outside the base vector")
        if base[self.solve_index] != 0.0:
            raise ValueError("base must hold 0 at the solved coordinate")


def _log_initial(spec: ProcessSpec, u, terminal: float) -> float:
    return math.log(martingale_value(spec, u, 0.0, terminal, spec.x0))


def _solve_directive(
    spec: ProcessSpec,
    directive: FitDirective,
    target: float,
    terminal: float,
    allow_negative: bool = False,
) -> np.ndarray:
    """Solve M_0^{base + s e_j} = target for the scalar s.

    The map s -> log M is strictly increasing on square-root coordinates
    and an exact quadratic on Gaussian coordinates, which the two branches
    below exploit.  ``allow_negative`` permits s < 0 on square-root
    coordinates (never needed in the positive-rates construction).
    """
    if not (np.isfinite(target) and target > 0):
        raise FitError(f"target must be a positive number, got {target}")
    j = directive.solve_index
    base = directive.base
    if len(base) != spec.dimension:
        raise FitError(
            f"directive dimension {len(base)} does not match process dimension "
            f"{spec.dimension}"
        )
    if not validate_domain(spec, base, terminal).admissible:
        raise FitError("frozen coordinates are outside the admissible domain")
    c0 = _log_initial(spec, base, terminal)
    lt = math.log(target) - c0
    if abs(lt) < 1e-15:
        return base.copy()

    def h(s: float) -> float:
        u = base.copy()
        u[j] = s
        return _log_initial(spec, u, terminal) - c0

    factor = spec.factors[j]
    if factor.kind == "ou":
        # h(s) = a s^2 + b s exactly; recover the coefficients from two
        # evaluations and solve the quadratic along the branch through 0.
        h1, h2 = h(1.0), h(2.0)
        a = max(0.5 * (h2 - 2.0 * h1), 0.0)
        b = 2.0 * h1 - 0.5 * h2
        if a < 1e-300:
            if b == 0.0:
                raise FitError("degenerate coordinate cannot move the target")
            s = lt / b
        else:
            disc = b * b + 4.0 * a * lt
            if disc < 0.0:
                raise FitError(
                    f"target {target} outside the reachable range of the "
                    f"Gaussian coordinate {j}"
                )
            if b == 0.0:
                if lt < 0.0:
                    raise FitError("target below the minimum of the quadratic")
                s = math.sqrt(lt / a)
            else:
                s = 2.0 * lt / (b + math.copysign(math.sqrt(disc), b))
    else:
        unit = np.zeros(spec.dimension)
        unit[j] = 1.0
        bound = validate_domain(spec, unit, terminal).max_safe_scale
        if lt > 0:
            lo = 0.0
            hi = 1.0 if not math.isfinite(bound) else 0.5 * bound
            cap = math.inf if not math.isfinite(bound) else bound * (1.0 - 1e-10)
            while h(hi) < lt:
                if hi >= cap:
                    raise FitError(
                        f"target {target} above the reachable martingale range "
                        f"of coordinate {j}"
                    )
                hi = min(2.0 * hi, cap)
        else:
            if not allow_negative:
                raise FitError(
                    "target lies below the frozen-structure value; the frozen "
                    "coordinates are inconsistent with the curve"
                )
            hi = 0.0
            lo = -1.0
            while h(lo) > lt:
                lo *= 2.0
                if lo < -1e12:
                    raise FitError(f"target {target} below the reachable range")
        s = brentq(lambda x: h(x) - lt, lo, hi, xtol=5e-16, rtol=8.9e-16, maxiter=200)
    u = base.copy()
    u[j] = s
    fitted = martingale_value(spec, u, 0.0, terminal, spec.x0)
    if abs(fitted - target) > _VERIFY_TOL * target:
        raise FitError(
            f"root verification failed: fitted {fitted} vs target {target}"
        )
    return u


def _as_picker(directives):
    if callable(directives):
        return directives
    seq = list(directives)
    return lambda index, _partial: seq[index]


def fit_u_sequence(
    spec: ProcessSpec,
    curves: CurveSet,
    directives,
    mode: str = "positive-rates",
) -> np.ndarray:
    """Fit u_l with M_0^{u_l} = B(0,T_l)/B(0,T_N) for every fine index.

    ``directives`` is either a sequence indexed by l = 0..N-1 or a callable
    ``(l, u_partial) -> FitDirective`` receiving the partially filled table
    (the fit proceeds from l = N-1 down to 0, so rows above l are already
    solved when the callable runs).  Row N is the zero vector by
    construction.  In positive-rates mode the result must be componentwise
    non-negative and non-increasing in l, else :class:`OrderingError`.
    """
    n = curves.n_fine
    d = spec.dimension
    targets = curves.ois_discounts / curves.ois_discounts[n]
    if fitting_capacity(spec) <= targets.max():
        raise FitError("martingale family cannot reach the largest discount ratio")
    pick = _as_picker(directives)
    allow_negative = mode == "negative-rates"
    u = np.zeros((n + 1, d))
    for l in range(n - 1, -1, -1):
        directive = pick(l, u)
        if abs(targets[l] - 1.0) < 1e-15 and not directive.base.any():
            continue
        u[l] = _solve_directive(
            spec, directive, float(targets[l]), curves.terminal, allow_negative
        )
    if mode == "positive-rates":
        if np.min(u) < -1e-14:
            raise OrderingError("fitted u has negative coordinates")
        if np.min(u[:-1] - u[1:]) < -_ORDER_TOL:
            raise OrderingError("fitted u is not non-increasing")
    return u


def fit_v_sequence(
    spec: ProcessSpec,
    curves: CurveSet,
    u_fine: np.ndarray,
    tenor: str,
    directives,
    mode: str = "positive-rates",
) -> np.ndarray:
    """Fit v_k^x with M_0^{v_k^x} = (1 + delta_x L_{k+1}^x(0)) M_0^{u_{k+1}^x}.

    ``directives`` is a sequence indexed by k = 0..N^x-1 or a callable
    ``(k, u_fine) -> FitDirective``.  Row N^x is the zero vector.  In
    positive-rates mode every v_k^x must dominate u_k^x componentwise.
    """
    grid = curves.grids[tenor]
    mult = grid.step_multiple
    pick = _as_picker(directives)
    allow_negative = mode == "negative-rates"
    v = np.zeros((grid.n_points + 1, spec.dimension))
    for k in range(grid.n_points):
        u_next = u_fine[(k + 1) * mult]
        m_next = martingale_value(spec, u_next, 0.0, curves.terminal, spec.x0)
        target = (1.0 + grid.delta * curves.libor(tenor, k + 1)) * m_next
        directive = pick(k, u_fine)
        if abs(target - 1.0) < 1e-15 and not directive.base.any():
            continue
        v[k] = _solve_directive(spec, directive, target, curves.terminal, allow_negative)
    if mode == "positive-rates":
        u_on_grid = u_fine[np.arange(grid.n_points + 1) * mult]
        if np.min(v - u_on_grid) < -_ORDER_TOL:
            raise OrderingError(f"fitted v for tenor {tenor} does not dominate u")
    return v


@dataclass(frozen=True)
class FactorLayout:
    """Diagonal-plus-common assignment of factors to caplet maturities.

    Coordinate 0 drives everything; coordinate i (1-based) drives only the
    caplet maturing in year i.  Rows dated after maturity i-1 and up to
    maturity i solve coordinate i; below that the coordinate freezes at its
    value from the fine row just above maturity i-1, so later-dated rates
    carry no exposure to earlier factors.
    """

    maturity_count: int
    grids: dict
    u_c: float
    v_tilde: dict
    common_index: int = 0

    def __post_init__(self):
        if self.maturity_count < 1:
            raise LayoutError("need at least one caplet maturity")
        if set(self.v_tilde) != set(self.grids):
            raise LayoutError("v_tilde and grids must share tenor names")
        steps = {g.fine_step for g in self.grids.values()}
        ends = {g.terminal for g in self.grids.values()}
        if len(steps) > 1 or len(ends) > 1:
            raise LayoutError("tenor grids must share fine_step and terminal date")
        for g in self.grids.values():
            per_year = 1.0 / g.delta
            if abs(per_year - round(per_year)) > 1e-9:
                raise LayoutError(
                    f"tenor {g.name}: whole-year maturities do not sit on the grid"
                )
            if self.maturity_count > g.terminal - g.delta + 1e-9:
                raise LayoutError(
                    f"maturity count {self.maturity_count} exceeds the span of "
                    f"tenor {g.name}"
                )

    @property
    def dimension(self) -> int:
        return self.maturity_count + 1

    @property
    def fine_step(self) -> float:
        return next(iter(self.grids.values())).fine_step

    def idiosyncratic_index(self, maturity: int) -> int:
        if not 1 <= maturity <= self.maturity_count:
            raise IndexError(f"maturity {maturity} outside 1..{self.maturity_count}")
        return maturity

    def tenor_index(self, tenor: str, maturity: int) -> int:
        """Tenor period k with T_k^x equal to the whole-year maturity."""
        self.idiosyncratic_index(maturity)
        return round(maturity / self.grids[tenor].delta)

    def active_column(self, l: int) -> int:
        """Coordinate solved at fine-grid row l."""
        t = l * self.fine_step
        return min(self.maturity_count, max(1, math.ceil(t - 1e-9)))

    def frozen_row(self, column: int) -> int:
        """Fine row whose solved value column keeps below its maturity."""
        return round((column - 1) / self.fine_step) + 1

    def _tail(self, base: np.ndarray, column: int, u_table: np.ndarray) -> None:
        for col in range(column + 1, self.maturity_count + 1):
            base[col] = u_table[self.frozen_row(col), col]

    def u_directive(self, l: int, u_partial: np.ndarray) -> FitDirective:
        column = self.active_column(l)
        base = np.zeros(self.dimension)
        base[self.common_index] = self.u_c
        self._tail(base, column, u_partial)
        return FitDirective(base=base, solve_index=column)

    def v_directive(self, tenor: str, k: int, u_fine: np.ndarray) -> FitDirective:
        grid = self.grids[tenor]
        column = self.active_column(k * grid.step_multiple)
        base = np.zeros(self.dimension)
        base[self.common_index] = self.v_tilde[tenor]
        self._tail(base, column, u_fine)
        return FitDirective(base=base, solve_index=column)


def build_factor_layout(
    maturity_count: int, grids: dict, u_c: float, v_tilde: dict
) -> FactorLayout:
    """Assemble a :class:`FactorLayout` for whole-year caplet maturities."""
    return FactorLayout(
        maturity_count=maturity_count, grids=dict(grids), u_c=u_c, v_tilde=dict(v_tilde)
    )


@dataclass(frozen=True)
class ModelParams:
    """Fitted model: driving process plus the u/v tables on their grids.

    ``u_fine[l]`` is the vector for fine-grid date T_l (row N is zero);
    ``v[x][k]`` the vector for period k of tenor x (row N^x is zero).
    ``terminal_discount`` is B(0, T_N), the bridge from prices expressed in
    units of the terminal bond back to currency.  Immutable after fitting.
    """

    spec: ProcessSpec
    terminal: float
    u_fine: np.ndarray
    v: dict
    grids: dict
    terminal_discount: float
    mode: str = "positive-rates"

    def __post_init__(self):
        if self.mode not in ("positive-rates", "negative-rates"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 < self.terminal_discount:
            raise ValueError("terminal_discount must be positive")
        u = np.asarray(self.u_fine, dtype=float)
        object.__setattr__(self, "u_fine", u)
        d = self.spec.dimension
        if u.ndim != 2 or u.shape[1] != d:
            raise ValueError(f"u_fine must be (n+1, {d}), got {u.shape}")
        if np.any(u[-1] != 0.0):
            raise ValueError("the terminal u row must be zero")
        if set(self.v) != set(self.grids):
            raise ValueError("v and grids must share tenor names")
        for name, grid in self.grids.items():
            rows = np.asarray(self.v[name], dtype=float)
            self.v[name] = rows
            if rows.shape != (grid.n_points + 1, d):
                raise ValueError(
                    f"v[{name}] must be ({grid.n_points + 1}, {d}), got {rows.shape}"
                )
            if np.any(rows[-1] != 0.0):
                raise ValueError(f"the terminal v row of tenor {name} must be zero")
        for row in u:
            if not validate_domain(self.spec, row, self.terminal).admissible:
                raise ValueError("u_fine contains an inadmissible vector")
        for rows in self.v.values():
            for row in rows:
                if not validate_domain(self.spec, row, self.terminal).admissible:
                    raise ValueError("v contains an inadmissible vector")

    @property
    def n_fine(self) -> int:
        return self.u_fine.shape[0] - 1

    def grid(self, tenor: str) -> TenorGrid:
        return self.grids[tenor]

    def u_at(self, tenor: str, k: int) -> np.ndarray:
        """u_k^x, the fine-grid row at the tenor date T_k^x."""
        return self.u_fine[self.grids[tenor].map_to_fine(k)]

    def v_at(self, tenor: str, k: int) -> np.ndarray:
        grid = self.grids[tenor]
        if not 0 <= k <= grid.n_points:
            raise IndexError(f"period index {k} outside 0..{grid.n_points}")
        return self.v[tenor][k]

    def initial_value(self, w) -> float:
        """M_0^w for an arbitrary admissible vector."""
        return martingale_value(self.spec, w, 0.0, self.terminal, self.spec.x0)

    def bond_price(self, tenor: str, k: int) -> float:
        """B(0, T_k^x) recovered as B(0, T_N) M_0^{u_k^x}."""
        return self.terminal_discount * self.initial_value(self.u_at(tenor, k))


def build_model(
    spec: ProcessSpec,
    curves: CurveSet,
    layout: FactorLayout,
    mode: str = "positive-rates",
) -> ModelParams:
    """Fit u over the fine grid and v per tenor following the layout."""
    if spec.dimension != layout.dimension:
        raise LayoutError(
            f"layout needs dimension {layout.dimension}, process has {spec.dimension}"
        )
    u = fit_u_sequence(spec, curves, layout.u_directive, mode)
    v = {
        tenor: fit_v_sequence(
            spec,
            curves,
            u,
            tenor,
            lambda k, table, _t=tenor: layout.v_directive(_t, k, table),
            mode,
        )
        for tenor in curves.grids
    }
    return ModelParams(
        spec=spec,
        terminal=curves.terminal,
        u_fine=u,
        v=v,
        grids=dict(curves.grids),
        terminal_discount=curves.discount(curves.n_fine),
        mode=mode,
    )


def build_negative_rate_model(
    spec: ProcessSpec,
    curves: CurveSet,
    cir_level: float = 0.0,
) -> ModelParams:
    """Fit the two-factor variant that admits negative rates.

    The first factor must be Gaussian (state space all reals), the second a
    square-root factor.  Step 1 fits every u_l through its first coordinate
    with the second frozen at ``cir_level``; no ordering is imposed, so the
    OIS curve may imply negative rates.  Step 2 fits v_k^x by copying the
    first coordinate of u_k^x and solving the second, which keeps every
    multiplicative LIBOR-OIS spread a function of the non-negative factor
    alone.  Requires all initial multiplicative spreads to be non-negative.
    """
    if spec.dimension != 2:
        raise ValueError("negative-rates construction needs exactly two factors")
    if spec.factors[0].kind != "ou" or spec.factors[1].kind == "ou":
        raise ValueError(
            "first factor must be Gaussian and second factor non-negative"
        )
    for name, grid in curves.grids.items():
        for k in range(1, grid.n_points + 1):
            if curves.multiplicative_spread(name, k) < -1e-12:
                raise SpreadSignError(
                    f"initial spread is negative for tenor {name}, period {k}"
                )
    n = curves.n_fine
    u_directives = [
        FitDirective(base=np.array([0.0, cir_level]), solve_index=0) for _ in range(n)
    ]
    u = fit_u_sequence(spec, curves, u_directives, mode="negative-rates")
    v = {}
    for tenor, grid in curves.grids.items():
        mult = grid.step_multiple

        def pick(k, u_fine, _mult=mult):
            return FitDirective(
                base=np.array([u_fine[k * _mult, 0], 0.0]), solve_index=1
            )

        v[tenor] = fit_v_sequence(spec, curves, u, tenor, pick, mode="negative-rates")
        if np.min(v[tenor][:-1, 1] - cir_level) < -_ORDER_TOL:
            raise OrderingError(
                f"fitted v for tenor {tenor} fell below the square-root level"
            )
    return ModelParams(
        spec=spec,
        terminal=curves.terminal,
        u_fine=u,
        v=v,
        grids=dict(curves.grids),
        terminal_discount=curves.discount(n),
        mode="negative-rates",
    )


@dataclass(frozen=True)
class ModelReport:
    """Structural diagnostics of a fitted model; flags, never errors."""

    u_nonincreasing: bool
    u_nonnegative: bool
    domain_admissible: bool
    v_dominates_u: dict
    regime: dict


def validate_model(params: ModelParams) -> ModelReport:
    """Check the ordering and regime flags of a fitted model.

    The regime per tenor is "normal" when every v_k^x lies between u_k^x
    and u_{k-1}^x componentwise (v = u included), "extreme" when some
    coordinate of some v_k^x exceeds u_{k-1}^x, and "mixed" when rows of
    both kinds appear.
    """
    u = params.u_fine
    u_noninc = bool(np.min(u[:-1] - u[1:]) >= -_ORDER_TOL)
    u_nonneg = bool(np.min(u) >= -1e-14)
    admissible = True
    for row in u:
        admissible &= validate_domain(params.spec, row, params.terminal).admissible
    v_dom = {}
    regime = {}
    for tenor, grid in params.grids.items():
        mult = grid.step_multiple
        rows = params.v[tenor]
        u_here = u[np.arange(grid.n_points + 1) * mult]
        v_dom[tenor] = bool(np.min(rows - u_here) >= -_ORDER_TOL)
        for row in rows:
            admissible &= validate_domain(params.spec, row, params.terminal).admissible
        extreme = normal = 0
        for k in range(grid.n_points):
            inside = np.all(rows[k] >= u_here[k] - _ORDER_TOL)
            if k >= 1:
                above = np.any(rows[k] > u_here[k - 1] + _ORDER_TOL)
                inside = inside and not above
                extreme += bool(above)
            normal += bool(inside)
        if extreme == 0:
            regime[tenor] = "normal"
        elif normal == 0:
            regime[tenor] = "extreme"
        else:
            regime[tenor] = "mixed"
    return ModelReport(
        u_nonincreasing=u_noninc,
        u_nonnegative=u_nonneg,
        domain_admissible=bool(admissible),
        v_dominates_u=v_dom,
        regime=regime,
    )


def model_to_json(params: ModelParams) -> str:
    """Serialize a fitted model to a self-contained JSON document."""
    doc = {
        "spec": spec_to_dict(params.spec),
        "terminal": params.terminal,
        "mode": params.mode,
        "terminal_discount": params.terminal_discount,
        "grids": {
            name: {
                "delta": g.delta,
                "n_points": g.n_points,
                "fine_step": g.fine_step,
            }
            for name, g in params.grids.items()
        },
        "u_fine": params.u_fine.tolist(),
        "v": {name: rows.tolist() for name, rows in params.v.items()},
    }
    return json.dumps(doc, indent=2)


def model_from_json(text: str) -> ModelParams:
    doc = json.loads(text)
    required = {"spec", "terminal", "mode", "terminal_discount", "grids", "u_fine", "v"}
    missing = required - set(doc)
    if missing:
        raise ValueError(f"model document is missing fields: {sorted(missing)}")
    grids = {
        name: TenorGrid(
            name=name,
            delta=g["delta"],
            n_points=g["n_points"],
            fine_step=g["fine_step"],
        )
        for name, g in doc["grids"].items()
    }
    return ModelParams(
        spec=spec_from_dict(doc["spec"]),
        terminal=doc["terminal"],
        u_fine=np.asarray(doc["u_fine"], dtype=float),
        v={name: np.asarray(rows, dtype=float) for name, rows in doc["v"].items()},
        grids=grids,
        terminal_discount=doc["terminal_discount"],
        mode=doc["mode"],
    )
