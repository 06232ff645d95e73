"""Affine driver engine.

The driving process is a vector of mutually independent one-dimensional
affine factors, each either a square-root diffusion with compound-Poisson
exponential jumps (``cirj``) or a Gaussian Ornstein-Uhlenbeck factor
(``ou``).  The conditional moment generating function is exponentially
affine in the state,

    E[exp(<u, X_{s+t}>) | X_s = x] = exp(phi_t(u) + <psi_t(u), x>),

where the exponents solve generalized Riccati equations

    d phi / dt = F(psi_t(u)),  phi_0(u) = 0,
    d psi / dt = R(psi_t(u)),  psi_0(u) = u,

with, per factor,

    cirj:  F(w) = lam*theta*w + nu*mu*w/(1 - mu*w),   R(w) = -lam*w + 2*eta^2*w^2
    ou:    F(w) = lam*theta*w + eta^2*w^2/2,          R(w) = -lam*w.

This module evaluates the exponents both in closed form (``phi_psi``) and
via an independent adaptive ODE integrator (``phi_psi_ode``) that serves as
the oracle certifying the closed forms.  It also exposes the admissible-set
check, the ordered exponential martingales built from the exponents, and the
moment generating function of the driver under the bond-ratio measures.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError

__all__ = [
    "FactorSpec",
    "ProcessSpec",
    "ExpAffine",
    "DomainCheck",
    "phi_psi",
    "phi_psi_ode",
    "validate_domain",
    "fitting_capacity",
    "martingale_value",
    "forward_mgf",
    "spec_to_dict",
    "spec_from_dict",
    "spec_to_json",
    "spec_from_json",
    "factor_mean_variance",
]

_KINDS = ("cirj", "ou")

#: components of psi larger than this are treated as a blown-up solution
_PSI_CEILING = 1e8


@dataclass(frozen=True)
class FactorSpec:
    """Parameters of one scalar affine factor.

    Attributes
    ----------
    kind : str
        ``"cirj"`` for the square-root jump-diffusion
        dX = -lam (X - theta) dt + 2 eta sqrt(X) dW + dZ, where Z is a
        compound Poisson process with intensity ``nu`` and exponential jump
        sizes of mean ``mu``; ``"ou"`` for the Gaussian factor
        dX = -lam (X - theta) dt + eta dW (the ``eta`` slot stores the
        constant diffusion scale, and ``nu = mu = 0`` is required).
    x0 : float
        Initial state; must be >= 0 for ``cirj``, any real for ``ou``.
    lam : float
        Mean-reversion speed per year, >= 0.  Serialized as ``"lambda"``.
    theta : float
        Mean-reversion level; >= 0 for ``cirj``.
    eta : float
        Diffusion scale, >= 0.
    nu : float
        Jump intensity per year, >= 0 (``cirj`` only).
    mu : float
        Mean exponential jump size, >= 0 (``cirj`` only).
    """

    kind: str
    x0: float
    lam: float
    theta: float
    eta: float
    nu: float = 0.0
    mu: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown factor kind {self.kind!r}")
        for name in ("x0", "lam", "theta", "eta", "nu", "mu"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.lam < 0 or self.eta < 0 or self.nu < 0 or self.mu < 0:
            raise ValueError("rate parameters must be non-negative")
        if self.kind == "cirj":
            if self.x0 < 0 or self.theta < 0:
                raise ValueError("cirj requires x0 >= 0 and theta >= 0")
        else:
            if self.nu != 0.0 or self.mu != 0.0:
                raise ValueError("ou factors must have nu = mu = 0")


@dataclass(frozen=True)
class ProcessSpec:
    """An ordered list of independent factors; the driver is their product."""

    factors: tuple[FactorSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def dimension(self) -> int:
        return len(self.factors)

    @property
    def x0(self) -> np.ndarray:
        """Initial state vector."""
        return np.array([f.x0 for f in self.factors], dtype=float)


@dataclass(frozen=True)
class ExpAffine:
    """A (phi, psi) exponent pair at a fixed horizon; always finite."""

    phi: complex
    psi: np.ndarray

    def __post_init__(self):
        psi = np.atleast_1d(np.asarray(self.psi))
        object.__setattr__(self, "psi", psi)
        if not (np.isfinite(self.phi) and np.all(np.isfinite(psi))):
            raise DomainError("exponent solution is not finite")


@dataclass(frozen=True)
class DomainCheck:
    """Verdict of an admissibility check.

    ``max_safe_scale`` is the supremum of scalings s >= 0 keeping s*u inside
    the admissible set; ``admissible`` is equivalent to
    ``max_safe_scale >= 1``.
    """

    admissible: bool
    max_safe_scale: float


def _h_em1(x: float) -> float:
    """(1 - exp(-x)) / x with the removable singularity filled in."""
    if abs(x) < 1e-8:
        return 1.0 - x / 2.0 + x * x / 6.0
    return -math.expm1(-x) / x


def _growth(lam: float, t: float) -> float:
    """G(lam, t) = (1 - exp(-lam t)) / lam, exact down to lam = 0."""
    return t * _h_em1(lam * t)


def _log1p_any(w):
    """log(1 + w) for real or complex scalars/arrays, stable near w = 0."""
    w = np.asarray(w)
    if not np.iscomplexobj(w):
        return np.log1p(w)
    out = np.empty_like(w)
    small = np.abs(w) < 1e-4
    ws = w[small]
    out[small] = ws * (1 - ws * (0.5 - ws * (1 / 3 - ws * (0.25 - ws / 5))))
    wb = w[~small]
    out[~small] = np.log(1.0 + wb)
    return out


def _factor_phi_psi(f: FactorSpec, t: float, u):
    """Closed-form (phi, psi) of a single factor; u may be any array shape.

    Valid for complex u whose real part is admissible at horizon t: both
    logarithm arguments then stay in the right half-plane, so principal
    branches apply without unwinding.
    """
    if t == 0.0:
        u = np.asarray(u)
        return np.zeros_like(u), u + 0
    e = math.exp(-f.lam * t)
    G = _growth(f.lam, t)
    if f.kind == "ou":
        psi = u * e
        one_me = -math.expm1(-f.lam * t)
        G2 = _growth(2.0 * f.lam, t)
        phi = f.theta * u * one_me + 0.5 * f.eta**2 * np.square(u) * G2
        return phi, psi
    c = 2.0 * f.eta**2 * G
    z = 1.0 - c * u
    psi = u * e / z
    if f.eta > 0.0:
        phi = -(f.lam * f.theta / (2.0 * f.eta**2)) * _log1p_any(-c * u)
    else:
        phi = f.lam * f.theta * u * G
    if f.nu > 0.0 and f.mu > 0.0:
        denom = 2.0 * f.eta**2 - f.lam * f.mu
        if abs(denom) > 1e-14 * max(2.0 * f.eta**2, f.lam * f.mu):
            phi = phi + (f.nu * f.mu / denom) * (
                _log1p_any(-f.mu * u) - _log1p_any(-(c + f.mu * e) * u)
            )
        else:
            phi = phi + f.nu * f.mu * u * G / (1.0 - f.mu * u)
    return phi, psi


def _phi_psi_nd(spec: ProcessSpec, t: float, u: np.ndarray):
    """Joint closed-form exponents for an array of argument vectors.

    ``u`` has shape (..., d); returns ``phi`` with shape (...) and ``psi``
    with shape (..., d).  No admissibility check is performed here.
    """
    u = np.asarray(u)
    d = spec.dimension
    if u.shape[-1:] != (d,):
        raise ValueError(f"argument has trailing dimension {u.shape}, expected {d}")
    phis = []
    psis = []
    for i, f in enumerate(spec.factors):
        p, q = _factor_phi_psi(f, t, u[..., i])
        phis.append(p)
        psis.append(q)
    phi = np.sum(np.stack(phis, axis=-1), axis=-1)
    psi = np.stack(psis, axis=-1)
    return phi, psi


def _factor_upper_bound(f: FactorSpec, t: float) -> float:
    """Supremum of admissible real arguments of one factor at horizon t."""
    if f.kind == "ou":
        return math.inf
    bound = math.inf
    G = _growth(f.lam, t)
    if f.eta > 0.0 and G > 0.0:
        bound = 1.0 / (2.0 * f.eta**2 * G)
    if f.nu > 0.0 and f.mu > 0.0:
        m = max(f.mu, f.mu * math.exp(-f.lam * t) + 2.0 * f.eta**2 * G)
        bound = min(bound, 1.0 / m)
    return bound


def validate_domain(spec: ProcessSpec, u, horizon: float) -> DomainCheck:
    """Check whether ``u`` is admissible for the given horizon.

    Parameters
    ----------
    spec : ProcessSpec
    u : array_like
        Argument vector; for complex input the real part is checked
        (imaginary shifts never cause explosion for these families).
    horizon : float
        Year fraction >= 0.  The admissible set shrinks as the horizon
        grows, so a pass at horizon T implies a pass at any t <= T.

    Returns
    -------
    DomainCheck
        Never raises; ``max_safe_scale`` is infinite when no constraint
        binds (e.g. u <= 0 componentwise, or a pure ``ou`` driver).
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    w = np.real(np.atleast_1d(np.asarray(u, dtype=complex)))
    if w.shape != (spec.dimension,):
        raise ValueError(f"argument has shape {w.shape}, expected ({spec.dimension},)")
    scale = math.inf
    for i, f in enumerate(spec.factors):
        if w[i] <= 0.0:
            continue
        bound = _factor_upper_bound(f, horizon)
        if math.isfinite(bound):
            scale = min(scale, float(bound / w[i]))
    return DomainCheck(admissible=bool(scale >= 1.0), max_safe_scale=scale)


def phi_psi(spec: ProcessSpec, t: float, u) -> ExpAffine:
    """Closed-form Riccati exponents (phi_t(u), psi_t(u)).

    Parameters
    ----------
    spec : ProcessSpec
    t : float
        Horizon in years, >= 0.
    u : array_like
        Real or complex argument vector of length ``spec.dimension``; the
        real part must be admissible at horizon ``t``.

    Returns
    -------
    ExpAffine
        Real-valued for real input, complex for complex input.

    Raises
    ------
    DomainError
        If the real part of ``u`` is outside the admissible set at ``t``.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    u = np.atleast_1d(np.asarray(u))
    check = validate_domain(spec, u, t)
    if not check.admissible:
        raise DomainError(
            f"argument inadmissible at horizon {t} (max safe scale {check.max_safe_scale:.6g})"
        )
    phi, psi = _phi_psi_nd(spec, t, u)
    return ExpAffine(phi=complex(phi) if np.iscomplexobj(psi) else float(phi), psi=psi)


@lru_cache(maxsize=64)
def _rhs_params(spec: ProcessSpec):
    lam = np.array([f.lam for f in spec.factors])
    theta = np.array([f.theta for f in spec.factors])
    eta = np.array([f.eta for f in spec.factors])
    nu = np.array([f.nu for f in spec.factors])
    mu = np.array([f.mu for f in spec.factors])
    is_cir = np.array([f.kind == "cirj" for f in spec.factors])
    return lam, theta, eta, nu, mu, is_cir


def _riccati_rhs(spec: ProcessSpec, psi: np.ndarray):
    """(F(psi), R(psi)) stacked as d(phi, psi)/dt."""
    lam, theta, eta, nu, mu, is_cir = _rhs_params(spec)
    # Square-root factors carry the quadratic term in the psi equation; for
    # Gaussian factors the diffusion enters the phi equation instead.
    dpsi = -lam * psi + np.where(is_cir, 2.0 * eta**2, 0.0) * np.square(psi)
    dphi_terms = lam * theta * psi + np.where(is_cir, 0.0, 0.5 * eta**2) * np.square(psi)
    has_jump = is_cir & (nu * mu > 0)
    if np.any(has_jump):
        jump = np.zeros_like(psi)
        j = has_jump
        jump[..., j] = nu[j] * mu[j] * psi[..., j] / (1.0 - mu[j] * psi[..., j])
        dphi_terms = dphi_terms + jump
    return np.sum(dphi_terms, axis=-1), dpsi


# Dormand-Prince 5(4) embedded pair coefficients.
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


def phi_psi_ode(spec: ProcessSpec, t: float, u, tol: float = 1e-12) -> ExpAffine:
    """Riccati exponents by adaptive embedded Runge-Kutta integration.

    Independent numerical oracle for :func:`phi_psi`: integrates the system
    d psi/dt = R(psi), d phi/dt = F(psi) from (0, u) with a Dormand-Prince
    5(4) pair and per-step error control at ``tol``.

    Raises
    ------
    DomainError
        On detected blow-up, signalled structurally by step-size collapse
        below ``1e-14 * t`` or a psi component exceeding an internal
        ceiling.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    u = np.atleast_1d(np.asarray(u))
    if u.shape != (spec.dimension,):
        raise ValueError(f"argument has shape {u.shape}, expected ({spec.dimension},)")
    dtype = complex if np.iscomplexobj(u) else float
    psi = u.astype(dtype)
    phi = dtype(0.0)
    if t == 0.0:
        return ExpAffine(phi=phi, psi=psi)

    h_min = 1e-14 * t
    h = t / 50.0
    remaining = t
    k_phi = np.empty(7, dtype=complex)
    k_psi = np.empty((7, spec.dimension), dtype=complex)
    while remaining > 0.0:
        if h < h_min:
            raise DomainError(
                f"step collapse with {remaining:.6g} to go: Riccati solution blew up"
            )
        h_step = min(h, remaining)
        for stage in range(7):
            psi_stage = psi.astype(complex)
            for j, a in enumerate(_DP_A[stage]):
                if a != 0.0:
                    psi_stage = psi_stage + h_step * a * k_psi[j]
            if np.max(np.abs(psi_stage)) > _PSI_CEILING:
                raise DomainError("psi exceeded ceiling: Riccati solution blew up")
            k_phi[stage], k_psi[stage] = _riccati_rhs(spec, psi_stage)
        phi5 = phi + h_step * sum(b * k_phi[i] for i, b in enumerate(_DP_B5) if b)
        psi5 = psi + h_step * sum(b * k_psi[i] for i, b in enumerate(_DP_B5) if b)
        phi4 = phi + h_step * sum(b * k_phi[i] for i, b in enumerate(_DP_B4) if b)
        psi4 = psi + h_step * sum(b * k_psi[i] for i, b in enumerate(_DP_B4) if b)
        err_phi = abs(phi5 - phi4) / (tol + tol * max(abs(phi), abs(phi5)))
        scale_psi = tol + tol * np.maximum(np.abs(psi), np.abs(psi5))
        err = max(err_phi, float(np.max(np.abs(psi5 - psi4) / scale_psi)))
        if err <= 1.0:
            remaining -= h_step
            phi = phi5 if dtype is complex else phi5.real
            psi = psi5 if dtype is complex else psi5.real
        factor = 0.9 * err**-0.2 if err > 0 else 5.0
        h = h_step * min(5.0, max(0.2, factor))
    if np.max(np.abs(psi)) > _PSI_CEILING:
        raise DomainError("psi exceeded ceiling: Riccati solution blew up")
    phi = complex(phi) if dtype is complex else float(np.real(phi))
    return ExpAffine(phi=phi, psi=np.asarray(psi))


def fitting_capacity(spec: ProcessSpec) -> float:
    """Supremum of reachable martingale values over admissible arguments.

    Both supported families have unbounded moment generating functions along
    growing admissible arguments, so any non-degenerate driver reports
    ``inf``; the empty driver can only ever reach E[e^0] = 1.
    """
    return math.inf if spec.dimension >= 1 else 1.0


def martingale_value(spec: ProcessSpec, u, t: float, T_N: float, x_t) -> float:
    """Value M_t^u = exp(phi_{T_N - t}(u) + <psi_{T_N - t}(u), x_t>).

    For componentwise non-negative admissible ``u`` these values are >= 1
    and increase componentwise in ``u``.

    Raises
    ------
    DomainError
        If ``u`` is inadmissible at horizon ``T_N``.
    """
    if not 0 <= t <= T_N:
        raise ValueError("need 0 <= t <= T_N")
    u = np.atleast_1d(np.asarray(u))
    check = validate_domain(spec, u, T_N)
    if not check.admissible:
        raise DomainError("argument inadmissible at the terminal horizon")
    ea = phi_psi(spec, T_N - t, u)
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    return float(np.exp(ea.phi + ea.psi @ x_t))


def forward_mgf(spec: ProcessSpec, u_k, w, t: float, T_N: float, x0) -> complex:
    """Moment generating function of X_t under the bond-ratio measure of u_k.

    Evaluates E[e^{<w, X_t>}] under the measure whose density process is the
    exponential martingale with argument ``u_k`` (with ``u_k`` a fitted
    v-vector this is the corresponding LIBOR-adjusted measure; with
    ``u_k = 0`` it reduces to the terminal-measure MGF).  ``w`` may be
    complex; its real part, shifted by psi_{T_N - t}(u_k), must be
    admissible at horizon ``t``.
    """
    if not 0 <= t <= T_N:
        raise ValueError("need 0 <= t <= T_N")
    u_k = np.atleast_1d(np.asarray(u_k))
    w = np.atleast_1d(np.asarray(w))
    base = phi_psi(spec, T_N - t, u_k).psi
    shifted = base + w
    check = validate_domain(spec, shifted, t)
    if not check.admissible:
        raise DomainError("shifted argument left the admissible set")
    phi1, psi1 = _phi_psi_nd(spec, t, shifted)
    phi0, psi0 = _phi_psi_nd(spec, t, base)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    value = np.exp(phi1 - phi0 + (psi1 - psi0) @ x0)
    if not np.all(np.isfinite([value.real, np.imag(value)])):
        raise DomainError("forward MGF overflowed")
    return complex(value) if np.iscomplexobj(w) else float(np.real(value))


def factor_mean_variance(f: FactorSpec, t: float) -> tuple[float, float]:
    """Exact first two conditional moments of one factor at horizon t.

    Used by the Gaussian moment-matched quantile procedure and by the MC
    moment tests.  Stable down to ``lam = 0``.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    e = math.exp(-f.lam * t)
    G = _growth(f.lam, t)
    if f.kind == "ou":
        mean = f.theta + (f.x0 - f.theta) * e
        var = f.eta**2 * _growth(2.0 * f.lam, t)
        return mean, var
    mean = f.theta + (f.x0 - f.theta) * e + f.nu * f.mu * G
    G2 = _growth(2.0 * f.lam, t)
    var = (4.0 * f.eta**2 * f.theta + 2.0 * f.nu * f.mu**2) * G2
    var += 4.0 * f.eta**2 * (f.x0 - f.theta) * e * G
    if f.nu > 0.0 and f.mu > 0.0:
        x = f.lam * t
        if abs(x) < 1e-4:
            J = 0.5 * t**2 * (1.0 - x)
        else:
            J = (G2 - e * G) / f.lam
        var += 4.0 * f.eta**2 * f.nu * f.mu * J
    return mean, var


_FACTOR_FIELDS = ("kind", "x0", "lambda", "theta", "eta", "nu", "mu")


def spec_to_dict(spec: ProcessSpec) -> dict:
    """Serialize to the documented JSON structure."""
    return {
        "factors": [
            {
                "kind": f.kind,
                "x0": f.x0,
                "lambda": f.lam,
                "theta": f.theta,
                "eta": f.eta,
                "nu": f.nu,
                "mu": f.mu,
            }
            for f in spec.factors
        ]
    }


def spec_from_dict(doc: dict) -> ProcessSpec:
    """Parse the documented JSON structure; unknown fields are rejected."""
    if not isinstance(doc, dict) or set(doc) != {"factors"}:
        extra = set(doc) - {"factors"} if isinstance(doc, dict) else None
        raise ValueError(f"expected a single 'factors' key, got extras {sorted(extra or [])}")
    factors = []
    for i, fd in enumerate(doc["factors"]):
        unknown = set(fd) - set(_FACTOR_FIELDS)
        if unknown:
            raise ValueError(f"factor {i}: unknown fields {sorted(unknown)}")
        missing = {"kind", "x0", "lambda", "theta", "eta"} - set(fd)
        if missing:
            raise ValueError(f"factor {i}: missing fields {sorted(missing)}")
        factors.append(
            FactorSpec(
                kind=fd["kind"],
                x0=float(fd["x0"]),
                lam=float(fd["lambda"]),
                theta=float(fd["theta"]),
                eta=float(fd["eta"]),
                nu=float(fd.get("nu", 0.0)),
                mu=float(fd.get("mu", 0.0)),
            )
        )
    return ProcessSpec(factors=tuple(factors))


def spec_to_json(spec: ProcessSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2)


def spec_from_json(text: str) -> ProcessSpec:
    return spec_from_dict(json.loads(text))
