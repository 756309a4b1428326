"""Bivariate copula families: densities, h-functions, inverses, tau maps.

Families are one-parameter: independence, gaussian, clayton, gumbel, frank.
Clayton and gumbel cover only positive dependence; 90/180/270 degree
rotations extend them to the other quadrants. All evaluations clamp inputs
to [1e-10, 1 - 1e-10] because empirical PITs can hit the boundary.

Conventions: ``hfunc(spec, u, v)`` with direction ``cond_on_second`` is the
conditional CDF P(U <= u | V = v) = dC/dv; ``cond_on_first`` is
P(V <= v | U = u) = dC/du with the roles of the two arguments unchanged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special, stats

from vinebc.errors import DataError, NumericalError

EPS = 1e-10

FAMILIES = ("independence", "gaussian", "clayton", "gumbel", "frank")
ROTATIONS = (0, 90, 180, 270)

# fitting bounds; validation domains are wider where the family allows it
_FIT_BOUNDS = {
    "gaussian": (-0.99995, 0.99995),
    "clayton": (1e-4, 28.0),
    "gumbel": (1.0, 50.0),
    "frank": (-35.0, 35.0),
}


@dataclass(frozen=True)
class PairCopulaSpec:
    """A bivariate copula: family, parameter, rotation in degrees."""

    family: str
    parameter: float | None = None
    rotation: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown copula family {self.family!r}")
        if self.rotation not in ROTATIONS:
            raise DataError(f"rotation must be one of {ROTATIONS}, got {self.rotation}")
        if self.family == "independence":
            if self.parameter is not None:
                raise DataError("independence copula takes no parameter")
            if self.rotation != 0:
                raise DataError("independence copula has no rotations")
            return
        if self.parameter is None:
            raise DataError(f"{self.family} copula requires a parameter")
        p = float(self.parameter)
        if self.family == "gaussian":
            if not -1.0 < p < 1.0:
                raise DataError(f"gaussian parameter must be in (-1, 1), got {p}")
            if self.rotation != 0:
                raise DataError("gaussian covers both signs; rotations not allowed")
        elif self.family == "frank":
            if p == 0.0:
                raise DataError("frank parameter must be nonzero")
            if self.rotation != 0:
                raise DataError("frank covers both signs; rotations not allowed")
        elif self.family == "clayton":
            if p <= 0.0:
                raise DataError(f"clayton parameter must be > 0, got {p}")
        elif self.family == "gumbel":
            if p < 1.0:
                raise DataError(f"gumbel parameter must be >= 1, got {p}")

    @property
    def tau(self) -> float:
        """Kendall tau implied by the spec, sign-adjusted for rotation."""
        base = param_to_tau(self.family, self.parameter)
        return -base if self.rotation in (90, 270) else base


def _clamp(x):
    return np.clip(np.asarray(x, dtype=float), EPS, 1.0 - EPS)


# ---------------------------------------------------------------------------
# base-family (rotation 0) log-density and h-function, both exchangeable


def _base_logpdf(family, theta, u, v):
    if family == "independence":
        return np.zeros(np.broadcast(u, v).shape)
    if family == "gaussian":
        r = theta
        x, y = special.ndtri(u), special.ndtri(v)
        return -0.5 * np.log1p(-r * r) - r * (0.5 * r * (x * x + y * y) - x * y) / (1 - r * r)
    if family == "clayton":
        t = np.power(u, -theta) + np.power(v, -theta) - 1.0
        return (
            np.log1p(theta)
            - (theta + 1.0) * (np.log(u) + np.log(v))
            - (2.0 + 1.0 / theta) * np.log(t)
        )
    if family == "gumbel":
        lu, lv = -np.log(u), -np.log(v)
        s = lu**theta + lv**theta
        s_r = s ** (1.0 / theta)
        return (
            -s_r
            + lu
            + lv
            + (theta - 1.0) * (np.log(lu) + np.log(lv))
            + (2.0 / theta - 2.0) * np.log(s)
            + np.log1p((theta - 1.0) / s_r)
        )
    if family == "frank":
        g1 = np.expm1(-theta)
        gu, gv = np.expm1(-theta * u), np.expm1(-theta * v)
        return (
            np.log(-theta * g1)
            - theta * (u + v)
            - 2.0 * np.log(np.abs(g1 + gu * gv))
        )
    raise DataError(f"unknown family {family!r}")


def _base_hfunc(family, theta, u, v):
    """P(U <= u | V = v) for the unrotated family."""
    if family == "independence":
        return np.broadcast_arrays(u, v)[0].copy()
    if family == "gaussian":
        r = theta
        x, y = special.ndtri(u), special.ndtri(v)
        return special.ndtr((x - r * y) / np.sqrt(1 - r * r))
    if family == "clayton":
        t = np.power(u, -theta) + np.power(v, -theta) - 1.0
        return np.exp(-(theta + 1.0) * np.log(v) - (1.0 + 1.0 / theta) * np.log(t))
    if family == "gumbel":
        lu, lv = -np.log(u), -np.log(v)
        s = lu**theta + lv**theta
        s_r = s ** (1.0 / theta)
        return np.exp(-s_r + (1.0 / theta - 1.0) * np.log(s) + (theta - 1.0) * np.log(lv) + lv)
    if family == "frank":
        g1 = np.expm1(-theta)
        gu, gv = np.expm1(-theta * u), np.expm1(-theta * v)
        return np.exp(-theta * v) * gu / (g1 + gu * gv)
    raise DataError(f"unknown family {family!r}")


def _base_hinv(family, theta, w, v):
    """Inverse of ``_base_hfunc`` in its first argument."""
    if family == "independence":
        return np.broadcast_arrays(w, v)[0].copy()
    if family == "gaussian":
        r = theta
        return special.ndtr(np.sqrt(1 - r * r) * special.ndtri(w) + r * special.ndtri(v))
    if family == "clayton":
        inner = np.power(w * np.power(v, theta + 1.0), -theta / (1.0 + theta))
        t = inner - np.power(v, -theta) + 1.0
        return np.power(np.maximum(t, EPS), -1.0 / theta)
    if family == "frank":
        g1 = np.expm1(-theta)
        gv = np.expm1(-theta * v)
        gu = w * g1 / (np.exp(-theta * v) - w * gv)
        return -np.log1p(np.maximum(gu, -1.0 + EPS)) / theta
    if family == "gumbel":
        return _bisect_hinv(lambda x: _base_hfunc(family, theta, x, v), w)
    raise DataError(f"unknown family {family!r}")


def _bisect_hinv(hfun, w, max_iter=200):
    """Bracketed bisection for h-inverses without a closed form."""
    w = np.asarray(w, dtype=float)
    lo = np.full(w.shape, EPS)
    hi = np.full(w.shape, 1.0 - EPS)
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f = hfun(mid) - w
        above = f > 0
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        if np.max(hi - lo) < 1e-15:
            break
    else:
        resid = np.max(np.abs(hfun(mid) - w))
        if not np.isfinite(resid):
            raise NumericalError("h-inverse bisection failed to converge")
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# rotation dispatch


def log_density(spec: PairCopulaSpec, u, v):
    """Log copula density at (u, v); inputs clamped to the open unit square."""
    u, v = _clamp(u), _clamp(v)
    rot, fam, th = spec.rotation, spec.family, spec.parameter
    if rot == 0:
        return _base_logpdf(fam, th, u, v)
    if rot == 90:
        return _base_logpdf(fam, th, 1.0 - u, v)
    if rot == 180:
        return _base_logpdf(fam, th, 1.0 - u, 1.0 - v)
    return _base_logpdf(fam, th, u, 1.0 - v)


def density(spec: PairCopulaSpec, u, v):
    """Copula density c(u, v) >= 0."""
    return np.exp(log_density(spec, u, v))


def hfunc(spec: PairCopulaSpec, u, v, direction: str = "cond_on_second"):
    """Conditional CDF derived from the copula.

    ``cond_on_second`` returns P(U <= u | V = v) = dC/dv; ``cond_on_first``
    returns P(V <= v | U = u) = dC/du. Strictly increasing in the
    non-conditioning argument.
    """
    u, v = _clamp(u), _clamp(v)
    rot, fam, th = spec.rotation, spec.family, spec.parameter
    if direction == "cond_on_second":
        if rot == 0:
            out = _base_hfunc(fam, th, u, v)
        elif rot == 90:
            out = 1.0 - _base_hfunc(fam, th, 1.0 - u, v)
        elif rot == 180:
            out = 1.0 - _base_hfunc(fam, th, 1.0 - u, 1.0 - v)
        else:
            out = _base_hfunc(fam, th, u, 1.0 - v)
    elif direction == "cond_on_first":
        # base families are exchangeable: dC/du (u, v) = dC/dv (v, u)
        if rot == 0:
            out = _base_hfunc(fam, th, v, u)
        elif rot == 90:
            out = _base_hfunc(fam, th, v, 1.0 - u)
        elif rot == 180:
            out = 1.0 - _base_hfunc(fam, th, 1.0 - v, 1.0 - u)
        else:
            out = 1.0 - _base_hfunc(fam, th, 1.0 - v, u)
    else:
        raise DataError(f"unknown h-function direction {direction!r}")
    return np.clip(out, EPS, 1.0 - EPS)


def hinv(spec: PairCopulaSpec, w, z, direction: str = "cond_on_second"):
    """Inverse h-function: the quantile of the conditional CDF.

    ``cond_on_second``: the u with hfunc(u, z) = w, conditioning on V = z.
    ``cond_on_first``: the v with hfunc(z, v, cond_on_first) = w,
    conditioning on U = z.
    """
    w, z = _clamp(w), _clamp(z)
    rot, fam, th = spec.rotation, spec.family, spec.parameter
    if direction == "cond_on_second":
        if rot == 0:
            out = _base_hinv(fam, th, w, z)
        elif rot == 90:
            out = 1.0 - _base_hinv(fam, th, 1.0 - w, z)
        elif rot == 180:
            out = 1.0 - _base_hinv(fam, th, 1.0 - w, 1.0 - z)
        else:
            out = _base_hinv(fam, th, w, 1.0 - z)
    elif direction == "cond_on_first":
        if rot == 0:
            out = _base_hinv(fam, th, w, z)
        elif rot == 90:
            out = _base_hinv(fam, th, w, 1.0 - z)
        elif rot == 180:
            out = 1.0 - _base_hinv(fam, th, 1.0 - w, 1.0 - z)
        else:
            out = 1.0 - _base_hinv(fam, th, 1.0 - w, z)
    else:
        raise DataError(f"unknown h-function direction {direction!r}")
    return np.clip(out, EPS, 1.0 - EPS)


# ---------------------------------------------------------------------------
# Kendall tau maps


def _frank_tau(theta: float) -> float:
    if theta == 0.0:
        return 0.0
    debye, _ = integrate.quad(lambda t: t / np.expm1(t), 0.0, abs(theta))
    tau = 1.0 - 4.0 / abs(theta) * (1.0 - debye / abs(theta))
    return tau if theta > 0 else -tau


def param_to_tau(family: str, parameter: float | None) -> float:
    """Kendall tau of the unrotated family at the given parameter."""
    if family == "independence":
        return 0.0
    if parameter is None:
        raise DataError(f"{family} copula requires a parameter")
    p = float(parameter)
    if family == "gaussian":
        return 2.0 / np.pi * np.arcsin(p)
    if family == "clayton":
        return p / (p + 2.0)
    if family == "gumbel":
        return 1.0 - 1.0 / p
    if family == "frank":
        return _frank_tau(p)
    raise DataError(f"unknown family {family!r}")


def tau_to_param(family: str, tau: float) -> float:
    """Parameter of the unrotated family matching a Kendall tau.

    Clayton and gumbel only support tau > 0; for negative dependence the
    caller must use a 90 or 270 degree rotation, and the error says so.
    """
    if abs(tau) >= 1.0:
        raise DataError(f"|tau| must be < 1, got {tau}")
    if family == "independence":
        if tau != 0.0:
            raise DataError("independence copula has tau = 0")
        return None
    if family == "gaussian":
        return float(np.sin(np.pi * tau / 2.0))
    if family in ("clayton", "gumbel"):
        if tau < 0:
            raise DataError(
                f"{family} does not support negative tau; use rotation 90 or 270"
            )
        if family == "clayton":
            if tau == 0.0:
                raise DataError("clayton requires tau > 0 (parameter domain is theta > 0)")
            return 2.0 * tau / (1.0 - tau)
        return 1.0 / (1.0 - tau)
    if family == "frank":
        if tau == 0.0:
            raise DataError("frank requires tau != 0 (parameter domain excludes 0)")
        lo, hi = 1e-8, _FIT_BOUNDS["frank"][1]
        theta = optimize.brentq(lambda t: _frank_tau(t) - abs(tau), lo, hi, xtol=1e-12)
        return theta if tau > 0 else -theta
    raise DataError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# fitting


def _candidate_specs(family_set, tau):
    """Families + rotations worth trying for an observed tau sign."""
    out = []
    for fam in family_set:
        if fam == "independence":
            continue
        if fam in ("gaussian", "frank"):
            out.append((fam, 0))
        elif tau >= 0:
            out.extend([(fam, 0), (fam, 180)])
        else:
            out.extend([(fam, 90), (fam, 270)])
    return out


def _fit_one(family, rotation, u, v, tau):
    lo, hi = _FIT_BOUNDS[family]
    base_tau = abs(tau) if rotation in (90, 270) else tau
    if family in ("clayton", "gumbel"):
        base_tau = abs(base_tau)
    if rotation in (90, 270):
        uu = 1.0 - u if rotation == 90 else u
        vv = v if rotation == 90 else 1.0 - v
    elif rotation == 180:
        uu, vv = 1.0 - u, 1.0 - v
    else:
        uu, vv = u, v

    def nll(theta):
        with np.errstate(all="ignore"):
            ll = _base_logpdf(family, theta, uu, vv)
        if not np.all(np.isfinite(ll)):
            return 1e300
        return -float(np.sum(ll))

    if family == "frank" and abs(base_tau) > 1e-12:
        # keep the optimizer on the side of the observed dependence sign
        lo, hi = (1e-6, hi) if base_tau > 0 else (lo, -1e-6)
    res = optimize.minimize_scalar(nll, bounds=(lo, hi), method="bounded", options={"xatol": 1e-8})
    if not np.isfinite(res.fun) or res.fun >= 1e299:
        raise NumericalError(f"likelihood fit failed for {family} rot {rotation}")
    return PairCopulaSpec(family, float(res.x), rotation), -float(res.fun)


def fit_pair(
    u,
    v,
    family_set=FAMILIES,
    criterion: str = "aic",
) -> PairCopulaSpec:
    """Fit the criterion-best pair copula to two (0,1) samples.

    Every family in ``family_set`` is tried (with the rotations matching the
    sign of the empirical Kendall tau), its parameter estimated by bounded
    1-d likelihood maximization, and the AIC- or loglik-best spec returned.
    If every parametric fit fails, falls back to independence with a warning.
    """
    u, v = _clamp(np.asarray(u, dtype=float)), _clamp(np.asarray(v, dtype=float))
    if u.shape != v.shape or u.ndim != 1:
        raise DataError("fit_pair expects two equal-length 1-d samples")
    if u.size < 20:
        raise DataError(f"need at least 20 observations to fit, got {u.size}")
    if criterion not in ("aic", "loglik"):
        raise DataError(f"unknown criterion {criterion!r}")

    tau = stats.kendalltau(u, v).statistic
    if not np.isfinite(tau):
        tau = 0.0

    # independence: loglik 0, no parameters
    best_spec, best_score = PairCopulaSpec("independence"), 0.0
    if criterion == "loglik":
        best_score = 0.0
    n_failed = 0
    candidates = _candidate_specs(family_set, tau)
    for fam, rot in candidates:
        try:
            spec, loglik = _fit_one(fam, rot, u, v, tau)
        except (NumericalError, DataError, FloatingPointError):
            n_failed += 1
            continue
        score = loglik - 1.0 if criterion == "aic" else loglik
        if score > best_score:
            best_spec, best_score = spec, score
    if candidates and n_failed == len(candidates):
        warnings.warn("all parametric pair-copula fits failed; using independence")
    return best_spec


def simulate_pair(spec: PairCopulaSpec, n: int, seed: int) -> np.ndarray:
    """Draw n iid (u, v) pairs from the copula, deterministic per seed."""
    rng = np.random.default_rng(seed)
    v = rng.uniform(size=n)
    w = rng.uniform(size=n)
    u = hinv(spec, w, v, direction="cond_on_second")
    return np.column_stack([u, v])
