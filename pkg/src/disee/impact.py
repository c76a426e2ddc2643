"""Impact functions: how a cited paper's attention is spread over citation age.

Every density family exposes ``pdf``, ``cdf`` and the accumulated impact
``integral(dt) = int_0^dt f(u) du`` in closed form.  The preferential
attachment (PA) families use ``f = pdf * cdf`` whose integral is
``cdf(dt)**2 / 2`` by substituting ``u = cdf(t)``.

Parameters are held in :class:`ImpactParams` whose fields are numpy arrays
(one entry per target node) or scalars; all functions broadcast.  The
standard normal cdf comes from :func:`scipy.special.ndtr` (Cephes erf/erfc,
double precision, absolute error well below 1e-12); upper-tail differences
are taken on the mirrored side to avoid cancellation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr, softmax

from .errors import EmptySample, InvalidParams

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
SIGMA_FLOOR = 1e-3


class ImpactKind(enum.Enum):
    LOG_NORMAL = "log-normal"
    TRUNCATED_NORMAL = "truncated"
    PA_LOG_NORMAL = "pa-log-normal"
    PA_TRUNCATED_NORMAL = "pa-truncated"
    CONSTANT = "constant"
    MIXTURE = "mixture"

    @property
    def is_pa(self):
        return self in (ImpactKind.PA_LOG_NORMAL, ImpactKind.PA_TRUNCATED_NORMAL)

    @property
    def base(self):
        """The underlying density family (PA kinds map to their pdf family)."""
        return {ImpactKind.PA_LOG_NORMAL: ImpactKind.LOG_NORMAL,
                ImpactKind.PA_TRUNCATED_NORMAL: ImpactKind.TRUNCATED_NORMAL}.get(self, self)

    def with_pa(self):
        return {ImpactKind.LOG_NORMAL: ImpactKind.PA_LOG_NORMAL,
                ImpactKind.TRUNCATED_NORMAL: ImpactKind.PA_TRUNCATED_NORMAL}[self.base]


@dataclass(frozen=True)
class ImpactParams:
    """Impact parameters, broadcast over nodes.

    ``mu`` is the location (log-time units for log-normal kinds) and
    ``log_sigma`` the log scale.  ``lower``/``upper`` bound the support of
    truncated-normal kinds.  Mixtures keep per-component arrays with a
    trailing axis of length k and weights ``softmax(mixture_logits)``.
    """

    mu: np.ndarray | float = 0.0
    log_sigma: np.ndarray | float = 0.0
    lower: np.ndarray | float = 0.0
    upper: np.ndarray | float = np.inf
    mixture_logits: np.ndarray | None = None
    mixture_mu: np.ndarray | None = None
    mixture_log_sigma: np.ndarray | None = None

    @property
    def sigma(self):
        return np.exp(self.log_sigma)

    @property
    def weights(self):
        return softmax(np.asarray(self.mixture_logits, dtype=float), axis=-1)

    @property
    def n_components(self):
        return 0 if self.mixture_logits is None else np.shape(self.mixture_logits)[-1]

    def take(self, idx):
        """Select node entries ``idx`` from every array-valued field."""
        def pick(v):
            if v is None or np.ndim(v) == 0:
                return v
            return np.asarray(v)[idx]
        return ImpactParams(*(pick(getattr(self, f)) for f in _FIELDS))

    def check(self):
        for f in ("mu", "log_sigma", "mixture_logits", "mixture_mu", "mixture_log_sigma"):
            v = getattr(self, f)
            if v is not None and not np.all(np.isfinite(v)):
                raise InvalidParams(f"non-finite impact parameter {f}")
        lo, hi = np.asarray(self.lower, dtype=float), np.asarray(self.upper, dtype=float)
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo >= hi):
            raise InvalidParams("truncation bounds must satisfy lower < upper")
        return self


_FIELDS = ("mu", "log_sigma", "lower", "upper", "mixture_logits", "mixture_mu", "mixture_log_sigma")


def _phi(x):
    return np.exp(-0.5 * np.square(x) - LOG_SQRT_2PI)


def _xphi(x):
    # x * phi(x) with the limit 0 at +-inf
    with np.errstate(invalid="ignore"):
        out = x * _phi(x)
    return np.where(np.isfinite(x), out, 0.0)


def _log_mass(a, b):
    """log(Phi(b) - Phi(a)) for a <= b, taken on the tail with less cancellation."""
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = log_ndtr(-a) + np.log(-np.expm1(log_ndtr(-b) - log_ndtr(-a)))
        lower = log_ndtr(b) + np.log(-np.expm1(log_ndtr(a) - log_ndtr(b)))
        out = np.where(a > 0, upper, lower)
    return np.where(a < b, out, -np.inf)


def _phi_over(x, log_z):
    # phi(x) / Z and x * phi(x) / Z without forming Z; both vanish at +-inf
    with np.errstate(invalid="ignore", over="ignore"):
        r = np.exp(-0.5 * np.square(x) - LOG_SQRT_2PI - log_z)
        xr = np.where(np.isfinite(x), x * r, 0.0)
    return np.where(np.isfinite(x), r, 0.0), xr


def _std(x, mu, log_sigma):
    with np.errstate(invalid="ignore"):
        return (x - mu) / np.exp(log_sigma)


# -- per-family primitives returning (value, d/dmu, d/dlog_sigma) -------------

def _lognormal_logpdf(dt, mu, ls):
    with np.errstate(divide="ignore", invalid="ignore"):
        x = _std(np.log(dt), mu, ls)
        val = -np.log(dt) - ls - LOG_SQRT_2PI - 0.5 * x * x
    return val, x / np.exp(ls), x * x - 1.0


def _lognormal_cdf(dt, mu, ls):
    with np.errstate(divide="ignore"):
        x = _std(np.log(dt), mu, ls)
    return ndtr(x), -_phi(x) / np.exp(ls), -_xphi(x)


def _lognormal_logcdf(dt, mu, ls):
    with np.errstate(divide="ignore"):
        x = _std(np.log(dt), mu, ls)
    lc = log_ndtr(x)
    with np.errstate(invalid="ignore"):
        ratio = np.where(np.isfinite(x), np.exp(-0.5 * x * x - LOG_SQRT_2PI - lc), 0.0)
        xratio = np.where(np.isfinite(x), x * ratio, 0.0)
    return lc, -ratio / np.exp(ls), -xratio


def _trunc_parts(mu, ls, lo, hi):
    """Standardized bounds, log normalizer, and d log Z / d(mu, log_sigma)."""
    a = _std(lo, mu, ls)
    b = _std(hi, mu, ls)
    log_z = _log_mass(a, b)
    ra, xra = _phi_over(a, log_z)
    rb, xrb = _phi_over(b, log_z)
    return a, b, log_z, (ra - rb) / np.exp(ls), xra - xrb


def _trunc_logpdf(dt, mu, ls, lo, hi):
    a, b, log_z, dlz_mu, dlz_ls = _trunc_parts(mu, ls, lo, hi)
    x = _std(dt, mu, ls)
    inside = (dt >= lo) & (dt <= hi)
    val = np.where(inside, -0.5 * x * x - LOG_SQRT_2PI - ls - log_z, -np.inf)
    return val, x / np.exp(ls) - dlz_mu, x * x - 1.0 - dlz_ls


def _trunc_cdf(dt, mu, ls, lo, hi):
    a, b, log_z, dlz_mu, dlz_ls = _trunc_parts(mu, ls, lo, hi)
    x = np.clip(_std(dt, mu, ls), a, b)
    f = np.clip(np.exp(_log_mass(a, x) - log_z), 0.0, 1.0)
    ra, xra = _phi_over(a, log_z)
    rx, xrx = _phi_over(x, log_z)
    # d(N/Z) = dN/Z - F * dlogZ
    g_mu = (ra - rx) / np.exp(ls) - f * dlz_mu
    g_ls = (xra - xrx) - f * dlz_ls
    return f, g_mu, g_ls


def _trunc_logcdf(dt, mu, ls, lo, hi):
    f, g_mu, g_ls = _trunc_cdf(dt, mu, ls, lo, hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(f), g_mu / f, g_ls / f


def _mixture_logpdf(dt, p):
    dt = np.asarray(dt, dtype=float)[..., None]
    lo = np.asarray(p.lower, dtype=float)[..., None]
    hi = np.asarray(p.upper, dtype=float)[..., None]
    comp, g_mu, g_ls = _trunc_logpdf(dt, p.mixture_mu, p.mixture_log_sigma, lo, hi)
    logits = np.asarray(p.mixture_logits, dtype=float)
    logw = logits - logsumexp(logits, axis=-1, keepdims=True)
    joint = logw + comp
    total = logsumexp(joint, axis=-1)
    with np.errstate(invalid="ignore"):
        resp = np.where(np.isfinite(total)[..., None], np.exp(joint - total[..., None]), 0.0)
    grads = {
        "mixture_logits": resp - np.exp(logw),
        "mixture_mu": resp * np.where(resp > 0, g_mu, 0.0),
        "mixture_log_sigma": resp * np.where(resp > 0, g_ls, 0.0),
    }
    return total, grads


def _mixture_cdf(dt, p):
    dt = np.asarray(dt, dtype=float)[..., None]
    lo = np.asarray(p.lower, dtype=float)[..., None]
    hi = np.asarray(p.upper, dtype=float)[..., None]
    comp, g_mu, g_ls = _trunc_cdf(dt, p.mixture_mu, p.mixture_log_sigma, lo, hi)
    w = p.weights
    total = np.sum(w * comp, axis=-1)
    grads = {
        "mixture_logits": w * (comp - total[..., None]),
        "mixture_mu": w * g_mu,
        "mixture_log_sigma": w * g_ls,
    }
    return total, grads


def _as_float(dt):
    dt = np.asarray(dt, dtype=float)
    if np.any(dt < 0):
        raise InvalidParams("elapsed time must be non-negative")
    return dt


def log_pdf_and_grad(kind, params, dt):
    """Log impact density at ``dt`` and its gradient w.r.t. each trainable field."""
    dt = _as_float(dt)
    p = params
    if kind is ImpactKind.CONSTANT:
        return np.zeros(np.broadcast(dt, np.asarray(p.mu)).shape), {}
    if kind is ImpactKind.MIXTURE:
        return _mixture_logpdf(dt, p)
    base = kind.base
    if base is ImpactKind.LOG_NORMAL:
        val, gm, gs = _lognormal_logpdf(dt, p.mu, p.log_sigma)
        if kind.is_pa:
            c, cm, cs = _lognormal_logcdf(dt, p.mu, p.log_sigma)
            val, gm, gs = val + c, gm + cm, gs + cs
    else:
        val, gm, gs = _trunc_logpdf(dt, p.mu, p.log_sigma, p.lower, p.upper)
        if kind.is_pa:
            c, cm, cs = _trunc_logcdf(dt, p.mu, p.log_sigma, p.lower, p.upper)
            val, gm, gs = val + c, gm + cm, gs + cs
    return val, {"mu": gm, "log_sigma": gs}


def _base_cdf_and_grad(kind, p, dt):
    if kind.base is ImpactKind.LOG_NORMAL:
        return _lognormal_cdf(dt, p.mu, p.log_sigma)
    return _trunc_cdf(dt, p.mu, p.log_sigma, p.lower, p.upper)


def integral_and_grad(kind, params, dt):
    """Accumulated impact ``int_0^dt f`` and its parameter gradient."""
    dt = _as_float(dt)
    if kind is ImpactKind.CONSTANT:
        return dt * np.ones(np.shape(params.mu)), {}
    if kind is ImpactKind.MIXTURE:
        return _mixture_cdf(dt, params)
    c, gm, gs = _base_cdf_and_grad(kind, params, dt)
    if kind.is_pa:
        return 0.5 * c * c, {"mu": c * gm, "log_sigma": c * gs}
    return c, {"mu": gm, "log_sigma": gs}


def pdf(kind, params, dt):
    """Impact density per unit time at elapsed time ``dt``.

    >>> float(pdf(ImpactKind.LOG_NORMAL, ImpactParams(0.0, 0.0), 1.0))  # doctest: +ELLIPSIS
    0.398942...
    """
    params.check()
    if kind is ImpactKind.CONSTANT:
        return np.ones(np.broadcast(np.asarray(dt, dtype=float), np.asarray(params.mu)).shape)
    val, _ = log_pdf_and_grad(kind, params, dt)
    return np.exp(val)


def cdf(kind, params, dt):
    """Probability mass of the impact distribution on ``[0, dt]``.

    For PA kinds this is the cdf of the underlying density.  Constant
    impact has no cdf.
    """
    params.check()
    dt = _as_float(dt)
    if kind is ImpactKind.CONSTANT:
        raise InvalidParams("constant impact is not a distribution")
    if kind is ImpactKind.MIXTURE:
        return _mixture_cdf(dt, params)[0]
    return _base_cdf_and_grad(kind, params, dt)[0]


def integral(kind, params, dt):
    """Closed-form ``int_0^dt f(u) du``."""
    params.check()
    return integral_and_grad(kind, params, dt)[0]


def fit_empirical(elapsed, kind, upper=None):
    """Fix impact parameters to the empirical citation-age distribution.

    Log-normal kinds use the maximum-likelihood estimate on log ages;
    truncated-normal kinds match the sample mean and standard deviation on
    the untruncated parameters, with support ``(0, upper)``.  The scale is
    floored at 1e-3.
    """
    t = np.asarray(elapsed, dtype=float).ravel()
    if t.size == 0:
        raise EmptySample("cannot fit an impact function to no citations")
    if np.any(t <= 0) or not np.all(np.isfinite(t)):
        raise InvalidParams("elapsed times must be positive and finite")
    base = kind.base
    if base is ImpactKind.LOG_NORMAL:
        x = np.log(t)
        return ImpactParams(mu=float(x.mean()), log_sigma=float(np.log(max(x.std(), SIGMA_FLOOR))))
    if base is ImpactKind.TRUNCATED_NORMAL:
        hi = np.inf if upper is None else float(upper)
        return ImpactParams(mu=float(t.mean()), log_sigma=float(np.log(max(t.std(), SIGMA_FLOOR))),
                            lower=0.0, upper=hi)
    raise InvalidParams(f"no empirical fit for {kind.value} impact")


def mode(kind, params):
    """Elapsed time at which a single-component density peaks."""
    if kind is ImpactKind.LOG_NORMAL:
        return np.exp(np.asarray(params.mu) - np.square(params.sigma))
    if kind is ImpactKind.TRUNCATED_NORMAL:
        return np.clip(params.mu, params.lower, params.upper)
    raise InvalidParams(f"no closed-form mode for {kind.value}")


def stack(params_list):
    """Combine scalar :class:`ImpactParams` into one array-valued instance."""
    out = {}
    for f in _FIELDS:
        vals = [getattr(p, f) for p in params_list]
        out[f] = None if any(v is None for v in vals) else np.array(vals, dtype=float)
    return ImpactParams(**out)


def with_values(params, **fields):
    return replace(params, **fields)
