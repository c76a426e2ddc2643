"""Single-event Poisson process likelihood for the DISEE family of models.

Every dyad (target i, source j) has intensity

    lambda_ij(t) = f_i(t - t_i) * exp(alpha_i + beta_j - ||z_i - w_j||)

and, with at most one event per dyad, contributes
``y_ij * log lambda_ij(t_ij) - log(1 + Lambda_ij)`` to the log-likelihood,
where ``Lambda_ij = exp(gamma_ij) * F_i(T - t_i)`` and ``F_i`` is the closed
form accumulated impact.  The ablations drop parts of the rate: see
:class:`ModelVariant`.
"""

from __future__ import annotations

import csv
import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import InvalidParams, NumericalError
from .impact import ImpactKind, ImpactParams, integral_and_grad, log_pdf_and_grad
from .network import DyadPool

DIST_SMOOTHING = 1e-12
ELAPSED_CLAMP = 1e-6  # fraction of the horizon
CHUNK = 1 << 16
CHECKPOINT_FORMAT = "disee-checkpoint"
CHECKPOINT_VERSION = 1


class ModelVariant(enum.Enum):
    IFM = "ifm"
    PAM = "pam"
    TPAM = "tpam"
    LDM = "ldm"
    DISEE = "disee"
    DISEE_PA = "disee-pa"
    FI_DISEE = "fi-disee"
    FI_DISEE_PA = "fi-disee-pa"

    @property
    def has_embedding(self):
        return self in (ModelVariant.LDM, ModelVariant.DISEE, ModelVariant.DISEE_PA,
                        ModelVariant.FI_DISEE, ModelVariant.FI_DISEE_PA)

    @property
    def has_impact(self):
        return self not in (ModelVariant.PAM, ModelVariant.LDM)

    @property
    def has_source_effect(self):
        return self is not ModelVariant.IFM

    @property
    def frozen_impact(self):
        return self in (ModelVariant.FI_DISEE, ModelVariant.FI_DISEE_PA)

    @property
    def preferential(self):
        return self in (ModelVariant.DISEE_PA, ModelVariant.FI_DISEE_PA)

    def impact_kind(self, family=ImpactKind.LOG_NORMAL):
        """Impact kind used by this variant for a density ``family``."""
        if not self.has_impact:
            return ImpactKind.CONSTANT
        if family is ImpactKind.MIXTURE:
            if self.preferential:
                raise InvalidParams("mixture impact has no preferential-attachment form")
            if self.frozen_impact:
                raise InvalidParams("mixture impact has no empirical fixed fit")
            return family
        return family.with_pa() if self.preferential else family.base

    def check_dim(self, dim):
        if self.has_embedding and dim < 1:
            raise InvalidParams(f"{self.value} needs an embedding dimension >= 1")
        if not self.has_embedding and dim != 0:
            raise InvalidParams(f"{self.value} has no embedding space; dimension must be 0")


@dataclass(frozen=True)
class CaseControlConfig:
    ratio: int = 5
    min_controls: int = 5
    resample_every_iteration: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.ratio < 1 or self.min_controls < 1:
            raise InvalidParams("case-control ratio and min_controls must be >= 1")


@dataclass(frozen=True, eq=False)
class ModelParameters:
    """Fitted quantities of one model: embeddings, random effects and impact.

    ``z``/``alpha``/``impact`` are indexed by target, ``w``/``beta`` by source.
    """

    z: np.ndarray
    w: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    impact: ImpactParams
    kind: ImpactKind

    @property
    def dim(self):
        return self.z.shape[1]

    @property
    def n_targets(self):
        return len(self.alpha)

    @property
    def n_sources(self):
        return len(self.beta)

    def blocks(self):
        """All parameter arrays by name (impact fields included)."""
        out = {"z": self.z, "w": self.w, "alpha": self.alpha, "beta": self.beta}
        for name in impact_fields(self.kind):
            out[name] = getattr(self.impact, name)
        return out

    def with_blocks(self, blocks):
        b = self.blocks()
        b.update(blocks)
        imp = {k: b[k] for k in impact_fields(self.kind)}
        impact = ImpactParams(**{**_impact_dict(self.impact), **imp})
        return ModelParameters(b["z"], b["w"], b["alpha"], b["beta"], impact, self.kind)

    def copy(self):
        return self.with_blocks({k: np.array(v, dtype=float, copy=True) for k, v in self.blocks().items()})

    def is_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.blocks().values())

    def __eq__(self, other):
        if not isinstance(other, ModelParameters) or self.kind is not other.kind:
            return NotImplemented
        a, b = self.blocks(), other.blocks()
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a) and all(
            np.array_equal(np.asarray(getattr(self.impact, f)), np.asarray(getattr(other.impact, f)))
            for f in ("lower", "upper"))

    __hash__ = None


def _impact_dict(p):
    return {f: getattr(p, f) for f in ("mu", "log_sigma", "lower", "upper",
                                        "mixture_logits", "mixture_mu", "mixture_log_sigma")}


def impact_fields(kind):
    if kind is ImpactKind.CONSTANT:
        return ()
    if kind is ImpactKind.MIXTURE:
        return ("mixture_logits", "mixture_mu", "mixture_log_sigma")
    return ("mu", "log_sigma")


def trainable(variant, kind):
    """Names of parameter blocks updated during training."""
    names = ["alpha"]
    if variant.has_source_effect:
        names.append("beta")
    if variant.has_embedding:
        names += ["z", "w"]
    if variant.has_impact and not variant.frozen_impact:
        names += list(impact_fields(kind))
    return tuple(names)


def check_params(params, variant):
    variant.check_dim(params.dim)
    if variant.has_impact and params.kind is ImpactKind.CONSTANT:
        raise InvalidParams(f"{variant.value} needs a density impact")
    if not variant.has_impact and params.kind is not ImpactKind.CONSTANT:
        raise InvalidParams(f"{variant.value} uses constant impact")
    if params.kind.is_pa != variant.preferential:
        raise InvalidParams(f"impact kind {params.kind.value} does not match {variant.value}")


# -- rate pieces ---------------------------------------------------------------

def _distance(params, i, j):
    diff = params.z[i] - params.w[j]
    return np.sqrt(np.sum(diff * diff, axis=-1) + DIST_SMOOTHING), diff


def log_rate_core(params, variant, i, j):
    """Log-rate ``alpha_i + beta_j - ||z_i - w_j||`` with the ablation's pieces removed."""
    i = np.asarray(i)
    j = np.asarray(j)
    out = params.alpha[i].astype(float)
    if variant.has_source_effect:
        out = out + params.beta[j]
    if variant.has_embedding:
        out = out - _distance(params, i, j)[0]
    return out


def _exposure(network):
    return np.maximum(network.horizon - network.target_times, 0.0)


def _clamp(network, dt):
    return np.maximum(dt, ELAPSED_CLAMP * network.horizon)


def intensity(network, params, variant, i, j, t):
    """Citation rate of dyad (i, j) at absolute time ``t``."""
    i = np.asarray(i)
    dt = _clamp(network, np.asarray(t, dtype=float) - network.target_times[i])
    logf, _ = log_pdf_and_grad(params.kind, params.impact.take(i), dt)
    return np.exp(logf + log_rate_core(params, variant, i, j))


def cumulative_intensity(network, params, variant, i, j):
    """``Lambda_ij``: the intensity integrated over ``[t_i, T]`` in closed form."""
    i = np.asarray(i)
    F, _ = integral_and_grad(params.kind, params.impact.take(i), _exposure(network)[i])
    with np.errstate(over="ignore"):
        return np.exp(log_rate_core(params, variant, i, j)) * F


def link_probability(network, params, variant, i, j):
    """Probability of exactly one event on the dyad: ``Lambda / (1 + Lambda)``."""
    i = np.asarray(i)
    F, _ = integral_and_grad(params.kind, params.impact.take(i), _exposure(network)[i])
    with np.errstate(divide="ignore"):
        return expit(log_rate_core(params, variant, i, j) + np.log(F))


# -- objective -------------------------------------------------------------------

@dataclass
class _Partial:
    value: float
    alpha: np.ndarray
    beta: np.ndarray
    z: np.ndarray
    w: np.ndarray
    dF: np.ndarray  # d loglik / d F_i
    extra: dict = field(default_factory=dict)

    def add(self, other):
        self.value += other.value
        for k in ("alpha", "beta", "z", "w", "dF"):
            setattr(self, k, getattr(self, k) + getattr(other, k))
        for k, v in other.extra.items():
            self.extra[k] = self.extra[k] + v if k in self.extra else v


def _scatter(idx, vals, n):
    if vals.ndim == 1:
        return np.bincount(idx, weights=vals, minlength=n)
    return np.stack([np.bincount(idx, weights=vals[:, k], minlength=n)
                     for k in range(vals.shape[1])], axis=1).reshape(n, vals.shape[1])


def _dyad_part(params, variant, logF, i, j, weight, is_link, logf=None):
    """Log-likelihood terms of a block of dyads and their raw gradients."""
    nt, ns, D = params.n_targets, params.n_sources, params.dim
    gamma = params.alpha[i].astype(float)
    if variant.has_source_effect:
        gamma = gamma + params.beta[j]
    if variant.has_embedding:
        dist, diff = _distance(params, i, j)
        gamma = gamma - dist
    u = gamma + logF[i]
    soft = np.logaddexp(0.0, u)
    value = -weight * soft
    coef = -weight * expit(u)  # d/d gamma
    with np.errstate(over="ignore", invalid="ignore"):
        dF = -weight * np.exp(gamma - soft)
    if is_link:
        value = value + logf + gamma
        coef = coef + 1.0
    part = _Partial(
        float(np.sum(value)),
        _scatter(i, coef, nt),
        _scatter(j, coef, ns) if variant.has_source_effect else np.zeros(ns),
        np.zeros((nt, D)), np.zeros((ns, D)),
        _scatter(i, dF, nt))
    if variant.has_embedding:
        g = coef[:, None] * diff / dist[:, None]
        part.z = -_scatter(i, g, nt)
        part.w = _scatter(j, g, ns)
    if not np.isfinite(part.value):
        bad = ~np.isfinite(value)
        k = int(np.flatnonzero(bad)[0]) if bad.any() else 0
        raise NumericalError(f"non-finite log-likelihood term for dyad ({int(i[k])}, {int(j[k])})",
                             dyad=(int(i[k]), int(j[k])))
    return part


def _controls_of(pool, targets):
    counts = pool.sizes[targets]
    ti = np.repeat(targets, counts)
    starts = np.cumsum(counts) - counts
    ranks = np.arange(int(counts.sum())) - np.repeat(starts, counts)
    return ti, pool.locate(ti, ranks)


class Objective:
    """Negative log-likelihood of a network under a model variant.

    Holds everything that does not depend on the parameters: the event
    arrays, clamped citation ages and the pool of non-link dyads (minus
    ``exclude``, e.g. held-out test dyads).  Exact evaluation sums every
    non-link in fixed-size chunks; case-control evaluation uses
    :class:`CaseControlSampler`.  Chunk partials are merged in chunk order,
    so results do not depend on ``threads``.
    """

    def __init__(self, network, variant, exclude=None, threads=1):
        self.network = network
        self.variant = variant
        self.threads = max(1, int(threads))
        self.links_i = network.event_targets
        self.links_j = network.event_sources
        self.links_dt = _clamp(network, network.elapsed)
        self.exposure = _exposure(network)
        self.pool = DyadPool(network, exclude=exclude)
        self._exact_chunks = None

    def exact_chunks(self):
        if self._exact_chunks is None:
            sizes = self.pool.sizes
            chunks, cur, acc = [], [], 0
            for i in range(len(sizes)):
                cur.append(i)
                acc += sizes[i]
                if acc >= CHUNK:
                    chunks.append(np.array(cur))
                    cur, acc = [], 0
            if cur:
                chunks.append(np.array(cur))
            self._exact_chunks = [(*_controls_of(self.pool, c), None) for c in chunks]
        return self._exact_chunks

    def evaluate(self, params, controls=None, grad=True):
        """Log-likelihood and (optionally) gradients of the *negative* log-likelihood.

        ``controls`` is a list of ``(targets, sources, weights)`` blocks; the
        default is every non-link with unit weight.
        """
        check_params(params, self.variant)
        variant, kind = self.variant, params.kind
        F, dF_dtheta = integral_and_grad(kind, params.impact, self.exposure)
        with np.errstate(divide="ignore"):
            logF = np.log(F)
        logf, dlogf = log_pdf_and_grad(kind, params.impact.take(self.links_i), self.links_dt)
        total = _dyad_part(params, variant, logF, self.links_i, self.links_j, 1.0, True, logf)
        if controls is None:
            controls = self.exact_chunks()

        def run(block):
            i, j, wgt = block
            if len(i) == 0:
                return None
            return _dyad_part(params, variant, logF, i, j, 1.0 if wgt is None else wgt, False)

        if self.threads > 1 and len(controls) > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                parts = list(ex.map(run, controls))
        else:
            parts = [run(b) for b in controls]
        for p in parts:
            if p is not None:
                total.add(p)
        if not np.isfinite(total.value):
            raise NumericalError("non-finite log-likelihood")
        if not grad:
            return total.value, None

        nt = params.n_targets
        g = {"alpha": -total.alpha, "beta": -total.beta, "z": -total.z, "w": -total.w}
        for name in impact_fields(kind):
            link_part = _scatter(self.links_i, np.asarray(dlogf[name]), nt)
            g[name] = -(link_part + np.asarray(dF_dtheta[name]) * (
                total.dF if np.ndim(dF_dtheta[name]) == 1 else total.dF[:, None]))
        keep = set(trainable(variant, kind))
        blocks = params.blocks()
        grads = {k: (np.asarray(g[k], dtype=float).reshape(np.shape(blocks[k])) if k in keep
                     else np.zeros(np.shape(blocks[k]))) for k in blocks}
        for k, v in grads.items():
            if not np.all(np.isfinite(v)):
                raise NumericalError(f"non-finite gradient in block {k}")
        return total.value, grads


class CaseControlSampler:
    """Draws control (non-link) dyads for the case-control likelihood estimate.

    Target ``i`` gets ``n_i = min(N_i, max(ratio * in_degree_i, min_controls))``
    controls out of its ``N_i`` admissible non-links, each weighted by
    ``N_i / n_i`` so the control sum is unbiased.
    """

    def __init__(self, network, cc, exclude=None, pool=None):
        self.cc = cc
        self.pool = pool if pool is not None else DyadPool(network, exclude=exclude)
        deg = network.in_degree()
        self.counts = np.minimum(self.pool.sizes, np.maximum(cc.ratio * deg, cc.min_controls))
        with np.errstate(divide="ignore", invalid="ignore"):
            self.scale = np.where(self.counts > 0, self.pool.sizes / np.maximum(self.counts, 1), 0.0)
        self.rng = np.random.default_rng(cc.seed)
        self._cached = None

    def draw(self):
        if self._cached is not None and not self.cc.resample_every_iteration:
            return self._cached
        ti, sj = self.pool.sample(self.counts, self.rng)
        blocks = []
        for lo in range(0, len(ti), CHUNK):
            sl = slice(lo, lo + CHUNK)
            blocks.append((ti[sl], sj[sl], self.scale[ti[sl]]))
        self._cached = blocks
        return blocks


def log_likelihood(network, params, variant, exclude=None, threads=1):
    """Exact log-likelihood over every modelled dyad (minus ``exclude``)."""
    return Objective(network, variant, exclude=exclude, threads=threads).evaluate(params, grad=False)[0]


def log_likelihood_case_control(network, params, variant, cc, exclude=None, sampler=None):
    """Case-control estimate of the log-likelihood.

    Pass a persistent ``sampler`` to draw fresh controls on each call;
    without one, a sampler seeded from ``cc`` is built, so repeated calls
    agree.
    """
    obj = Objective(network, variant, exclude=exclude)
    if sampler is None:
        sampler = CaseControlSampler(network, cc, pool=obj.pool)
    return obj.evaluate(params, controls=sampler.draw(), grad=False)[0]


def gradients(network, params, variant, cc=None, exclude=None, sampler=None):
    """Gradient of the negative log-likelihood for every parameter block.

    Frozen blocks get zeros.  With ``cc`` (or ``sampler``) the case-control
    estimate is differentiated instead of the exact likelihood.
    """
    obj = Objective(network, variant, exclude=exclude)
    controls = None
    if sampler is None and cc is not None:
        sampler = CaseControlSampler(network, cc, pool=obj.pool)
    if sampler is not None:
        controls = sampler.draw()
    return obj.evaluate(params, controls=controls)[1]


def gradient_check(network, params, variant, h=1e-5, floor=1e-3, exclude=None):
    """Compare analytic gradients with central differences of the exact likelihood.

    Returns rows ``(name, analytic, numeric, rel_error)`` with
    ``rel_error = |a - n| / max(|a|, |n|, floor)``.
    """
    obj = Objective(network, variant, exclude=exclude)
    _, grads = obj.evaluate(params)
    rows = []
    blocks = params.blocks()
    for name in trainable(variant, params.kind):
        base = np.asarray(blocks[name], dtype=float)
        flat = base.ravel()
        for k in range(flat.size):
            vals = []
            for step in (h, -h):
                pert = flat.copy()
                pert[k] += step
                p = params.with_blocks({name: pert.reshape(base.shape)})
                vals.append(-obj.evaluate(p, grad=False)[0])
            num = (vals[0] - vals[1]) / (2 * h)
            ana = float(grads[name].ravel()[k])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            label = name if base.ndim == 0 else f"{name}[{','.join(map(str, np.unravel_index(k, base.shape)))}]"
            rows.append((label, ana, num, err))
    return rows


def write_gradient_report(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["param", "analytic", "numeric", "rel_error"])
        for r in rows:
            out.writerow([r[0], repr(r[1]), repr(r[2]), repr(r[3])])


# -- checkpoints -------------------------------------------------------------------

def _enc(a):
    a = np.asarray(a, dtype=float)
    return [None if np.isinf(x) else float(x) for x in a.ravel()] if np.isinf(a).any() else a.ravel().tolist()


def _dec(v, shape):
    return np.array([np.inf if x is None else x for x in v], dtype=float).reshape(shape)


def save_checkpoint(path, params, variant, network):
    """Write a versioned JSON checkpoint (header plus flat arrays)."""
    nt, ns, D = params.n_targets, params.n_sources, params.dim
    imp = params.impact
    body = {"target_ids": list(network.target_ids), "source_ids": list(network.source_ids),
            "z": _enc(params.z), "w": _enc(params.w), "alpha": _enc(params.alpha), "beta": _enc(params.beta)}
    for f in ("mu", "log_sigma", "lower", "upper", "mixture_logits", "mixture_mu", "mixture_log_sigma"):
        v = getattr(imp, f)
        if v is not None:
            body[f] = _enc(np.broadcast_to(np.asarray(v, dtype=float), (nt,) + np.shape(v)[1:]))
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "variant": variant.value,
           "dim": D, "impact_kind": params.kind.value, "horizon": network.horizon,
           "origin": network.origin, "n_targets": nt, "n_sources": ns,
           "n_components": imp.n_components, "body": body}
    Path(path).write_text(json.dumps(doc, indent=None, separators=(",", ":")) + "\n", encoding="utf-8")


def load_checkpoint(path):
    """Read a checkpoint; returns ``(params, variant, header)``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidParams(f"{path} is not a version {CHECKPOINT_VERSION} checkpoint")
    nt, ns, D, k = doc["n_targets"], doc["n_sources"], doc["dim"], doc["n_components"]
    b = doc["body"]
    imp = {}
    for f in ("mu", "log_sigma", "lower", "upper"):
        if f in b:
            imp[f] = _dec(b[f], (nt,))
    for f in ("mixture_logits", "mixture_mu", "mixture_log_sigma"):
        if f in b:
            imp[f] = _dec(b[f], (nt, k))
    params = ModelParameters(_dec(b["z"], (nt, D)), _dec(b["w"], (ns, D)), _dec(b["alpha"], (nt,)),
                             _dec(b["beta"], (ns,)), ImpactParams(**imp), ImpactKind(doc["impact_kind"]))
    header = {k: v for k, v in doc.items() if k != "body"}
    header["target_ids"] = b["target_ids"]
    header["source_ids"] = b["source_ids"]
    return params, ModelVariant(doc["variant"]), header
