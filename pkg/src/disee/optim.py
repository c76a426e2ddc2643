"""Initialization, Adam and the training loop."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySample, InvalidParams, NumericalError
from .impact import ImpactKind, ImpactParams, fit_empirical
from .model import (
    CaseControlConfig,
    CaseControlSampler,
    ModelParameters,
    Objective,
    _clamp,
    trainable,
)

logger = logging.getLogger(__name__)

INIT_SCALE = 0.1
INIT_SIGMA_FLOOR = 0.1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    iterations: int = 3000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    case_control: CaseControlConfig | None = field(default_factory=CaseControlConfig)
    log_every: int = 100
    threads: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidParams("learning_rate must be positive")
        if self.iterations < 1:
            raise InvalidParams("iterations must be >= 1")
        if self.log_every < 1:
            raise InvalidParams("log_every must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 2
    family: ImpactKind = ImpactKind.LOG_NORMAL
    n_components: int = 3


@dataclass
class TrainTrace:
    iteration: list = field(default_factory=list)
    nll: list = field(default_factory=list)
    ms: list = field(default_factory=list)

    def record(self, it, nll, ms):
        if self.iteration and it <= self.iteration[-1]:
            raise ValueError("trace iterations must increase")
        self.iteration.append(int(it))
        self.nll.append(float(nll))
        self.ms.append(float(ms))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["iteration", "nll_estimate", "ms"])
            for row in zip(self.iteration, self.nll, self.ms):
                out.writerow([row[0], repr(row[1]), f"{row[2]:.3f}"])


def _per_target(network, values):
    groups = [[] for _ in range(network.n_targets)]
    for i, v in zip(network.event_targets.tolist(), values.tolist()):
        groups[i].append(v)
    return groups


def _empirical_impact(network, kind, n_components):
    """Per-target warm start from the citation ages observed in ``network``."""
    nt = network.n_targets
    T = network.horizon
    ages = _clamp(network, network.elapsed)
    lognormal = kind.base is ImpactKind.LOG_NORMAL
    x = np.log(ages) if lognormal else ages
    gmean = float(x.mean()) if x.size else 0.0
    gstd = float(x.std()) if x.size else 1.0
    mu = np.full(nt, gmean)
    sd = np.full(nt, gstd)
    for i, vals in enumerate(_per_target(network, x)):
        if vals:
            mu[i] = np.mean(vals)
            sd[i] = np.std(vals)
    log_sigma = np.log(np.maximum(sd, INIT_SIGMA_FLOOR))
    lower, upper = np.zeros(nt), np.full(nt, T if not lognormal else np.inf)
    if kind is ImpactKind.MIXTURE:
        k = n_components
        offsets = np.linspace(-1.0, 1.0, k) if k > 1 else np.zeros(1)
        spread = np.maximum(sd, INIT_SIGMA_FLOOR)
        return ImpactParams(mu=mu, log_sigma=log_sigma, lower=lower, upper=upper,
                            mixture_logits=np.zeros((nt, k)),
                            mixture_mu=np.clip(mu[:, None] + offsets * spread[:, None], 0.0, T),
                            mixture_log_sigma=np.repeat(log_sigma[:, None], k, axis=1))
    return ImpactParams(mu=mu, log_sigma=log_sigma, lower=lower, upper=upper)


def fixed_impact(network, kind):
    """Per-target :func:`fit_empirical` parameters (global fit for uncited targets)."""
    ages = _clamp(network, network.elapsed)
    upper = network.horizon
    if ages.size == 0:
        raise EmptySample("no citations to fix impact functions")
    glob = fit_empirical(ages, kind, upper=upper)
    mu = np.full(network.n_targets, glob.mu)
    ls = np.full(network.n_targets, glob.log_sigma)
    for i, vals in enumerate(_per_target(network, ages)):
        if vals:
            p = fit_empirical(vals, kind, upper=upper)
            mu[i], ls[i] = p.mu, p.log_sigma
    nt = network.n_targets
    hi = np.full(nt, upper if kind.base is ImpactKind.TRUNCATED_NORMAL else np.inf)
    return ImpactParams(mu=mu, log_sigma=ls, lower=np.zeros(nt), upper=hi)


def initialize(network, variant, dim, seed=0, family=ImpactKind.LOG_NORMAL, n_components=3):
    """Starting parameters: small Gaussian embeddings, zero random effects,
    impact warm-started from each target's citation ages.

    Fixed-impact variants get their frozen empirical fit instead.
    """
    variant.check_dim(dim)
    rng = np.random.default_rng(seed)
    nt, ns = network.n_targets, network.n_sources
    z = rng.normal(0.0, INIT_SCALE, size=(nt, dim))
    w = rng.normal(0.0, INIT_SCALE, size=(ns, dim))
    kind = variant.impact_kind(family)
    if kind is ImpactKind.CONSTANT:
        impact = ImpactParams(mu=np.zeros(nt), log_sigma=np.zeros(nt), lower=np.zeros(nt),
                              upper=np.full(nt, np.inf))
    elif variant.frozen_impact:
        impact = fixed_impact(network, kind)
    else:
        impact = _empirical_impact(network, kind, n_components)
    return ModelParameters(z, w, np.zeros(nt), np.zeros(ns), impact, kind)


@dataclass
class AdamState:
    m: dict
    v: dict
    names: tuple

    @classmethod
    def zeros(cls, params, names):
        blocks = params.blocks()
        return cls({k: np.zeros(np.shape(blocks[k])) for k in names},
                   {k: np.zeros(np.shape(blocks[k])) for k in names}, tuple(names))


def adam_step(params, grads, state, config, iteration, learning_rate=None):
    """One bias-corrected Adam update of the blocks named in ``state``.

    ``iteration`` is 1-based.  Blocks not listed in ``state.names`` are
    returned untouched.
    """
    lr = config.learning_rate if learning_rate is None else learning_rate
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    blocks = params.blocks()
    new_blocks, m_new, v_new = {}, {}, {}
    for k in state.names:
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** iteration)
        vhat = v / (1.0 - b2 ** iteration)
        new_blocks[k] = blocks[k] - lr * mhat / (np.sqrt(vhat) + eps)
        m_new[k], v_new[k] = m, v
    return params.with_blocks(new_blocks), AdamState(m_new, v_new, state.names)


def fit(network, variant, train_config=None, model_config=None, exclude=None, init=None,
        on_log=None):
    """Minimise the negative log-likelihood with full-batch Adam.

    With ``train_config.case_control`` set, the control term is the
    case-control estimate, redrawn every iteration (unless configured
    otherwise).  ``exclude`` lists dyads kept out of the control population,
    typically held-out test dyads.  ``on_log(iteration, params)`` runs at
    every logged iteration.

    If the objective turns non-finite the previous step is retried once
    with half the learning rate; a second failure raises
    :class:`NumericalError` carrying the last finite parameters.
    """
    cfg = train_config or TrainConfig()
    mcfg = model_config or ModelConfig()
    params = init if init is not None else initialize(
        network, variant, mcfg.dim, seed=cfg.seed, family=mcfg.family, n_components=mcfg.n_components)
    obj = Objective(network, variant, exclude=exclude, threads=cfg.threads)
    sampler = (CaseControlSampler(network, cfg.case_control, pool=obj.pool)
               if cfg.case_control is not None else None)
    names = trainable(variant, params.kind)
    state = AdamState.zeros(params, names)
    trace = TrainTrace()
    lr = cfg.learning_rate
    halved = False
    prev = None
    start = time.perf_counter()

    def controls():
        return sampler.draw() if sampler is not None else None

    it = 0
    while it <= cfg.iterations:
        try:
            ll, grads = obj.evaluate(params, controls(), grad=it < cfg.iterations)
        except NumericalError as exc:
            if prev is None or halved:
                raise NumericalError(f"training diverged at iteration {it}: {exc}",
                                     dyad=exc.dyad, params=prev[0] if prev else params) from exc
            halved = True
            lr *= 0.5
            logger.warning("non-finite objective at iteration %d; retrying with lr=%g", it, lr)
            p0, s0, g0 = prev
            params, state = adam_step(p0, g0, s0, cfg, it, learning_rate=lr)
            continue
        if it % cfg.log_every == 0 or it == cfg.iterations:
            trace.record(it, -ll, 1000.0 * (time.perf_counter() - start))
            logger.debug("iteration %d nll %.6f", it, -ll)
            if on_log is not None:
                on_log(it, params)
        if it == cfg.iterations:
            break
        prev = (params, state, grads)
        params, state = adam_step(params, grads, state, cfg, it + 1, learning_rate=lr)
        it += 1
    return params, trace
