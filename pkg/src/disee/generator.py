"""Synthetic single-event citation networks.

Each paper gets a publication time, a citation budget ``kappa_i``, a citing
propensity ``beta_i``, latent positions and a log-normal impact function.
After sorting papers by time, paper ``i`` picks ``min(kappa_i, N - i)``
later papers without replacement with weights

    kappa_i * f_i(t_j - t_i) * beta_j / exp(||z_i - w_j||)

and each pick becomes a citation at the citing paper's publication time.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .errors import EmptyNetwork
from .impact import ImpactKind, ImpactParams, pdf
from .network import SingleEventNetwork


@dataclass(frozen=True)
class GeneratorConfig:
    n_nodes: int = 1500
    dim: int = 2
    horizon: float = 10.0
    alpha_lambda: float = 0.5
    theta_lambda: float = 20.0
    alpha_beta: float = 2.0
    theta_beta: float = 0.5
    mu_m: float = 0.0
    sigma_m: float = 0.5
    alpha_s: float = 5.0
    theta_s: float = 0.1
    sigma_z: float = 1.0
    sigma_w: float = 1.0
    impact: str = "log-normal"
    min_citations: int = 0
    seed: int = 0
    appendix_variant: bool = False
    # appendix process only; None reuses (alpha_beta, theta_beta) as written there
    alpha_tau: float | None = None
    theta_tau: float | None = None
    mu_mean: float | None = None

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be >= 2")
        positive = ("horizon", "alpha_lambda", "theta_lambda", "alpha_beta", "theta_beta",
                    "sigma_m", "alpha_s", "theta_s", "sigma_z", "sigma_w")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.dim < 0:
            raise ValueError("dim must be >= 0")
        if ImpactKind(self.impact) not in (ImpactKind.LOG_NORMAL, ImpactKind.TRUNCATED_NORMAL):
            raise ValueError("generator impact must be log-normal or truncated")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    # full-size synthetic network shaped like the paper's artificial dataset
    "art": GeneratorConfig(n_nodes=5000, alpha_lambda=1.2, theta_lambda=28.0, theta_s=0.2,
                           sigma_z=3.0, sigma_w=3.0, min_citations=10),
    # desk-scale version: roughly 300 targets and 1,500 sources
    "art-small": GeneratorConfig(n_nodes=1500, alpha_lambda=0.3, theta_lambda=20.0, theta_s=0.2,
                                 sigma_z=3.0, sigma_w=3.0, min_citations=10),
    "tiny": GeneratorConfig(n_nodes=60, alpha_lambda=2.0, theta_lambda=3.0),
}


@dataclass(frozen=True, eq=False)
class PlantedTruth:
    """Sampled per-paper quantities (indexed by time-sorted paper number).

    ``target_nodes``/``source_nodes`` map network target/source indices to
    paper numbers.
    """

    times: np.ndarray
    rate: np.ndarray
    kappa: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    z: np.ndarray
    w: np.ndarray
    citations: np.ndarray
    target_nodes: np.ndarray
    source_nodes: np.ndarray
    impact: str = "log-normal"
    horizon: float = 10.0

    def impact_params(self, nodes=None):
        idx = slice(None) if nodes is None else np.asarray(nodes)
        kind = ImpactKind(self.impact)
        lo, hi = (0.0, np.inf) if kind is ImpactKind.LOG_NORMAL else (0.0, self.horizon)
        return ImpactParams(mu=self.mu[idx], log_sigma=np.log(self.sigma[idx]), lower=lo, upper=hi)

    def aligned_to(self, network):
        """Copy whose node maps follow ``network``'s ids (``n<paper number>``)."""
        def nodes(ids):
            return np.array([int(x[1:]) for x in ids], dtype=np.int64)
        return replace(self, target_nodes=nodes(network.target_ids),
                       source_nodes=nodes(network.source_ids))

    def to_json(self, path):
        doc = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path):
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        arrays = {k: np.asarray(v) for k, v in doc.items() if isinstance(v, list)}
        for k in ("z", "w"):
            arrays[k] = arrays[k].astype(float).reshape(len(doc["times"]), -1)
        return cls(**arrays, impact=doc["impact"], horizon=doc["horizon"])


def sample_without_replacement(weights, k, seed=None):
    """Indices of ``k`` draws without replacement, probability proportional to ``weights``.

    Exponential race: item ``i`` gets key ``E_i / w_i`` with ``E_i ~ Exp(1)``
    and the ``k`` smallest keys win, which has the law of successive
    weighted draws.  Keys are compared on the log scale so tiny weights do
    not overflow.  Zero-weight items are only taken once all positive ones
    are; they (and all items when every weight is zero) are drawn uniformly.
    """
    w = np.asarray(weights, dtype=float)
    n = len(w)
    if k > n or k < 0:
        raise ValueError(f"cannot draw {k} of {n} items")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    rng = np.random.default_rng(seed)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    pos = np.flatnonzero(w > 0)
    keys = np.log(rng.exponential(size=len(pos))) - np.log(w[pos])
    if k <= len(pos):
        best = np.argpartition(keys, k - 1)[:k] if k < len(pos) else np.arange(len(pos))
        return pos[best[np.argsort(keys[best], kind="stable")]]
    zero = np.flatnonzero(w == 0)
    fill = rng.choice(zero, size=k - len(pos), replace=False)
    return np.concatenate([pos[np.argsort(keys, kind="stable")], fill]).astype(np.int64)


def _impact_pdf(kind, mu, sigma, dt, horizon):
    lo, hi = (0.0, np.inf) if kind is ImpactKind.LOG_NORMAL else (0.0, horizon)
    p = ImpactParams(mu=mu, log_sigma=np.log(sigma), lower=lo, upper=hi)
    with np.errstate(divide="ignore"):
        return pdf(kind, p, dt)


def generate(config):
    """Sample a network and the planted quantities behind it."""
    c = config
    rng = np.random.default_rng(c.seed)
    N, D, T = c.n_nodes, c.dim, c.horizon
    kind = ImpactKind(c.impact)

    t = rng.uniform(0.0, T, size=N)
    if c.appendix_variant:
        rate = rng.gamma(c.alpha_lambda, c.theta_lambda, size=N)
        kappa = rng.poisson(rate)
        beta = rng.gamma(c.alpha_beta, c.theta_beta, size=N)
        z = rng.normal(0.0, c.sigma_z, size=(N, D))
        w = rng.normal(0.0, c.sigma_w, size=(N, D))
    else:
        rate = rng.gamma(c.alpha_lambda, c.theta_lambda, size=N)
        beta = rng.gamma(c.alpha_beta, c.theta_beta, size=N)
        z = rng.normal(0.0, c.sigma_z, size=(N, D))
        w = rng.normal(0.0, c.sigma_w, size=(N, D))
        mu = rng.normal(c.mu_m, c.sigma_m, size=N)
        sigma = rng.gamma(c.alpha_s, c.theta_s, size=N)

    order = np.argsort(t, kind="stable")
    t, rate, beta, z, w = t[order], rate[order], beta[order], z[order], w[order]
    if c.appendix_variant:
        kappa = kappa[order]
        a_tau = c.alpha_beta if c.alpha_tau is None else c.alpha_tau
        th_tau = c.theta_beta if c.theta_tau is None else c.theta_tau
        tau = rng.gamma(a_tau, th_tau, size=N)
        mu = rng.normal(c.alpha_beta if c.mu_mean is None else c.mu_mean, np.sqrt(1.0 / tau))
        sigma = np.sqrt(1.0 / tau)
    else:
        mu, sigma = mu[order], sigma[order]
        kappa = np.zeros(N, dtype=np.int64)

    ev_t, ev_s = [], []
    citations = np.zeros(N, dtype=np.int64)
    for i in range(N - 1):
        if not c.appendix_variant:
            kappa[i] = rng.poisson(rate[i])
        K = int(min(kappa[i], N - 1 - i))
        if K == 0:
            continue
        later = slice(i + 1, N)
        dist = np.sqrt(np.sum((z[i] - w[later]) ** 2, axis=1)) if D else 0.0
        f = _impact_pdf(kind, mu[i], sigma[i], t[later] - t[i], T)
        weights = kappa[i] * f * beta[later] / np.exp(dist)
        picks = sample_without_replacement(weights, K, rng)
        ev_t.append(np.full(K, i))
        ev_s.append(i + 1 + picks)
        citations[i] = K
    if not c.appendix_variant:
        kappa[N - 1] = rng.poisson(rate[N - 1])

    ev_t = np.concatenate(ev_t) if ev_t else np.empty(0, dtype=np.int64)
    ev_s = np.concatenate(ev_s) if ev_s else np.empty(0, dtype=np.int64)
    keep_target = citations >= c.min_citations
    mask = keep_target[ev_t]
    ev_t, ev_s = ev_t[mask], ev_s[mask]
    targets = np.flatnonzero(keep_target)
    if len(targets) == 0:
        raise EmptyNetwork(f"no paper has {c.min_citations} or more citations")
    sources = np.unique(ev_s)
    ids = [f"n{k}" for k in range(N)]
    events = [(ids[j], ids[i], t[j]) for i, j in zip(ev_t.tolist(), ev_s.tolist())]
    net = SingleEventNetwork.from_records(
        events, {ids[k]: t[k] for k in targets}, {ids[k]: t[k] for k in sources}, horizon=T)
    tnodes = np.array([int(x[1:]) for x in net.target_ids], dtype=np.int64)
    snodes = np.array([int(x[1:]) for x in net.source_ids], dtype=np.int64)
    truth = PlantedTruth(t, rate, kappa.astype(np.int64), beta, mu, sigma, z, w, citations,
                         tnodes, snodes, impact=c.impact, horizon=T)
    return net, truth


def expected_citations(config, n_sim=200, seed=None):
    """Monte-Carlo mean and standard error of per-paper ``min(kappa_i, N - i)``.

    Independent of :func:`generate`: citation budgets are simulated straight
    from the prior.
    """
    rng = np.random.default_rng(seed)
    N = config.n_nodes
    room = N - 1 - np.arange(N)
    means = np.empty(n_sim)
    for s in range(n_sim):
        lam = rng.gamma(config.alpha_lambda, config.theta_lambda, size=N)
        means[s] = np.minimum(rng.poisson(lam), room).mean()
    return float(means.mean()), float(means.std(ddof=1) / np.sqrt(n_sim)), float(means.std(ddof=1))


def validate_statistics(network, truth, config, n_sim=200, top=5, bins=20, seed=0):
    """Sanity report comparing a generated network with its generating process."""
    mean_obs = float(truth.citations.mean())
    mc_mean, mc_se, mc_sd = expected_citations(config, n_sim=n_sim, seed=seed)
    ages_by_node = {}
    for i, j in zip(network.event_targets.tolist(), network.event_sources.tolist()):
        node = int(truth.target_nodes[i])
        ages_by_node.setdefault(node, []).append(truth.times[truth.source_nodes[j]] - truth.times[node])
    kind = ImpactKind(truth.impact)
    curves = []
    for node in sorted(ages_by_node, key=lambda n: (-len(ages_by_node[n]), n))[:top]:
        ages = np.asarray(ages_by_node[node])
        hist, edges = np.histogram(ages, bins=bins, range=(0.0, config.horizon), density=True)
        mids = 0.5 * (edges[1:] + edges[:-1])
        f = _impact_pdf(kind, truth.mu[node], truth.sigma[node], mids, config.horizon)
        curves.append({"node": node, "citations": len(ages),
                       "l1": float(np.sum(np.abs(hist - f) * np.diff(edges)))})
    indeg, outdeg = network.in_degree(), network.out_degree()

    def summary(d):
        if d.size == 0:
            return {"min": 0, "median": 0.0, "max": 0, "mean": 0.0}
        return {"min": int(d.min()), "median": float(np.median(d)), "max": int(d.max()), "mean": float(d.mean())}

    rho = None
    if len(truth.target_nodes) > 2 and np.ptp(indeg) > 0 and np.ptp(truth.kappa[truth.target_nodes]) > 0:
        rho = float(spearmanr(indeg, truth.kappa[truth.target_nodes]).statistic)
    return {
        "mean_citations": mean_obs,
        "expected_mean_citations": mc_mean,
        "expected_se": mc_se,
        "expected_sd_single_network": mc_sd,
        "n_targets": network.n_targets,
        "n_sources": network.n_sources,
        "n_events": network.n_events,
        "in_degree": summary(indeg),
        "out_degree": summary(outdeg),
        "spearman_indegree_kappa": rho,
        "age_histograms": curves,
    }


def preset(name, **overrides):
    return replace(PRESETS[name], **overrides)


def config_dict(config):
    return asdict(config)
