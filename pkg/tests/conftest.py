import numpy as np
import pytest

from disee.impact import ImpactKind, ImpactParams
from disee.model import ModelParameters, ModelVariant
from disee.network import SingleEventNetwork


def random_network(rng, n_targets, n_sources, density=0.3, horizon=10.0, ties=False):
    """Small random network whose events respect publication order."""
    tt = np.sort(rng.uniform(0.0, 0.6 * horizon, n_targets))
    tt -= tt[0]
    st = rng.uniform(0.0, horizon, n_sources)
    if ties:
        st = np.round(st)
    ev_t, ev_s = [], []
    for i in range(n_targets):
        for j in range(n_sources):
            if st[j] > tt[i] and rng.random() < density:
                ev_t.append(i)
                ev_s.append(j)
    return SingleEventNetwork(
        [f"t{i}" for i in range(n_targets)], tt, [f"s{j}" for j in range(n_sources)], st,
        ev_t, ev_s, st[ev_s] if ev_s else [], horizon=horizon)


def random_params(rng, network, variant, dim, family=ImpactKind.LOG_NORMAL, k=3, scale=0.5):
    nt, ns = network.n_targets, network.n_sources
    kind = variant.impact_kind(family)
    T = network.horizon
    if kind.base is ImpactKind.TRUNCATED_NORMAL or kind is ImpactKind.MIXTURE:
        lo, hi = np.zeros(nt), np.full(nt, T)
        mu = rng.uniform(0.5, 0.6 * T, nt)
    else:
        lo, hi = np.zeros(nt), np.full(nt, np.inf)
        mu = rng.normal(0.0, 0.5, nt)
    imp = ImpactParams(mu=mu, log_sigma=rng.normal(0.0, 0.3, nt), lower=lo, upper=hi)
    if kind is ImpactKind.MIXTURE:
        imp = ImpactParams(mu=mu, log_sigma=imp.log_sigma, lower=lo, upper=hi,
                           mixture_logits=rng.normal(0, 0.5, (nt, k)),
                           mixture_mu=rng.uniform(0.5, 0.7 * T, (nt, k)),
                           mixture_log_sigma=rng.normal(0.3, 0.3, (nt, k)))
    return ModelParameters(rng.normal(0, scale, (nt, dim)), rng.normal(0, scale, (ns, dim)),
                           rng.normal(0, scale, nt), rng.normal(0, scale, ns), imp, kind)


def dim_for(variant, dim=2):
    return dim if variant.has_embedding else 0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ALL_VARIANTS = list(ModelVariant)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
