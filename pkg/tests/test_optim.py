import math

import numpy as np
import pytest

import disee.optim as optim_mod
from conftest import ALL_VARIANTS, dim_for, random_network
from disee.errors import EmptySample, InvalidParams, NumericalError
from disee.impact import ImpactKind, fit_empirical
from disee.model import CaseControlConfig, ModelVariant, Objective, save_checkpoint, trainable
from disee.network import SingleEventNetwork
from disee.optim import (
    AdamState,
    ModelConfig,
    TrainConfig,
    TrainTrace,
    adam_step,
    fit,
    fixed_impact,
    initialize,
)

V = ModelVariant


def family_for(variant):
    return ImpactKind.TRUNCATED_NORMAL if variant is V.TPAM else ImpactKind.LOG_NORMAL


def test_adam_first_step():
    net = random_network(np.random.default_rng(0), 2, 3)
    p = initialize(net, V.PAM, 0)
    state = AdamState.zeros(p, ("alpha",))
    grads = {"alpha": np.ones(2)}
    out, st = adam_step(p, grads, state, TrainConfig(learning_rate=0.1), 1)
    assert np.allclose(out.alpha - p.alpha, -0.1 / (1 + 1e-8), rtol=1e-12)
    assert np.allclose(st.m["alpha"], 0.1, rtol=1e-15)
    assert np.allclose(st.v["alpha"], np.full(2, 0.001))


def test_adam_zero_gradient_is_identity():
    net = random_network(np.random.default_rng(1), 3, 4)
    p = initialize(net, V.DISEE, 2, seed=3)
    names = trainable(V.DISEE, p.kind)
    grads = {k: np.zeros(np.shape(v)) for k, v in p.blocks().items()}
    out, _ = adam_step(p, grads, AdamState.zeros(p, names), TrainConfig(), 1)
    assert out == p


def test_adam_leaves_frozen_blocks():
    net = random_network(np.random.default_rng(2), 3, 5, density=0.5)
    p = initialize(net, V.FI_DISEE, 2)
    names = trainable(V.FI_DISEE, p.kind)
    assert "mu" not in names and "log_sigma" not in names
    grads = {k: np.ones(np.shape(v)) for k, v in p.blocks().items()}
    out, _ = adam_step(p, grads, AdamState.zeros(p, names), TrainConfig(), 1)
    assert np.array_equal(out.impact.mu, p.impact.mu)
    assert np.array_equal(out.impact.log_sigma, p.impact.log_sigma)
    assert not np.array_equal(out.alpha, p.alpha)


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_descent_on_tiny_instance(variant):
    net = random_network(np.random.default_rng(7), 6, 9, density=0.4)
    cfg = TrainConfig(learning_rate=1e-3, iterations=200, case_control=None, log_every=50, seed=1)
    params, trace = fit(net, variant, cfg, ModelConfig(dim=dim_for(variant, 2), family=family_for(variant)))
    assert trace.iteration == [0, 50, 100, 150, 200]
    assert trace.nll[-1] < trace.nll[0]
    assert all(math.isfinite(x) for x in trace.nll)
    assert params.is_finite()


def test_exact_descent_on_20_by_30():
    net = random_network(np.random.default_rng(11), 20, 30, density=0.15)
    cfg = TrainConfig(learning_rate=0.05, iterations=100, case_control=None, log_every=100)
    _, trace = fit(net, V.DISEE, cfg, ModelConfig(dim=2))
    assert trace.nll[-1] <= trace.nll[0]


@pytest.mark.parametrize("variant", [V.FI_DISEE, V.FI_DISEE_PA])
@pytest.mark.parametrize("family", [ImpactKind.LOG_NORMAL, ImpactKind.TRUNCATED_NORMAL])
def test_frozen_impact_stays_at_empirical_fit(variant, family):
    net = random_network(np.random.default_rng(5), 8, 12, density=0.3)
    kind = variant.impact_kind(family)
    params, _ = fit(net, variant, TrainConfig(iterations=30, log_every=10),
                    ModelConfig(dim=2, family=family))
    want = fixed_impact(net, kind)
    assert np.array_equal(params.impact.mu, want.mu)
    assert np.array_equal(params.impact.log_sigma, want.log_sigma)
    # each cited target holds exactly its own empirical fit
    ages = np.maximum(net.elapsed, 1e-6 * net.horizon)
    for i in set(net.event_targets.tolist()):
        ref = fit_empirical(ages[net.event_targets == i], kind, upper=net.horizon)
        assert params.impact.mu[i] == ref.mu and params.impact.log_sigma[i] == ref.log_sigma


def test_fixed_impact_needs_citations():
    net = SingleEventNetwork(["a"], [0.0], ["s"], [1.0], [], [], [], horizon=2.0)
    with pytest.raises(EmptySample):
        fixed_impact(net, ImpactKind.LOG_NORMAL)


def test_initialize_single_citation():
    net = SingleEventNetwork(["a"], [0.0], ["s"], [math.e], [0], [0], [math.e], horizon=5.0)
    p = initialize(net, V.DISEE, 2, seed=0)
    assert p.impact.mu[0] == pytest.approx(1.0, abs=1e-15)
    assert p.impact.sigma[0] == pytest.approx(0.1)
    assert np.all(p.alpha == 0) and np.all(p.beta == 0)


def test_initialize_uncited_target_gets_global_values():
    net = SingleEventNetwork(["a", "b"], [0.0, 0.0], ["s", "u"], [1.0, math.e ** 2], [0, 0], [0, 1],
                             [1.0, math.e ** 2], horizon=8.0)
    p = initialize(net, V.DISEE, 2)
    assert p.impact.mu[1] == pytest.approx(1.0)
    assert p.impact.sigma[1] == pytest.approx(1.0)


def test_initialize_is_seeded():
    net = random_network(np.random.default_rng(3), 10, 14)
    a, b = initialize(net, V.DISEE, 3, seed=4), initialize(net, V.DISEE, 3, seed=4)
    assert a == b
    assert not np.array_equal(a.z, initialize(net, V.DISEE, 3, seed=5).z)
    assert np.std(a.z) == pytest.approx(0.1, rel=0.3)


def test_initialize_respects_dimension():
    net = random_network(np.random.default_rng(3), 4, 6)
    p = initialize(net, V.PAM, 0)
    assert p.z.shape == (4, 0) and p.w.shape == (6, 0)
    with pytest.raises(InvalidParams):
        initialize(net, V.PAM, 2)
    with pytest.raises(InvalidParams):
        initialize(net, V.LDM, 0)


def test_initialize_mixture_components():
    net = random_network(np.random.default_rng(8), 5, 9, density=0.5)
    p = initialize(net, V.DISEE, 2, family=ImpactKind.MIXTURE, n_components=3)
    assert p.impact.mixture_mu.shape == (5, 3)
    assert np.all(p.impact.mixture_logits == 0)
    assert np.all(np.diff(p.impact.mixture_mu, axis=1) >= 0)


@pytest.mark.parametrize("cc", [None, CaseControlConfig(ratio=2, min_controls=2, seed=9)])
def test_fit_is_deterministic(tmp_path, cc):
    net = random_network(np.random.default_rng(21), 10, 15, density=0.3)
    cfg = TrainConfig(iterations=40, log_every=20, case_control=cc, seed=2)
    out = []
    for k in range(2):
        params, trace = fit(net, V.DISEE, cfg, ModelConfig(dim=2))
        save_checkpoint(tmp_path / f"{k}.json", params, V.DISEE, net)
        out.append(trace.nll)
    assert (tmp_path / "0.json").read_bytes() == (tmp_path / "1.json").read_bytes()
    assert out[0] == out[1]


def test_case_control_fit_improves_exact_objective():
    net = random_network(np.random.default_rng(13), 20, 30, density=0.15)
    cfg = TrainConfig(iterations=150, learning_rate=0.05, log_every=150,
                      case_control=CaseControlConfig(seed=1))
    init = initialize(net, V.DISEE, 2)
    params, _ = fit(net, V.DISEE, cfg, ModelConfig(dim=2), init=init)
    obj = Objective(net, V.DISEE)
    assert obj.evaluate(params, grad=False)[0] > obj.evaluate(init, grad=False)[0]


def test_on_log_sees_every_logged_iteration():
    net = random_network(np.random.default_rng(4), 4, 6, density=0.5)
    seen = []
    fit(net, V.PAM, TrainConfig(iterations=25, log_every=10), ModelConfig(dim=0),
        on_log=lambda it, p: seen.append(it))
    assert seen == [0, 10, 20, 25]


class _FailingObjective(Objective):
    """Raises on chosen evaluation calls to exercise the divergence guard."""

    fail_on = ()

    def __init__(self, *a, **k):
        super().__init__(*a, **k)
        self.calls = 0

    def evaluate(self, params, controls=None, grad=True):
        self.calls += 1
        if self.calls in self.fail_on:
            raise NumericalError("injected")
        return super().evaluate(params, controls, grad)


def test_divergence_guard_halves_once(monkeypatch):
    net = random_network(np.random.default_rng(6), 4, 6, density=0.5)
    monkeypatch.setattr(_FailingObjective, "fail_on", (3,))
    monkeypatch.setattr(optim_mod, "Objective", _FailingObjective)
    params, trace = fit(net, V.PAM, TrainConfig(iterations=5, log_every=1, case_control=None), ModelConfig(dim=0))
    assert trace.iteration == [0, 1, 2, 3, 4, 5]
    assert params.is_finite()


def test_divergence_guard_second_failure_aborts(monkeypatch):
    net = random_network(np.random.default_rng(6), 4, 6, density=0.5)
    monkeypatch.setattr(_FailingObjective, "fail_on", (3, 5))
    monkeypatch.setattr(optim_mod, "Objective", _FailingObjective)
    with pytest.raises(NumericalError) as info:
        fit(net, V.PAM, TrainConfig(iterations=10, case_control=None), ModelConfig(dim=0))
    assert info.value.params is not None and info.value.params.is_finite()


def test_train_config_validation():
    with pytest.raises(InvalidParams):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(InvalidParams):
        TrainConfig(iterations=0)


def test_trace_rejects_non_increasing(tmp_path):
    tr = TrainTrace()
    tr.record(0, 1.0, 0.0)
    with pytest.raises(ValueError):
        tr.record(0, 1.0, 0.0)
    tr.record(5, 0.5, 1.0)
    tr.write_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "iteration,nll_estimate,ms"
