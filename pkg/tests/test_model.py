import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import disee.model as model_mod
from conftest import ALL_VARIANTS, dim_for, random_network, random_params
from oracles import bernoulli_oracle, poisson_pmf, quadrature_of_intensity, simultaneous_network
from disee.errors import InvalidParams, NumericalError
from disee.impact import ImpactKind, ImpactParams, integral, pdf
from disee.model import (
    CaseControlConfig,
    CaseControlSampler,
    ModelParameters,
    ModelVariant,
    Objective,
    cumulative_intensity,
    gradient_check,
    gradients,
    intensity,
    link_probability,
    load_checkpoint,
    log_likelihood,
    log_likelihood_case_control,
    log_rate_core,
    save_checkpoint,
    write_gradient_report,
)
from disee.network import SingleEventNetwork

V = ModelVariant
CONST = ImpactKind.CONSTANT


def flat_params(nt, ns, dim, kind=CONST, alpha=0.0, beta=0.0, mu=0.0, log_sigma=0.0, upper=np.inf):
    imp = ImpactParams(np.full(nt, float(mu)), np.full(nt, float(log_sigma)),
                       lower=np.zeros(nt), upper=np.full(nt, float(upper)))
    return ModelParameters(np.zeros((nt, dim)), np.zeros((ns, dim)), np.full(nt, float(alpha)),
                           np.full(ns, float(beta)), imp, kind)


def one_dyad(target_time=0.0, source_time=1.0, horizon=1.0, event=True):
    ev = ([0], [0], [source_time]) if event else ([], [], [])
    return SingleEventNetwork(["t"], [target_time], ["s"], [source_time], *ev, horizon=horizon)


def test_log_rate_core_examples():
    p = flat_params(1, 1, 2)
    assert abs(float(log_rate_core(p, V.DISEE, 0, 0))) <= 1e-6
    p = ModelParameters(np.array([[1.0, 0.0]]), np.zeros((1, 2)), np.array([0.5]), np.array([-0.2]),
                        flat_params(1, 1, 2).impact, ImpactKind.LOG_NORMAL)
    assert float(log_rate_core(p, V.DISEE, 0, 0)) == pytest.approx(-0.7, abs=1e-12)
    pam = flat_params(1, 1, 0, alpha=1.0, beta=1.0)
    assert float(log_rate_core(pam, V.PAM, 0, 0)) == 2.0
    assert float(log_rate_core(pam, V.IFM, 0, 0)) == 1.0


def test_intensity_examples():
    net = one_dyad(horizon=3.0, source_time=1.0)
    # log-normal with mu = 0 has density 1 / (sigma sqrt(2 pi)) at 1, so this sigma gives 0.2
    sigma = 1.0 / (0.2 * math.sqrt(2 * math.pi))
    p = ModelParameters(np.array([[1.0, 0.0]]), np.zeros((1, 2)), np.array([0.5]), np.array([-0.2]),
                        ImpactParams(np.array([0.0]), np.array([math.log(sigma)])), ImpactKind.LOG_NORMAL)
    assert float(intensity(net, p, V.DISEE, 0, 0, 1.0)) == pytest.approx(0.2 * math.exp(-0.7), rel=1e-12)
    assert float(intensity(net, p, V.DISEE, 0, 0, 1.0)) == pytest.approx(0.0993, abs=5e-5)
    ldm = flat_params(1, 1, 2, alpha=0.3)
    vals = [float(intensity(net, ldm, V.LDM, 0, 0, t)) for t in (0.0, 0.5, 2.9)]
    assert vals[0] == vals[1] == vals[2]
    ident = flat_params(1, 1, 2, kind=ImpactKind.LOG_NORMAL, mu=0.2, log_sigma=-0.1)
    # z = w still leaves the sqrt(1e-12) smoothing distance
    assert float(intensity(net, ident, V.DISEE, 0, 0, 2.0)) == pytest.approx(
        float(pdf(ImpactKind.LOG_NORMAL, ident.impact.take(0), 2.0)), rel=1.5e-6)


def test_cumulative_intensity_examples():
    p = flat_params(1, 1, 2, kind=ImpactKind.LOG_NORMAL)
    # z = w keeps the smoothing distance, a factor exp(-1e-6)
    assert float(cumulative_intensity(one_dyad(horizon=1.0), p, V.DISEE, 0, 0)) == pytest.approx(0.5, rel=1.5e-6)
    net = SingleEventNetwork(["a", "b"], [0.0, 2.0], ["s"], [3.0], [1], [0], [3.0], horizon=10.0)
    assert float(cumulative_intensity(net, flat_params(2, 1, 0), V.PAM, 1, 0)) == pytest.approx(8.0)
    late = SingleEventNetwork(["a", "b"], [0.0, 4.0], ["s"], [4.0], [0], [0], [4.0], horizon=4.0)
    for variant, kind, dim in ((V.PAM, CONST, 0), (V.DISEE, ImpactKind.LOG_NORMAL, 2),
                               (V.TPAM, ImpactKind.TRUNCATED_NORMAL, 0)):
        q = flat_params(2, 1, dim, kind=kind, alpha=1.3, upper=4.0)
        assert float(cumulative_intensity(late, q, variant, 1, 0)) == 0.0


def test_link_probability_examples():
    late = SingleEventNetwork(["a", "b"], [0.0, 4.0], ["s"], [4.0], [0], [0], [4.0], horizon=4.0)
    assert float(link_probability(late, flat_params(2, 1, 0), V.PAM, 1, 0)) == 0.0
    net = one_dyad(horizon=1.0)
    assert float(link_probability(net, flat_params(1, 1, 0), V.PAM, 0, 0)) == pytest.approx(0.5)
    three = flat_params(1, 1, 0, alpha=math.log(3.0))
    assert float(link_probability(net, three, V.PAM, 0, 0)) == pytest.approx(0.75)


def test_single_dyad_log_likelihood():
    p = flat_params(1, 1, 0, alpha=math.log(0.5))
    assert log_likelihood(one_dyad(horizon=1.0), p, V.PAM) == pytest.approx(-1.09861, abs=1e-5)
    assert log_likelihood(one_dyad(horizon=1.0), p, V.PAM) == pytest.approx(math.log(0.5) - math.log(1.5), abs=1e-15)


def test_empty_universe_is_zero():
    net = SingleEventNetwork(["t"], [0.0], ["s"], [0.0], [], [], [], horizon=1.0)
    assert log_likelihood(net, flat_params(1, 1, 0, alpha=2.0), V.PAM) == 0.0


def test_conditioning_on_at_most_one_event(rng):
    for lam in rng.exponential(2.0, 200):
        p0, p1 = poisson_pmf(0, lam), poisson_pmf(1, lam)
        assert lam / (1 + lam) == pytest.approx(p1 / (p0 + p1), abs=1e-12)


def test_bernoulli_equivalence(rng):
    for k in range(30):
        T = 1.0 if k < 10 else float(rng.uniform(0.5, 20))
        net = simultaneous_network(rng, int(rng.integers(1, 6)), int(rng.integers(1, 8)), T)
        p = flat_params(net.n_targets, net.n_sources, 0)
        p = p.with_blocks({"alpha": rng.normal(0, 1, net.n_targets), "beta": rng.normal(0, 1, net.n_sources)})
        rate = np.exp(p.alpha[:, None] + p.beta[None, :])
        got = log_likelihood(net, p, V.PAM)
        # links carry log(rate) where the Bernoulli form has log(T * rate)
        assert got + net.n_events * math.log(T) == pytest.approx(bernoulli_oracle(net, rate), abs=1e-10)
        if T == 1.0:
            assert got == pytest.approx(bernoulli_oracle(net, rate), abs=1e-10)


@pytest.mark.parametrize("variant,family", [
    (V.DISEE, ImpactKind.LOG_NORMAL), (V.DISEE, ImpactKind.TRUNCATED_NORMAL),
    (V.DISEE_PA, ImpactKind.LOG_NORMAL), (V.DISEE_PA, ImpactKind.TRUNCATED_NORMAL),
    (V.LDM, ImpactKind.LOG_NORMAL), (V.DISEE, ImpactKind.MIXTURE)])
def test_closed_form_matches_quadrature(rng, variant, family):
    for _ in range(20):
        net = random_network(rng, 4, 5)
        p = random_params(rng, net, variant, 2, family=family)
        i, j = int(rng.integers(0, 4)), int(rng.integers(0, 5))
        num = quadrature_of_intensity(net, p, variant, i, j)
        exact = float(cumulative_intensity(net, p, variant, i, j))
        assert num == pytest.approx(exact, rel=1e-6, abs=1e-12)


@pytest.mark.parametrize("variant", [V.DISEE, V.LDM, V.DISEE_PA, V.FI_DISEE])
def test_translation_and_tradeoff_invariance(rng, variant):
    net = random_network(rng, 6, 9)
    p = random_params(rng, net, variant, 3)
    base = log_likelihood(net, p, variant)
    shift = rng.normal(0, 2, 3)
    moved = p.with_blocks({"z": p.z + shift, "w": p.w + shift})
    assert log_likelihood(net, moved, variant) == pytest.approx(base, abs=1e-9)
    traded = p.with_blocks({"alpha": p.alpha + 0.7, "beta": p.beta - 0.7})
    assert log_likelihood(net, traded, variant) == pytest.approx(base, abs=1e-9)


def test_pushing_a_link_apart_lowers_likelihood(rng):
    net = random_network(rng, 5, 8, density=0.5)
    p = random_params(rng, net, V.DISEE, 2)
    i, j = int(net.event_targets[0]), int(net.event_sources[0])
    # other dyads share source j, so compare on the event's dyad alone
    single = SingleEventNetwork(["t"], [net.target_times[i]], ["s"], [net.source_times[j]], [0], [0],
                                [net.source_times[j]], horizon=net.horizon)
    take = lambda q: ModelParameters(q.z[[i]], q.w[[j]], q.alpha[[i]], q.beta[[j]],
                                     q.impact.take(np.array([i])), q.kind)
    away = (p.w[j] - p.z[i]) / np.linalg.norm(p.w[j] - p.z[i])
    before = log_likelihood(single, take(p), V.DISEE)
    for step in (0.1, 0.5, 2.0):
        far = p.with_blocks({"w": p.w + np.where(np.arange(net.n_sources)[:, None] == j, step * away, 0.0)})
        after = log_likelihood(single, take(far), V.DISEE)
        assert after < before
        before = after


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_gradient_check_small(rng, variant):
    net = random_network(rng, 5, 8, density=0.4)
    family = ImpactKind.TRUNCATED_NORMAL if variant is V.TPAM else ImpactKind.LOG_NORMAL
    p = random_params(rng, net, variant, dim_for(variant, 2), family=family)
    rows = gradient_check(net, p, variant)
    assert rows
    assert max(r[3] for r in rows) <= 1e-4


def test_gradient_check_mixture(rng):
    net = random_network(rng, 4, 6, density=0.5)
    p = random_params(rng, net, V.DISEE, 2, family=ImpactKind.MIXTURE)
    assert max(r[3] for r in gradient_check(net, p, V.DISEE)) <= 1e-4


def test_gradient_report_csv(tmp_path, rng):
    net = random_network(rng, 3, 4, density=0.5)
    p = random_params(rng, net, V.PAM, 0)
    path = tmp_path / "g.csv"
    write_gradient_report(gradient_check(net, p, V.PAM), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "param,analytic,numeric,rel_error"
    assert lines[1].startswith("alpha[0],")


@pytest.mark.parametrize("variant", [V.FI_DISEE, V.FI_DISEE_PA])
def test_frozen_impact_gets_zero_gradient(rng, variant):
    net = random_network(rng, 5, 8, density=0.4)
    g = gradients(net, random_params(rng, net, variant, 2), variant)
    assert np.all(g["mu"] == 0) and np.all(g["log_sigma"] == 0)
    assert np.any(g["alpha"] != 0)


def test_symmetric_network_equal_gradient_norms():
    # two targets and two sources at mirrored positions, all cited by both
    net = SingleEventNetwork(["a", "b"], [0.0, 0.0], ["x", "y"], [1.0, 1.0], [0, 0, 1, 1], [0, 1, 0, 1],
                             [1.0] * 4, horizon=2.0)
    p = flat_params(2, 2, 2, kind=ImpactKind.LOG_NORMAL)
    p = p.with_blocks({"z": np.array([[1.0, 0.0], [-1.0, 0.0]]), "w": np.array([[0.0, 1.0], [0.0, -1.0]])})
    g = gradients(net, p, V.DISEE)
    assert np.all(np.isfinite(g["z"])) and np.all(np.isfinite(g["w"]))
    assert np.linalg.norm(g["z"][0]) == pytest.approx(np.linalg.norm(g["z"][1]), rel=1e-12)
    assert np.linalg.norm(g["w"][0]) == pytest.approx(np.linalg.norm(g["w"][1]), rel=1e-12)


def test_case_control_full_sample_is_exact(rng):
    net = random_network(rng, 8, 12, density=0.3)
    p = random_params(rng, net, V.DISEE, 2)
    big = CaseControlConfig(ratio=1000, min_controls=1000, seed=3)
    assert log_likelihood_case_control(net, p, V.DISEE, big) == pytest.approx(
        log_likelihood(net, p, V.DISEE), abs=1e-12)


def test_case_control_fixed_sample_is_deterministic(rng):
    net = random_network(rng, 10, 15, density=0.2)
    p = random_params(rng, net, V.DISEE, 2)
    cc = CaseControlConfig(ratio=1, min_controls=1, resample_every_iteration=False, seed=5)
    obj = Objective(net, V.DISEE)
    sampler = CaseControlSampler(net, cc, pool=obj.pool)
    a = obj.evaluate(p, controls=sampler.draw(), grad=False)[0]
    b = obj.evaluate(p, controls=sampler.draw(), grad=False)[0]
    assert a == b
    assert log_likelihood_case_control(net, p, V.DISEE, cc) == log_likelihood_case_control(net, p, V.DISEE, cc)


def test_case_control_counts_and_weights():
    net = SingleEventNetwork(["a"], [0.0], [f"s{j}" for j in range(10)], np.arange(1.0, 11), [0], [0], [1.0],
                             horizon=10.0)
    s = CaseControlSampler(net, CaseControlConfig(ratio=2, min_controls=5))
    assert s.counts.tolist() == [5]
    assert s.scale.tolist() == [9 / 5]
    ti, sj, w = s.draw()[0]
    assert len(ti) == 5 and len(set(sj.tolist())) == 5 and 0 not in sj.tolist()
    assert np.all(w == 9 / 5)


def test_case_control_skips_held_out_dyads():
    net = SingleEventNetwork(["a"], [0.0], ["x", "y", "z"], [1.0, 2.0, 3.0], [0], [0], [1.0], horizon=3.0)
    s = CaseControlSampler(net, CaseControlConfig(ratio=5, min_controls=5), exclude=np.array([[0, 1]]))
    for _ in range(20):
        assert s.draw()[0][1].tolist() in ([2],)


def test_thread_count_does_not_change_result(rng, monkeypatch):
    monkeypatch.setattr(model_mod, "CHUNK", 16)
    net = random_network(rng, 30, 40, density=0.1)
    p = random_params(rng, net, V.DISEE, 2)
    one = Objective(net, V.DISEE, threads=1).evaluate(p)
    four = Objective(net, V.DISEE, threads=4).evaluate(p)
    assert len(Objective(net, V.DISEE).exact_chunks()) > 1
    assert one[0] == four[0]
    for k in one[1]:
        assert np.array_equal(one[1][k], four[1][k])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_raises(rng):
    net = random_network(rng, 3, 4, density=0.5)
    p = random_params(rng, net, V.PAM, 0)
    p = p.with_blocks({"alpha": np.array([0.0, np.nan, 0.0])})
    with pytest.raises(NumericalError):
        log_likelihood(net, p, V.PAM)


def test_variant_checks(rng):
    net = random_network(rng, 3, 4)
    with pytest.raises(InvalidParams):
        log_likelihood(net, random_params(rng, net, V.DISEE, 0), V.PAM)
    with pytest.raises(InvalidParams):
        log_likelihood(net, random_params(rng, net, V.LDM, 0), V.LDM)
    with pytest.raises(InvalidParams):
        V.DISEE_PA.impact_kind(ImpactKind.MIXTURE)
    with pytest.raises(InvalidParams):
        CaseControlConfig(ratio=0)


@pytest.mark.parametrize("variant,family", [(V.DISEE, ImpactKind.LOG_NORMAL), (V.PAM, ImpactKind.LOG_NORMAL),
                                            (V.TPAM, ImpactKind.TRUNCATED_NORMAL), (V.DISEE, ImpactKind.MIXTURE)])
def test_checkpoint_round_trip(tmp_path, rng, variant, family):
    net = random_network(rng, 5, 7)
    p = random_params(rng, net, variant, dim_for(variant, 3), family=family)
    path = tmp_path / "m.disee.json"
    save_checkpoint(path, p, variant, net)
    back, v, header = load_checkpoint(path)
    assert v is variant and back == p
    assert header["target_ids"] == list(net.target_ids)
    assert log_likelihood(net, back, variant) == log_likelihood(net, p, variant)
    save_checkpoint(tmp_path / "again.json", back, variant, net)
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(InvalidParams):
        load_checkpoint(path)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exact_likelihood_matches_dyad_loop(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, int(rng.integers(1, 6)), int(rng.integers(1, 7)), ties=bool(seed % 2))
    variant = [V.DISEE, V.TPAM, V.IFM, V.DISEE_PA][seed % 4]
    family = ImpactKind.TRUNCATED_NORMAL if variant is V.TPAM else ImpactKind.LOG_NORMAL
    p = random_params(rng, net, variant, dim_for(variant, 2), family=family)
    kind = p.kind
    events = {(i, j): t for i, j, t in zip(net.event_targets.tolist(), net.event_sources.tolist(),
                                          net.event_times.tolist())}
    eps = 1e-6 * net.horizon
    want = 0.0
    for i in range(net.n_targets):
        imp = p.impact.take(i)
        for j in range(net.n_sources):
            core = float(log_rate_core(p, variant, i, j))
            lam = math.exp(core) * float(integral(kind, imp, net.horizon - net.target_times[i]))
            if (i, j) in events:
                dt = max(events[(i, j)] - net.target_times[i], eps)
                want += core + math.log(float(pdf(kind, imp, dt))) - math.log1p(lam)
            elif net.source_times[j] > net.target_times[i]:
                want -= math.log1p(lam)
    assert log_likelihood(net, p, variant) == pytest.approx(want, rel=1e-10, abs=1e-10)
