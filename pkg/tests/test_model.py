import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffusion_ts.model import (BanditInstance, DdpmEpsLink, DiffusionPrior, DimensionError,
                                LinearGaussian, LinearLink, LogisticBernoulli, MlpLink, MlpNet,
                                NoiseSchedule, UniformContexts, as_covariance, dumps_prior,
                                expected_reward, link_apply, linear_prior, loads_prior, prior_sample,
                                reward_sample, safe_cholesky, shared_instance)


def rel_fro(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# ---------------------------------------------------------------- links

def test_linear_link_identity():
    assert np.array_equal(link_apply(LinearLink(np.eye(2)), np.array([1.0, 2.0])), [1.0, 2.0])


def test_linear_link_diagonal():
    W = np.array([[2.0, 0.0], [0.0, 3.0]])
    assert np.array_equal(link_apply(LinearLink(W), np.ones(2)), [2.0, 3.0])


def test_linear_link_dimension_mismatch():
    with pytest.raises(DimensionError):
        link_apply(LinearLink(np.eye(2)), np.ones(3))


def _zero_net(d, h=4):
    return MlpNet(np.zeros((h, d + 1)), np.zeros(h), np.zeros((d, h)), np.zeros(d))


def test_ddpm_link_zero_denoiser():
    # one step with beta = 0.19: alpha_bar = 0.81, f(psi) = psi / 0.9
    link = DdpmEpsLink(_zero_net(2), NoiseSchedule(np.array([0.19])), 1)
    psi = np.array([0.9, -1.8])
    assert np.allclose(link_apply(link, psi), psi / 0.9, rtol=0, atol=1e-15)


def test_ddpm_link_reverse_mean_formula():
    rng = np.random.default_rng(0)
    net = MlpNet.uniform(3, 5, 2, rng)
    sched = NoiseSchedule(np.array([0.05, 0.1, 0.2]))
    psi = rng.normal(size=2)
    for level in (1, 2, 3):
        eps = net.forward(np.append(psi, level / 3))
        b, a, ab = sched.betas[level - 1], sched.alphas[level - 1], sched.alpha_bars[level - 1]
        want = (psi - b / np.sqrt(1 - ab) * eps) / np.sqrt(a)
        assert np.allclose(DdpmEpsLink(net, sched, level)(psi), want, atol=1e-14)


def test_link_apply_deterministic():
    rng = np.random.default_rng(1)
    link = MlpLink(MlpNet.uniform(3, 7, 3, rng, scale=1.0))
    psi = rng.normal(size=3)
    assert np.array_equal(link(psi), link(psi.copy()))


def test_link_batches_rows():
    rng = np.random.default_rng(2)
    link = MlpLink(MlpNet.uniform(3, 7, 3, rng, scale=1.0))
    P = rng.normal(size=(5, 3))
    assert np.allclose(link(P), np.array([link(p) for p in P]), atol=1e-14)


# ---------------------------------------------------------------- MLP backprop

@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), h=st.integers(1, 6), d=st.integers(1, 3))
def test_mlp_backward_matches_finite_differences(seed, h, d):
    rng = np.random.default_rng(seed)
    net = MlpNet.uniform(d + 1, h, d, rng, scale=1.0)
    X = rng.normal(size=(4, d + 1))
    T = rng.normal(size=(4, d))

    def loss(n):
        return 0.5 * np.sum((n.forward(X) - T) ** 2)

    out, cache = net.forward_cached(X)
    grads = net.backward(cache, out - T)
    step = 1e-5
    for name, value in net.params().items():
        num = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            plus, minus = net.copy(), net.copy()
            getattr(plus, name)[idx] += step
            getattr(minus, name)[idx] -= step
            num[idx] = (loss(plus) - loss(minus)) / (2 * step)
        scale = max(np.max(np.abs(num)), np.max(np.abs(grads[name])), 1e-3)
        assert np.max(np.abs(num - grads[name])) / scale <= 1e-4, name


# ---------------------------------------------------------------- schedule

def test_schedule_invariants():
    s = NoiseSchedule(np.linspace(1e-4, 0.2, 30))
    assert np.all(np.diff(s.alpha_bars) < 0)
    bt = s.beta_tildes
    assert bt[0] == s.betas[0]
    assert np.all(bt > 0) and np.all(bt <= s.betas)


def test_schedule_plain_variance_option():
    s = NoiseSchedule(np.array([0.1, 0.2]), posterior_variance="beta")
    assert np.array_equal(s.level_variances(), [0.1, 0.2])


def test_schedule_rejects_bad_betas():
    with pytest.raises(ValueError):
        NoiseSchedule(np.array([0.1, 1.0]))
    with pytest.raises(ValueError):
        NoiseSchedule(np.array([0.0]))


# ---------------------------------------------------------------- covariances

def test_covariance_symmetry_and_cholesky():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 4))
    C = as_covariance(A @ A.T + np.eye(4), 4)
    assert np.max(np.abs(C - C.T)) <= 1e-12
    safe_cholesky(C)


def test_covariance_scalar_form():
    assert np.array_equal(as_covariance(2.5, 3), 2.5 * np.eye(3))
    with pytest.raises(ValueError):
        as_covariance(-1.0, 2)


def test_cholesky_jitter_then_error():
    # singular PSD matrix: needs the jitter retry
    safe_cholesky(np.ones((2, 2)))
    with pytest.raises(np.linalg.LinAlgError):
        safe_cholesky(-np.eye(2))


# ---------------------------------------------------------------- prior sampling

def test_degenerate_prior_collapses_to_zero():
    eps = 1e-12
    prior = linear_prior([np.eye(3), np.eye(3)], [eps, eps], eps)
    _, thetas = prior_sample(prior, 5, np.random.default_rng(0))
    assert np.max(np.abs(thetas)) <= 1e-4


def test_two_unit_layers_variance():
    prior = linear_prior([np.eye(1)], [1.0], 1.0)
    _, thetas = prior_sample(prior, 1, np.random.default_rng(4), size=100_000)
    assert abs(thetas[:, 0, 0].var() - 2.0) <= 0.05


def test_linear_marginal_covariance_mc():
    rng = np.random.default_rng(5)
    W1, W2 = rng.uniform(-1, 1, (3, 3)), rng.uniform(-1, 1, (3, 3))
    s1, s2, s3 = 0.7, 1.3, 0.9
    prior = linear_prior([W1, W2], [s1, s2], s3)
    B2 = W1 @ W2
    want = s1 * np.eye(3) + s2 * W1 @ W1.T + s3 * B2 @ B2.T
    assert np.allclose(prior.marginal_cov(), want, atol=1e-12)
    _, thetas = prior_sample(prior, 1, rng, size=100_000)
    assert rel_fro(np.cov(thetas[:, 0, :], rowvar=False), want) <= 0.03


def test_prior_sample_shapes_and_determinism():
    prior = linear_prior([np.eye(2)] * 3, [1.0] * 3, 1.0)
    lat, th = prior_sample(prior, 4, np.random.default_rng(9))
    assert len(lat) == 3 and th.shape == (4, 2)
    lat2, th2 = prior_sample(prior, 4, np.random.default_rng(9))
    assert np.array_equal(th, th2)


def test_prior_rejects_mismatched_levels():
    with pytest.raises(ValueError):
        DiffusionPrior([LinearLink(np.eye(2))], [1.0, 1.0], 1.0)


# ---------------------------------------------------------------- rewards

def test_linear_reward_noiseless():
    assert reward_sample(LinearGaussian(0.0), np.array([1.0, 0.0]), np.array([3.0, 5.0]), None) == 3.0


def test_logistic_reward_frequency_at_zero():
    rng = np.random.default_rng(6)
    m = LogisticBernoulli()
    ys = [reward_sample(m, np.zeros(2), np.ones(2), rng) for _ in range(100_000)]
    assert abs(np.mean(ys) - 0.5) <= 0.01


def test_logistic_reward_saturation():
    m = LogisticBernoulli()
    assert 1.0 - float(m.mean(50.0)) <= 1e-20
    rng = np.random.default_rng(7)
    assert all(reward_sample(m, np.array([1.0]), np.array([50.0]), rng) == 1.0 for _ in range(1000))


def test_expected_rewards():
    assert expected_reward(LinearGaussian(1.0), np.array([2.0]), np.array([1.5])) == 3.0
    assert expected_reward(LogisticBernoulli(), np.array([1.0]), np.array([0.0])) == 0.5
    assert abs(expected_reward(LogisticBernoulli(), np.array([1.0]), np.array([np.log(3)])) - 0.75) <= 1e-15


def test_sigmoid_stable_for_large_inputs():
    m = LogisticBernoulli()
    with np.errstate(over="raise"):
        v = m.mean(np.array([-800.0, 800.0]))
    assert v[0] == 0.0 and v[1] == 1.0


# ---------------------------------------------------------------- instances

def test_instance_scores_and_pull():
    inst = BanditInstance(np.array([[1.0, 0.0], [0.0, 2.0]]), LinearGaussian(0.0), UniformContexts(2))
    x = np.array([1.0, 1.0])
    assert np.array_equal(inst.mean_rewards(x), [1.0, 2.0])
    assert inst.pull(x, 1, np.random.default_rng(0)) == 2.0


def test_shared_instance():
    feats = lambda x: np.array([x, -x])
    inst = shared_instance(np.array([1.0, 0.5]), LinearGaussian(1.0), UniformContexts(2), feats, K=2)
    assert inst.K == 2 and inst.shared
    assert np.allclose(inst.scores(np.array([1.0, 1.0])), [1.5, -1.5])


def test_unit_norm_contexts():
    ctx = UniformContexts(4, unit_norm=True)
    rng = np.random.default_rng(0)
    assert all(abs(np.linalg.norm(ctx(rng)) - 1) <= 1e-12 for _ in range(50))


# ---------------------------------------------------------------- serialization

def test_prior_round_trip_linear():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(3, 3))
    prior = linear_prior([rng.normal(size=(3, 3)), rng.normal(size=(3, 3))],
                         [0.3, A @ A.T + np.eye(3)], 1.7)
    back = loads_prior(dumps_prior(prior))
    for l in (1, 2):
        assert np.array_equal(back.mixing(l), prior.mixing(l))
        assert np.array_equal(back.cov(l), prior.cov(l))
    assert np.array_equal(back.cov(3), prior.cov(3))
    assert dumps_prior(back) == dumps_prior(prior)


def test_prior_round_trip_mlp_and_ddpm():
    rng = np.random.default_rng(9)
    mlp = DiffusionPrior([MlpLink(MlpNet.uniform(2, 4, 2, rng, scale=1.0))], [1.0], 1.0)
    psi = rng.normal(size=2)
    assert np.array_equal(loads_prior(dumps_prior(mlp)).link(1)(psi), mlp.link(1)(psi))
    sched = NoiseSchedule(np.array([0.01, 0.1]))
    net = MlpNet.uniform(3, 4, 2, rng)
    ddpm = DiffusionPrior([DdpmEpsLink(net, sched, l) for l in (1, 2)],
                          list(sched.level_variances()), 1.0)
    back = loads_prior(dumps_prior(ddpm))
    for l in (1, 2):
        assert np.array_equal(back.link(l)(psi), ddpm.link(l)(psi))


def test_loads_rejects_bad_version():
    text = dumps_prior(linear_prior([np.eye(1)], [1.0], 1.0)).replace("version = 1", "version = 99")
    with pytest.raises(ValueError):
        loads_prior(text)
