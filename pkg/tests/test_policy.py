import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from durr import policy as P
from durr import restorer as R
from durr import tensorcore as tc
from durr.tensorcore import Tensor

from oracles import KinkWatch, sampled_gradcheck


def _policy(seed=0, width=0.25, obs=False, dtype=np.float32):
    return P.build_policy_unit(P.PolicyArch(width, with_observation=obs), seed, dtype)


def _restorer(seed=0):
    return R.build_restoration_unit(R.RestorerArch(0.25), seed)


def _traj(states, psnr=None):
    return R.Trajectory([np.asarray(s, dtype=np.float64) for s in states], psnr)


# ---------------------------------------------------------------- architecture

def test_parameter_count_hand_count():
    conv = (1 * 16 * 25 + 16) + 3 * (16 * 16 * 9 + 16) + (16 * 32 * 9 + 32) + 2 * (32 * 32 * 9 + 32) \
        + (32 * 64 * 9 + 64) + 2 * (64 * 64 * 9 + 64)
    lstm = 4 * 32 * (64 + 32) + 4 * 32
    hand = conv + lstm + 32 + 1
    assert hand == 135313
    assert P.parameter_count(P.PolicyArch()) == hand == P.build_policy_unit().count()


def test_half_width_about_a_quarter_of_convs():
    ratio = P.parameter_count(P.PolicyArch(0.5)) / P.parameter_count(P.PolicyArch())
    assert 0.25 < ratio < 0.35  # LSTM input shrinks only linearly


def test_link_layout():
    links = [(L["name"], L["link"], L["stride"]) for L in P.PolicyArch().layers()]
    assert [n for n, lk, _ in links if lk == "tap"] == ["conv2", "conv5", "conv8"]
    assert [n for n, lk, _ in links if lk == "add"] == ["conv4", "conv7", "conv10"]
    assert [n for n, _, s in links if s == 2] == ["conv5", "conv8"]


def test_same_seed_same_params():
    a, b = _policy(3), _policy(3)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a.names())


# ---------------------------------------------------------------- q step

def test_zero_head_gives_zero_q():
    p = _policy()
    p["fc.weight"].data[...] = 0
    for seed in range(3):
        img = np.random.default_rng(seed).random((16, 16))
        q, _ = P.policy_q_step(img, P.PolicyState.initial(p), p)
        assert q == 0.0


def test_q_step_deterministic_and_advances():
    p = _policy(1)
    img = np.random.default_rng(1).random((16, 16))
    s0 = P.PolicyState.initial(p)
    q1, s1 = P.policy_q_step(img, s0, p)
    q2, s2 = P.policy_q_step(img, s0, p)
    assert q1 == q2 and np.array_equal(s1.h, s2.h)
    assert s1.step_index == 1
    _, s3 = P.policy_q_step(img, s1, p)
    assert s3.step_index == 2


def test_q_step_width_mismatch():
    p = _policy()
    bad = P.PolicyState(np.zeros((1, 8), np.float32), np.zeros((1, 8), np.float32))
    with pytest.raises(R.ShapeMismatch):
        P.policy_q_step(np.zeros((16, 16)), bad, p)


def test_observation_variant_needs_x0():
    p = _policy(obs=True)
    assert p["conv1.weight"].shape[1] == 2
    with pytest.raises(ValueError):
        P.policy_q_step(np.zeros((16, 16)), P.PolicyState.initial(p), p)
    q, _ = P.policy_q_step(np.zeros((16, 16)), P.PolicyState.initial(p), p, np.zeros((16, 16)))
    assert np.isfinite(q)


def test_episode_replay_is_pure():
    p = _policy(2)
    rng = np.random.default_rng(2)
    frames = [rng.random((16, 16)) for _ in range(5)]

    def replay():
        s, out = P.PolicyState.initial(p), []
        for f in frames:
            q, s = P.policy_q_step(f, s, p)
            out.append(q)
        return out

    assert replay() == replay()


@pytest.mark.parametrize("seed", range(5))
def test_q_forward_gradients(seed, monkeypatch):
    p = _policy(seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = rng.random((2, 1, 16, 16))
    h = rng.standard_normal((2, 32)) * 0.5
    c = rng.standard_normal((2, 32)) * 0.5

    def loss_fn():
        q, _, _ = P.q_forward(Tensor(x), Tensor(h), Tensor(c), p)
        return tc.sum_all(q)

    assert sampled_gradcheck(p, loss_fn, tc.backward(loss_fn(), p), rng, KinkWatch(monkeypatch)) < 1e-4


# ---------------------------------------------------------------- policy_decide

def _constant_q(p, value):
    for k in p.names():
        p[k].data[...] = 0
    p["fc.bias"].data[...] = value
    return p


def test_negative_head_stops_immediately():
    x0 = np.random.default_rng(0).random((16, 16))
    out, traj, n = P.policy_decide(x0, _restorer(), _constant_q(_policy(), -1.0), max_steps=5)
    assert n == 0 and traj.n == 0
    np.testing.assert_allclose(out, np.clip(x0, 0, 1))
    assert [d.action for d in traj.extras["decisions"]] == ["stop"]


def test_positive_head_runs_to_max_steps():
    x0 = np.random.default_rng(0).random((16, 16))
    _, traj, n = P.policy_decide(x0, _restorer(), _constant_q(_policy(), 1.0), max_steps=4)
    assert n == 4 and traj.n == 4
    assert [d.action for d in traj.extras["decisions"]] == ["continue"] * 4 + ["stop"]
    assert all(d.step <= 4 for d in traj.extras["decisions"])


def test_stop_is_absorbing(monkeypatch):
    calls = []
    orig = R.unfold_step

    def counted(*a):
        calls.append(1)
        return orig(*a)

    monkeypatch.setattr(R, "unfold_step", counted)
    p = _policy(4)
    # continue for exactly two steps: q > 0 while the step counter is below 2
    qs = iter([1.0, 1.0, -1.0, 1.0, 1.0])

    def fake_q(x, state, params, x0=None):
        return next(qs), P.PolicyState(state.h, state.c, state.step_index + 1)

    monkeypatch.setattr(P, "policy_q_step", fake_q)
    _, traj, n = P.policy_decide(np.random.default_rng(0).random((16, 16)), _restorer(), p, max_steps=10)
    assert n == 2 and len(calls) == 2 and traj.n == 2


def test_policy_decide_matches_unfold_trajectory():
    x0 = np.random.default_rng(5).random((15, 17))
    r = _restorer(5)
    _, traj, n = P.policy_decide(x0, r, _constant_q(_policy(), 1.0), max_steps=3)
    ref = R.unfold_trajectory(x0, r, 3)
    for a, b in zip(traj.states, ref.states):
        np.testing.assert_array_equal(a, b)


def test_policy_decide_rejects_zero_max_steps():
    with pytest.raises(ValueError):
        P.policy_decide(np.zeros((8, 8)), _restorer(), _policy(), 0)


# ---------------------------------------------------------------- decorrelation rule

def test_decorrelation_constant_trajectory_picks_first():
    x = np.random.default_rng(0).random((8, 8))
    assert P.decorrelation_stop_index(_traj([x] * 6)) == 1


def test_decorrelation_orthogonal_construction():
    # X_n = y + (1 - n/N) e with e orthogonal to y: only X_N has residual uncorrelated with the estimate
    n_steps = 7
    y = (np.indices((16, 16)).sum(0) % 2).astype(np.float64)
    rng = np.random.default_rng(1)
    e = rng.standard_normal((16, 16))
    yc = y - y.mean()
    e = e - e.mean()
    e -= (e * yc).sum() / (yc * yc).sum() * yc
    states = [y + (1 - n / n_steps) * e for n in range(n_steps + 1)]
    assert P.decorrelation_stop_index(_traj(states)) == n_steps


def test_decorrelation_zero_variance_step_counts_as_zero():
    x0 = np.random.default_rng(2).random((8, 8))
    flat = np.full((8, 8), 0.5)
    states = [x0, 0.5 * x0 + 0.25, flat, 0.9 * x0]
    assert P.decorrelation_stop_index(_traj(states)) == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-3, 3))
def test_decorrelation_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    states = [rng.random((8, 8)) for _ in range(5)]
    i1 = P.decorrelation_stop_index(_traj(states))
    i2 = P.decorrelation_stop_index(_traj([a * s + b for s in states]))
    scores = [abs(P._pearson(states[0] - s, s)) for s in states[1:]]
    # skip near-ties, where rescaling only perturbs rounding
    if sorted(scores)[1] - sorted(scores)[0] > 1e-9:
        assert i1 == i2


def test_decorrelation_needs_two_states():
    with pytest.raises(ValueError):
        P.decorrelation_stop_index(_traj([np.zeros((4, 4))]))


# ---------------------------------------------------------------- oracle

def test_oracle_examples():
    s = [np.zeros((2, 2))] * 5
    assert P.oracle_peak_index(_traj(s, [20, 24, 26, 25.5, 25])) == 2
    assert P.oracle_peak_index(_traj(s, [1, 2, 3, 4, 5])) == 4
    assert P.oracle_peak_index(_traj(s, [np.inf, 30, 31, 29, 20])) == 0
    assert P.oracle_peak_index(_traj(s, [3, 5, 5, 1, 0])) == 1
    with pytest.raises(ValueError):
        P.oracle_peak_index(_traj(s))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-500, 500), min_size=1, max_size=12))
def test_oracle_monotone_transform_invariance(ints):
    ps = [i / 10 for i in ints]  # distinct values stay distinct under the transforms
    s = [np.zeros((2, 2))] * len(ps)
    base = P.oracle_peak_index(_traj(s, ps))
    assert P.oracle_peak_index(_traj(s, [np.exp(p / 10) for p in ps])) == base
    assert P.oracle_peak_index(_traj(s, [3 * p - 7 for p in ps])) == base
