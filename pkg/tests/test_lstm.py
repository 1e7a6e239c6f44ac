import math

import numpy as np
import pytest

from minitrack.errors import DimensionError
from minitrack.lstm import (
    GATES,
    ClassScores,
    LstmParams,
    LstmState,
    backward,
    choose_target,
    forward,
    init_state,
    train_step,
)
from minitrack.nn import AdamSet


def _sigm(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_oracle(params: LstmParams, prev: LstmState, x):
    """Per-element re-implementation with explicit Python loops."""
    t = params.tensors
    m = len(x)
    n = params.units
    z = [sum(x[k] * t["input.w"][k, j] for k in range(m)) + t["input.b"][j] for j in range(n)]
    a = z
    cells, hiddens = [], []
    for l in range(params.n_layers):
        pre = {}
        for g in GATES:
            u, v, b = t[f"layer{l}.u_{g}"], t[f"layer{l}.v_{g}"], t[f"layer{l}.b_{g}"]
            pre[g] = [
                sum(a[k] * u[j, k] for k in range(n))
                + sum(prev.h[l][k] * v[j, k] for k in range(n))
                + b[j]
                for j in range(n)
            ]
        i = [_sigm(p) for p in pre["i"]]
        f = [_sigm(p) for p in pre["f"]]
        o = [_sigm(p) for p in pre["o"]]
        g_in = [math.tanh(p) for p in pre["c"]]
        c = [f[j] * prev.c[l][j] + i[j] * g_in[j] for j in range(n)]
        h = [o[j] * math.tanh(c[j]) for j in range(n)]
        cells.append(c)
        hiddens.append(h)
        a = h
    logits = [
        sum(a[k] * t["output.w"][k, col] for k in range(n)) + t["output.b"][col]
        for col in (0, 1)
    ]
    mx = max(logits)
    e = [math.exp(v - mx) for v in logits]
    s = sum(e)
    return [v / s for v in e], cells, hiddens


def rand_params(seed, m=6, n=4, layers=2):
    return LstmParams.init(np.random.default_rng(seed), m, n, layers)


def rand_state(seed, params):
    rng = np.random.default_rng(seed)
    return LstmState(
        c=rng.normal(size=(params.n_layers, params.units)),
        h=rng.normal(size=(params.n_layers, params.units)),
    )


def zero_params(m=6, n=4, layers=2):
    p = rand_params(0, m, n, layers)
    for k in p.tensors:
        p.tensors[k] = np.zeros_like(p.tensors[k])
    return p


class TestInitState:
    def test_zero_params_zero_state(self):
        p = zero_params()
        st = init_state(p, np.ones(6))
        # sigma(0)=0.5 gates, tanh(0)=0 input -> c = 0.5*0 + 0.5*0 = 0, h = 0
        assert np.all(st.c == 0) and np.all(st.h == 0)

    def test_deterministic(self):
        p = rand_params(1)
        f = np.random.default_rng(2).normal(size=6)
        a, b = init_state(p, f), init_state(p, f)
        assert np.array_equal(a.c, b.c) and np.array_equal(a.h, b.h)

    def test_matches_scalar_oracle(self):
        p = rand_params(3)
        f = np.random.default_rng(4).normal(size=6)
        st = init_state(p, f)
        _, cells, hiddens = scalar_oracle(p, LstmState.zeros(2, 4), f)
        assert np.max(np.abs(st.c - np.array(cells))) < 1e-10
        assert np.max(np.abs(st.h - np.array(hiddens))) < 1e-10

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            init_state(rand_params(5), np.zeros(7))


class TestForward:
    def test_zero_params_uniform_scores(self):
        p = zero_params()
        scores = forward(p, LstmState.zeros(2, 4), np.random.default_rng(6).normal(size=(5, 6)))
        assert np.allclose(scores.probs, 0.5)

    def test_batch_independence(self):
        p = rand_params(7)
        st = rand_state(8, p)
        f = np.random.default_rng(9).normal(size=6)
        batch = np.tile(f, (4, 1))
        scores = forward(p, st, batch)
        for i in range(1, 4):
            assert np.array_equal(scores.probs[i], scores.probs[0])
            assert np.array_equal(scores.cand_c[:, i], scores.cand_c[:, 0])

    def test_matches_scalar_oracle(self):
        p = rand_params(10, m=8, n=5)
        st = rand_state(11, p)
        batch = np.random.default_rng(12).normal(size=(5, 8))
        scores = forward(p, st, batch)
        for b in range(5):
            probs, cells, hiddens = scalar_oracle(p, st, batch[b])
            assert np.max(np.abs(scores.probs[b] - probs)) < 1e-10
            assert np.max(np.abs(scores.cand_c[:, b] - cells)) < 1e-10
            assert np.max(np.abs(scores.cand_h[:, b] - hiddens)) < 1e-10

    def test_probabilities_normalized(self):
        p = rand_params(13)
        st = rand_state(14, p)
        scores = forward(p, st, np.random.default_rng(15).normal(size=(9, 6)))
        assert np.max(np.abs(scores.probs.sum(axis=1) - 1.0)) < 1e-9
        assert np.all(scores.probs >= 0) and np.all(scores.probs <= 1)

    def test_permutation_equivariance(self):
        p = rand_params(16)
        st = rand_state(17, p)
        batch = np.random.default_rng(18).normal(size=(7, 6))
        perm = np.array([3, 0, 6, 1, 5, 2, 4])
        a = forward(p, st, batch)
        b = forward(p, st, batch[perm])
        assert np.array_equal(a.probs[perm], b.probs)

    def test_prev_state_not_mutated(self):
        p = rand_params(19)
        st = rand_state(20, p)
        c0, h0 = st.c.copy(), st.h.copy()
        forward(p, st, np.random.default_rng(21).normal(size=(3, 6)))
        assert np.array_equal(st.c, c0) and np.array_equal(st.h, h0)


class TestBackward:
    def test_zero_params_balanced_output_grads(self):
        p = zero_params()
        feats = np.random.default_rng(22).normal(size=(2, 6))
        loss, grads = backward(p, LstmState.zeros(2, 4), feats, np.array([1, 0]))
        assert abs(loss - math.log(2.0)) < 1e-12
        assert np.allclose(grads["output.w"], 0.0)  # h == 0 everywhere
        assert np.allclose(grads["output.b"], 0.0)  # (0.5,0.5)-onehot averages out

    def test_duplicate_batch_same_gradients(self):
        p = rand_params(23)
        st = rand_state(24, p)
        feats = np.random.default_rng(25).normal(size=(3, 6))
        labels = np.array([1, 0, 1])
        _, g1 = backward(p, st, feats, labels)
        _, g2 = backward(p, st, np.tile(feats, (2, 1)), np.tile(labels, 2))
        for k in g1:
            assert np.max(np.abs(g1[k] - g2[k])) < 1e-12

    @pytest.mark.parametrize("n,m", [(4, 6), (8, 12)])
    def test_finite_differences_all_params(self, n, m):
        p = rand_params(26, m=m, n=n)
        st = rand_state(27, p)
        feats = np.random.default_rng(28).normal(size=(4, m))
        labels = np.array([1, 0, 0, 1])
        _, grads = backward(p, st, feats, labels)
        h = 1e-4
        for name, tensor in p.tensors.items():
            flat = tensor.ravel()
            gflat = grads[name].ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp, _ = backward(p, st, feats, labels)
                flat[i] = orig - h
                lm, _ = backward(p, st, feats, labels)
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                if abs(fd) < 1e-6 and abs(gflat[i]) < 1e-6:
                    continue
                assert abs(fd - gflat[i]) <= 1e-3 * max(abs(fd), abs(gflat[i])), (
                    f"{name}[{i}]: fd={fd} analytic={gflat[i]}"
                )


class TestTrainStep:
    def test_zero_lr_no_change(self):
        p = rand_params(29)
        st = rand_state(30, p)
        feats = np.random.default_rng(31).normal(size=(4, 6))
        labels = np.array([1, 0, 1, 0])
        before = {k: v.copy() for k, v in p.tensors.items()}
        p2, _ = train_step(p, st, feats, labels, AdamSet(lr=0.0))
        for k in before:
            assert np.array_equal(p2.tensors[k], before[k])

    def test_separable_batch_converges(self):
        # thresholds fixed from an oracle run of this exact loop (lr=0.05)
        p = rand_params(0, m=6, n=8)
        st = init_state(p, np.random.default_rng(0).normal(0, 0.3, 6))
        feats = np.array(
            [[1, 0, 0, 0, 0, 0], [0.9, 0.1, 0, 0, 0, 0], [-1, 0, 0, 0, 0, 0], [-0.9, -0.1, 0, 0, 0, 0]],
            dtype=float,
        )
        labels = np.array([1, 1, 0, 0])
        adam = AdamSet(lr=0.05)
        losses = []
        for _ in range(20):
            p, loss = train_step(p, st, feats, labels, adam)
            losses.append(loss)
        for a, b in zip(losses[5:], losses[6:]):
            assert b <= a + 1e-12
        assert losses[-1] < 0.1

    def test_orthogonal_pair_classified(self):
        p = rand_params(0, m=6, n=8)
        st = init_state(p, np.random.default_rng(0).normal(0, 0.3, 6))
        feats = np.zeros((2, 6))
        feats[0, 0] = 1.0
        feats[1, 1] = 1.0
        labels = np.array([1, 0])
        adam = AdamSet(lr=0.01)
        for _ in range(50):
            p, _ = train_step(p, st, feats, labels, adam)
        scores = forward(p, st, feats)
        assert scores.p_plus[0] > 0.9
        assert scores.p_plus[1] < 0.1


class TestChooseTarget:
    def _scores(self, p_plus):
        p_plus = np.asarray(p_plus, dtype=float)
        probs = np.stack([1.0 - p_plus, p_plus], axis=1)
        b = len(p_plus)
        return ClassScores(
            probs=probs,
            cand_c=np.arange(2 * b * 3, dtype=float).reshape(2, b, 3),
            cand_h=np.arange(2 * b * 3, dtype=float).reshape(2, b, 3) + 100,
        )

    def test_single_proposal(self):
        idx, st = choose_target(self._scores([0.4]))
        assert idx == 0
        assert st.c.shape == (2, 3)

    def test_all_equal_takes_first(self):
        idx, _ = choose_target(self._scores([0.7, 0.7, 0.7]))
        assert idx == 0

    def test_matches_argmax_oracle(self):
        rng = np.random.default_rng(32)
        for _ in range(20):
            vals = rng.random(10)
            idx, st = choose_target(self._scores(vals))
            assert idx == max(range(10), key=lambda i: (vals[i], -i))
            assert np.array_equal(st.c, np.arange(60, dtype=float).reshape(2, 10, 3)[:, idx])

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(33)
        vals = rng.random(12) * 0.5
        base, _ = choose_target(self._scores(vals))
        warped, _ = choose_target(self._scores(vals**3 * 0.9))
        assert base == warped

    def test_empty_batch(self):
        empty = ClassScores(
            probs=np.zeros((0, 2)), cand_c=np.zeros((2, 0, 3)), cand_h=np.zeros((2, 0, 3))
        )
        with pytest.raises(ValueError):
            choose_target(empty)
