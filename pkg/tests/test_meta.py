import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaprofile.dataset import UserStore
from metaprofile.meta import (BaselineConfig, EpisodeConfig, EpisodeError, MetaModel, SimilarityModule,
                              attention_predict, baseline_predict, binary_pools, episode_loss, meta_test, meta_train,
                              predict_query, sample_episode, score_embeddings, train_baseline)
from metaprofile.profile_net import ProfileNetConfig
from metaprofile.synth import CohortConfig, generate_cohort


def pools_of(sizes):
    start, out = 0, {}
    for c, n in enumerate(sizes):
        out[c] = np.arange(start, start + n)
        start += n
    return out


class ConstantSim(SimilarityModule):
    def __init__(self, value=0.3):
        super().__init__(4, (4,))
        self.value = value

    def scores(self, q, s, train=False):
        return np.full((len(q), len(s)), self.value)


def test_softmax_hand_evaluation():
    p = attention_predict(np.array([[2.0, 0.0]]), np.eye(2))[0]
    e2 = np.exp(2.0)
    assert p.tolist() == pytest.approx([e2 / (e2 + 1), 1 / (e2 + 1)], abs=1e-15)
    assert p == pytest.approx([0.8808, 0.1192], abs=1e-4)


def test_saturated_scores_give_one_hot():
    onehot = np.eye(3)[[0, 1, 2, 1]]
    p = attention_predict(np.array([[-50.0, 50.0, -50.0, 50.0]]), onehot)[0]
    assert p == pytest.approx([0, 1, 0], abs=1e-12)


def test_constant_similarity_gives_uniform():
    onehot = np.eye(3)[[0, 0, 1, 1, 2, 2]]
    p = predict_query(np.zeros(4), np.zeros((6, 4)), onehot, ConstantSim())
    assert p == pytest.approx([1 / 3] * 3, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-30, 30, allow_nan=False), min_size=2, max_size=12), st.floats(-100, 100),
       st.randoms(use_true_random=False))
def test_attention_distribution_properties(scores, shift, rnd):
    s = np.array([scores])
    classes = [rnd.randrange(3) for _ in scores]
    onehot = np.eye(3)[classes]
    p = attention_predict(s, onehot)[0]
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-9
    assert attention_predict(s + shift, onehot)[0] == pytest.approx(p, abs=1e-9)
    perm = list(range(len(scores)))
    rnd.shuffle(perm)
    assert attention_predict(s[:, perm], onehot[perm])[0] == pytest.approx(p, abs=1e-12)


def test_similarity_pair_convention():
    sim = SimilarityModule(3, (5,), seed=1, dtype=np.float64)
    q = np.random.default_rng(0).normal(size=(2, 3))
    s = np.random.default_rng(1).normal(size=(4, 3))
    grid = sim.scores(q, s)
    assert grid.shape == (2, 4)
    assert grid[1, 2] == pytest.approx(sim.forward(np.concatenate([q[1], s[2]])[None, :], train=False)[0])


def test_episode_sizes():
    ep = sample_episode(pools_of([5] * 9), 9, 1, 18, 0)
    assert len(ep.support_rows) == 9 and len(ep.query_rows) == 18
    ep = sample_episode(pools_of([30, 30, 30]), 2, 5, 20, 1)
    assert len(ep.support_rows) == 10 and len(ep.query_rows) == 20
    assert sorted(np.bincount(ep.support_classes).tolist()) == [5, 5]


def test_episode_invariants():
    pools = pools_of([10, 10, 10, 10])
    pools[1] = np.concatenate([pools[1], pools[0][:5]])  # shared users
    for seed in range(30):
        ep = sample_episode(pools, 3, 2, 7, seed)
        assert not set(ep.support_rows) & set(ep.query_rows)
        assert set(ep.query_classes) <= set(ep.support_classes)
        assert len(set(ep.support_rows.tolist() + ep.query_rows.tolist())) == 6 + 7


def test_episode_determinism():
    pools = pools_of([8] * 5)
    assert sample_episode(pools, 4, 1, 8, [3, 1]).to_json() == sample_episode(pools, 4, 1, 8, [3, 1]).to_json()
    assert sample_episode(pools, 4, 1, 8, 1).to_json() != sample_episode(pools, 4, 1, 8, 2).to_json()


def test_episode_errors_name_the_class():
    with pytest.raises(EpisodeError, match="class 1"):
        sample_episode(pools_of([10, 1]), 2, 1, 4, 0)
    with pytest.raises(EpisodeError):
        sample_episode(pools_of([5, 5]), 3, 1, 3, 0)


def test_episode_loss_gradient():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(4, 6))
    sc, qc = np.array([0, 0, 1, 1, 2, 2]), np.array([0, 1, 2, 1])
    loss, grad, _ = episode_loss(scores, sc, qc, 3)
    num = np.zeros_like(scores)
    for i in np.ndindex(scores.shape):
        a, b = scores.copy(), scores.copy()
        a[i] += 1e-6
        b[i] -= 1e-6
        num[i] = (episode_loss(a, sc, qc, 3)[0] - episode_loss(b, sc, qc, 3)[0]) / 2e-6
    assert np.abs(grad - num).max() < 1e-7


@pytest.fixture(scope="module")
def tiny():
    cohort = generate_cohort(CohortConfig(num_users=120, seed=5))
    store = UserStore.from_cohort(cohort)
    store.fit_demo_stats(range(120))
    cfg = ProfileNetConfig(channels_a=store.c_a, channels_b=store.c_b, demo_width=store.demo_width,
                           filters=(2, 2, 2, 2), demo_hidden=8, embedding=8, num_tasks=9, batch_size=16)
    rows = np.arange(120)
    lab = cohort.labels
    pools = {k: rows[(lab.mask[:, t] == 1) & (lab.labels[:, t] == 1)] for k, t in enumerate(cohort.source_tasks)}
    return cohort, store, cfg, pools


def test_zero_lr_leaves_parameters_bit_identical(tiny):
    _, store, cfg, pools = tiny
    model = MetaModel(cfg, (8,))
    before = model.digest()
    log = meta_train(model, store, pools, EpisodeConfig(way=3, shot=1, query_size=3, episodes=3, lr=0.0))
    assert model.digest() == before and len(log.losses) == 3


def test_meta_train_deterministic_and_traced(tiny):
    _, store, cfg, pools = tiny
    digests, traces = [], []
    for _ in range(2):
        model = MetaModel(cfg, (8,))
        buf = io.StringIO()
        meta_train(model, store, pools, EpisodeConfig(way=3, shot=1, query_size=3, episodes=3), seed=4, trace=buf)
        digests.append(model.digest())
        traces.append(buf.getvalue())
    assert digests[0] == digests[1] and traces[0] == traces[1]
    first = json.loads(traces[0].splitlines()[0])
    assert len(first["support"]) == 3 and len(first["query"]) == 3


def test_overfit_single_episode(tiny):
    # support and query are the same users: the loss should collapse
    _, store, cfg, pools = tiny
    model = MetaModel(cfg, (16,))
    from metaprofile.meta import Episode, train_episode
    from metaprofile.nn import Adam

    rows = np.array([pools[0][0], pools[1][0], pools[2][0]])
    ep = Episode(rows, np.arange(3), rows, np.arange(3), 3, 1)
    sim_opt, bb_opt = Adam(), Adam()
    first = train_episode(model, store, ep, 1e-2, 1.0, sim_opt, bb_opt)[0]
    for _ in range(150):
        last = train_episode(model, store, ep, 1e-2, 1.0, sim_opt, bb_opt)[0]
    assert last < 0.05 < first


def test_meta_test_is_read_only(tiny):
    _, store, cfg, pools = tiny
    model = MetaModel(cfg, (8,))
    before = model.digest()
    probs = meta_test(model, store, [pools[0][0], pools[1][0]], [0, 1], np.arange(10))
    assert model.digest() == before
    assert probs.shape == (10, 2) and np.allclose(probs.sum(axis=1), 1)
    again = meta_test(model, store, [pools[0][0], pools[1][0]], [0, 1], np.arange(10))
    assert np.array_equal(probs, again)
    with pytest.raises(EpisodeError):
        meta_test(model, store, [], [], np.arange(3))


def test_constant_similarity_scores_half():
    p = score_embeddings(ConstantSim(), np.zeros((5, 4)), np.zeros((2, 4)), np.array([0, 1]), 2)
    assert np.all(p[:, 1] == 0.5)


def test_binary_pools():
    pools = binary_pools([5, 6, 7], [1, 0, 1])
    assert pools[0].tolist() == [6] and pools[1].tolist() == [5, 7]


def test_baseline_deterministic_and_single_head(tiny):
    cohort, store, cfg, _ = tiny
    t = cohort.target_tasks[0]
    rows = np.arange(40)
    y = cohort.labels.labels[rows, t]
    bc = BaselineConfig(steps=3, batch_size=8)
    a = train_baseline(store, cfg, rows, y, bc, seed=1)
    b = train_baseline(store, cfg, rows, y, bc, seed=1)
    assert a.cfg.num_tasks == 1
    pa, pb = baseline_predict(a, store, np.arange(40, 60)), baseline_predict(b, store, np.arange(40, 60))
    assert np.array_equal(pa, pb) and pa.shape == (20,) and np.all((pa > 0) & (pa < 1))


def test_baseline_with_one_row_stays_at_init(tiny):
    _, store, cfg, _ = tiny
    net = train_baseline(store, cfg, [3], [1], BaselineConfig(steps=5), seed=2)
    fresh = train_baseline(store, cfg, [], [], BaselineConfig(steps=5), seed=2)
    s1, s2 = net.state(), fresh.state()
    assert all(np.array_equal(s1[k], s2[k]) for k in s1)
