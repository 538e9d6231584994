import numpy as np
import pytest

from roisearch.errors import DegenerateBatchError, DivergenceError, ShapeError
from roisearch.experiments import build_dataset
from roisearch.predictor import (
    AdamW,
    MLPParams,
    PredictorEnsemble,
    TrainingConfig,
    TrainRecord,
    batch_loss_and_grads,
    evaluate_rank_quality,
    forward,
    init_params,
    mse_loss,
    pairwise_rank_loss,
    predict,
    train_ensemble,
    train_member,
)
from roisearch.store import warm_start_pool

from .oracles import central_diff


def _records(n, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, (n, dim)).astype(float)
    w = rng.normal(size=dim)
    return [TrainRecord(x[i], float(x[i] @ w + 0.01 * i), float(x[i].sum() + 0.1 * i), f"r{i}") for i in range(n)]


FAST = TrainingConfig(epochs=150)


# forward

def test_zero_network_outputs_zero():
    p = MLPParams.zeros(5)
    assert forward(p, np.ones(5)) == (0.0, 0.0)
    assert forward(p, np.ones(5), train_mode=True, seed=1) == (0.0, 0.0)


def test_eval_mode_is_deterministic_and_train_mode_is_seeded():
    p = init_params(7, np.random.default_rng(0))
    x = np.random.default_rng(1).random(7)
    assert forward(p, x) == forward(p, x)
    assert forward(p, x, True, 5) == forward(p, x, True, 5)
    outs = {forward(p, x, True, s) for s in range(6)}
    assert len(outs) > 1


def test_identity_trunk_sums_inputs():
    # hand-built trunk that passes non-negative inputs straight through
    d, h = 4, 4
    p = MLPParams(np.eye(d), np.zeros(h), np.eye(h), np.zeros(h), np.ones(h), np.zeros(1), np.zeros(h), np.zeros(1))
    x = np.array([0.1, 0.5, 0.0, 2.0])
    assert forward(p, x)[0] == pytest.approx(x.sum())


def test_forward_shape_errors():
    p = init_params(3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        forward(p, np.ones(4))
    ne, fl = forward(p, np.ones((5, 3)))
    assert ne.shape == fl.shape == (5,)


# losses

def test_pairwise_examples():
    assert pairwise_rank_loss([0.5, 0.2], [1, 0], 0.001) == 0.0
    assert pairwise_rank_loss([0.2, 0.5], [1, 0], 0.001) == pytest.approx(0.301)
    assert pairwise_rank_loss([0.4, 0.4], [1, 0], 0.001) == pytest.approx(0.001)


def test_pairwise_errors():
    with pytest.raises(DegenerateBatchError):
        pairwise_rank_loss([0.1, 0.2], [1, 1])
    with pytest.raises(DegenerateBatchError):
        pairwise_rank_loss([0.1], [1])
    with pytest.raises(ShapeError):
        pairwise_rank_loss([0.1, 0.2], [1, 0, 2])


def test_mse_examples():
    assert mse_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse_loss([0.0, 0.0], [1.0, 1.0]) == 1.0
    assert mse_loss([1.0, 3.0], [0.0, 0.0]) == 5.0
    with pytest.raises(ShapeError):
        mse_loss([1.0], [1.0, 2.0])


def test_shift_invariance_separates_the_losses():
    rng = np.random.default_rng(4)
    p, y = rng.normal(size=12), rng.normal(size=12)
    assert pairwise_rank_loss(p + 3.7, y) == pytest.approx(pairwise_rank_loss(p, y), abs=1e-12)
    assert mse_loss(p + 3.7, y) != pytest.approx(mse_loss(p, y))


def test_pairwise_zero_when_ordered_with_gaps():
    y = np.arange(10.0)
    assert pairwise_rank_loss(0.01 * y, y, 0.001) == 0.0
    assert pairwise_rank_loss(0.0005 * y, y, 0.001) > 0.0


def _near_kink(params, x, ne, fl, cfg, tol=1e-3):
    """True when a ReLU input or hinge argument sits within ``tol`` of zero."""
    from roisearch.predictor import _forward, all_pairs

    p_ne, p_fl, cache = _forward(params, x)
    if (np.abs(cache.z1) < tol).any() or (np.abs(cache.z2) < tol).any():
        return True
    if cfg.loss != "pairwise_rank":
        return False
    ii, jj = all_pairs(x.shape[0])
    for p, y in ((p_ne, ne), (p_fl, fl)):
        arg = -np.sign(y[ii] - y[jj]) * (p[ii] - p[jj]) + cfg.margin
        if (np.abs(arg) < tol).any():
            return True
    return False


@pytest.mark.parametrize("case", range(20))
def test_gradients_match_finite_differences(case):
    rng = np.random.default_rng(100 + case)
    dim, n, hidden = int(rng.integers(2, 6)), int(rng.integers(3, 8)), [4, 8, 50][case % 3]
    cfg = TrainingConfig(loss="mse" if case % 4 == 3 else "pairwise_rank", margin=0.05,
                         flops_loss="mse" if case % 5 == 4 else "same")
    while True:
        params = init_params(dim, rng, hidden)
        x = rng.normal(size=(n, dim))
        ne, fl = rng.normal(size=n), rng.normal(size=n)
        if not _near_kink(params, x, ne, fl, cfg):
            break
    masks = None
    if case % 2:
        masks = (rng.random((2, n, hidden)) < 0.5) * 2.0
    _, grads = batch_loss_and_grads(params, x, ne, fl, cfg, masks=masks)

    def f():
        return batch_loss_and_grads(params, x, ne, fl, cfg, masks=masks)[0]

    for arr, g in zip(params.arrays(), grads):
        num = central_diff(f, arr, 1e-4)
        scale = max(np.abs(g).max(), np.abs(num).max(), 1e-8)
        assert np.abs(g - num).max() / scale < 1e-3


# optimiser

def test_adamw_first_step_matches_hand_computation():
    a = np.array([1.0, -2.0])
    opt = AdamW([a], lr=0.1, weight_decay=0.5)
    opt.step([a], [np.array([0.3, -0.2])])
    # decay first, then a unit-magnitude Adam step on the first iteration
    want = np.array([1.0, -2.0]) * (1 - 0.1 * 0.5) - 0.1 * np.sign([0.3, -0.2])
    np.testing.assert_allclose(a, want, atol=1e-6)


# training

def test_two_records_become_ordered():
    recs = [TrainRecord(np.array([1.0, 0.0]), 1.0, 0.0), TrainRecord(np.array([0.0, 1.0]), 0.0, 1.0)]
    p = train_member(recs, TrainingConfig(epochs=300, dropout=0.0), seed=0)
    ne, _ = forward(p, np.stack([r.encoding for r in recs]))
    assert ne[0] - ne[1] > 0.001


def test_training_is_bit_identical_for_a_seed():
    recs = _records(20)
    a = train_member(recs, FAST, seed=3)
    b = train_member(recs, FAST, seed=3)
    c = train_member(recs, FAST, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    assert not np.array_equal(a.w1, c.w1)


def test_train_member_preconditions():
    with pytest.raises(DegenerateBatchError):
        train_member(_records(1), FAST, 0)
    same = [TrainRecord(np.ones(3), 0.5, float(i)) for i in range(4)]
    with pytest.raises(DegenerateBatchError):
        train_member(same, FAST, 0)
    with pytest.raises(ValueError):
        TrainRecord(np.ones(3), float("nan"), 0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch():
    recs = _records(10)
    with pytest.raises(DivergenceError) as e:
        train_member(recs, TrainingConfig(epochs=50, lr=1e308), seed=0)
    assert e.value.epoch >= 0


def test_training_config_validation():
    for bad in ({"margin": 0}, {"lr": -1}, {"dropout": 1.0}, {"loss": "huber"}):
        with pytest.raises(ValueError):
            TrainingConfig(**bad)


# ensemble

def test_k1_ensemble_equals_member():
    recs = _records(15)
    ens = train_ensemble(recs, FAST, k=1, seed=2)
    member = train_member(recs, FAST, 2)
    x = recs[3].encoding
    ne, fl = forward(member, x)
    s = ens.label_stats
    got = predict(ens, x)
    assert got[0] == pytest.approx(ne * s["ne_std"] + s["ne_mean"], abs=1e-12)
    assert got[1] == pytest.approx(fl * s["flops_std"] + s["flops_mean"], abs=1e-12)


def test_ensemble_is_member_mean_and_order_free():
    rng = np.random.default_rng(0)
    members = [init_params(4, rng) for _ in range(3)]
    stats = {"ne_mean": 0.0, "ne_std": 1.0, "flops_mean": 0.0, "flops_std": 1.0}
    x = rng.random(4)
    each = np.array([forward(m, x) for m in members])
    ens = PredictorEnsemble(members, stats)
    np.testing.assert_allclose(predict(ens, x), each.mean(axis=0), atol=1e-12)
    rev = PredictorEnsemble(members[::-1], stats)
    np.testing.assert_allclose(predict(rev, x), predict(ens, x), atol=1e-12)
    same = PredictorEnsemble([members[0]] * 4, stats)
    np.testing.assert_allclose(predict(same, x), each[0], atol=1e-12)


def test_two_member_mean_example():
    stats = {"ne_mean": 0.0, "ne_std": 1.0, "flops_mean": 0.0, "flops_std": 1.0}
    a, b = MLPParams.zeros(2), MLPParams.zeros(2)
    a.b_ne[0], b.b_ne[0] = 0.2, 0.4
    assert predict(PredictorEnsemble([a, b], stats), np.zeros(2))[0] == pytest.approx(0.3)


def test_ensemble_width_checks():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeError):
        PredictorEnsemble([init_params(3, rng), init_params(4, rng)], {})
    with pytest.raises(ValueError):
        PredictorEnsemble([], {})


def test_checkpoint_round_trip_and_stable_hash(tmp_path):
    recs = _records(12)
    ens = train_ensemble(recs, FAST, k=2, seed=0, space_name="s", space_version=2)
    h1 = ens.save(tmp_path / "a.json")
    h2 = train_ensemble(recs, FAST, k=2, seed=0, space_name="s", space_version=2).save(tmp_path / "b.json")
    assert h1 == h2
    back = PredictorEnsemble.load(tmp_path / "a.json")
    assert (back.space_name, back.space_version, back.k) == ("s", 2, 2)
    x = np.stack([r.encoding for r in recs])
    np.testing.assert_array_equal(back.predict_batch(x)[0], ens.predict_batch(x)[0])


def test_rank_quality_on_memorised_data():
    recs = _records(30)
    ens = train_ensemble(recs, TrainingConfig(epochs=600, dropout=0.0), k=2, seed=0)
    q = evaluate_rank_quality(ens, recs)
    assert q.tau_ne > 0.9 and q.defined
    with pytest.raises(ValueError):
        evaluate_rank_quality(ens, recs[:4])


def test_rank_quality_flags_constant_labels():
    recs = _records(10)
    ens = train_ensemble(recs, FAST, k=1, seed=0)
    flat = [TrainRecord(r.encoding, 0.0, 1.0) for r in recs]
    assert not evaluate_rank_quality(ens, flat).defined


def test_random_predictor_null_bound():
    # |tau| < 0.35 at n=30 holds in well over 99% of random draws
    rng = np.random.default_rng(0)
    from roisearch.curves import kendall_tau

    hits = sum(abs(kendall_tau(rng.normal(size=30), rng.normal(size=30))) < 0.35 for _ in range(500))
    assert hits >= 495


def test_training_fit_on_oracle_records(bench7):
    recs = warm_start_pool(build_dataset(bench7, 160, 0.2, seed=7))
    ens = train_ensemble(recs, TrainingConfig(), k=1, seed=0)
    assert evaluate_rank_quality(ens, recs).tau_ne >= 0.9
