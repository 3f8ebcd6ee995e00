import numpy as np
import pytest

from dtvit.model import DTViT, preset
from dtvit.trainer import TrainConfig, balanced_order, evaluate, history_to_csv, read_history, train

from conftest import TINY_AUG


def run(sets, **kw):
    cfg = TrainConfig(**{"epochs": 2, "lr": 1e-3, "augment": False, "batch_size_train": 8, **kw})
    m = DTViT(preset("tiny"), seed=cfg.seed)
    return m, train(m, sets[0], sets[1], cfg, TINY_AUG)


def test_batch_size_defaults():
    assert TrainConfig().train_batch == 32
    assert TrainConfig(augment=False).train_batch == 8
    assert TrainConfig(batch_size_train=5).train_batch == 5
    with pytest.raises(ValueError):
        TrainConfig(schedule="step")


def test_history_shape_and_csv(small_sets, tmp_path):
    _, res = run(small_sets)
    assert [r["epoch"] for r in res.history] == [1, 2]
    assert res.history[-1]["steps"] == res.steps == 2 * 3  # 16 -> balanced 24 samples, batch 8
    assert all(r["val_loss"] is not None for r in res.history)
    p = tmp_path / "h.csv"
    p.write_text(history_to_csv(res.history))
    assert read_history(p) == res.history


def test_same_seed_bitwise_identical(small_sets):
    _, a = run(small_sets, augment=True, batch_size_train=8)
    _, b = run(small_sets, augment=True, batch_size_train=8)
    assert history_to_csv(a.history) == history_to_csv(b.history)
    for k in a.best_state:
        assert np.array_equal(a.best_state[k], b.best_state[k])
    _, c = run(small_sets, augment=True, batch_size_train=8, seed=1)
    assert history_to_csv(c.history) != history_to_csv(a.history)


def test_zero_lr_leaves_val_metrics(small_sets):
    m0 = DTViT(preset("tiny"), seed=0)
    _, res = run(small_sets, lr=0.0)
    last = res.history[-1]
    for k, v in res.initial_val.items():
        assert last[k] == v
    for k, v in res.best_state.items():
        assert np.array_equal(v, m0.params[k].data)


def test_max_steps_and_cosine(small_sets):
    _, res = run(small_sets, max_steps=4, schedule="cosine")
    assert res.steps == 4
    assert res.history[-1]["lr"] == pytest.approx(0.0, abs=1e-12)


def test_best_epoch_by_val_loss(small_sets):
    _, res = run(small_sets, epochs=3)
    losses = [r["val_loss"] for r in res.history]
    assert res.best_epoch == 1 + int(np.argmin(losses))


def test_no_val_selects_last_and_empty_train_errors(small_sets):
    from dtvit.trainer import ImageSet

    m = DTViT(preset("tiny"))
    res = train(m, small_sets[0], None, TrainConfig(epochs=2, augment=False), TINY_AUG)
    assert res.best_epoch == 2 and res.initial_val is None
    with pytest.raises(ValueError, match="empty"):
        train(m, ImageSet([], [], []), None, TrainConfig(), TINY_AUG)


def test_balanced_order(small_sets):
    order = balanced_order(small_sets[0])
    loc = small_sets[0].location[order]
    assert (loc == -1).sum() == 12 and all((loc == k).sum() == 4 for k in range(3))


def test_untrained_model_is_near_chance():
    from conftest import phantom_set

    data = phantom_set(6, seed=3)  # 6 Normal / 18 ICH; balance presence by subsampling ICH
    idx = np.r_[np.flatnonzero(data.presence == 0), np.flatnonzero(data.presence == 1)[:6]]
    from dtvit.trainer import ImageSet

    bal = ImageSet([data.images[i] for i in idx], data.presence[idx], data.location[idx])
    accs = [evaluate(DTViT(preset("tiny"), seed=s), bal, TINY_AUG).acc_presence for s in range(8)]
    assert abs(np.mean(accs) - 0.5) <= 0.1
