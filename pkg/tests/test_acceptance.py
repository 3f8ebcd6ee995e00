"""Acceptance criteria 1-9. Each check prints one PASS/FAIL line.

Run standalone with ``python tests/test_acceptance.py`` or through pytest
(the lines are repeated in the terminal summary).
"""
from __future__ import annotations

import io
import sys
import time
from contextlib import redirect_stdout
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dtvit import rng as rngmod  # noqa: E402
from dtvit.checkpoint import load_checkpoint, save_checkpoint  # noqa: E402
from dtvit.cli import main as cli_main  # noqa: E402
from dtvit.datapipe import AugmentConfig, Record, balance  # noqa: E402
from dtvit.heads import combined_loss  # noqa: E402
from dtvit.metrics import ConfusionMatrix, binary_metrics  # noqa: E402
from dtvit.model import DTViT, preset  # noqa: E402
from dtvit.morph import MorphParams, erode_disk, fill_holes, head_mask, preprocess  # noqa: E402
from dtvit.optim import OptimState, adamw_step  # noqa: E402
from dtvit.phantom import CLASSES, generate  # noqa: E402
from dtvit.tensor import Tensor  # noqa: E402
from dtvit.trainer import ImageSet, TrainConfig, evaluate, history_to_csv, train  # noqa: E402

from gradcheck import check_model  # noqa: E402
from oracles import erode_naive, fill_bfs, random_blob_mask  # noqa: E402
from test_optim import oracle_step, random_case  # noqa: E402

RESULTS: dict[int, str] = {}

TINY_AUG = AugmentConfig(image_size=32)
WINDOW = MorphParams(window=(40.0, 80.0))


def record(n: int, ok: bool, text: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def phantoms(counts, seed) -> ImageSet:
    ims, pres, loc = [], [], []
    for kind, n in enumerate(counts):
        for i in range(n):
            ph = generate(kind, seed=rngmod.derive_seed(seed, kind, i))
            ims.append(preprocess(ph.scan, WINDOW))
            pres.append(ph.sample.presence)
            loc.append(-1 if ph.sample.location is None else ph.sample.location)
    return ImageSet(ims, pres, loc)


# 1 ------------------------------------------------------------ parameter count


def test_c1_parameter_count():
    buf = io.StringIO()
    t0 = time.perf_counter()
    with redirect_stdout(buf):
        code = cli_main(["inspect", "--preset", "large", "--reference-head", "1000"])
    dt = time.perf_counter() - t0
    total = int(buf.getvalue().strip().splitlines()[-1].split()[-1])
    record(1, code == 0 and total == 304_326_632 and dt < 1.0,
           f"inspect --preset large --reference-head 1000 -> {total:,} (expect 304,326,632), {dt:.3f} s (< 1 s)")


# 2 -------------------------------------------------------------- gradients


def test_c2_gradient_check():
    t0 = time.perf_counter()
    worst, where = 0.0, ""
    for seed in range(5):
        rs = np.random.default_rng(seed)
        m = DTViT(preset("tiny"), seed=seed, dtype=np.float64)
        # move off the symmetric init so every tensor has a non-trivial gradient
        for p in m.params.values():
            p.data = p.data + 0.1 * rs.standard_normal(p.shape)
        x = rs.standard_normal((4, 3, 32, 32))
        pres, loc = np.array([0, 1, 1, 1]), np.array([-1, 0, 1, 2])

        def loss():
            l1, l2 = m(x)
            return combined_loss(l1, pres, l2, loc).combined

        err, name = check_model(m, loss, rs)
        if err > worst:
            worst, where = err, name
    dt = time.perf_counter() - t0
    record(2, worst < 1e-4 and dt < 120,
           f"tiny float64, 5 seeds, every tensor: max rel err {worst:.2e} ({where}) (< 1e-4), {dt:.1f} s (< 120 s)")


# 3 ------------------------------------------------------- learning behaviour


@pytest.mark.slow
def test_c3_overfit_and_generalization():
    t0 = time.perf_counter()
    small = phantoms((16, 16, 16, 16), seed=1)
    m = DTViT(preset("tiny"), seed=0)
    cfg = TrainConfig(epochs=1000, max_steps=200, lr=1e-3, augment=False, batch_size_train=32, seed=0)
    res = train(m, small, None, cfg, TINY_AUG)
    fit = evaluate(m, small, TINY_AUG)
    ok_a = res.steps <= 200 and fit.acc_presence >= 0.95 and fit.acc_location >= 0.95

    train_set = phantoms((150, 150, 150, 150), seed=11)
    val_set = phantoms((19, 19, 19, 19), seed=13)
    test_set = phantoms((38, 38, 38, 38), seed=12)
    m = DTViT(preset("tiny"), seed=0)
    cfg = TrainConfig(epochs=30, lr=1e-3, augment=False, batch_size_train=8, schedule="cosine", seed=0)
    res_b = train(m, train_set, val_set, cfg, TINY_AUG)
    # the held-out test set is touched once, after model selection on val
    m.load_state_dict(res_b.best_state)
    ev = evaluate(m, test_set, TINY_AUG)
    ok_b = ev.acc_presence >= 0.90 and ev.acc_location >= 0.80
    dt = time.perf_counter() - t0
    record(3, ok_a and ok_b and dt < 600,
           f"(a) 64 phantoms, {res.steps} steps: train acc {fit.acc_presence:.3f}/{fit.acc_location:.3f} (>= 0.95); "
           f"(b) 600 train / 76 val -> 152 held out, best epoch {res_b.best_epoch}: test acc {ev.acc_presence:.3f}/{ev.acc_location:.3f} (>= 0.90/0.80); "
           f"{dt:.0f} s (< 600 s)")


# 4 ---------------------------------------------------------------- metrics


def test_c4_metrics_oracle():
    cm = ConfusionMatrix(np.array([[458, 1], [0, 807]]))
    q = binary_metrics(cm, positive=1, exact=True)
    f = binary_metrics(cm, positive=1)
    want = {"accuracy": Fraction(1265, 1266), "recall": Fraction(1), "precision": Fraction(807, 808),
            "specificity": Fraction(458, 459)}
    exact = all(getattr(q, k) == v for k, v in want.items())
    err = max(abs(getattr(f, k) - float(v)) for k, v in want.items())
    record(4, exact and err <= 1e-12,
           f"TN 458 FP 1 FN 0 TP 807: accuracy {q.accuracy} = {f.accuracy:.9f}, recall {q.recall}, "
           f"precision {q.precision}, specificity {q.specificity}; exact rationals, float err {err:.1e}")


# 5 ------------------------------------------------------------- morphology


def test_c5_morphology():
    rs = np.random.default_rng(2024)
    masks = [random_blob_mask(rs) for _ in range(100)]
    erode_ok = all(np.array_equal(erode_disk(m, r), erode_naive(m, r)) for r in (1, 2, 3) for m in masks)
    fill_ok = all(np.array_equal(fill_holes(m, c), fill_bfs(m, c)) for c in (4, 8) for m in masks)
    brace_removed, brain_kept = [], []
    for seed in range(100):
        ph = generate(CLASSES[seed % 4], seed=seed)
        out = preprocess(ph.scan)
        mask = head_mask(ph.scan)
        brace_removed.append(1 - (out[ph.brace_mask] > 0).sum() / ph.brace_mask.sum())
        brain_kept.append(mask[ph.brain_mask].mean())
    worst_brace, worst_brain = min(brace_removed), min(brain_kept)
    record(5, erode_ok and fill_ok and worst_brace >= 0.99 and worst_brain >= 0.95,
           f"erode r=1..3 x 100 masks {'exact' if erode_ok else 'MISMATCH'}; fill 4/8 x 100 masks "
           f"{'exact' if fill_ok else 'MISMATCH'}; 100 phantoms: brace removed >= {worst_brace:.4f} (>= 0.99), "
           f"brain kept >= {worst_brain:.4f} (>= 0.95)")


# 6 -------------------------------------------------------------- balancing


def test_c6_balance_table_counts():
    counts = {0: 6093, 1: 1656, 2: 495, -1: 4407}
    recs, i = [], 0
    for loc, n in counts.items():
        for _ in range(n):
            recs.append(Record(str(i), "", int(loc >= 0), loc, "p"))
            i += 1
    out = balance(recs)
    c = {k: sum(1 for r in out if r.location == k) for k in (-1, 0, 1, 2)}
    ich = c[0] + c[1] + c[2]
    record(6, c[0] == c[1] == c[2] == 6093 and ich == c[-1] == 18_279,
           f"6093/1656/495 ICH, 4407 Normal -> per location {c[0]}/{c[1]}/{c[2]}, ICH {ich:,}, Normal {c[-1]:,}")


# 7 -------------------------------------------------------------- optimizer


def test_c7_adamw_fidelity():
    worst = 0.0
    for seed in range(100):
        rs = np.random.default_rng(10_000 + seed)
        hyper, t0, w, g, m, v = random_case(rs)
        state = OptimState(**hyper, t=t0, m={"w": m.copy()}, v={"w": v.copy()})
        new = adamw_step({"w": w}, {"w": g}, state)["w"]
        ow, _, _ = oracle_step(w.tolist(), g.tolist(), m.tolist(), v.tolist(), t0 + 1, hyper["lr"],
                               hyper["beta1"], hyper["beta2"], hyper["eps"], hyper["weight_decay"])
        worst = max(worst, float(np.abs(new - np.array(ow)).max()))
    rs = np.random.default_rng(7)
    w = rs.standard_normal(50)
    lr, wd = 3e-4, 0.05
    decayed = adamw_step({"w": w}, {"w": np.zeros(50)}, OptimState(lr=lr, weight_decay=wd))["w"]
    exact = np.array_equal(decayed, w * (1 - lr * wd))
    record(7, worst <= 1e-12 and exact,
           f"100 random cases vs scalar oracle: max abs diff {worst:.1e} (<= 1e-12); zero gradient -> "
           f"w*(1 - lr*wd) {'exactly' if exact else 'NOT exactly'}")


# 8 ------------------------------------------------------ determinism and IO


def test_c8_determinism_and_checkpoint(tmp_path):
    data = phantoms((4, 4, 4, 4), seed=3)
    val = phantoms((2, 2, 2, 2), seed=4)
    cfg = TrainConfig(epochs=2, lr=1e-3, augment=True, batch_size_train=8, seed=5)
    runs = []
    for _ in range(2):
        m = DTViT(preset("tiny"), seed=5)
        runs.append((m, history_to_csv(train(m, data, val, cfg, TINY_AUG).history)))
    same_hist = runs[0][1] == runs[1][1]
    same_weights = all(np.array_equal(runs[0][0].params[k].data, runs[1][0].params[k].data) for k in runs[0][0].params)
    m = runs[0][0]
    save_checkpoint(m, tmp_path / "c.dtv")
    m2 = load_checkpoint(tmp_path / "c.dtv")
    probe = np.random.default_rng(0).standard_normal((3, 3, 32, 32)).astype(np.float32)
    a, b = m(probe), m2(probe)
    same_out = np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)
    record(8, same_hist and same_weights and same_out,
           f"two seeded runs: history {'bitwise equal' if same_hist else 'DIFFERS'}, weights "
           f"{'bitwise equal' if same_weights else 'DIFFER'}; save/load forward on probe "
           f"{'bitwise equal' if same_out else 'DIFFERS'}")


# 9 ---------------------------------------------------------- combined loss


def test_c9_combined_loss_contract():
    rs = np.random.default_rng(9)
    exact = True
    for _ in range(100):
        b = int(rs.integers(1, 9))
        pres = rs.integers(0, 2, b)
        loc = np.where(pres == 1, rs.integers(0, 3, b), -1)
        out = combined_loss(Tensor(rs.standard_normal((b, 2))), pres, Tensor(rs.standard_normal((b, 3))), loc)
        exact &= out.combined.item() == 0.5 * out.loss_1.item() + 0.5 * out.loss_2.item()
    m = DTViT(preset("tiny"), seed=1, dtype=np.float64)
    x = rs.standard_normal((4, 3, 32, 32))
    l1, l2 = m(x)
    combined_loss(l1, [0, 0, 0, 0], l2, [-1, -1, -1, -1]).combined.backward()
    head2 = [p for n, p in m.params.items() if n.startswith("head2.")]
    zero = all(p.grad is None or not p.grad.any() for p in head2)
    others = m.params["head1.fc2.weight"].grad is not None and m.params["head1.fc2.weight"].grad.any()
    record(9, exact and zero and others,
           f"combined == 0.5*loss_1 + 0.5*loss_2 {'bit-exact' if exact else 'NOT exact'} on 100 batches; "
           f"all-Normal batch: head-2 gradient {'exactly zero' if zero else 'NONZERO'}, head-1 gradient "
           f"{'nonzero' if others else 'ZERO'}")


if __name__ == "__main__":
    import tempfile

    failed = 0
    for n, fn in enumerate([test_c1_parameter_count, test_c2_gradient_check, test_c3_overfit_and_generalization,
                            test_c4_metrics_oracle, test_c5_morphology, test_c6_balance_table_counts,
                            test_c7_adamw_fidelity, test_c8_determinism_and_checkpoint,
                            test_c9_combined_loss_contract], 1):
        try:
            if n == 8:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
