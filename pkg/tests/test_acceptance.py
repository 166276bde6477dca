"""Acceptance criteria 1-9; each test prints one PASS/FAIL line.

Criteria 5-7 share one set of desk-scale runs (three seeds, every ablation
variant and the random-init variant), which takes most of this module's
runtime.
"""

import logging
import math
import time
from pathlib import Path

import numpy as np
import pytest

from dialret.cli import main
from dialret.config import load_config
from dialret.diagnostics import gradient_suite, toy_model_config
from dialret.evaluation import ScoreMatrix, recall_at_k
from dialret.experiments import Data, ablate, table_rows, format_table
from dialret.model import DialogRetriever
from dialret.numerics import Rng, Tensor
from dialret.training import in_batch_loss, run_stage
from dialret.types import Modality, RetrievalType

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.conf"
SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(n: int, title: str, passed: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if passed else 'FAIL'}: {title} -- {detail}")
        assert passed, f"criterion {n} ({title}): {detail}"

    return emit


@pytest.fixture(scope="module")
def desk():
    return load_config(DESK)


@pytest.fixture(scope="module")
def desk_data(desk):
    return Data.from_config(desk)


# ---------------------------------------------------------------- 1


def test_c1_gradient_suite(report):
    cfg = toy_model_config(d_model=16, n_layers=2, ctx_len=4, dom_len=2)
    result = gradient_suite(h=1e-4, tol=1e-3, batch_size=4, cfg=cfg)
    r = result.report
    report(1, "end-to-end gradient check", r.passed and result.seconds < 60,
           f"max rel err {r.max_rel_err:.2e} over {r.n_checked} coords in {result.n_params} tensors, "
           f"{result.seconds:.1f}s (limit 60s)")


# ---------------------------------------------------------------- 2


def test_c2_loss_symmetry(report):
    rng = Rng(2)
    worst = 0.0
    for n in (2, 3, 8, 32, 100):
        row = rng.normal(16)
        x = Tensor(np.tile(row, (n, 1)))
        worst = max(worst, abs(in_batch_loss(x, x).item() - math.log(n)))
    one = Tensor(rng.normal((1, 16)))
    single = in_batch_loss(one, one).item()
    report(2, "loss symmetry", worst <= 1e-9 and single == 0.0,
           f"max |loss - ln N| = {worst:.1e} for N in 2..100; N=1 loss = {single!r}")


# ---------------------------------------------------------------- 3


def test_c3_frozen_backbone(report, desk, desk_data, caplog):
    cfg = desk.replace(backbone_steps=50, stage1_steps=20, stage2_steps=100, eval_every=0)
    model = DialogRetriever(cfg.model_config(), seed=0)
    run_stage("backbone", desk_data.pairs, model, cfg.train_config("backbone"))
    run_stage("stage1", desk_data.train, model, cfg.train_config("stage1"))
    groups = model.groups()
    boundary = {n: p.data.copy() for g in ("backbone_text", "backbone_image") for n, p in groups[g].items()}
    moved = {n: p.data.copy() for n, p in groups["cpg"].items()}
    with caplog.at_level(logging.INFO, logger="dialret.training.stages"):
        result = run_stage("stage2", desk_data.train, model, cfg.train_config("stage2"))
    changed = [n for g in ("backbone_text", "backbone_image") for n, p in model.groups()[g].items()
               if not np.array_equal(p.data, boundary[n])]
    trained = any(not np.array_equal(p.data, moved[n]) for n, p in model.groups()["cpg"].items())
    logged = any("trainable fraction" in r.getMessage() for r in caplog.records)
    frac = result.trainable_fraction
    report(3, "frozen backbone in stage2", not changed and trained and logged and frac < 1,
           f"{len(boundary)} backbone tensors, {len(changed)} changed after {len(result.losses)} steps; "
           f"trainable fraction {100 * frac:.2f}% (logged: {logged})")


# ---------------------------------------------------------------- 4


def brute_force_recall(scores, positives, k):
    """Full sort of (-score, index) per row, then scan the first k entries."""
    hits = 0
    for row, pos in zip(scores.tolist(), positives.tolist()):
        order = [j for _, j in sorted((-s, j) for j, s in enumerate(row))]
        hits += pos in order[:k]
    return hits / len(positives)


def test_c4_recall_oracle(report):
    rng = Rng(4)
    mismatches, compared, tied_rows = 0, 0, 0
    for _ in range(1000):
        rows, cols = 1 + int(rng.integers(32)), 1 + int(rng.integers(128))
        scores = np.round(rng.normal((rows, cols)), 1)
        # plant ties: copy a random score onto the positive's slot in some rows
        pos = rng.integers(cols, rows)
        for r in range(rows):
            if rng.uniform() < 0.5:
                scores[r, pos[r]] = scores[r, int(rng.integers(cols))]
        tied_rows += int(sum(np.sum(scores[r] == scores[r, pos[r]]) > 1 for r in range(rows)))
        m = ScoreMatrix(scores, pos)
        for k in sorted({1, 5, 10, cols}):
            if k <= cols:
                compared += 1
                mismatches += recall_at_k(m, k) != brute_force_recall(scores, pos, k)
    report(4, "recall oracle", mismatches == 0,
           f"{compared} (matrix, k) comparisons, {mismatches} mismatches, {tied_rows} rows with a tied positive")


# ---------------------------------------------------------------- 5-7


@pytest.fixture(scope="module")
def desk_runs(desk, desk_data):
    start = time.perf_counter()
    results = ablate(desk, desk_data, seeds=SEEDS, include_random_init=True)
    results["_seconds"] = time.perf_counter() - start
    return results


def mean(results, label, field):
    return float(np.mean([getattr(r.report, field) for r in results[label]]))


@pytest.mark.slow
def test_c5_learning(report, desk_runs, desk_data):
    runs = desk_runs["full"]
    r1 = [r.report.r1 for r in runs]
    pipeline_s = sum(r.seconds for r in runs)
    ok = np.mean(r1) >= 0.50 and len(desk_data.train) >= 2000 and len(desk_data.test) >= 500
    report(5, "learning at desk scale", ok,
           f"test R@1 per seed {[round(v, 3) for v in r1]}, mean {np.mean(r1):.3f} (target >= 0.50, chance 0.01); "
           f"{len(desk_data.train)} train / {len(desk_data.test)} test dialogs; "
           f"3 full pipelines {pipeline_s / 60:.1f} min")


@pytest.mark.slow
def test_c6_ablation_ordering(report, desk_runs):
    r1 = {k: mean(desk_runs, k, "r1") for k in ("full", "-CPG", "-Domain", "-MoP")}
    ok = (r1["full"] > r1["-Domain"] and r1["full"] > r1["-MoP"] and r1["full"] > r1["-CPG"]
          and r1["-CPG"] < min(r1["-Domain"], r1["-MoP"]))
    table = {k: v for k, v in desk_runs.items() if not k.startswith("_")}
    print("\n" + format_table(table_rows(table), "variant"))
    report(6, "ablation ordering", ok, "mean R@1 " + ", ".join(f"{k} {v:.3f}" for k, v in r1.items()))


@pytest.mark.slow
def test_c7_initialization_ordering(report, desk_runs):
    full = [r.report.sum_metric for r in desk_runs["full"]]
    rand = [r.report.sum_metric for r in desk_runs["random-init"]]
    report(7, "stage1 init beats random init", np.mean(full) > np.mean(rand),
           f"mean Sum {np.mean(full):.1f} (stage1 init) vs {np.mean(rand):.1f} (random); "
           f"per seed {[round(v, 1) for v in full]} vs {[round(v, 1) for v in rand]}")


# ---------------------------------------------------------------- 8


def test_c8_mop_isolation(report, desk, desk_data):
    cfg = desk.replace(backbone_steps=20, stage2_steps=200, batch_size=16)
    tv = RetrievalType(Modality.TEXT, Modality.IMAGE)
    only_tv = [d for d in desk_data.train if d.retrieval_type == tv]
    model = DialogRetriever(cfg.model_config(), seed=0)
    run_stage("backbone", desk_data.pairs, model, cfg.train_config("backbone"))
    before = {n: p.data.copy() for n, p in model.mop.named_parameters()}
    result = run_stage("stage2", only_tv, model, cfg.train_config("stage2"))
    chosen = set(model.mop.expert_parameters(tv))
    others_changed = [n for n, p in model.mop.named_parameters()
                      if n not in chosen and not np.array_equal(p.data, before[n])]
    tv_moved = any(not np.array_equal(p.data, before[n]) for n, p in model.mop.named_parameters()
                   if n in chosen)
    report(8, "MoP isolation", not others_changed and tv_moved,
           f"{len(result.losses)} (t,v) steps; {len(before) - len(chosen)} other-expert tensors, "
           f"{len(others_changed)} changed; (t,v) expert moved: {tv_moved}")


# ---------------------------------------------------------------- 9


def test_c9_determinism(report, tmp_path):
    argv = ["train", "--config", str(DESK), "--backbone-steps", "60", "--stage1-steps", "40",
            "--stage2-steps", "80", "--eval-every", "40", "--dialogs-per-topic", "100"]
    paths = [tmp_path / f"metrics{i}.jsonl" for i in range(2)]
    codes = [main(argv + ["--metrics", str(p)]) for p in paths]
    a, b = (p.read_bytes() for p in paths)
    report(9, "determinism", codes == [0, 0] and a == b and len(a) > 0,
           f"{len(a.splitlines())} records, {len(a)} bytes, identical: {a == b}")
