"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line; a summary is
repeated at the end of the session. Criteria 6 and 7 share one set of
end-to-end training runs (about 20 minutes on one CPU core).
"""
import json
import time

import numpy as np
import pytest
import torch

from abrnet import losses
from abrnet.augment import convex_mix, mix_domains
from abrnet.baselines import train_method
from abrnet.cli import main as cli_main
from abrnet.datagen import EnvironmentSpec, make_domain_pair
from abrnet.evaluation import evaluate, grid_error_map, regression_metrics
from abrnet.models import GROUP_NAMES, REGRESSOR_GROUPS, ModelConfig, build_models, extract_features, \
    forward_regressor
from abrnet.trainer import TrainConfig, make_optimizers, step1, step2, step3, train

from oracles import adversarial_loss_ref, central_difference, grid_groupby_ref, regression_loss_ref, rel_err, \
    soft_similarity_ref

RESULTS = {}
E2E_SEEDS = (0, 1, 2)
E2E_MODEL = ModelConfig(feature_dim=128)
E2E_TRAIN = TrainConfig(iterations=3000, eval_every=3000)


def verdict(n, ok, detail):
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[n] = line
    print("\n" + line, flush=True)
    assert ok, line


@pytest.fixture(scope="session")
def default_pair():
    return make_domain_pair(EnvironmentSpec(), 0)


def test_1_loss_oracles():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst, sym_bad, range_bad = 0.0, 0, 0
    for _ in range(1000):
        b, d = rng.integers(1, 9), rng.integers(1, 12)
        a, c = rng.random((b, d)), rng.random((b, d))
        s = losses.soft_similarity(torch.from_numpy(a), torch.from_numpy(c)).item()
        s_rev = losses.soft_similarity(torch.from_numpy(c), torch.from_numpy(a)).item()
        worst = max(worst, rel_err(s, soft_similarity_ref(a.tolist(), c.tolist())))
        sym_bad += s != pytest.approx(s_rev, rel=1e-12, abs=0)
        range_bad += not (0.0 <= s <= 1.0)

        y = rng.normal(0, 5, (b, 2))
        ph, pt = y + rng.normal(0, 1, y.shape), y + rng.normal(0, 1, y.shape)
        r = losses.regression_loss(*(torch.from_numpy(v) for v in (ph, pt, y))).item()
        worst = max(worst, rel_err(r, regression_loss_ref(ph.tolist(), pt.tolist(), y.tolist())))

        ds, dt = rng.uniform(1e-6, 1 - 1e-6, b), rng.uniform(1e-6, 1 - 1e-6, rng.integers(1, 9))
        v = losses.adversarial_loss(torch.from_numpy(ds), torch.from_numpy(dt)).item()
        worst = max(worst, rel_err(v, adversarial_loss_ref(ds.tolist(), dt.tolist())))
    dt_s = time.perf_counter() - t0
    ok = worst <= 1e-6 and sym_bad == 0 and range_bad == 0 and dt_s < 10
    verdict(1, ok, f"max rel err {worst:.2e} (tol 1e-6), symmetry violations {sym_bad}, "
                   f"range violations {range_bad}, {dt_s:.1f}s (< 10s)")


def _autograd(fn, x):
    t = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    fn(t).backward()
    return t.grad.numpy()


def _grad_rel(g, fd):
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))


def test_2_gradient_checks():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        b, d = rng.integers(1, 6), rng.integers(2, 10)
        a, c = rng.uniform(0.05, 0.95, (b, d)), rng.uniform(0.05, 0.95, (b, d))
        ct = torch.from_numpy(c)
        g = _autograd(lambda t: losses.soft_similarity(t, ct), a)
        fd = central_difference(lambda v: soft_similarity_ref(v.tolist(), c.tolist()), a, 1e-5)
        worst = max(worst, _grad_rel(g, fd))

        ds, dt = rng.uniform(0.05, 0.95, b), rng.uniform(0.05, 0.95, rng.integers(1, 6))
        dtt, dst = torch.from_numpy(dt), torch.from_numpy(ds)
        g = _autograd(lambda t: losses.adversarial_loss(t, dtt), ds)
        fd = central_difference(lambda v: adversarial_loss_ref(v.tolist(), dt.tolist()), ds, 1e-5)
        worst = max(worst, _grad_rel(g, fd))
        g = _autograd(lambda t: losses.adversarial_loss(dst, t), dt)
        fd = central_difference(lambda v: adversarial_loss_ref(ds.tolist(), v.tolist()), dt, 1e-5)
        worst = max(worst, _grad_rel(g, fd))
    dt_s = time.perf_counter() - t0
    verdict(2, worst <= 1e-4 and dt_s < 30, f"max rel grad err {worst:.2e} (tol 1e-4), {dt_s:.1f}s (< 30s)")


def test_3_mixing_invariants():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    sum_err, ident_err, swap_err = 0.0, 0.0, 0.0
    for _ in range(1000):
        n, shape = rng.integers(1, 16), (10, 63)
        xs, xt = rng.normal(size=(n, *shape)).astype(np.float32), rng.normal(size=(n, *shape)).astype(np.float32)
        lam = 1.0 - rng.uniform(0.0, 0.5)
        pair = mix_domains(xs, xt, lam, np.random.default_rng(int(rng.integers(2**31))))
        j = np.array([p[1] for p in pair.pairing])
        total = pair.x_source_similar.astype(np.float64) + pair.x_target_similar
        sum_err = max(sum_err, float(np.abs(total - (xs.astype(np.float64) + xt[j])).max()))
        one = mix_domains(xs, xt, 1.0, np.random.default_rng(0))
        j1 = np.array([p[1] for p in one.pairing])
        ident_err = max(ident_err, float(np.abs(one.x_source_similar - xs).max()),
                        float(np.abs(one.x_target_similar - xt[j1]).max()))
        (a_s, a_t), (b_s, b_t) = convex_mix(xs, xt, lam), convex_mix(xs, xt, 1.0 - lam)
        swap_err = max(swap_err, float(np.abs(a_s - b_t).max()), float(np.abs(a_t - b_s).max()))
    dt_s = time.perf_counter() - t0
    ok = sum_err <= 1e-6 and ident_err == 0 and swap_err <= 1e-6 and dt_s < 5
    verdict(3, ok, f"sum err {sum_err:.1e}, lambda=1 identity err {ident_err:.1e}, swap err {swap_err:.1e} "
                   f"(tol 1e-6), {dt_s:.1f}s (< 5s)")


ALLOWED = {"step1": {"F"} | set(REGRESSOR_GROUPS), "step2": set(REGRESSOR_GROUPS), "step3": {"F", "D"}}


def test_4_freeze_contracts(default_pair):
    t0 = time.perf_counter()
    violations, touched, before = [], {s: set() for s in ALLOWED}, {}

    def hook(step, it, bundle, phase):
        if phase == "before":
            before["c"] = bundle.checksums()
            return
        for g, v in bundle.checksums().items():
            if v != before["c"][g]:
                touched[step].add(g)
                if g not in ALLOWED[step]:
                    violations.append((step, it, g))

    train(TrainConfig(iterations=50, eval_every=50), default_pair.source, default_pair.target, ModelConfig(),
          step_hook=hook)
    dt_s = time.perf_counter() - t0
    # the hook must actually see the allowed groups move, otherwise it proves nothing
    live = all(touched[s] == ALLOWED[s] for s in ALLOWED)
    verdict(4, not violations and live and dt_s < 120,
            f"{len(violations)} violations over 50 iterations, groups moved per step "
            f"{ {k: sorted(v) for k, v in touched.items()} }, {dt_s:.1f}s (< 120s)")


def _ls(bundle, xt):
    with torch.no_grad():
        f = extract_features(bundle, xt)
        return losses.soft_similarity(forward_regressor(bundle, "hat", f).h,
                                      forward_regressor(bundle, "tilde", f).h).item()


def test_5_discrepancy_dynamics(default_pair):
    t0 = time.perf_counter()
    mc = ModelConfig(feature_dim=64, condition_dim=32)
    xs = torch.from_numpy(default_pair.source.inputs[:128])
    ys = torch.from_numpy(default_pair.source.labels[:128]).float()
    xt = torch.from_numpy(default_pair.target.inputs[:128])
    down_fail, up_fail, detail = 0, 0, []
    for seed in range(5):
        b = build_models(mc, seed)
        opts = make_optimizers(b, TrainConfig())
        # source fit first: both phases are meant to act on a trained regressor pair
        for _ in range(200):
            step1(b, opts, xs, ys)
        frozen_f = b.checksum("F")
        start = _ls(b, xt)
        for _ in range(50):
            step2(b, opts, xs, ys, xt)
        mid = _ls(b, xt)
        down_fail += not (mid < start) or b.checksum("F") != frozen_f
        frozen = {g: b.checksum(g) for g in REGRESSOR_GROUPS + ("D",)}
        for _ in range(50):
            step3(b, opts, xs, xt, np.random.default_rng(seed), w_adv=0.0)
        end = _ls(b, xt)
        up_fail += not (end >= mid) or any(b.checksum(g) != v for g, v in frozen.items())
        detail.append(f"{start:.4f}->{mid:.4f}->{end:.4f}")
    dt_s = time.perf_counter() - t0
    verdict(5, down_fail <= 1 and up_fail <= 1 and dt_s < 120,
            f"step2 failures {down_fail}/5, F-update failures {up_fail}/5 (<= 1 each); L_s {', '.join(detail)}; "
            f"{dt_s:.1f}s (< 120s)")


class E2E:
    """Lazily trained (method, seed) cells on the default shift, shared across criteria."""

    def __init__(self, pair):
        self.pair, self.cells, self.seconds = pair, {}, {}

    def get(self, method, seed):
        key = (method, seed)
        if key not in self.cells:
            t0 = time.perf_counter()
            b, _ = train_method(method, TrainConfig(**{**E2E_TRAIN.to_dict(), "seed": seed}), self.pair.source,
                                self.pair.target, E2E_MODEL)
            self.cells[key] = {"target": evaluate(b, self.pair.target.evaluation_view())[0],
                               "source_test": evaluate(b, self.pair.source_test)[0]}
            self.seconds[key] = time.perf_counter() - t0
        return self.cells[key]

    def mean(self, method, field="target"):
        return float(np.mean([self.get(method, s)[field] for s in E2E_SEEDS]))

    def time(self, *methods):
        return sum(self.seconds[(m, s)] for m in methods for s in E2E_SEEDS)


@pytest.fixture(scope="session")
def e2e(default_pair):
    return E2E(default_pair)


def test_6_end_to_end_adaptation(e2e):
    so, ab = e2e.mean("source_only"), e2e.mean("abrnet")
    degradation = so / e2e.mean("source_only", "source_test")
    minutes = e2e.time("source_only", "abrnet") / 60
    per_seed = ", ".join(f"seed {s}: {e2e.get('source_only', s)['target']:.4f} vs {e2e.get('abrnet', s)['target']:.4f}"
                         for s in E2E_SEEDS)
    ok = degradation >= 1.5 and ab <= 0.9 * so and minutes < 15
    verdict(6, ok, f"source-only degradation {degradation:.1f}x (>= 1.5x); target MSE abrnet {ab:.4f} vs "
                   f"source_only {so:.4f}, ratio {ab / so:.3f} (<= 0.9) [{per_seed}]; {minutes:.1f} min (< 15)")


def test_7_ablation_direction(e2e):
    ab, wo_cbrd, wo_dadg = e2e.mean("abrnet"), e2e.mean("abrnet_wo_cbrd"), e2e.mean("abrnet_wo_dadg")
    minutes = e2e.time("abrnet", "abrnet_wo_cbrd", "abrnet_wo_dadg") / 60
    ordering = "CBRD > DADG" if wo_cbrd >= wo_dadg else "DADG > CBRD"
    print(f"\n  mean target MSE over seeds {E2E_SEEDS}: abrnet {ab:.4f}, wo_cbrd {wo_cbrd:.4f}, "
          f"wo_dadg {wo_dadg:.4f} (contribution ordering observed: {ordering}, not asserted)")
    ok = wo_cbrd >= ab and wo_dadg >= ab and minutes < 30
    verdict(7, ok, f"wo_cbrd {wo_cbrd:.4f} >= abrnet {ab:.4f}: {wo_cbrd >= ab}; wo_dadg {wo_dadg:.4f} >= "
                   f"abrnet: {wo_dadg >= ab}; {minutes:.1f} min (< 30)")


def test_8_grid_map_oracle():
    rng = np.random.default_rng(8)
    t0 = time.perf_counter()
    y = rng.uniform(0, 1, (10_000, 2)) * (12.0, 8.0)
    p = y + rng.normal(0, 0.8, y.shape)
    m = grid_error_map(p, y, (12.0, 8.0), 0.5)
    ref_mse, ref_cnt = grid_groupby_ref(p, y, (12.0, 8.0), 0.5)
    exact = np.array_equal(m.counts, ref_cnt) and np.array_equal(m.mse, ref_mse, equal_nan=True)
    gap = abs(m.weighted_mean() - regression_metrics(p, y)[0])
    dt_s = time.perf_counter() - t0
    verdict(8, exact and gap <= 1e-9 and dt_s < 5,
            f"exact match with group-by oracle: {exact}; |weighted cell mean - global MSE| {gap:.1e} (<= 1e-9); "
            f"{dt_s:.1f}s (< 5s)")


def test_9_determinism(tmp_path):
    cfg = {
        "seeds": [0],
        "model": {"feature_dim": 32, "condition_dim": 16, "discriminator_hidden": 16},
        "train": {"iterations": 60, "batch_size": 64, "eval_every": 20},
        "data": {"seed": 0, "spec": {"n_windows": 2000, "n_test_windows": 500}},
        "method": {"name": "abrnet"},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    blobs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        rc = cli_main(["train", str(path), "--seed", "11", "--output-dir", str(out)])
        blobs.append((rc, (out / "runs/abrnet/seed11/history.csv").read_bytes()))
    same = blobs[0] == blobs[1] and blobs[0][0] == 0
    verdict(9, same, f"two serial runs with identical config and seed give bitwise-identical history CSVs: {same}")
