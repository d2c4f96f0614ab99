"""Three-step alternating optimization with per-group freezing.

Each iteration draws one source and one target minibatch and runs:

1. F and both regressor heads minimize the two-head source MSE.
2. The heads (F frozen) minimize source MSE + w_s * soft-similarity on
   target, pushing the heads apart on target samples.
3. (a) D ascends the adversarial loss on mixed source-/target-similar
   batches; (b) F descends w_adv * L_adv - w_s * soft-similarity.
"""
from __future__ import annotations

import csv
import io
import json
import math
import zipfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import losses
from .augment import DEFAULT_LAMBDA, mix_domains
from .dataset import DomainDataset
from .exceptions import CheckpointError, ConfigError, ContractError, NumericError
from .models import (
    GROUP_NAMES,
    REGRESSOR_GROUPS,
    ModelBundle,
    ModelConfig,
    build_models,
    extract_features,
    forward_discriminator,
    forward_regressor,
)

CHECKPOINT_FORMAT_VERSION = 1
HISTORY_COLUMNS = ("iteration", "L_r", "L_s", "L_adv", "target_mse", "target_mae")


@dataclass
class TrainConfig:
    lam: float = DEFAULT_LAMBDA
    lr_main: float = 1e-3
    lr_discriminator: float = 1e-3
    batch_size: int = 128
    iterations: int = 3000
    seed: int = 0
    eval_every: int = 500
    w_s: float = 1.0
    w_adv: float = 1.0
    optimizer: str = "adam"
    momentum: float = 0.95

    def __post_init__(self):
        if not 0.5 < self.lam <= 1.0:
            raise ConfigError(f"lam must be in (0.5, 1], got {self.lam}")
        if self.lr_main < 0 or self.lr_discriminator < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.batch_size < 1 or self.eval_every < 1 or self.iterations < 0:
            raise ConfigError("batch_size and eval_every must be >= 1, iterations >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class TrainingPlan:
    """Which parts of the three-step loop run; baselines are plans too."""

    step2: bool = True
    discrepancy_in_step3: bool = True
    adversarial: bool = True
    mix: bool = True
    similarity: str = "soft"  # "soft" or "l1"


ABRNET_PLAN = TrainingPlan()


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)  # {"iteration", "checksums"}

    def column(self, name):
        return [r.get(name) for r in self.records]

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            w.writerow(["" if r.get(c) is None else repr(r[c]) for c in HISTORY_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        records = []
        for row in rows:
            rec = {}
            for c in HISTORY_COLUMNS:
                v = row.get(c, "")
                rec[c] = None if v == "" else (int(v) if c == "iteration" else float(v))
            records.append(rec)
        return cls(records)

    def to_dict(self):
        return {"records": self.records, "checkpoints": self.checkpoints}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d.get("records", [])), list(d.get("checkpoints", [])))


def make_optimizers(bundle: ModelBundle, config: TrainConfig):
    """One optimizer per parameter group so frozen groups keep their state."""
    opts = {}
    for name in GROUP_NAMES:
        params = list(bundle.group(name).parameters())
        lr = config.lr_discriminator if name == "D" else config.lr_main
        if config.optimizer == "adam":
            opts[name] = torch.optim.Adam(params, lr=lr)
        else:
            opts[name] = torch.optim.SGD(params, lr=lr, momentum=config.momentum)
    return opts


@contextmanager
def trainable(bundle: ModelBundle, groups):
    """Enable gradients only for ``groups`` inside the block."""
    saved = {p: p.requires_grad for p in bundle.parameters()}
    for name in GROUP_NAMES:
        flag = name in groups
        for p in bundle.group(name).parameters():
            p.requires_grad_(flag)
    try:
        yield
    finally:
        for p, flag in saved.items():
            p.requires_grad_(flag)


def _update(bundle, opts, groups, loss):
    bundle.zero_grad(set_to_none=True)
    loss.backward()
    for name in groups:
        opts[name].step()


def _similarity(bundle, out_hat, out_tilde, kind):
    if kind == "soft":
        # looked up on the module so tests can intercept calls
        return losses.soft_similarity(out_hat.h, out_tilde.h)
    if kind == "l1":
        ext = bundle.extents
        return -((out_hat.l - out_tilde.l) / ext).abs().mean()
    raise ConfigError(f"unknown similarity {kind!r}")


def _as_tensor(x):
    return x if torch.is_tensor(x) else torch.from_numpy(np.asarray(x))


def step1(bundle, opts, xs, ys):
    """Supervised update of F and both heads on a labeled source batch."""
    if ys is None:
        raise ContractError("step1 needs source labels")
    xs, ys = _as_tensor(xs), _as_tensor(ys).float()
    groups = ("F",) + REGRESSOR_GROUPS
    with trainable(bundle, groups):
        f = extract_features(bundle, xs)
        l_r = losses.regression_loss(forward_regressor(bundle, "hat", f).l,
                                     forward_regressor(bundle, "tilde", f).l, ys)
        _update(bundle, opts, groups, l_r)
    return {"L_r": l_r.item()}


def step2(bundle, opts, xs, ys, xt, w_s=1.0, similarity="soft"):
    """Heads only: source MSE plus w_s * similarity of the heads on target."""
    if ys is None:
        raise ContractError("step2 needs source labels")
    xs, ys, xt = _as_tensor(xs), _as_tensor(ys).float(), _as_tensor(xt)
    with torch.no_grad():
        f_s = extract_features(bundle, xs)
        f_t = extract_features(bundle, xt)
    with trainable(bundle, REGRESSOR_GROUPS):
        l_r = losses.regression_loss(forward_regressor(bundle, "hat", f_s).l,
                                     forward_regressor(bundle, "tilde", f_s).l, ys)
        l_s = _similarity(bundle, forward_regressor(bundle, "hat", f_t),
                          forward_regressor(bundle, "tilde", f_t), similarity)
        _update(bundle, opts, REGRESSOR_GROUPS, l_r + w_s * l_s)
    return {"L_r2": l_r.item(), "L_s": l_s.item()}


def step3(bundle, opts, xs, xt, rng, lam=DEFAULT_LAMBDA, w_s=1.0, w_adv=1.0, plan=ABRNET_PLAN):
    """Discriminator update, then feature-generator update; heads stay frozen."""
    xs, xt = _as_tensor(xs), _as_tensor(xt)
    # a zero weight drops the term entirely, so no zero-gradient optimizer step happens
    use_adv = plan.adversarial and w_adv != 0
    use_sim = plan.discrepancy_in_step3 and w_s != 0
    out = {}
    if not use_adv and not use_sim:
        return out
    n = min(len(xs), len(xt))
    with trainable(bundle, ("F",)):
        parts = []
        if use_adv:
            if plan.mix:
                pair = mix_domains(xs, xt, lam, rng)
                parts += [pair.x_source_similar, pair.x_target_similar]
            else:
                parts += [xs[:n], xt[:n]]
        if use_sim:
            parts.append(xt)
        f_all = extract_features(bundle, torch.cat(parts))
        sizes = [len(p) for p in parts]
        chunks = list(torch.split(f_all, sizes))
        loss_f = 0.0
        if use_adv:
            f_ss, f_ts = chunks[0], chunks[1]
            c_ss = bundle.normalize_coords(forward_regressor(bundle, "hat", f_ss).l)
            c_ts = bundle.normalize_coords(forward_regressor(bundle, "tilde", f_ts).l)
            with trainable(bundle, ("D",)):
                l_adv_d = losses.adversarial_loss(
                    forward_discriminator(bundle, f_ss.detach(), c_ss.detach()),
                    forward_discriminator(bundle, f_ts.detach(), c_ts.detach()),
                )
                _update(bundle, opts, ("D",), -l_adv_d)
            out["L_adv"] = l_adv_d.item()
            l_adv = losses.adversarial_loss(
                forward_discriminator(bundle, f_ss, c_ss),
                forward_discriminator(bundle, f_ts, c_ts),
            )
            loss_f = loss_f + w_adv * l_adv
        if use_sim:
            f_t = chunks[-1]
            l_s = _similarity(bundle, forward_regressor(bundle, "hat", f_t),
                              forward_regressor(bundle, "tilde", f_t), plan.similarity)
            loss_f = loss_f - w_s * l_s
            out["L_s3"] = l_s.item()
        _update(bundle, opts, ("F",), loss_f)
    return out


class BatchSampler:
    """Endless shuffled minibatches; reshuffles once per pass."""

    def __init__(self, n, batch_size, rng):
        if n < 1:
            raise ContractError("cannot sample from an empty dataset")
        self.n, self.batch_size, self.rng = n, min(batch_size, n), rng
        self._perm, self._pos = rng.permutation(n), 0

    def next(self):
        if self._pos + self.batch_size > self.n:
            self._perm, self._pos = self.rng.permutation(self.n), 0
        idx = self._perm[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


def _check_finite(losses_, step, iteration):
    for k, v in losses_.items():
        if not math.isfinite(v):
            raise NumericError(step, iteration, k, v)


def train(config: TrainConfig, source: DomainDataset, target: DomainDataset, model_config: ModelConfig = None,
          plan: TrainingPlan = ABRNET_PLAN, eval_target: DomainDataset = None, step_hook=None, bundle=None):
    """Run ``config.iterations`` rounds of steps 1, 2, 3.

    ``target`` is only read through its inputs. ``eval_target`` (labeled) is
    scored every ``eval_every`` iterations for the history. ``step_hook``, if
    given, is called as ``hook(step_name, iteration, bundle, phase)`` with
    phase "before"/"after" around every step.
    """
    if len(source) == 0 or len(target) == 0:
        raise ContractError("source and target must be non-empty")
    if model_config is None:
        model_config = ModelConfig(window_length=source.inputs.shape[1], signal_dim=source.inputs.shape[2],
                                   floor_extents=source.extents)
    if tuple(source.inputs.shape[1:]) != tuple(model_config.input_shape) or \
            tuple(target.inputs.shape[1:]) != tuple(model_config.input_shape):
        raise ContractError("dataset input shape does not match the model config")
    if bundle is None:
        bundle = build_models(model_config, config.seed)
    opts = make_optimizers(bundle, config)
    history = TrainHistory()
    xs_all, ys_all = torch.from_numpy(source.inputs), torch.from_numpy(source.labels).float()
    xt_all = torch.from_numpy(target.inputs)
    src_sampler = BatchSampler(len(source), config.batch_size, np.random.default_rng([config.seed, 1]))
    tgt_sampler = BatchSampler(len(target), config.batch_size, np.random.default_rng([config.seed, 2]))
    mix_rng = np.random.default_rng([config.seed, 3])
    hook = step_hook or (lambda *a: None)

    def run(name, it, fn, *args, **kw):
        hook(name, it, bundle, "before")
        res = fn(*args, **kw)
        _check_finite(res, name, it)
        hook(name, it, bundle, "after")
        return res

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        for it in range(1, config.iterations + 1):
            i_s, i_t = src_sampler.next(), tgt_sampler.next()
            xs, ys, xt = xs_all[i_s], ys_all[i_s], xt_all[i_t]
            rec = {"iteration": it}
            rec.update(run("step1", it, step1, bundle, opts, xs, ys))
            if plan.step2:
                rec.update(run("step2", it, step2, bundle, opts, xs, ys, xt, config.w_s, plan.similarity))
            rec.update(run("step3", it, step3, bundle, opts, xs, xt, mix_rng, config.lam,
                           config.w_s, config.w_adv, plan))
            row = {"iteration": it, "L_r": rec["L_r"], "L_s": rec.get("L_s", rec.get("L_s3")),
                   "L_adv": rec.get("L_adv"), "target_mse": None, "target_mae": None}
            if it % config.eval_every == 0 or it == config.iterations:
                if eval_target is not None:
                    from .evaluation import evaluate
                    row["target_mse"], row["target_mae"] = evaluate(bundle, eval_target)
                history.checkpoints.append({"iteration": it, "checksums": bundle.checksums()})
            history.records.append(row)
    bundle.eval()
    return bundle, history


def save_checkpoint(bundle: ModelBundle, history: TrainHistory, path):
    """Zip archive: meta.json (version, config, history) + one .npy per parameter."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": bundle.config.to_dict(),
        "history": (history or TrainHistory()).to_dict(),
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("meta.json", json.dumps(meta))
        for gname in GROUP_NAMES:
            for pname, p in bundle.group(gname).named_parameters():
                buf = io.BytesIO()
                np.save(buf, p.detach().cpu().numpy(), allow_pickle=False)
                zf.writestr(f"params/{gname}/{pname}.npy", buf.getvalue())


def load_checkpoint(path, expected_config: ModelConfig = None):
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
                raise CheckpointError(f"{path}: checkpoint format {meta.get('format_version')} "
                                      f"!= {CHECKPOINT_FORMAT_VERSION}")
            cfg = ModelConfig.from_dict(meta["model_config"])
            if expected_config is not None and cfg.to_dict() != expected_config.to_dict():
                raise ConfigError(f"{path}: checkpoint model config differs from the expected one")
            bundle = build_models(cfg, 0)
            with torch.no_grad():
                for gname in GROUP_NAMES:
                    for pname, p in bundle.group(gname).named_parameters():
                        arr = np.load(io.BytesIO(zf.read(f"params/{gname}/{pname}.npy")), allow_pickle=False)
                        if arr.shape != tuple(p.shape):
                            raise CheckpointError(f"{path}: {gname}/{pname} has shape {arr.shape}")
                        p.copy_(torch.from_numpy(arr))
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError, OSError) as exc:
        if isinstance(exc, (ConfigError, CheckpointError)):
            raise
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    return bundle, TrainHistory.from_dict(meta.get("history", {}))
