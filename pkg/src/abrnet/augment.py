"""Source-similar / target-similar intermediate domains by fixed-ratio mixing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import ConfigError, ContractError

DEFAULT_LAMBDA = 0.7


@dataclass
class MixedBatchPair:
    x_source_similar: object
    x_target_similar: object
    pairing: list  # (source index, target index)


def convex_mix(x_s, x_t, lam):
    """Return (lam*x_s + (1-lam)*x_t, (1-lam)*x_s + lam*x_t) for aligned batches.

    No range check on ``lam``; works on numpy arrays and torch tensors.
    """
    mu = 1.0 - lam
    return lam * x_s + mu * x_t, mu * x_s + lam * x_t


def mix_domains(x_s, x_t, lam=DEFAULT_LAMBDA, rng=None) -> MixedBatchPair:
    """Mix a source batch with a randomly permuted target batch.

    Batches of unequal size are truncated to the shorter one. ``lam`` must lie
    in (0.5, 1] so the first output stays source-dominated.
    """
    if not 0.5 < lam <= 1.0:
        raise ConfigError(f"lambda must be in (0.5, 1], got {lam}")
    if tuple(x_s.shape[1:]) != tuple(x_t.shape[1:]):
        raise ContractError(f"sample shapes differ: {tuple(x_s.shape[1:])} vs {tuple(x_t.shape[1:])}")
    n = min(len(x_s), len(x_t))
    if n < 1:
        raise ContractError("empty batch")
    if rng is None:
        rng = np.random.default_rng()
    perm = rng.permutation(n)
    idx = torch.as_tensor(perm, device=x_t.device) if torch.is_tensor(x_t) else perm
    xs, xt = convex_mix(x_s[:n], x_t[:n][idx], lam)
    return MixedBatchPair(xs, xt, [(i, int(j)) for i, j in enumerate(perm)])

