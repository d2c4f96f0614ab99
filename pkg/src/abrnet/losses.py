"""Training objectives: soft-similarity, two-head regression loss, adversarial loss."""
import torch

from .exceptions import ContractError

SIMILARITY_EPS = 1e-8
PROB_EPS = 1e-7


def _check_same_shape(*tensors):
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ContractError(f"shape mismatch: {tuple(shape)} vs {tuple(t.shape)}")


def soft_similarity(h_hat, h_tilde, eps=SIMILARITY_EPS):
    """Batch mean of <a, b> / sum(a + b - a*b) over the last axis.

    Both inputs are [B, d] with entries in [0, 1]. The per-sample denominator
    is clamped to ``eps`` so the all-zero vector yields 0 rather than NaN.
    """
    _check_same_shape(h_hat, h_tilde)
    if h_hat.dim() != 2 or h_hat.shape[0] < 1:
        raise ContractError(f"expected a non-empty [B, d] batch, got {tuple(h_hat.shape)}")
    inter = (h_hat * h_tilde).sum(dim=1)
    union = (h_hat + h_tilde - h_hat * h_tilde).sum(dim=1).clamp_min(eps)
    return (inter / union).mean()


def regression_loss(pred_hat, pred_tilde, labels):
    """Sum of the two heads' MSE against the same labels.

    MSE averages over both batch and coordinate axes.
    """
    _check_same_shape(pred_hat, pred_tilde, labels)
    return ((pred_hat - labels) ** 2).mean() + ((pred_tilde - labels) ** 2).mean()


def adversarial_loss(d_source_similar, d_target_similar):
    """mean log D(source-similar) + mean log(1 - D(target-similar)).

    Always <= 0. The discriminator ascends this value, the generator descends it.
    """
    for name, p in (("d_source_similar", d_source_similar), ("d_target_similar", d_target_similar)):
        if p.numel() == 0:
            raise ContractError(f"{name} is empty")
        if not bool(((p > 0) & (p < 1)).all()):
            raise ContractError(f"{name} has probabilities outside (0, 1)")
    return torch.log(d_source_similar).mean() + torch.log1p(-d_target_similar).mean()


def clamp_probability(p, eps=PROB_EPS):
    return p.clamp(eps, 1.0 - eps)
