"""Training objectives: report cross-entropy, image/report triplet loss, image/label BCE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PAD
from .errors import ContractError, NumericError
from .nn import Linear
from .tensor import Tensor, log_sigmoid, log_softmax, pick

DEFAULT_LAMBDAS = (1.0, 0.1, 0.1)


def cosine_distance(z1: Tensor, z2: Tensor) -> Tensor:
    """1 - cos(z1, z2) along the last axis."""
    if z1.shape[-1] != z2.shape[-1]:
        raise ContractError(f"cosine_distance: dims {z1.shape} vs {z2.shape}")
    n1 = (z1 * z1).sum(axis=-1).sqrt()
    n2 = (z2 * z2).sum(axis=-1).sqrt()
    if (n1.data == 0).any() or (n2.data == 0).any():
        raise NumericError("cosine distance is undefined for a zero vector")
    return 1.0 - (z1 * z2).sum(axis=-1) / (n1 * n2)


def margin_mu(y, y_neg) -> float:
    """0 for identical label vectors, else max(0.5, normalised Hamming distance)."""
    y = np.asarray(y)
    y_neg = np.asarray(y_neg)
    if y.shape != y_neg.shape:
        raise ContractError(f"label vectors differ in length: {y.shape} vs {y_neg.shape}")
    diff = np.abs(y.astype(np.float64) - y_neg.astype(np.float64))
    if not diff.any():
        return 0.0
    return max(0.5, float(diff.sum() / y.shape[-1]))


def loss_vt(z_img: Tensor, z_txt: Tensor, z_img_neg: Tensor, z_txt_neg: Tensor, mu,
            cross_modal_negatives: bool = False) -> Tensor:
    """Bidirectional triplet hinge, averaged over any leading batch axis.

    With ``cross_modal_negatives`` the anchors are compared with the negative of
    the other modality instead of the same one.
    """
    mu = Tensor(np.asarray(mu, dtype=z_img.dtype))
    pos = cosine_distance(z_img, z_txt)
    neg_i = z_txt_neg if cross_modal_negatives else z_img_neg
    neg_t = z_img_neg if cross_modal_negatives else z_txt_neg
    img_side = (mu + pos - cosine_distance(z_img, neg_i)).relu()
    txt_side = (mu + cosine_distance(z_txt, z_img) - cosine_distance(z_txt, neg_t)).relu()
    return (img_side + txt_side).mean()


def predict_labels(z_img: Tensor, head: Linear) -> Tensor:
    """Label logits z_img W^L + b^L."""
    return head(z_img)


def loss_vl(logits: Tensor, y) -> Tensor:
    """Two-sided binary cross-entropy with logits, averaged over labels (and batch)."""
    y = np.asarray(y, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ContractError(f"labels {y.shape} vs logits {logits.shape}")
    # log(1 - sigmoid(x)) == log_sigmoid(-x)
    return -(log_sigmoid(logits) * y + log_sigmoid(-logits) * (1.0 - y)).mean()


def loss_tt(logits: Tensor, targets) -> Tensor:
    """Mean token negative log-likelihood over non-PAD targets."""
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ContractError(f"logits {logits.shape} do not match targets {targets.shape}")
    keep = targets != PAD
    count = int(keep.sum())
    if count == 0:
        raise ContractError("all target positions are padding")
    nll = -pick(log_softmax(logits), targets)
    return (nll * keep.astype(logits.dtype)).sum() * (1.0 / count)


@dataclass
class LossBreakdown:
    l_tt: float
    l_vt: float
    l_vl: float
    total: float
    lambdas: tuple[float, float, float]
    graph: Tensor | None = None

    def as_dict(self) -> dict[str, float]:
        return {"l_tt": self.l_tt, "l_vt": self.l_vt, "l_vl": self.l_vl, "total": self.total}


def total_loss(l_tt, l_vt, l_vl, lambdas=DEFAULT_LAMBDAS) -> LossBreakdown:
    """lambda1 * l_tt + lambda2 * l_vt + lambda3 * l_vl; accepts floats or tensors."""
    lam1, lam2, lam3 = lambdas
    if min(lambdas) < 0:
        raise ContractError(f"loss weights must be non-negative, got {lambdas}")
    terms = [(lam, t) for lam, t in ((lam1, l_tt), (lam2, l_vt), (lam3, l_vl))]
    as_float = lambda t: float(t.data) if isinstance(t, Tensor) else float(t)
    graph = None
    if any(isinstance(t, Tensor) for _, t in terms):
        for lam, t in terms:
            if lam == 0 or not isinstance(t, Tensor):
                continue
            graph = t * lam if graph is None else graph + t * lam
    total = sum(lam * as_float(t) for lam, t in terms)
    return LossBreakdown(as_float(l_tt), as_float(l_vt), as_float(l_vl), total, tuple(lambdas), graph)


def sample_negative(dataset, anchor: int, rng: np.random.Generator) -> tuple[int, int, np.ndarray]:
    """Draw an unpaired study uniformly from ``dataset`` (any index but ``anchor``).

    The negative image and the negative report come from the same study, so the
    returned image index and report index are equal; the third item is its labels.
    """
    n = len(dataset)
    if n < 2:
        raise ContractError("need at least two studies to sample a negative")
    j = int(rng.integers(0, n - 1))
    j = j + 1 if j >= anchor else j
    return j, j, np.asarray(dataset[j].labels)
