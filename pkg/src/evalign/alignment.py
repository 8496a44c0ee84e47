"""Embedding-space objectives and analyses.

Covers the contrastive machinery used to distill an event encoder from a
frozen image embedding space: InfoNCE, the symmetrized two-direction batch
loss, the adaptive scalar-wise modulation penalty, k-NN embedding
translation into a reference pool, zero-shot scoring against class text
anchors, pairwise similarity densities, and an explicit witness showing
that minimizing the contrastive objective alone does not pin down the
event-to-text ranking.

Loss functions accept raw (pre-normalization) event rows, normalize
internally, and return gradients with respect to the raw rows, chained
through the l2 normalization. Image rows are frozen constants. Gradients
returned by `modulation_loss` and `total_loss` treat the modulation
weights as constants (stop-gradient): differentiating through the min-max
normalization would be non-smooth, and the weights act as coefficients,
not optimized quantities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class EmbeddingBatch:
    """(n, dim) rows with a fixed role tag: 'event', 'image' or 'text'."""

    values: np.ndarray
    role: str = "event"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 2:
            raise ValueError(f"expected (n>=1, dim>=2) rows, got shape {values.shape}")
        if self.role not in ("event", "image", "text"):
            raise ValueError(f"unknown role {self.role!r}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07  # softmax temperature
    gaussian_mu: float = 0.0
    gaussian_sigma: float = 1.0
    gaussian_kind: str = "pdf"  # or "cdf"
    knn_k: int = 5

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.gaussian_sigma <= 0:
            raise ConfigError("gaussian_sigma must be positive")
        if self.gaussian_kind not in ("pdf", "cdf"):
            raise ConfigError(f"unknown gaussian_kind {self.gaussian_kind!r}")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be at least 1")


class LossResult(NamedTuple):
    loss: float
    grad: np.ndarray  # d loss / d raw event rows


class TotalLossResult(NamedTuple):
    loss: float
    grad: np.ndarray
    baseline: float
    modulation: float
    weights: "ModulationWeights"


@dataclass(frozen=True)
class ModulationWeights:
    """Per-sample uniformity shares and the Gaussian weights derived from them."""

    lambda_unf: np.ndarray  # sums to 1 over the batch
    lam: np.ndarray  # non-negative modulation coefficients

    def __post_init__(self):
        if abs(self.lambda_unf.sum() - 1.0) > 1e-9:
            raise ValueError("lambda_unf must sum to 1")
        if np.any(self.lam < 0):
            raise ValueError("lam must be non-negative")


def _rows(batch) -> np.ndarray:
    if isinstance(batch, EmbeddingBatch):
        return batch.values
    return np.asarray(batch, dtype=np.float64)


def normalize_rows(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero vector")
    return rows / norms


def _chain_through_normalization(raw: np.ndarray, unit: np.ndarray, grad_unit: np.ndarray):
    """Pull a gradient wrt unit rows back to the raw rows through v -> v/|v|."""
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    radial = np.sum(grad_unit * unit, axis=1, keepdims=True)
    return (grad_unit - radial * unit) / norms


def infonce(q: np.ndarray, keys, positive_index: int, tau: float) -> float:
    """Temperature-scaled contrastive loss for one query against a key set."""
    if tau <= 0:
        raise ConfigError("tau must be positive")
    keys = _rows(keys)
    if not 0 <= positive_index < keys.shape[0]:
        raise ValueError(f"positive_index {positive_index} out of range")
    logits = keys @ np.asarray(q, dtype=np.float64) / tau
    peak = logits.max()
    return float(peak + np.log(np.exp(logits - peak).sum()) - logits[positive_index])


def _softmax(a: np.ndarray, axis: int) -> np.ndarray:
    z = a - a.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def baseline_loss(events, images, tau: float) -> LossResult:
    """Symmetrized InfoNCE over a batch of paired rows.

    Row i of `events` and `images` is the matching pair; each direction uses
    the other batch's remaining rows as negatives, and the two directional
    means are summed. The gradient is with respect to the raw event rows;
    image rows are constants.
    """
    if tau <= 0:
        raise ConfigError("tau must be positive")
    raw = _rows(events)
    x = _rows(images)
    n = raw.shape[0]
    if n < 2:
        raise ValueError("need n >= 2 for in-batch negatives")
    if x.shape != raw.shape:
        raise ValueError(f"batch shape mismatch: {raw.shape} vs {x.shape}")
    u = normalize_rows(raw)
    logits = (u @ x.T) / tau
    p = _softmax(logits, axis=1)  # event -> image queries
    q = _softmax(logits, axis=0)  # image -> event queries
    diag = np.arange(n)
    loss = -(np.log(p[diag, diag]).mean() + np.log(q[diag, diag]).mean())
    g_s = (p + q) / (n * tau)
    g_s[diag, diag] -= 2.0 / (n * tau)
    grad_u = g_s @ x
    return LossResult(float(loss), _chain_through_normalization(raw, u, grad_u))


def gaussian_weight(t: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Gaussian pdf (default) or cdf evaluated at t."""
    z = (np.asarray(t, dtype=np.float64) - cfg.gaussian_mu) / cfg.gaussian_sigma
    if cfg.gaussian_kind == "pdf":
        return np.exp(-0.5 * z * z) / (cfg.gaussian_sigma * math.sqrt(2.0 * math.pi))
    return np.vectorize(math.erf)(z / math.sqrt(2.0)) * 0.5 + 0.5


def modulation_weights_from_sims(sims: np.ndarray, cfg: LossConfig) -> ModulationWeights:
    """Weights from a precomputed event-to-event cosine matrix.

    Shares are shifted cosines summed over the other rows (self-pairs
    excluded), min-max normalized over the batch, and fed through the
    Gaussian at (1 - normalized share), so the most uniform sample gets the
    largest weight. When every share is equal the min-max normalization is
    undefined; all samples then sit at 0.5.
    """
    sims = np.asarray(sims, dtype=np.float64)
    n = sims.shape[0]
    if n < 2:
        raise ValueError("need n >= 2 to measure in-batch uniformity")
    numer = sims.sum(axis=1) - np.diag(sims) + (n - 1)  # sum over j != i of (cos + 1)
    lambda_unf = numer / numer.sum()
    lo, hi = lambda_unf.min(), lambda_unf.max()
    if hi == lo:
        normalized = np.full(n, 0.5)
    else:
        normalized = (lambda_unf - lo) / (hi - lo)
    lam = gaussian_weight(1.0 - normalized, cfg)
    return ModulationWeights(lambda_unf=lambda_unf, lam=lam)


def modulation_weights(events, cfg: LossConfig) -> ModulationWeights:
    """Adaptive per-sample weights from in-batch event-to-event uniformity."""
    u = normalize_rows(_rows(events))
    return modulation_weights_from_sims(u @ u.T, cfg)


def modulation_loss(events, images, weights: ModulationWeights) -> LossResult:
    """Weighted scalar-wise squared deviation between paired rows.

    Reduces with a batch mean so the magnitude stays comparable to the
    baseline term regardless of batch size. Weights are constants for the
    gradient.
    """
    raw = _rows(events)
    x = _rows(images)
    if x.shape != raw.shape:
        raise ValueError(f"batch shape mismatch: {raw.shape} vs {x.shape}")
    lam = np.asarray(weights.lam, dtype=np.float64)
    if lam.shape != (raw.shape[0],):
        raise ValueError(f"weights length {lam.shape} does not match batch {raw.shape[0]}")
    u = normalize_rows(raw)
    diff = u - x
    n = raw.shape[0]
    loss = float((lam * np.sum(diff * diff, axis=1)).mean())
    grad_u = (2.0 / n) * lam[:, None] * diff
    return LossResult(loss, _chain_through_normalization(raw, u, grad_u))


def total_loss(events, images, cfg: LossConfig) -> TotalLossResult:
    """Baseline plus modulation on shared batches; gradients add.

    The modulation weights are computed from the current event rows and then
    held constant for the gradient (stop-gradient).
    """
    weights = modulation_weights(events, cfg)
    base = baseline_loss(events, images, cfg.tau)
    mod = modulation_loss(events, images, weights)
    return TotalLossResult(
        loss=base.loss + mod.loss,
        grad=base.grad + mod.grad,
        baseline=base.loss,
        modulation=mod.loss,
        weights=weights,
    )


def knn_translate(evt: np.ndarray, pool, k: int) -> np.ndarray:
    """Project an event embedding onto its k nearest pool rows.

    Neighbors are ranked by cosine similarity (ties broken toward the lower
    pool index) and combined with shifted-cosine weights that sum to one;
    the combination is re-normalized to unit length so downstream cosine
    scoring sees a valid embedding.
    """
    pool = _rows(pool)
    m = pool.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k={k} outside [1, {m}]")
    evt = np.asarray(evt, dtype=np.float64)
    sims = pool @ evt
    order = np.lexsort((np.arange(m), -sims))[:k]
    shifted = sims[order] + 1.0
    total = shifted.sum()
    if total == 0:
        raise ValueError("degenerate neighborhood: all similarities are -1")
    combo = (shifted / total) @ pool[order]
    return normalize_rows(combo[None, :])[0]


def zero_shot_scores(evt: np.ndarray, class_texts) -> tuple[np.ndarray, int]:
    """Cosine scores against class text anchors and the argmax class.

    Ties go to the lower class id.
    """
    anchors = _rows(class_texts)
    if anchors.shape[0] == 0:
        raise ValueError("empty class set")
    scores = anchors @ np.asarray(evt, dtype=np.float64)
    return scores, int(np.argmax(scores))


def similarity_density(batch, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of all pairwise cosines over [-1, 1], scaled so max bin = 1.

    Returns (bin_centers, normalized_counts).
    """
    u = normalize_rows(_rows(batch))
    n = u.shape[0]
    if n < 2:
        raise ValueError("need n >= 2 for pairwise similarities")
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    sims = np.clip(u @ u.T, -1.0, 1.0)
    vals = sims[np.triu_indices(n, k=1)]
    counts, edges = np.histogram(vals, bins=n_bins, range=(-1.0, 1.0))
    centers = (edges[:-1] + edges[1:]) / 2.0
    return centers, counts / counts.max()


def density_csv(centers: np.ndarray, density: np.ndarray) -> str:
    lines = ["bin_center,normalized_count"]
    lines += [f"{c:.10g},{d:.10g}" for c, d in zip(centers, density)]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class WitnessCheck:
    name: str
    lhs: float
    rhs: float
    margin: float

    @property
    def satisfied(self) -> bool:
        return self.margin > 0


@dataclass(frozen=True)
class MisalignmentWitness:
    """Unit vectors showing the contrastive optimum leaves text ranking free.

    The five checks certify that the image space is text-aligned and both
    events are contrastively matched to their images, while the event-to-
    text ranking is nevertheless flipped. `exemption` repeats the text
    ranking after substituting perfectly aligned events (evt = paired image
    row), where the flip provably cannot occur.
    """

    txt_pos: np.ndarray
    img_pos: np.ndarray
    img_neg: np.ndarray
    evt: np.ndarray
    evt_neg: np.ndarray
    checks: list[WitnessCheck] = field(default_factory=list)
    exemption: WitnessCheck | None = None

    @property
    def all_satisfied(self) -> bool:
        return all(c.satisfied for c in self.checks) and self.exemption.satisfied

    def min_margin(self) -> float:
        return min(c.margin for c in self.checks)

    def to_json(self) -> str:
        doc = {
            "vectors": {
                "txt_pos": self.txt_pos.tolist(),
                "img_pos": self.img_pos.tolist(),
                "img_neg": self.img_neg.tolist(),
                "evt": self.evt.tolist(),
                "evt_neg": self.evt_neg.tolist(),
            },
            "checks": [
                {"name": c.name, "lhs": c.lhs, "rhs": c.rhs, "margin": c.margin,
                 "satisfied": c.satisfied}
                for c in self.checks
            ],
            "exemption": {
                "name": self.exemption.name,
                "lhs": self.exemption.lhs,
                "rhs": self.exemption.rhs,
                "margin": self.exemption.margin,
                "satisfied": self.exemption.satisfied,
            },
            "all_satisfied": self.all_satisfied,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def lemma1_witness(dim: int = 4) -> MisalignmentWitness:
    """Construct the explicit misalignment witness in `dim` >= 4 dimensions.

    The event vectors park their excess mass in dimensions 3 and 4, where
    the image anchors have none, and the text anchor shares mass with
    dimension 4 only; the contrastive pairings are then blind to a mass
    swap that flips the text ranking.
    """
    if dim < 4:
        raise ValueError("witness construction needs dim >= 4")

    def vec(entries):
        v = np.zeros(dim)
        for i, val in entries:
            v[i] = val
        return v

    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    sqrt3_2 = math.sqrt(3.0) / 2.0
    txt_pos = vec([(0, inv_sqrt2), (3, inv_sqrt2)])
    img_pos = vec([(0, 1.0)])
    img_neg = vec([(1, 1.0)])
    evt = vec([(0, 0.5), (2, sqrt3_2)])
    evt_neg = vec([(1, 0.5), (3, sqrt3_2)])

    def check(name, lhs, rhs):
        return WitnessCheck(name, float(lhs), float(rhs), float(lhs - rhs))

    checks = [
        check("image_space_text_aligned", img_pos @ txt_pos, img_neg @ txt_pos),
        check("event_matches_paired_image", evt @ img_pos, evt @ img_neg),
        check("other_event_matches_its_image", evt_neg @ img_neg, evt_neg @ img_pos),
        check("paired_event_wins_from_image_side", evt @ img_pos, evt_neg @ img_pos),
        check("text_ranking_flipped", evt_neg @ txt_pos, evt @ txt_pos),
    ]
    exemption = check("exemption_preserves_text_ranking", img_pos @ txt_pos, img_neg @ txt_pos)
    return MisalignmentWitness(
        txt_pos=txt_pos,
        img_pos=img_pos,
        img_neg=img_neg,
        evt=evt,
        evt_neg=evt_neg,
        checks=checks,
        exemption=exemption,
    )
