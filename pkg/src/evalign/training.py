"""Desk-scale training world, encoder, and the ablation harness.

The synthetic world stands in for a frozen, text-aligned image embedding
space: each class gets a unit text anchor (QR of a Gaussian matrix, so
anchors are orthogonal-ish), image embeddings scatter around their anchor,
and event frames are synthesized from class template images via the motion
and emission pipeline. Templates are rendered *from* the anchor coordinates
through a fixed bank of spatial basis fields, which is what makes the world
CLIP-like: visual appearance and anchor geometry agree, so an encoder fitted
on training classes has something lawful to generalize from on held-out
classes.

The encoder is a two-layer tanh MLP with hand-derived gradients and a final
l2 normalization; no autodiff framework is involved, which keeps the
finite-difference acceptance checks meaningful end to end. Training is plain
fixed-step SGD so runs are bit-reproducible from (world seed, train seed).
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import (
    LossConfig,
    ModulationWeights,
    baseline_loss,
    knn_translate,
    modulation_loss,
    modulation_weights,
    normalize_rows,
    total_loss,
)
from .emitter import EmitterConfig, EventStream, emit
from .errors import ConfigError, FormatError, TrainingDiverged
from .image import ImageGray
from .io import Manifest, ManifestEntry, write_embeddings, write_events, write_manifest
from .motion import MotionRanges, render_sequence, sample_motion
from .representation import frame_to_feature, to_event_frame

LOSS_MODES = ("baseline", "baseline+mod", "mod-only")

EVAL_OPTIONS = ("raw", "knn_translated", "optimized_text")


@dataclass(frozen=True)
class WorldSpec:
    n_classes: int = 15
    n_train_classes: int = 10
    dim: int = 16
    sigma_img: float = 0.1
    samples_per_class: int = 24
    image_size: int = 32
    seed: int = 0
    motion: MotionRanges = field(default_factory=MotionRanges)
    emitter: EmitterConfig = field(default_factory=EmitterConfig)

    def __post_init__(self):
        if self.n_classes < 4:
            raise ConfigError("need at least 4 classes")
        if self.dim < 8:
            raise ConfigError("need dim >= 8")
        if not 1 <= self.n_train_classes < self.n_classes:
            raise ConfigError("train classes must leave at least one test class")
        if self.n_classes > self.dim:
            raise ConfigError("QR anchors need n_classes <= dim")
        if self.sigma_img < 0:
            raise ConfigError("sigma_img must be non-negative")
        if self.samples_per_class < 2:
            raise ConfigError("need at least 2 samples per class")
        if self.image_size < 8:
            raise ConfigError("image_size must be at least 8")


@dataclass
class SyntheticWorld:
    spec: WorldSpec
    anchors: np.ndarray  # (n_classes, dim) unit rows
    class_names: list[str]
    templates: list[ImageGray]
    streams: list[EventStream]
    features: np.ndarray  # (N, 2 * size * size)
    image_embeddings: np.ndarray  # (N, dim) unit rows
    class_ids: np.ndarray  # (N,)

    @property
    def train_classes(self) -> np.ndarray:
        return np.arange(self.spec.n_train_classes)

    @property
    def test_classes(self) -> np.ndarray:
        return np.arange(self.spec.n_train_classes, self.spec.n_classes)

    @property
    def train_indices(self) -> np.ndarray:
        return np.nonzero(self.class_ids < self.spec.n_train_classes)[0]

    @property
    def test_indices(self) -> np.ndarray:
        return np.nonzero(self.class_ids >= self.spec.n_train_classes)[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def save(self, out_dir: str | Path) -> Path:
        """Write event files, the embedding table and a manifest; returns its path."""
        out_dir = Path(out_dir)
        (out_dir / "events").mkdir(parents=True, exist_ok=True)
        emb_file = "image_embeddings.emb1"
        write_embeddings(self.image_embeddings, out_dir / emb_file)
        entries = []
        for i, stream in enumerate(self.streams):
            rel = f"events/{i:05d}.evz1"
            write_events(stream, out_dir / rel)
            cid = int(self.class_ids[i])
            entries.append(
                ManifestEntry(
                    event_file=rel,
                    source_image=self.class_names[cid],
                    class_id=cid,
                    class_name=self.class_names[cid],
                    image_embedding_ref={"file": emb_file, "row": i},
                )
            )
        manifest = Manifest(
            dataset="synthetic-world",
            seed=self.spec.seed,
            motion=motion_ranges_doc(self.spec.motion),
            emitter=dataclasses.asdict(self.spec.emitter),
            entries=entries,
        )
        path = out_dir / "manifest.json"
        write_manifest(manifest, path)
        return path


def motion_ranges_doc(ranges: MotionRanges) -> dict:
    doc = dataclasses.asdict(ranges)
    doc["kinds"] = [k.value for k in ranges.kinds]
    doc["dx_max"] = list(doc["dx_max"])
    doc["dy_max"] = list(doc["dy_max"])
    doc["scale_end"] = list(doc["scale_end"])
    doc["angle_end"] = list(doc["angle_end"])
    return doc


def _subseed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, dtype=np.uint64)[0])


def _render_template(anchor: np.ndarray, size: int, basis: list[tuple]) -> ImageGray:
    xs = np.arange(size) / size
    gx, gy = np.meshgrid(xs, xs)
    acc = np.zeros((size, size))
    for coeff, (fx, fy, phase) in zip(anchor, basis):
        acc += coeff * np.sin(2.0 * np.pi * (fx * gx + fy * gy) + phase)
    acc *= 0.42 / max(1e-12, np.abs(acc).max())
    return ImageGray.from_array(np.clip(0.5 + acc, 0.0, 1.0))


def generate_world(spec: WorldSpec) -> SyntheticWorld:
    """Build the synthetic world deterministically from spec.seed.

    The nearest-anchor invariant (every image embedding closest to its own
    class anchor) is validated at generation; on failure the world is redrawn
    with a fresh derived seed, at most 5 times.
    """
    for attempt in range(5):
        world = _build_world(spec, attempt)
        sims = world.image_embeddings @ world.anchors.T
        if np.array_equal(np.argmax(sims, axis=1), world.class_ids):
            return world
    raise ConfigError(
        f"sigma_img={spec.sigma_img} too large: nearest-anchor invariant failed 5 times"
    )


def _build_world(spec: WorldSpec, attempt: int) -> SyntheticWorld:
    rng_anchor = np.random.default_rng(_subseed(spec.seed, attempt, 1))
    rng_basis = np.random.default_rng(_subseed(spec.seed, attempt, 2))
    rng_noise = np.random.default_rng(_subseed(spec.seed, attempt, 3))

    g = rng_anchor.standard_normal((spec.dim, spec.n_classes))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    anchors = (q * signs[None, :]).T

    # One spatial frequency/phase per embedding coordinate, shared by all
    # classes, so a template is a picture of its anchor.
    basis = [
        (float(rng_basis.uniform(0.5, 3.5)) * (1 if rng_basis.integers(2) else -1),
         float(rng_basis.uniform(0.5, 3.5)) * (1 if rng_basis.integers(2) else -1),
         float(rng_basis.uniform(0.0, 2.0 * np.pi)))
        for _ in range(spec.dim)
    ]
    templates = [_render_template(anchors[c], spec.image_size, basis) for c in range(spec.n_classes)]
    class_names = [f"class_{c:02d}" for c in range(spec.n_classes)]

    streams: list[EventStream] = []
    feats = []
    embeds = []
    ids = []
    for c in range(spec.n_classes):
        for j in range(spec.samples_per_class):
            noise = rng_noise.standard_normal(spec.dim)
            embeds.append(normalize_rows((anchors[c] + spec.sigma_img * noise)[None, :])[0])
            mseed = _subseed(spec.seed, attempt, 4, c, j)
            mspec = sample_motion(mseed, spec.motion)
            seq = render_sequence(templates[c], mspec)
            stream = emit(seq, dataclasses.replace(spec.emitter, seed=mseed))
            streams.append(stream)
            frame = to_event_frame(stream, (0.0, stream.duration))
            feats.append(frame_to_feature(frame))
            ids.append(c)

    return SyntheticWorld(
        spec=spec,
        anchors=anchors,
        class_names=class_names,
        templates=templates,
        streams=streams,
        features=np.array(feats),
        image_embeddings=np.array(embeds),
        class_ids=np.array(ids, dtype=np.int64),
    )


class Encoder:
    """Two affine layers with tanh between; output rows are l2-normalized.

    `forward` returns pre-normalization outputs because the losses chain
    through the normalization themselves; `embed` is the normalized view.
    """

    def __init__(self, in_dim: int, hidden: int, out_dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.in_dim, self.hidden, self.out_dim = in_dim, hidden, out_dim
        self.w1 = rng.standard_normal((hidden, in_dim)) / np.sqrt(in_dim)
        self.b1 = rng.standard_normal(hidden) * 0.1
        self.w2 = rng.standard_normal((out_dim, hidden)) / np.sqrt(hidden)
        self.b2 = rng.standard_normal(out_dim) * 0.1

    def forward(self, feats: np.ndarray):
        z1 = feats @ self.w1.T + self.b1
        a = np.tanh(z1)
        out = a @ self.w2.T + self.b2
        return out, (feats, a)

    def embed(self, feats: np.ndarray) -> np.ndarray:
        out, _ = self.forward(feats)
        return normalize_rows(out)

    def backward(self, cache, grad_out: np.ndarray) -> dict:
        feats, a = cache
        grad_a = grad_out @ self.w2
        grad_z1 = grad_a * (1.0 - a * a)
        return {
            "w2": grad_out.T @ a,
            "b2": grad_out.sum(axis=0),
            "w1": grad_z1.T @ feats,
            "b1": grad_z1.sum(axis=0),
        }

    def sgd_step(self, grads: dict, lr: float) -> None:
        self.w1 -= lr * grads["w1"]
        self.b1 -= lr * grads["b1"]
        self.w2 -= lr * grads["w2"]
        self.b2 -= lr * grads["b2"]

    # Parameter-vector view, used by the finite-difference checks.
    def get_params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def set_params(self, vec: np.ndarray) -> None:
        sizes = [self.w1.size, self.b1.size, self.w2.size, self.b2.size]
        parts = np.split(np.asarray(vec, dtype=np.float64), np.cumsum(sizes)[:-1])
        self.w1 = parts[0].reshape(self.w1.shape)
        self.b1 = parts[1].reshape(self.b1.shape)
        self.w2 = parts[2].reshape(self.w2.shape)
        self.b2 = parts[3].reshape(self.b2.shape)

    def grads_vector(self, grads: dict) -> np.ndarray:
        return np.concatenate(
            [grads["w1"].ravel(), grads["b1"], grads["w2"].ravel(), grads["b2"]]
        )

    def copy(self) -> "Encoder":
        clone = Encoder(self.in_dim, self.hidden, self.out_dim)
        clone.set_params(self.get_params())
        return clone


ENCODER_MAGIC = b"ENC1"


def save_encoder(encoder: Encoder, path: str | Path) -> None:
    """Flat deterministic binary: magic, dims, then w1, b1, w2, b2 as f64 LE."""
    header = struct.pack("<4sIII", ENCODER_MAGIC, encoder.in_dim, encoder.hidden, encoder.out_dim)
    Path(path).write_bytes(header + encoder.get_params().astype("<f8").tobytes())


def load_encoder(path: str | Path) -> Encoder:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FormatError("truncated encoder file", offset=len(raw))
    magic, in_dim, hidden, out_dim = struct.unpack_from("<4sIII", raw)
    if magic != ENCODER_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    n_params = in_dim * hidden + hidden + hidden * out_dim + out_dim
    if len(raw) != 16 + 8 * n_params:
        raise FormatError("encoder file length mismatch", offset=len(raw))
    enc = Encoder(in_dim, hidden, out_dim)
    enc.set_params(np.frombuffer(raw, dtype="<f8", offset=16))
    return enc


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 40
    learning_rate: float = 2.0
    hidden: int = 64
    seed: int = 0
    loss: str = "baseline+mod"
    loss_config: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.hidden < 1:
            raise ConfigError("hidden must be positive")
        if self.loss not in LOSS_MODES:
            raise ConfigError(f"loss must be one of {LOSS_MODES}")


def batch_objective(raw_out: np.ndarray, images: np.ndarray, mode: str, cfg: LossConfig,
                    weights: ModulationWeights | None = None):
    """Selected loss and gradient wrt raw encoder outputs.

    `weights` overrides the modulation coefficients (tests use this to pin
    them); by default they are recomputed from the batch, matching the
    stop-gradient semantics of a training step.
    """
    if mode == "baseline":
        return baseline_loss(raw_out, images, cfg.tau)
    if mode == "mod-only":
        if weights is None:
            weights = modulation_weights(raw_out, cfg)
        return modulation_loss(raw_out, images, weights)
    if mode == "baseline+mod":
        if weights is None:
            res = total_loss(raw_out, images, cfg)
            return res
        base = baseline_loss(raw_out, images, cfg.tau)
        mod = modulation_loss(raw_out, images, weights)
        from .alignment import LossResult

        return LossResult(base.loss + mod.loss, base.grad + mod.grad)
    raise ConfigError(f"unknown loss mode {mode!r}")


@dataclass
class TrainResult:
    encoder: Encoder
    loss_curve: np.ndarray  # per-epoch mean batch loss


def train(world: SyntheticWorld, cfg: TrainConfig) -> TrainResult:
    """Mini-batch SGD on the train split only; bit-deterministic from seeds.

    Zero-shot protocol purity: the selected sample indices are asserted to
    lie in the train split, so test-class frames and anchors cannot touch a
    gradient.
    """
    train_idx = world.train_indices
    feats = world.features[train_idx]
    images = world.image_embeddings[train_idx]
    assert np.all(world.class_ids[train_idx] < world.spec.n_train_classes)

    encoder = Encoder(world.feature_dim, cfg.hidden, world.spec.dim, seed=cfg.seed)
    rng = np.random.default_rng(_subseed(cfg.seed, 17))
    curve = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(feats))
        losses = []
        for start in range(0, len(perm), cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            if len(sel) < 2:
                continue
            raw_out, cache = encoder.forward(feats[sel])
            result = batch_objective(raw_out, images[sel], cfg.loss, cfg.loss_config)
            if not np.isfinite(result.loss):
                raise TrainingDiverged(
                    f"loss became {result.loss} at epoch {epoch}, batch start {start}"
                )
            grads = encoder.backward(cache, result.grad)
            encoder.sgd_step(grads, cfg.learning_rate)
            losses.append(result.loss)
        curve.append(float(np.mean(losses)))
    return TrainResult(encoder=encoder, loss_curve=np.array(curve))


def _accuracy(preds: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean(preds == truth))


def evaluate_zero_shot(
    encoder: Encoder,
    world: SyntheticWorld,
    option: str = "raw",
    loss_cfg: LossConfig | None = None,
) -> float:
    """Zero-shot accuracy on the held-out classes.

    raw scores encoder outputs against the test-class anchors directly.
    knn_translated first projects each embedding onto its nearest image
    embeddings from the unlabeled evaluation pool (the reference-dataset
    premise of the translation remark: labels are never read, only image
    embeddings). optimized_text tunes the test anchors on a held-in
    calibration half of the test split and reports the upper-bound score.
    """
    if option not in EVAL_OPTIONS:
        raise ValueError(f"option must be one of {EVAL_OPTIONS}")
    loss_cfg = loss_cfg or LossConfig()
    test_idx = world.test_indices
    if len(test_idx) == 0:
        raise ValueError("test split is empty")
    embeds = encoder.embed(world.features[test_idx])
    anchors = world.anchors[world.test_classes]
    truth = world.class_ids[test_idx] - world.spec.n_train_classes

    if option == "raw":
        return _accuracy(np.argmax(embeds @ anchors.T, axis=1), truth)

    if option == "knn_translated":
        pool = world.image_embeddings[test_idx]
        k = min(loss_cfg.knn_k, len(pool))
        translated = np.stack([knn_translate(e, pool, k) for e in embeds])
        return _accuracy(np.argmax(translated @ anchors.T, axis=1), truth)

    calib = _calibration_mask(truth)
    tuned = _optimize_anchors(anchors, embeds[calib], truth[calib])
    return _accuracy(np.argmax(embeds @ tuned.T, axis=1), truth)


def _calibration_mask(truth: np.ndarray) -> np.ndarray:
    """Deterministic stratified half of the samples (first half per class)."""
    mask = np.zeros(len(truth), dtype=bool)
    for c in np.unique(truth):
        pos = np.nonzero(truth == c)[0]
        mask[pos[: max(1, len(pos) // 2)]] = True
    return mask


def _optimize_anchors(
    anchors: np.ndarray, embeds: np.ndarray, truth: np.ndarray,
    steps: int = 100, lr: float = 0.2,
) -> np.ndarray:
    """Ascend the correct-class cosine margin; keep the best-accuracy step.

    Step 0 is the untouched anchors, so the selected set can never score
    below them on the calibration split.
    """
    current = anchors.copy()
    best = current.copy()
    best_acc = _accuracy(np.argmax(embeds @ current.T, axis=1), truth)
    n_classes = anchors.shape[0]
    for _ in range(steps):
        scores = embeds @ current.T
        rival = scores.copy()
        rival[np.arange(len(truth)), truth] = -np.inf
        rival_cls = np.argmax(rival, axis=1)
        grad = np.zeros_like(current)
        np.add.at(grad, truth, embeds)
        np.add.at(grad, rival_cls, -embeds)
        current = normalize_rows(current + lr * grad / len(truth))
        acc = _accuracy(np.argmax(embeds @ current.T, axis=1), truth)
        if acc > best_acc:
            best_acc = acc
            best = current.copy()
    return best


ABLATION_ROWS = (
    # (uses baseline loss, uses knn translation, uses modulation)
    (True, False, False),
    (True, True, False),
    (True, False, True),
    (False, False, True),
    (False, True, True),
    (True, True, True),
)


def _row_mode(row: tuple[bool, bool, bool]) -> tuple[str, str]:
    use_base, use_knn, use_mod = row
    if use_base and use_mod:
        mode = "baseline+mod"
    elif use_base:
        mode = "baseline"
    else:
        mode = "mod-only"
    return mode, ("knn_translated" if use_knn else "raw")


@dataclass
class AblationResult:
    """Per-row accuracies for every seed, Table-style."""

    rows: list[tuple[bool, bool, bool]]
    seeds: list[int]
    accuracies: np.ndarray  # (n_rows, n_seeds)

    def mean(self, row: int) -> float:
        return float(self.accuracies[row].mean())

    def stderr(self, row: int) -> float:
        n = self.accuracies.shape[1]
        if n < 2:
            return 0.0
        return float(self.accuracies[row].std(ddof=1) / np.sqrt(n))

    def paired_gap(self, row_a: int, row_b: int) -> tuple[float, float]:
        """Mean and standard error of (row_a - row_b) paired by seed."""
        diff = self.accuracies[row_a] - self.accuracies[row_b]
        n = len(diff)
        sem = float(diff.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return float(diff.mean()), sem

    def to_csv(self) -> str:
        header = ["baseline_loss", "knn_translation", "scalar_modulation", "accuracy_mean",
                  "accuracy_stderr"]
        header += [f"accuracy_seed_{s}" for s in self.seeds]
        lines = [",".join(header)]
        for i, (use_base, use_knn, use_mod) in enumerate(self.rows):
            cells = [str(int(use_base)), str(int(use_knn)), str(int(use_mod)),
                     f"{self.mean(i):.6f}", f"{self.stderr(i):.6f}"]
            cells += [f"{a:.6f}" for a in self.accuracies[i]]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def run_ablation(
    world: SyntheticWorld,
    seeds,
    train_cfg: TrainConfig | None = None,
) -> AblationResult:
    """Train each loss mode per seed and fill the six-row component table."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    base_cfg = train_cfg or TrainConfig()
    acc = np.zeros((len(ABLATION_ROWS), len(seeds)))
    for j, seed in enumerate(seeds):
        encoders = {}
        for mode in LOSS_MODES:
            cfg = dataclasses.replace(base_cfg, seed=seed, loss=mode)
            encoders[mode] = train(world, cfg).encoder
        for i, row in enumerate(ABLATION_ROWS):
            mode, option = _row_mode(row)
            acc[i, j] = evaluate_zero_shot(
                encoders[mode], world, option, base_cfg.loss_config
            )
    return AblationResult(rows=list(ABLATION_ROWS), seeds=seeds, accuracies=acc)


def loss_curve_csv(curve: np.ndarray) -> str:
    lines = ["epoch,loss"]
    lines += [f"{i},{v:.10g}" for i, v in enumerate(curve)]
    return "\n".join(lines) + "\n"


def run_metadata_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
