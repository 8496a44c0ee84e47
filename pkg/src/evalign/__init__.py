"""Event-camera data synthesis and event/image embedding alignment.

Pipeline: still image -> random linear affine motion -> idealized DVS
emission -> event stream -> polarity count frames -> encoder features, and
the embedding-side machinery (symmetrized InfoNCE, scalar-wise modulation,
k-NN translation, zero-shot scoring) with a synthetic embedding world for
desk-scale experiments.
"""

from .alignment import (
    EmbeddingBatch,
    LossConfig,
    ModulationWeights,
    baseline_loss,
    infonce,
    knn_translate,
    lemma1_witness,
    modulation_loss,
    modulation_weights,
    normalize_rows,
    similarity_density,
    total_loss,
    zero_shot_scores,
)
from .emitter import EmitterConfig, Event, EventStream, emit, emit_reference
from .errors import (
    ConfigError,
    EvalignError,
    FormatError,
    IntegrityError,
    TrainingDiverged,
)
from .image import ImageGray, read_image
from .io import (
    Manifest,
    ManifestEntry,
    load_paired_batch,
    read_embeddings,
    read_events,
    read_manifest,
    write_embeddings,
    write_events,
    write_manifest,
)
from .motion import (
    FrameSequence,
    MotionKind,
    MotionRanges,
    MotionSpec,
    render_sequence,
    sample_motion,
    warp_frame,
)
from .representation import EventFrame, frame_to_feature, render_rgb, to_event_frame
from .training import (
    Encoder,
    SyntheticWorld,
    TrainConfig,
    WorldSpec,
    evaluate_zero_shot,
    generate_world,
    run_ablation,
    train,
)

__version__ = "0.1.0"
