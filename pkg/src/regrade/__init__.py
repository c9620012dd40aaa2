"""Text-description-supervised retinal grading with iterative lesion
removal: synthetic data, a toy encoder, the severity regression loop, and
its evaluation stack."""

from .encoder import (
    EncoderParams,
    PredictionRecord,
    encode_image,
    init_params,
    predict,
    predict_image,
    similarity_scores,
)
from .engine import (
    BatchRecord,
    EncoderGrader,
    IterationTrace,
    LoopParams,
    LoopResult,
    classify_referable,
    run_batch,
    run_loop,
    write_trace_dir,
)
from .errors import (
    ConfigError,
    DegenerateMaskError,
    ExternalInpainterError,
    InvalidInputError,
    LoopIterationError,
    MissingArtifactError,
    TrainingDivergedError,
)
from .evaluation import (
    MetricReport,
    build_report,
    classification_metrics,
    quadratic_weighted_kappa,
    reduction_curve,
    seg_metrics,
    transition_flow,
)
from .inpaint import InpaintResult, available_backends, run_external_inpainter
from .runconfig import RunConfig, load_config
from .saliency import BinaryMask, SaliencyMap, binarize, guided_backprop
from .synthgen import FundusSample, SynthConfig, generate_dataset, generate_sample, load_dataset, save_dataset
from .textenc import DescriptionSet, TextEmbeddings, default_description_set, encode_text
from .training import TrainConfig, load_checkpoint, save_checkpoint, semantic_loss, train
from .vessels import (
    ColorParams,
    VesselColorStats,
    blend_vessels,
    extract_vessel_color_stats,
    generate_colored_vessels,
    preprocess_vessel_mask,
    repair,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
