"""Digit-string transcription with an exact, verifiable CTC core."""

from .ctc import (
    Alphabet,
    CtcResult,
    ExtendedLabel,
    FramePosteriors,
    LabelSequence,
    Path,
    collapse,
    ctc_batch_loss,
    ctc_forward_backward,
    marginal_probability,
    marginal_probability_bruteforce,
    path_probability,
)
from .config import RunConfig, load_config, load_config_file
from .decode import BeamConfig, Decoding, beam_decode, exhaustive_decode, greedy_decode
from .errors import (
    CheckpointError,
    ConfigError,
    EnumerationLimitError,
    GenerationError,
    InfeasibleLabelError,
    InvalidSymbolError,
    ManifestError,
    NumericError,
    SeqctcError,
    ShapeError,
    StateError,
    TrainingError,
    UsageError,
)
from .metrics import EvalReport, evaluate, format_report_table, report_from_lines, report_to_lines
from .network import Network, NetworkConfig, load_network, save_network, topology_fingerprint
from .optim import AdadeltaState, EpochStats, adadelta_step, clip_gradients, train_epoch
from .synth import (
    GenSpec,
    SampleManifest,
    generate,
    load_manifest,
    load_sample,
    read_pgm,
    render_string,
    resize_to,
    save_manifest,
    write_pgm,
)

__version__ = "0.1.0"
