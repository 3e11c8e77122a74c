from .channel import (
    ChannelMatrix,
    GridSpec,
    PlaneOffset,
    RoomSize,
    VlcScene,
    build_channel_matrix,
    channel_gain,
    image_size,
    large_scene,
)
from .config import config_hash, dump_config, load_config
from .dataset import (
    DatasetConfig,
    DatasetRecord,
    SceneRanges,
    generate_dataset,
    load_dataset,
    save_dataset,
    split_ids,
)
from .experiments import (
    CurvePoint,
    ExperimentConfig,
    SweepSpec,
    denoising_gain,
    read_curve_csv,
    run_mmse_comparison,
    run_sensitivity_sweep,
    write_curve_csv,
)
from .imaging import (
    ChannelImage,
    NoisyChannelImage,
    add_awgn,
    extract_patches,
    matrix_to_image,
    psnr,
)
from .mmse import MmseConfig, MmseModel, fit_mmse, load_mmse, mmse_denoise, save_mmse
from .model import (
    ModelConfig,
    ModelParams,
    backward,
    denoise,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import checked, set_checked
from .training import AdamConfig, TrainConfig, adam_step, train
from .utils import (
    ArtifactMissingError,
    ConfigError,
    DegenerateImageError,
    DomainError,
    FfdvlcError,
    FormatError,
    GeometryError,
    IllConditionedWarning,
    NonFiniteError,
    NumericalError,
    ProtocolError,
    ShapeError,
    StateError,
    StatisticsError,
    TrainingDivergedError,
    make_rng,
)
from .version import version as __version__

__all__ = [
    "ChannelMatrix",
    "GridSpec",
    "PlaneOffset",
    "RoomSize",
    "VlcScene",
    "build_channel_matrix",
    "channel_gain",
    "image_size",
    "large_scene",
    "config_hash",
    "dump_config",
    "load_config",
    "DatasetConfig",
    "DatasetRecord",
    "SceneRanges",
    "generate_dataset",
    "load_dataset",
    "save_dataset",
    "split_ids",
    "CurvePoint",
    "ExperimentConfig",
    "SweepSpec",
    "denoising_gain",
    "read_curve_csv",
    "run_mmse_comparison",
    "run_sensitivity_sweep",
    "write_curve_csv",
    "ChannelImage",
    "NoisyChannelImage",
    "add_awgn",
    "extract_patches",
    "matrix_to_image",
    "psnr",
    "MmseConfig",
    "MmseModel",
    "fit_mmse",
    "load_mmse",
    "mmse_denoise",
    "save_mmse",
    "ModelConfig",
    "ModelParams",
    "backward",
    "denoise",
    "forward",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "checked",
    "set_checked",
    "AdamConfig",
    "TrainConfig",
    "adam_step",
    "train",
    "ArtifactMissingError",
    "ConfigError",
    "DegenerateImageError",
    "DomainError",
    "FfdvlcError",
    "FormatError",
    "GeometryError",
    "IllConditionedWarning",
    "NonFiniteError",
    "NumericalError",
    "ProtocolError",
    "ShapeError",
    "StateError",
    "StatisticsError",
    "TrainingDivergedError",
    "make_rng",
    "__version__",
]
