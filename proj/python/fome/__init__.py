"""EEG foundation model: preprocessing, band-power spectra, the patch
transformer, masked-reconstruction pre-training and task fine-tuning."""

from ._fome import (
    CapacityError,
    ConfigError,
    ContractError,
    DataError,
    EmptyError,
    FomeError,
    FormatError,
    IndexError,
    IoError,
    Model,
    ModelConfig,
    ShapeError,
    SpecError,
    TrainError,
    band_names,
    band_powers,
    bandpass_filter,
    classification_metrics,
    detrend,
    finetune_classify,
    generate_synthetic,
    lr_at,
    mask_plan,
    notch_filter,
    preprocess,
    pretrain,
    psd,
    read_patch_grid,
    read_recording,
    regression_metrics,
    resample,
    write_patch_grid,
    write_recording,
)

__all__ = [name for name in dir() if not name.startswith("_")]
