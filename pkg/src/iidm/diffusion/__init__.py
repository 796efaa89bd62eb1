from .schedule import (
    DiffusionState,
    VarianceSchedule,
    denoise_step,
    forward_jump,
    forward_step,
    make_schedule,
    oracle_predictor,
    predicted_mean,
    q_step,
    reverse_chain,
    schedule_from_betas,
)
from .unet import DenoiseNet, Pyramid, cond_features, timestep_embedding
from .model import IidmModel, Sample, TrainConfig, masked_l1, sample_density, train_iidm, write_loss_csv

__all__ = [
    "DenoiseNet", "DiffusionState", "IidmModel", "Pyramid", "Sample", "TrainConfig", "VarianceSchedule",
    "cond_features", "denoise_step", "forward_jump", "forward_step", "make_schedule", "masked_l1",
    "oracle_predictor", "predicted_mean", "q_step", "reverse_chain", "sample_density",
    "schedule_from_betas", "timestep_embedding", "train_iidm", "write_loss_csv",
]
