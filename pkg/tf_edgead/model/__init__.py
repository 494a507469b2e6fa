from .autoencoder import (
    AutoencoderConfig,
    BadShape,
    TrainedModel,
    forward,
    init_model,
)
from .io import ModelFileError, load_model, save_model
from .train import (
    ArchitectureMismatch,
    NonFiniteLoss,
    ScoreSeries,
    ShapeMismatch,
    gradient_check,
    loss_gradients,
    score,
    score_dataset,
    train,
    transfer_train,
)
