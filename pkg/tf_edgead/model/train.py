"""
Training, transfer training and scoring of window autoencoders.
"""
import logging
import warnings

import numpy as np

from ..data import WindowSet, window_matrix
from ..errors import EdgeADError, EdgeADWarning
from ..tensorflow_wrapper import tf
from ..utils import Timer, atomic_write_text, format_float
from .autoencoder import forward
from .optimizer import adam

logger = logging.getLogger(__name__)


class NonFiniteLoss(EdgeADError, FloatingPointError):
    pass


class ArchitectureMismatch(EdgeADError, ValueError):
    pass


class ShapeMismatch(EdgeADError, ValueError):
    pass


class EarlyStoppingWarning(EdgeADWarning):
    pass


def mse_loss(params, x, activation="tanh"):
    """Mean over batch and dimensions of the squared reconstruction error."""
    diff = forward(params, x, activation) - x
    return tf.reduce_mean(diff * diff)


def _as_flat(windows, input_dim):
    if isinstance(windows, WindowSet):
        windows = windows.flatten()
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or (x.shape[0] > 0 and x.shape[1] != input_dim):
        raise ShapeMismatch(
            "windows of shape {} for input dimension {}".format(
                x.shape, input_dim
            )
        )
    return x


def _full_loss(params, x, activation, batch=4096):
    if x.shape[0] == 0:
        return None
    total = 0.0
    for i in range(0, x.shape[0], batch):
        part = x[i : i + batch]
        total += float(mse_loss(params, tf.constant(part), activation)) * (
            part.shape[0]
        )
    return total / x.shape[0]


class EarlyStopping:
    """
    Stop once the relative improvement of the validation loss over the best
    value seen stays below ``min_delta`` for ``patience`` epochs in a row.
    """

    def __init__(self, patience=5, min_delta=1e-3, initial=None):
        self.patience = patience
        self.min_delta = min_delta
        self.best = initial
        self.stalled = 0

    def update(self, loss):
        """Record one epoch; True when training should stop."""
        if self.best is None:
            self.best = loss
            return False
        scale = max(abs(self.best), np.finfo(np.float64).tiny)
        if (self.best - loss) / scale < self.min_delta:
            self.stalled += 1
        else:
            self.stalled = 0
        self.best = min(self.best, loss)
        return self.stalled >= self.patience


def _check_finite(value, epoch, step, model_id):
    if not np.isfinite(value):
        raise NonFiniteLoss(
            "{}: loss {!r} at epoch {} batch {}".format(
                model_id, value, epoch, step
            )
        )


def train(
    model,
    train_windows,
    val_windows=None,
    epoch_budget=None,
    epoch_size=None,
    strategy=None,
    source_model_id=None,
):
    """
    Fit ``model`` with mini-batch Adam on the MSE reconstruction loss.

    :param model: initial :class:`TrainedModel`
    :param train_windows: array ``(n, input_dim)`` or a WindowSet
    :param val_windows: validation windows, needed for early stopping
    :param epoch_budget: maximum epochs, ``config.max_epochs`` by default
    :param epoch_size: windows drawn (without replacement) each epoch, all
        of them by default
    :return: new :class:`TrainedModel`
    """
    config = model.config
    if epoch_budget is None:
        epoch_budget = config.max_epochs
    x = _as_flat(train_windows, config.input_dim)
    if x.shape[0] == 0:
        raise ShapeMismatch("no training windows")
    x_val = (
        _as_flat(val_windows, config.input_dim)
        if val_windows is not None
        else np.zeros((0, config.input_dim))
    )
    n = x.shape[0]
    if epoch_size is None or epoch_size > n:
        epoch_size = n
    act = config.activation
    model_id = model.model_id

    variables = [tf.Variable(i) for i in model.parameters]
    opt = adam(config.learning_rate)
    rng = np.random.default_rng([config.seed, 1])

    stopper = None
    if config.early_stopping:
        if x_val.shape[0] == 0:
            warnings.warn(
                "{}: no validation windows, early stopping is off".format(
                    model_id
                ),
                EarlyStoppingWarning,
            )
        else:
            stopper = EarlyStopping(
                config.early_stop_patience,
                config.early_stop_min_delta,
                _full_loss(variables, x_val, act),
            )

    train_history, val_history = [], []
    epochs_run = 0
    with tf.device("/CPU:0"), Timer() as timer:
        for epoch in range(epoch_budget):
            perm = rng.permutation(n)[:epoch_size]
            epoch_loss = 0.0
            for step, i in enumerate(range(0, epoch_size, config.batch_size)):
                batch = tf.constant(x[perm[i : i + config.batch_size]])
                with tf.GradientTape() as tape:
                    loss = mse_loss(variables, batch, act)
                value = float(loss)
                _check_finite(value, epoch, step, model_id)
                grads = tape.gradient(loss, variables)
                opt.apply_gradients(zip(grads, variables))
                epoch_loss += value * int(batch.shape[0])
            epochs_run += 1
            train_history.append(epoch_loss / epoch_size)
            val_loss = _full_loss(variables, x_val, act)
            val_history.append(val_loss)
            logger.debug(
                "%s epoch %d train %.6g val %s",
                model_id,
                epoch,
                train_history[-1],
                val_loss,
            )
            if stopper is not None and stopper.update(val_loss):
                logger.info("%s stopped early at epoch %d", model_id, epoch)
                break
    params = [i.numpy() for i in variables]
    final_train = _full_loss(params, x, act)
    final_val = _full_loss(params, x_val, act)
    provenance = dict(model.provenance)
    provenance.update(
        {
            "strategy": strategy or provenance.get("strategy"),
            "source_model_id": source_model_id,
            "epochs_run": epochs_run,
            "epoch_budget": int(epoch_budget),
            "final_train_loss": final_train,
            "final_val_loss": final_val,
            "train_loss_history": train_history,
            "val_loss_history": val_history,
            "seed": config.seed,
            "wall_time": timer.elapsed,
        }
    )
    return model.replace(parameters=params, provenance=provenance)


def check_architecture(source_config, target_config):
    if source_config.architecture() != target_config.architecture():
        raise ArchitectureMismatch(
            "source {} against target {}".format(
                source_config.architecture(), target_config.architecture()
            )
        )


def transfer_train(
    source,
    target_windows,
    val_windows=None,
    config=None,
    epoch_budget=None,
    epoch_size=None,
    strategy=None,
    model_id=None,
    normalization=None,
):
    """
    Start from a full copy of ``source`` and fine tune on the target data
    for at most ``config.transfer_max_epochs`` epochs.

    :param config: target configuration (architecture must match the
        source), ``source.config`` by default
    """
    if config is None:
        config = source.config
    check_architecture(source.config, config)
    if epoch_budget is None:
        epoch_budget = config.transfer_max_epochs
    start = source.replace(
        config=config,
        model_id=model_id,
        normalization=normalization,
        provenance={},
    )
    return train(
        start,
        target_windows,
        val_windows,
        epoch_budget=epoch_budget,
        epoch_size=epoch_size,
        strategy=strategy,
        source_model_id=source.model_id,
    )


WINDOW_LAST_STEP = "window_last_step"


class ScoreSeries:
    """
    Reconstruction error per scored timestep.

    :param timesteps: index of the last timestep of each window
    """

    def __init__(self, device_id, scores, timesteps, alignment=None):
        self.device_id = device_id
        self.scores = np.asarray(scores, dtype=np.float64)
        self.timesteps = np.asarray(timesteps, dtype=np.int64)
        self.alignment = alignment or WINDOW_LAST_STEP
        if self.scores.shape != self.timesteps.shape:
            raise ShapeMismatch("scores and timesteps differ in length")

    def __len__(self):
        return self.scores.shape[0]

    def aligned_labels(self, labels):
        """Labels of the scored timesteps."""
        return np.asarray(labels)[self.timesteps]

    def to_text(self):
        lines = ["timestep,score"] + [
            "{},{}".format(t, format_float(s))
            for t, s in zip(self.timesteps, self.scores)
        ]
        return "\n".join(lines) + "\n"

    def save(self, path):
        atomic_write_text(path, self.to_text())


def score(model, windows, device_id=None):
    """
    Per window MSE between input and reconstruction, assigned to the
    window's last timestep.

    :param windows: :class:`~tf_edgead.data.WindowSet` (stride 1) or array
        ``(n, input_dim)``
    """
    x = _as_flat(windows, model.config.input_dim)
    if isinstance(windows, WindowSet):
        timesteps = windows.last_steps()
        device_id = device_id or windows.device_id
    else:
        timesteps = np.arange(x.shape[0]) + model.config.window_size - 1
    params = [tf.constant(i) for i in model.parameters]
    ret = []
    for i in range(0, x.shape[0], 4096):
        part = tf.constant(x[i : i + 4096])
        diff = forward(params, part, model.config.activation) - part
        ret.append(tf.reduce_mean(diff * diff, axis=-1).numpy())
    scores = np.concatenate(ret) if ret else np.zeros((0,))
    if not np.all(np.isfinite(scores)):
        raise NonFiniteLoss("{}: non finite scores".format(device_id))
    return ScoreSeries(device_id, scores, timesteps)


def score_dataset(model, dataset, split="test"):
    """Normalize ``dataset`` with the model's statistics, window and
    score it."""
    matrix = dataset.split(split)
    if model.normalization is not None:
        matrix = model.normalization.apply(matrix)
    if matrix.shape[0] != model.config.n_features:
        raise ShapeMismatch(
            "{} has {} features, model expects {}".format(
                dataset.device_id, matrix.shape[0], model.config.n_features
            )
        )
    windows = window_matrix(
        matrix, model.config.window_size, 1, dataset.device_id
    )
    return score(model, windows)


def loss_gradients(model, windows):
    """Analytic gradients of the MSE loss, one array per parameter."""
    x = tf.constant(_as_flat(windows, model.config.input_dim))
    variables = [tf.Variable(i) for i in model.parameters]
    with tf.GradientTape() as tape:
        loss = mse_loss(variables, x, model.config.activation)
    return [g.numpy() for g in tape.gradient(loss, variables)]


def gradient_check(model, window, tolerance=1e-4, step=1e-5, floor=1e-6):
    """
    Largest relative difference between the analytic gradient of the MSE
    loss and central finite differences. Errors above ``tolerance`` are
    logged with the parameter they occur in.

    :param window: one window ``(input_dim,)`` or a batch of windows
    :param floor: lower bound of the relative error denominator
    """
    x = tf.constant(_as_flat(window, model.config.input_dim))
    act = model.config.activation
    analytic = loss_gradients(model, window)
    params = [np.array(i) for i in model.parameters]

    def f(ps):
        return float(mse_loss([tf.constant(i) for i in ps], x, act))

    worst = 0.0
    for name, p, g in zip(model.tensor_names(), params, analytic):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            up = f(params)
            p[idx] = old - step
            down = f(params)
            p[idx] = old
            numeric = (up - down) / (2 * step)
            err = abs(numeric - g[idx]) / max(abs(numeric), abs(g[idx]), floor)
            if err > tolerance:
                logger.warning(
                    "gradient of %s%s: relative error %g", name, idx, err
                )
            worst = max(worst, err)
    return worst
