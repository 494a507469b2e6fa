"""
Fully connected window autoencoder.

The encoder maps a flattened window of ``n_features * window_size`` values
down to ``hidden_size`` through ``num_layers`` dense layers; the decoder
mirrors it. Every hidden layer (bottleneck included) uses the same
activation, the output layer is linear.
"""
import copy

import numpy as np

from ..errors import EdgeADError
from ..tensorflow_wrapper import tf


class BadShape(EdgeADError, ValueError):
    pass


ACTIVATIONS = {
    "tanh": tf.tanh,
    "relu": tf.nn.relu,
    "sigmoid": tf.sigmoid,
}

LAYER_RULES = ("geometric", "linear")


class AutoencoderConfig:
    """
    Architecture and training hyper-parameters of one autoencoder.

    :param n_features: metrics per window
    :param window_size: timesteps per window ``w``
    :param num_layers: encoder depth
    :param hidden_size: bottleneck width, smaller than ``n_features * w``
    :param max_epochs: from scratch budget ``L``
    :param transfer_max_epochs: fine tuning budget ``l <= L``
    :param layer_rule: ``geometric`` or ``linear`` interpolation of the
        interior widths
    """

    def __init__(
        self,
        n_features,
        window_size=10,
        num_layers=2,
        hidden_size=8,
        batch_size=64,
        learning_rate=1e-3,
        max_epochs=30,
        transfer_max_epochs=20,
        early_stopping=True,
        early_stop_patience=5,
        early_stop_min_delta=1e-3,
        val_fraction=0.1,
        seed=0,
        activation="tanh",
        layer_rule="geometric",
    ):
        self.n_features = int(n_features)
        self.window_size = int(window_size)
        self.num_layers = int(num_layers)
        self.hidden_size = int(hidden_size)
        self.batch_size = int(batch_size)
        self.learning_rate = float(learning_rate)
        self.max_epochs = int(max_epochs)
        self.transfer_max_epochs = int(transfer_max_epochs)
        self.early_stopping = bool(early_stopping)
        self.early_stop_patience = int(early_stop_patience)
        self.early_stop_min_delta = float(early_stop_min_delta)
        self.val_fraction = float(val_fraction)
        self.seed = int(seed)
        self.activation = activation
        self.layer_rule = layer_rule
        self.check()

    def check(self):
        for name in [
            "n_features",
            "window_size",
            "num_layers",
            "hidden_size",
            "batch_size",
            "early_stop_patience",
        ]:
            if getattr(self, name) <= 0:
                raise BadShape("{} must be positive".format(name))
        if self.max_epochs < 0 or self.transfer_max_epochs < 0:
            raise BadShape("epoch budgets must not be negative")
        if self.transfer_max_epochs > self.max_epochs:
            raise BadShape(
                "transfer_max_epochs {} exceeds max_epochs {}".format(
                    self.transfer_max_epochs, self.max_epochs
                )
            )
        if self.learning_rate < 0 or self.early_stop_min_delta < 0:
            raise BadShape("learning_rate and min_delta must be >= 0")
        if not 0 <= self.val_fraction < 1:
            raise BadShape("val_fraction must be in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise BadShape("unknown activation {}".format(self.activation))
        if self.layer_rule not in LAYER_RULES:
            raise BadShape("unknown layer_rule {}".format(self.layer_rule))
        if self.hidden_size >= self.input_dim:
            raise BadShape(
                "hidden_size {} must be smaller than the input {}".format(
                    self.hidden_size, self.input_dim
                )
            )

    @property
    def input_dim(self):
        return self.n_features * self.window_size

    def layer_sizes(self):
        """
        Encoder widths from the input down to the bottleneck.

        ``geometric``: :math:`d_i = D (h/D)^{i/n}`, ``linear``:
        :math:`d_i = D + (h - D) i / n`, both rounded. ``D=40, h=8, n=2``
        gives ``40, 18, 8`` and ``40, 24, 8``.
        """
        d, h, n = self.input_dim, self.hidden_size, self.num_layers
        ret = [d]
        for i in range(1, n):
            if self.layer_rule == "geometric":
                width = d * (h / d) ** (i / n)
            else:
                width = d + (h - d) * i / n
            ret.append(max(int(round(width)), h))
        ret.append(h)
        return ret

    def shape_chain(self):
        enc = self.layer_sizes()
        return enc + enc[-2::-1]

    def architecture(self):
        return (tuple(self.shape_chain()), self.activation)

    def replace(self, **kwargs):
        ret = copy.copy(self)
        for k, v in kwargs.items():
            if not hasattr(ret, k):
                raise AttributeError(k)
            setattr(ret, k, v)
        ret.check()
        return ret

    def to_dict(self):
        return dict(vars(self))

    @staticmethod
    def from_dict(dic):
        return AutoencoderConfig(**dic)

    def __eq__(self, other):
        return self.to_dict() == other.to_dict()


class TrainedModel:
    """
    Parameters of an autoencoder with the data statistics it was trained
    on.

    :param parameters: ``[W_0, b_0, W_1, b_1, ...]`` with ``W_i`` of shape
        ``(fan_in, fan_out)``
    :param normalization: :class:`tf_edgead.data.NormalizationStats`
    :param provenance: dictionary with ``strategy``, ``source_model_id``,
        ``epochs_run``, ``wall_time`` and the loss values
    """

    def __init__(
        self,
        parameters,
        config,
        normalization=None,
        provenance=None,
        model_id=None,
    ):
        self.parameters = [np.array(i, dtype=np.float64) for i in parameters]
        for i in self.parameters:
            i.flags.writeable = False
        self.config = config
        self.normalization = normalization
        self.provenance = dict(provenance or {})
        self.model_id = model_id
        self.check_shapes()

    def check_shapes(self):
        chain = self.config.shape_chain()
        if len(self.parameters) != 2 * (len(chain) - 1):
            raise BadShape(
                "{} tensors for {} layers".format(
                    len(self.parameters), len(chain) - 1
                )
            )
        for i, (a, b) in enumerate(zip(chain[:-1], chain[1:])):
            w, bias = self.parameters[2 * i], self.parameters[2 * i + 1]
            if w.shape != (a, b) or bias.shape != (b,):
                raise BadShape(
                    "layer {}: {} {} expected ({}, {})".format(
                        i, w.shape, bias.shape, a, b
                    )
                )

    @property
    def n_layers(self):
        return len(self.parameters) // 2

    def tensor_names(self):
        ret = []
        for i in range(self.n_layers):
            ret += ["layer{}/kernel".format(i), "layer{}/bias".format(i)]
        return ret

    def replace(self, **kwargs):
        args = {
            "parameters": self.parameters,
            "config": self.config,
            "normalization": self.normalization,
            "provenance": self.provenance,
            "model_id": self.model_id,
        }
        args.update(kwargs)
        return TrainedModel(**args)

    def same_parameters(self, other):
        return len(self.parameters) == len(other.parameters) and all(
            a.tobytes() == b.tobytes()
            for a, b in zip(self.parameters, other.parameters)
        )

    def __call__(self, x):
        """Reconstruction of ``x`` (array ``(n, input_dim)``)."""
        params = [tf.constant(i) for i in self.parameters]
        return forward(params, tf.constant(x), self.config.activation)


def forward(params, x, activation="tanh"):
    """Dense stack ``params`` applied to ``x``, linear last layer."""
    act = ACTIVATIONS[activation]
    n_layers = len(params) // 2
    h = x
    for i in range(n_layers):
        h = tf.matmul(h, params[2 * i]) + params[2 * i + 1]
        if i != n_layers - 1:
            h = act(h)
    return h


def init_model(config, seed=None):
    """
    Untrained model: kernels uniform in
    :math:`\\pm 1/\\sqrt{\\text{fan\\_in}}`, biases zero.
    """
    config.check()
    if seed is None:
        seed = config.seed
    rng = np.random.default_rng([int(seed), 0])
    chain = config.shape_chain()
    params = []
    for a, b in zip(chain[:-1], chain[1:]):
        limit = 1.0 / np.sqrt(a)
        params.append(rng.uniform(-limit, limit, size=(a, b)))
        params.append(np.zeros((b,)))
    return TrainedModel(params, config)
