from ..tensorflow_wrapper import tf

ADAM_DEFAULTS = {"beta_1": 0.9, "beta_2": 0.999, "epsilon": 1e-8}


def adam(learning_rate=1e-3, **kwargs):
    """
    Keras Adam for a list of float64 ``tf.Variable``. A fresh optimizer is
    built for every model, its moments start at zero.
    """
    args = dict(ADAM_DEFAULTS, **kwargs)
    try:
        return tf.keras.optimizers.Adam(
            learning_rate, jit_compile=False, **args
        )
    except (TypeError, ValueError):
        # optimizers before the jit_compile option
        return tf.keras.optimizers.Adam(learning_rate, **args)
