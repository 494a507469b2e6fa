import os

# default configurations
os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "2")

import tensorflow as tf  # noqa: E402

# pylint: disable=no-member
try:
    tf_version = int(str(tf.__version__).split(".")[0])
except Exception:
    tf_version = 2


def enable_determinism():
    """Ask TensorFlow for run-to-run identical kernels when supported."""
    exp = getattr(tf.config, "experimental", None)
    fn = getattr(exp, "enable_op_determinism", None)
    if fn is None:
        return False
    fn()
    return True


enable_determinism()
