"""
Anomaly detectors for edge device fleets, trained per cluster of similar
devices with TensorFlow.
"""

from .data import ingest_dataset, save_dataset, set_random_seed

try:
    from .version import __version__
except ImportError:
    __version__ = "0.0.0"
