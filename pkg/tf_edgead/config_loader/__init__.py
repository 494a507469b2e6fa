from .config_loader import (
    DEFAULTS,
    ConfigInvalid,
    ConfigLoader,
    merge_defaults,
    parse_k_range,
    validate,
)
