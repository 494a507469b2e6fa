from .fleet import (
    ANOMALY_TYPES,
    BadSpec,
    BaseGenerator,
    FleetGenerator,
    SyntheticFleet,
    SyntheticFleetSpec,
    generate_fleet,
)
