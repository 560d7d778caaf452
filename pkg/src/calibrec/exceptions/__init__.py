from calibrec.exceptions.exceptions import (
    BranchUnavailableError,
    CalibrecError,
    CheckpointError,
    ConfigurationError,
    DataError,
    EmptyAfterKCoreError,
    GradientCheckError,
    InvalidConfigError,
    ItemIdOutOfRangeError,
    MalformedLineError,
    MissingInputError,
    ModelError,
    NoInteractionsError,
    NonFiniteLossError,
    NumericalError,
    UnknownConfigKeysError,
)

__all__ = [
    "BranchUnavailableError",
    "CalibrecError",
    "CheckpointError",
    "ConfigurationError",
    "DataError",
    "EmptyAfterKCoreError",
    "GradientCheckError",
    "InvalidConfigError",
    "ItemIdOutOfRangeError",
    "MalformedLineError",
    "MissingInputError",
    "ModelError",
    "NoInteractionsError",
    "NonFiniteLossError",
    "NumericalError",
    "UnknownConfigKeysError",
]
