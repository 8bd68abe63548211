"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not line up."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class DatasetParseError(ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class FeatureIndexError(DatasetParseError):
    """A feature index is outside the declared dimension."""

    def __init__(self, index, num_features, line_number=None):
        super().__init__(
            f"feature index {index} out of bounds for {num_features} features",
            line_number,
        )
        self.index = index
        self.num_features = num_features


class ConfigError(ValueError):
    """A run configuration has an unknown key or an invalid value."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ModelFormatError(ValueError):
    """A model file is malformed or has an unsupported schema version."""
