"""Exception hierarchy shared by all fedfair modules."""


class FedFairError(Exception):
    """Base class for every error raised by fedfair."""


class SchemaError(FedFairError, ValueError):
    """A precondition on columns, attributes or values was violated."""


class IngestError(FedFairError):
    """CSV could not be parsed into a schema-conformant dataset."""


class PartitionError(FedFairError, ValueError):
    pass


class MetricUndefined(FedFairError, ValueError):
    """A fairness metric has too few non-empty groups to be computed."""


class TrainingError(FedFairError, ValueError):
    pass


class ConfigError(FedFairError, ValueError):
    """Invalid pipeline configuration. ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
