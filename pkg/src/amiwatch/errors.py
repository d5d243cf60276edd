"""Exception hierarchy. Each error carries a stable ``code`` for the CLI."""


class AmiwatchError(Exception):
    code = "error"


class SchemaError(AmiwatchError, ValueError):
    code = "schema"


class ParseError(AmiwatchError, ValueError):
    code = "parse"


class NoRowsError(AmiwatchError, ValueError):
    code = "no_rows"


class UnimputableColumnError(AmiwatchError, ValueError):
    code = "unimputable_column"


class InsufficientHistoryError(AmiwatchError, ValueError):
    code = "insufficient_history"


class BoundaryError(AmiwatchError, ValueError):
    code = "boundary"


class DegenerateDistributionError(AmiwatchError, ValueError):
    code = "degenerate_distribution"


class SingularCovarianceError(AmiwatchError, ValueError):
    code = "singular_covariance"


class DimensionError(AmiwatchError, ValueError):
    code = "dimension"


class DivergenceError(AmiwatchError, RuntimeError):
    code = "divergence"


class ScalerError(AmiwatchError, ValueError):
    code = "scaler"


class ConfigError(AmiwatchError, ValueError):
    code = "config"


class MissingArtifactError(AmiwatchError, FileNotFoundError):
    code = "missing_artifact"
