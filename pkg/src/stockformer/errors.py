"""Exception hierarchy shared across the package."""


class StockformerError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(StockformerError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class NonFiniteError(StockformerError, FloatingPointError):
    """An operation produced NaN or Inf."""


class DataError(StockformerError, ValueError):
    """Input data violates a schema or a record invariant."""


class SchemaError(DataError):
    """A file or payload does not have the expected columns/fields."""


class FetchError(StockformerError):
    """Base class for failures of the HTTP bars client."""


class AuthError(FetchError):
    """The server rejected the request as unauthorized or misconfigured (4xx)."""


class RetryExhaustedError(FetchError):
    """Rate limiting or server errors persisted past the retry budget."""


class NetworkError(FetchError):
    """Connection-level failure (DNS, TLS, refused, timeout)."""


class ConfigError(StockformerError, ValueError):
    """A configuration value is missing or invalid."""


class TrainingAborted(StockformerError):
    """Training stopped because the loss or gradients became non-finite."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class BankruptcyError(StockformerError, ValueError):
    """A trading step would make the portfolio value non-positive."""
