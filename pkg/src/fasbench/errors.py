"""Exception types shared across the package."""


class FasbenchError(Exception):
    """Base class for all fasbench errors."""


class ShapeError(FasbenchError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(FasbenchError):
    """Invalid or inconsistent configuration (exit status 2 at the CLI)."""


class ContractError(FasbenchError):
    """An input violated a documented precondition."""


class ProtocolError(FasbenchError):
    """Evaluation cannot proceed (e.g. a score set with a single class)."""


class DataError(FasbenchError):
    """A dataset file is missing, unreadable, or malformed."""


class TrainError(FasbenchError):
    """Optimization cannot continue (non-finite loss or gradient)."""
