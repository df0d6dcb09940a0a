"""Exception hierarchy shared by the library and the CLI."""


class CfxError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class InputError(CfxError, ValueError):
    """Bad argument passed to an operation (noise out of range, unknown label...)."""

    exit_code = 2


class ConfigError(InputError):
    """A configuration or model file could not be parsed or validated."""

    exit_code = 2


class ModelError(CfxError):
    """The model itself is inconsistent (missing table rows, bad probabilities...)."""

    exit_code = 3


class AbductionError(ModelError):
    """An observed value has zero probability given its observed parents."""


class OracleInfeasible(CfxError):
    """The exact oracle would exceed its configured support cap."""

    exit_code = 4


class ReplayError(CfxError):
    """A trajectory fixture failed to parse or its reward audit did not add up."""

    exit_code = 3
