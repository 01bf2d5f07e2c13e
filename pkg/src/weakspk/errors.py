class ConfigError(ValueError):
    """Invalid configuration value."""


class UnsupportedFormatError(ValueError):
    """Input file is in a format we do not read."""

    def __init__(self, field, message):
        super().__init__(f"unsupported format ({field}): {message}")
        self.field = field


class MissingArtifactError(RuntimeError):
    """An upstream pipeline artifact does not exist yet."""

    def __init__(self, path, command):
        super().__init__(f"missing {path}; run `weakspk {command}` first")
        self.path = path
        self.command = command


class NumericalError(RuntimeError):
    """Training diverged or produced non-finite values.

    ``snapshot`` carries enough state (step, learning rate, parameter norms)
    to diagnose the failure; the CLI writes it next to the training log.
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
