# apps/runs/exceptions.py
from apps.core.exceptions import MidtError


class ConfigValidationError(MidtError):
    """Run configuration rejected; ``key_path`` names the offending key"""

    def __init__(self, key_path, message):
        self.key_path = key_path
        super().__init__(f'{key_path}: {message}', key_path=key_path)


class CheckpointError(MidtError):
    def __init__(self, message, parameter=None, path=None):
        self.parameter = parameter
        self.path = str(path) if path is not None else None
        super().__init__(message, parameter=parameter, path=self.path)


class MissingArtifactError(MidtError):
    """A command needs the output of an earlier command"""

    def __init__(self, path, command):
        self.path = str(path)
        super().__init__(f"missing {path}; run '{command}' first", path=self.path)
