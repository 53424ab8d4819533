class RepoEvolveError(Exception):
    """Base error. `exit_code` is what the CLI exits with."""

    exit_code: int = 2


class ConfigError(RepoEvolveError):
    exit_code = 1


class DataError(RepoEvolveError, ValueError):
    exit_code = 2


class MissingArtifactError(DataError):
    def __init__(self, path, stage: str):
        super().__init__(f"Missing artifact {path}; run `repo-evolve {stage}` first")
        self.path = path
        self.stage = stage


class NumericError(RepoEvolveError, ArithmeticError):
    exit_code = 3

    def __init__(self, message: str, epoch: int | None = None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch
