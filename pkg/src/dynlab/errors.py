"""Exception hierarchy shared by all dynlab modules."""


class DynlabError(Exception):
    """Base class for every error raised by dynlab."""


class InvalidProblemError(DynlabError, ValueError):
    pass


class InvalidScheduleError(DynlabError, ValueError):
    pass


class InvalidStartError(DynlabError, ValueError):
    pass


class InvalidParameterError(DynlabError, ValueError):
    pass


class InvalidInputError(DynlabError, ValueError):
    pass


class InvalidGridError(DynlabError, ValueError):
    pass


class UnsupportedScheduleError(DynlabError, ValueError):
    pass


class UnsupportedCompositionError(DynlabError, ValueError):
    pass


class InsufficientDataError(DynlabError, ValueError):
    pass


class InvalidPairingError(DynlabError, ValueError):
    """Two specs are not related by the time-rescaling theorem."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class DivergenceError(DynlabError, ArithmeticError):
    """State norm blew past the divergence threshold (or became non-finite)."""

    def __init__(self, index, time, norm):
        super().__init__(
            f"trajectory diverged at step {index} (t={time:.6g}, |state|={norm:.3g})")
        self.index = index
        self.time = time
        self.norm = norm


class EnsembleFailureError(DynlabError, ArithmeticError):
    def __init__(self, n_diverged, n_paths, seeds):
        super().__init__(
            f"{n_diverged} of {n_paths} ensemble paths diverged (seeds {list(seeds)[:10]})")
        self.n_diverged = n_diverged
        self.n_paths = n_paths
        self.seeds = tuple(seeds)


class ConfigError(DynlabError, ValueError):
    """Schema validation failure; ``errors`` holds (json_path, message) pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{path}: {msg}" for path, msg in self.errors]
        super().__init__("invalid config:\n  " + "\n  ".join(lines))
