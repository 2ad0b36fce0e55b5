"""Exception types shared across the package."""


class PcnError(Exception):
    """Root of every error raised by pcnflow."""


class ConfigError(PcnError):
    """Bad user input: malformed files, unknown keys, invalid parameters."""


class MalformedFile(ConfigError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class EmptyFile(ConfigError):
    pass


class NotACirculation(PcnError):
    pass


class TreeNotSpanning(PcnError):
    pass


class NoPath(PcnError):
    def __init__(self, src, dst):
        super().__init__(f"no path from {src} to {dst}")
        self.src = src
        self.dst = dst


class EmptyPathSet(PcnError):
    def __init__(self, pair):
        super().__init__(f"demanded pair {pair} has no candidate paths")
        self.pair = pair


class NumericalFailure(PcnError):
    pass


class NotConverged(PcnError):
    """Raised by iterative solvers; ``trace`` keeps every recorded iterate."""

    def __init__(self, message, trace=None, result=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
        self.result = result


class StepSizeTooLarge(PcnError):
    pass


class UnknownUnit(PcnError):
    pass


class GenerationFailed(PcnError):
    pass


class UnknownAck(PcnError):
    pass
