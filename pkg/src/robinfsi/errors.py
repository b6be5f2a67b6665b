"""Exception hierarchy shared by all solver modules."""


class FsiError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(FsiError, ValueError):
    pass


class TopologyError(FsiError):
    pass


class ElementInversionError(FsiError):
    def __init__(self, element, detF=None):
        self.element = element
        self.detF = detF
        msg = f"element {element} inverted"
        if detF is not None:
            msg += f" (det F = {detF:.3e})"
        super().__init__(msg)


class NonConvergenceError(FsiError):
    def __init__(self, msg, history=()):
        self.history = list(history)
        super().__init__(msg)


class SolverError(FsiError):
    pass


class DivergenceError(FsiError):
    def __init__(self, msg, step=None, time=None):
        self.step = step
        self.time = time
        super().__init__(msg)


class NotSettledError(FsiError):
    pass


class ConfigError(FsiError):
    pass


class UnknownKeyError(ConfigError, KeyError):
    def __init__(self, key, suggestion=None):
        self.key = key
        self.suggestion = suggestion
        msg = f"unknown key {key!r}"
        if suggestion:
            msg += f"; did you mean {suggestion!r}?"
        super().__init__(msg)

    def __str__(self):
        return self.args[0]
