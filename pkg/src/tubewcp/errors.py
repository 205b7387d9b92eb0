"""Exception hierarchy shared by all modules."""


class TubeWcpError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(TubeWcpError, ValueError):
    pass


class VanishingCurvature(GeometryError):
    pass


class SingularCurve(GeometryError):
    pass


class DegenerateParametrization(GeometryError):
    pass


class OutOfChart(GeometryError):
    pass


class DegenerateMetric(GeometryError):
    pass


class UnsupportedBase(GeometryError):
    pass


class EmptySample(TubeWcpError, ValueError):
    pass


class InsufficientSamples(TubeWcpError, ValueError):
    pass


class BadExponent(TubeWcpError, ValueError):
    pass


class ExponentOutOfRange(TubeWcpError, ValueError):
    pass


class NonIntegrable(TubeWcpError, ArithmeticError):
    pass


class MeshTooCoarse(TubeWcpError, ValueError):
    pass


class NoConvergence(TubeWcpError, RuntimeError):
    def __init__(self, message, iterations=0, history=()):
        super().__init__(message)
        self.iterations = iterations
        self.history = list(history)


class InvalidTestFunction(TubeWcpError, ValueError):
    pass


class MissingConstant(TubeWcpError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing constant"


class NoAdmissibleEps(TubeWcpError, ValueError):
    pass


class NotCertified(TubeWcpError, ValueError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConfigError(TubeWcpError, ValueError):
    pass
