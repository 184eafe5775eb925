"""Exception types raised across the package."""


class CassavaSegError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CassavaSegError, ValueError):
    pass


class ParseError(CassavaSegError, ValueError):
    pass


class UnknownLabel(ParseError):
    pass


class DegeneratePolygon(ParseError):
    pass


class UnmappedColor(CassavaSegError, ValueError):
    def __init__(self, color, x, y):
        super().__init__(f"color {tuple(color)} at (x={x}, y={y}) is not in the palette")
        self.color = tuple(int(c) for c in color)
        self.x = x
        self.y = y


class InsufficientBatch(CassavaSegError, ValueError):
    pass


class MissingGradient(CassavaSegError, ValueError):
    pass


class ConfigError(CassavaSegError, ValueError):
    pass


class DegenerateInput(CassavaSegError, ValueError):
    pass


class DegenerateHistogram(CassavaSegError, ValueError):
    pass


class NoRootDetected(CassavaSegError, ValueError):
    pass


class RangeError(CassavaSegError, ValueError):
    pass


class InsufficientData(CassavaSegError, ValueError):
    pass


class DataError(CassavaSegError, ValueError):
    pass


class DivergenceError(CassavaSegError, RuntimeError):
    def __init__(self, epoch, message="loss became NaN"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch
