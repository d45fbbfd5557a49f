"""Exception types raised across the package."""


class GazeVitError(Exception):
    """Base class for all package errors."""


# gaze pipeline
class EmptyTrace(GazeVitError):
    pass


class AllSaccades(GazeVitError):
    pass


class NoFixations(GazeVitError):
    pass


class ZeroDims(GazeVitError):
    pass


class BadK(GazeVitError):
    pass


class BadWindow(GazeVitError):
    pass


class RoiOutOfBounds(GazeVitError):
    pass


# model
class ShapeMismatch(GazeVitError):
    pass


class MaskLengthMismatch(GazeVitError):
    pass


class NoForwardState(GazeVitError):
    pass


class ConfigMismatch(GazeVitError):
    pass


# training / evaluation
class MissingHeatmap(GazeVitError):
    pass


class EmptyTrainSplit(GazeVitError):
    pass


class EmptySplit(GazeVitError):
    pass


# explain / synth
class DimMismatch(GazeVitError):
    pass


class InfeasibleSpec(GazeVitError):
    pass
