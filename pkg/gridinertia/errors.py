""" Exceptions raised by gridinertia.

    The three top level families correspond to the exit codes of the command
    line interface (see gridinertia.cli).
"""


class GridInertiaError(Exception):
    "Base class for all errors raised by this package."
    pass


class InputError(GridInertiaError):
    "A case, measurement, gains or config document could not be used."
    pass


class CaseError(InputError):
    pass


class MeasurementError(InputError):
    pass


class ConfigError(InputError):
    pass


class NumericalError(GridInertiaError):
    "A computation failed or would return meaningless numbers."
    pass


class KronReductionError(NumericalError):
    pass


class SpectralError(NumericalError):
    pass


class DegenerateSpectrumError(SpectralError):
    "Raised when two eigenvalues are too close for eigenvector derivatives."

    def __init__(self, i, j, distance):
        self.pair = (i, j)
        self.distance = distance
        super().__init__(('modes {} and {} are degenerate (|lambda_i - lambda'
                          '_j| = {:.3e})').format(i, j, distance))


class ResponseError(NumericalError):
    pass


class IntegrationError(NumericalError):
    pass


class CapabilityError(NumericalError):
    pass


class LPError(NumericalError):
    pass


class InfeasibleError(LPError):
    "Raised when a linear program has no feasible point."
    pass


class UnboundedError(LPError):
    "Raised when a linear program is unbounded below."
    pass


class PlacementError(NumericalError):
    pass


class VerificationError(GridInertiaError):
    "A self-check (oracle or duality comparison) failed."
    pass
