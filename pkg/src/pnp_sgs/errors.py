"""Exception types shared across the package."""


class PnPSGSError(Exception):
    pass


class ShapeError(PnPSGSError, ValueError):
    pass


class ParameterError(PnPSGSError, ValueError):
    pass


class EstimationError(PnPSGSError):
    pass


class SingularityError(PnPSGSError):
    """Raised when a Gaussian precision has a (numerically) zero eigenvalue."""


class SamplerError(PnPSGSError):
    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


class ProtocolError(PnPSGSError):
    """External denoiser spoke something other than a valid PNPD frame."""
