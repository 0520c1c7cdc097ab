"""Exception hierarchy shared by all oqft modules."""


class OqftError(Exception):
    """Base class for every error raised by this package."""


class TruncationError(OqftError):
    """Fock-space cutoff too small for the requested state or evolution."""


class OrderError(OqftError):
    """Hamiltonian produces phase-space derivatives above second order."""


class UnsupportedDiffusion(OqftError):
    """Diffusion matrix is state dependent and cannot be split."""


class ConvergenceError(OqftError):
    """Too few trajectories reached a fixed point of the cyclic coupling."""


class StabilityError(OqftError):
    """Non-finite values or a step size outside the stable range."""


class InfiniteAction(OqftError):
    """A noiseless coordinate departs from its deterministic flow."""


class OverlapError(OqftError):
    """Amplified output distributions overlap too much to classify."""


class IncompatibleHistories(OqftError):
    """History specs do not share times and projector sets."""
