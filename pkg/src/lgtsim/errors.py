"""Exception types shared across the simulator."""


class SimulatorError(Exception):
    """Base class for all lgtsim errors."""


class InvalidParameter(SimulatorError, ValueError):
    """A constructor or operation received an out-of-range parameter."""


class RejectedStep(SimulatorError, ValueError):
    """An adversary step violated a game precondition (bad leaf, depth, q)."""


class InvalidNode(SimulatorError, KeyError):
    """A node id does not exist or is not allowed for this operation."""


class ProtocolViolation(SimulatorError, RuntimeError):
    """The caller broke the step protocol, e.g. projecting out nonzero mass."""


class IntegrationFailure(SimulatorError, RuntimeError):
    """The continuous-step integrator could not meet its tolerances."""


class DrainFailure(SimulatorError, RuntimeError):
    """The deadend drain did not converge within its escalation budget."""


class InvalidInstance(SimulatorError, ValueError):
    """A layered-tree instance is malformed for the requested operation."""


class InputError(SimulatorError, ValueError):
    """Mismatched or infeasible inputs to an analysis routine."""
