"""Exception types shared across the package."""


class ModelError(ValueError):
    """Invalid structural model definition or assembly input."""


class ZeroEnergyModeError(ModelError):
    """Stiffness matrix is singular: the truss contains a mechanism.

    Carries the free DOF with the largest participation in the
    zero-energy mode so the offending node can be located.
    """

    def __init__(self, node_id, axis, eigenvalue):
        self.node_id = node_id
        self.axis = axis
        self.eigenvalue = eigenvalue
        super().__init__(
            f"stiffness matrix is singular (zero-energy mode, eigenvalue "
            f"{eigenvalue:.3e}); largest motion at node {node_id} axis "
            f"'{axis}'. The truss is under-constrained or a mechanism."
        )


class CollapsedElementError(ValueError):
    """An element has zero current length; its force direction is undefined."""


class FilterNumericsError(RuntimeError):
    """Covariance solve failed inside the filter (non-PD innovation covariance)."""


class BufferMissError(LookupError):
    """Requested tick is no longer (or not yet) in the smoother buffer."""


class NotConvergedError(RuntimeError):
    """An iterative routine did not reach its tolerance within its budget."""
