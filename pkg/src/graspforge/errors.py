"""Exception types shared across the toolkit.

Every domain error derives from GraspForgeError so the CLI can map any
failure to a stable error name and exit code 1.
"""


class GraspForgeError(Exception):
    """Base class for all domain errors."""

    @property
    def name(self) -> str:
        return type(self).__name__


class DegenerateInput(GraspForgeError):
    """Point set is collinear/coplanar or too small for a hull."""


class OpenMesh(GraspForgeError):
    """Mesh failed the watertightness parity check during voxelization."""


class EmptyShape(GraspForgeError):
    """Voxel subset is empty."""


class SelfIntersecting(GraspForgeError):
    """Procedural cable folded into itself and resampling gave up."""


class Overfilled(GraspForgeError):
    """A cable could not be placed in the bin within the attempt budget."""


class NoCandidates(GraspForgeError):
    """Grasp sampling produced zero force-closure candidates."""


class SingleClass(GraspForgeError):
    """Dataset contains only one label class."""


class ShapeMismatch(GraspForgeError):
    """Tensor or patch shape does not match what the network expects."""


class Empty(GraspForgeError):
    """Candidate list is empty."""


class DatasetNotFound(GraspForgeError):
    """Dataset index file does not exist."""


class ConvergenceWarning(RuntimeWarning):
    """GJK hit its iteration cap; the returned distance is best-effort."""
