"""Monocular depth to occupancy to fast-marching planning, with a closed-loop box-world simulator."""

from importlib import resources

__version__ = "0.1.0"


def bundled_scene(name: str) -> str:
    """Path to one of the scene files shipped with the package (``two_stacks``, ``single_stack``)."""
    return str(resources.files(__package__) / "scenes" / f"{name}.txt")
