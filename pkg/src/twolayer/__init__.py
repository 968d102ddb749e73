"""Two-layer compressible viscous free-boundary flow in flattened coordinates."""
from .fields import TorusSpec, SlabSpec, SurfaceField, VolumeField

__version__ = "0.1.0"

__all__ = ["TorusSpec", "SlabSpec", "SurfaceField", "VolumeField", "__version__"]
