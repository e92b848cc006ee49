"""gen3d: adversarially trained occupancy/radiance fields with mesh export."""

__version__ = "0.1.0"
