"""Pore-space networks from curvilinear skeletons, with diffusion and microbial decomposition.

Pipeline: ``voxelgrid`` (binary volume) -> ``skeleton`` (homotopic thinning)
-> ``skelgraph`` (branches) -> ``partition`` (nearest-branch regions)
-> ``poregraph`` (attributed region graph) -> ``simulate`` / ``biology``.
"""

__version__ = "0.1.0"
