"""texloom: multi-view consistent texture synthesis at desk scale.

Software rasterization, UV reprojection and weighted fusion, flow-based grid
sampling with per-step view synchronization, embedding-space conditioning,
and texture completion/enhancement. Learned components are pluggable
interfaces with deterministic built-in implementations.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
