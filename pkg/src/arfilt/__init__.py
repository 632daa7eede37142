"""arfilt: learning improper autoregressive filters for partially observed
linear systems, with design-based rollouts, a min-max refinement step, and
the evaluation tooling around them."""

__version__ = "0.1.0"

from arfilt._kernels import BACKEND as KERNEL_BACKEND

__all__ = ["KERNEL_BACKEND", "__version__"]
