"""Spatial token mixer workbench.

Five spatial token mixers (halo, shifted-window and spatial-reduction
attention, depth-wise convolution, deformable convolution v3) plugged into
one four-stage backbone, plus harnesses for parameter/MAC accounting,
effective-receptive-field maps and geometric-invariance sweeps.

Heavy submodules are imported lazily so that `stmlab --threads N` can pin
BLAS thread pools before numpy spins them up.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
