"""Backlund transformations of n-dimensional confocal quadrics.

Layered library: sjcore (complex bilinear linear algebra on symmetric Jordan
matrices), quadric (confocal families, Ivory affinity, charts), deform
(conjugate-coordinate integrable systems on grids), backlund (matrix Riccati
transformation and its verifications), permute (Bianchi permutability and
Moebius-cube superposition), cli (scenario runner).
"""

__version__ = "0.1.0"

from . import backlund, cli, deform, errors, gridio, numerics, permute, quadric, sjcore

__all__ = [
    "backlund",
    "cli",
    "deform",
    "errors",
    "gridio",
    "numerics",
    "permute",
    "quadric",
    "sjcore",
    "__version__",
]
