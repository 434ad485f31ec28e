"""Signed distance fields, sigmoid sharpening, discrete derivatives, curvature.

The numeric core behind the shape-prior supervision. All operations are pure
functions of their inputs and safe to call from multiple threads.

Conventions, fixed across the package:

* The boundary of a binary object is the set of object pixels with at least
  one background pixel among their 4-neighbors; object pixels on the grid
  edge count as boundary.
* The signed distance field ``phi`` is measured in pixel lengths between
  pixel centers: negative strictly inside, exactly 0 on boundary pixels,
  positive outside. ``|phi|`` is the exact Euclidean distance to the nearest
  boundary pixel.
* Derivatives use central differences with replicate (edge-clamp) padding;
  axis ``a`` runs along rows, axis ``b`` along columns.
"""

from dataclasses import dataclass

import numpy as np

from ._kernels import distance_to_sites
from .errors import DegenerateMask

#: Sharpening steepness; the exponent argument is clamped to this magnitude
#: so exp() stays finite in float64.
SHARPEN_GAIN = 1000.0
EXP_CLAMP = 500.0


@dataclass
class BinaryMask:
    """H x W grid of {0,1} with the physical pixel size in mm."""

    grid: np.ndarray
    spacing: tuple = (1.0, 1.0)

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.grid.ndim != 2 or self.grid.size == 0:
            raise ValueError("mask grid must be a nonempty 2-D array")
        vals = np.unique(self.grid)
        if not np.isin(vals, (0, 1)).all():
            raise ValueError("mask grid values must be exactly 0 or 1")
        if not (self.spacing[0] > 0 and self.spacing[1] > 0):
            raise ValueError("spacing components must be positive")


@dataclass
class LevelSetMap:
    """Signed distance field and the boundary pixels it was grown from."""

    phi: np.ndarray
    boundary_set: np.ndarray  # (K, 2) int array of (row, col) boundary pixels


@dataclass
class SharpenedField:
    """Sigmoid-sharpened field and, once filled, its five spatial derivatives."""

    phi_hat: np.ndarray
    d_a: np.ndarray = None
    d_b: np.ndarray = None
    d_aa: np.ndarray = None
    d_bb: np.ndarray = None
    d_ab: np.ndarray = None


@dataclass
class CurvatureMap:
    k: np.ndarray


def boundary_pixels(grid):
    """Object pixels with a 4-neighbor background pixel (or on the grid edge).

    Returns a boolean H x W array.
    """
    obj = np.asarray(grid).astype(bool)
    pad = np.pad(obj, 1, mode="constant", constant_values=False)
    has_bg_neighbor = ~(
        pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    )
    return obj & has_bg_neighbor


def signed_distance(mask):
    """Exact signed Euclidean distance field of a binary mask, in pixels.

    Raises DegenerateMask when the mask is all-0 or all-1, since no boundary
    exists; callers that tolerate degenerate class channels must handle this.
    """
    if not isinstance(mask, BinaryMask):
        mask = BinaryMask(np.asarray(mask))
    obj = mask.grid.astype(bool)
    if obj.all() or not obj.any():
        raise DegenerateMask("mask must contain both object and background pixels")
    boundary = boundary_pixels(obj)
    dist = distance_to_sites(boundary)
    phi = np.where(obj, -dist, dist)
    phi[boundary] = 0.0  # avoid -0.0 on the boundary ring
    return LevelSetMap(phi=phi, boundary_set=np.argwhere(boundary))


def sharpen(phi):
    """Concentrate the field's gradient at the zero level set via a sigmoid.

    phi_hat = 1 / (1 + exp(1000 * phi)), with the exponent argument clamped
    to +/-500 so the result stays finite and strictly inside (0, 1) in
    float64.
    """
    if isinstance(phi, LevelSetMap):
        phi = phi.phi
    arg = np.clip(SHARPEN_GAIN * np.asarray(phi, dtype=np.float64), -EXP_CLAMP, EXP_CLAMP)
    return SharpenedField(phi_hat=1.0 / (1.0 + np.exp(arg)))


def spatial_derivatives(field):
    """Fill the first and second central-difference derivatives of phi_hat.

    Replicate padding at the grid edge; d_ab is the central difference of
    d_a along columns. Returns a new SharpenedField.
    """
    f = np.asarray(field.phi_hat, dtype=np.float64)
    p = np.pad(f, 1, mode="edge")
    d_a = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    d_b = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    d_aa = p[2:, 1:-1] - 2.0 * f + p[:-2, 1:-1]
    d_bb = p[1:-1, 2:] - 2.0 * f + p[1:-1, :-2]
    pa = np.pad(d_a, ((0, 0), (1, 1)), mode="edge")
    d_ab = (pa[:, 2:] - pa[:, :-2]) / 2.0
    return SharpenedField(phi_hat=f, d_a=d_a, d_b=d_b, d_aa=d_aa, d_bb=d_bb, d_ab=d_ab)


def curvature(field):
    """Mean curvature of the graph surface z = phi_hat, taken elementwise.

    K = |(1 + d_a^2) d_bb + (1 + d_b^2) d_aa - 2 d_a d_b d_ab|
        / (2 (1 + d_a^2 + d_b^2)^1.5)

    The numerator's absolute value makes K nonnegative; the denominator is
    at least 2, so K is finite everywhere.
    """
    for name in ("d_a", "d_b", "d_aa", "d_bb", "d_ab"):
        if getattr(field, name) is None:
            raise ValueError("derivatives must be filled; call spatial_derivatives")
    da, db = field.d_a, field.d_b
    num = np.abs((1.0 + da**2) * field.d_bb + (1.0 + db**2) * field.d_aa
                 - 2.0 * da * db * field.d_ab)
    den = 2.0 * (1.0 + da**2 + db**2) ** 1.5
    return CurvatureMap(k=num / den)


def curvature_of_phi(phi):
    """Convenience chain: sharpen -> spatial_derivatives -> curvature."""
    return curvature(spatial_derivatives(sharpen(phi))).k
