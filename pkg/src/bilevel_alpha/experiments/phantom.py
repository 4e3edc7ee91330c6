"""Analytic Shepp-Logan head phantom."""

import numpy as np

from ..errors import InputError

# centre x, centre y, semi-axis a, semi-axis b, rotation (deg), intensity.
# Intensities are the high-contrast ("modified") set, so the image lies in [0, 1].
SHEPP_LOGAN_ELLIPSES = (
    (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
    (0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
)


def generate_shepp_logan(side):
    """Rasterize the phantom on ``side x side`` pixel centres of ``[-1, 1]^2``.

    Row 0 is the top of the image. Returns the image flattened row-major.
    """
    side = int(side)
    if side < 16:
        raise InputError("phantom side must be at least 16")
    c = -1.0 + (2.0 * np.arange(side) + 1.0) / side
    X, Y = np.meshgrid(c, c[::-1])
    img = np.zeros((side, side))
    for x0, y0, a, b, phi, val in SHEPP_LOGAN_ELLIPSES:
        th = np.deg2rad(phi)
        dx, dy = X - x0, Y - y0
        u = dx * np.cos(th) + dy * np.sin(th)
        v = -dx * np.sin(th) + dy * np.cos(th)
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += val
    return np.clip(img, 0.0, 1.0).ravel()
