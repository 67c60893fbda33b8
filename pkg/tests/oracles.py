"""Independent reference computations, written without the package.

Scalar pure-Python evaluation of the published sRGB / CIELAB formulas, plain
closed forms for the loss and metric examples, and the frozen values they
produced.
"""

import math

# sRGB primaries with a D65 white, linear RGB -> XYZ (7-digit form)
_M = (
    (0.4124564, 0.3575761, 0.1804375),
    (0.2126729, 0.7151522, 0.0721750),
    (0.0193339, 0.1191920, 0.9503041),
)
_WHITE = tuple(sum(row) for row in _M)  # D65 white of the same matrix


def _linearise(c):
    return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4


def _f(t):
    d = 6 / 29
    return t ** (1 / 3) if t > d**3 else t / (3 * d * d) + 4 / 29


def lab_of_rgb(r, g, b):
    lin = [_linearise(c) for c in (r, g, b)]
    xyz = [sum(m * c for m, c in zip(row, lin)) for row in _M]
    fx, fy, fz = (_f(v / w) for v, w in zip(xyz, _WHITE))
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


# Frozen output of lab_of_rgb
GOLDEN_LAB = {
    (1.0, 0.0, 0.0): (53.24079183328088, 80.09246954480042, 67.20319253649727),
    (0.0, 1.0, 0.0): (87.73471889497407, -86.18270151612145, 83.17931454093255),
    (0.0, 0.0, 1.0): (32.29700932295047, 79.18752678434745, -107.86016452983817),
}


def kl(p, q):
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)


KL_ONEHOT_VS_UNIFORM = math.log(2)
KL_HALF_VS_QUARTER = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)

PSNR_HALF_OFFSET = 10 * math.log10(1 / 0.25)  # 6.0206 dB
PSNR_MSE_001 = 10 * math.log10(1 / 0.01)  # 20 dB


def ssim_oracle(a, b):
    """Reference SSIM from scikit-image with the classic Gaussian settings."""
    from skimage.metrics import structural_similarity

    return structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                 data_range=1.0)
