"""Heteroskedastic normal triangular design with closed-form structural functions.

    X = pi1 + pi2 Z + pi3 Z1 + sigma_x Φ⁻¹(V)
    Y = b1 + b2 X + b3 Z1 + (s1 + s2 X)(θ Φ⁻¹(V) + sqrt(1 - θ²) Φ⁻¹(U))

with V, U independent uniforms. The composite disturbance is standard
normal, so G(y, x) = Φ((y - b1 - b2 x) / (s1 + s2 x)) when there is no Z1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from cfsf.data import ObservationTable
from cfsf.errors import DesignInvalid, InvalidInput

Z_LAWS = ("standard_normal", "bernoulli")


@dataclass(frozen=True)
class TriangularDesign:
    pi1: float = 1.0
    pi2: float = 1.0
    sigma_x: float = 1.0
    b1: float = 1.0
    b2: float = 1.0
    s1: float = 1.0
    s2: float = 0.1
    theta: float = 0.5
    z_law: str = "standard_normal"
    z_p: float = 0.5
    # optional binary covariate Z1 ~ Bernoulli(z1_p) entering both equations
    z1_p: float | None = None
    pi3: float = 0.0
    b3: float = 0.0

    def __post_init__(self):
        if not self.sigma_x > 0:
            raise DesignInvalid("sigma_x must be positive")
        if not abs(self.theta) < 1:
            raise DesignInvalid("theta must satisfy |theta| < 1")
        if self.z_law not in Z_LAWS:
            raise DesignInvalid(f"z_law must be one of {Z_LAWS}")
        if not 0 < self.z_p < 1:
            raise DesignInvalid("z_p must lie in (0, 1)")
        if self.z1_p is not None and not 0 < self.z1_p < 1:
            raise DesignInvalid("z1_p must lie in (0, 1)")

    def scale(self, x):
        return self.s1 + self.s2 * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class OraclePoint:
    kind: str
    coordinates: tuple
    true_value: float


def generate(design: TriangularDesign, n: int, seed: int) -> ObservationTable:
    if n < 1:
        raise InvalidInput("n must be positive")
    rng = np.random.default_rng(seed)
    v = rng.random(n)
    u = rng.random(n)
    if design.z_law == "standard_normal":
        z = rng.standard_normal(n)
    else:
        z = (rng.random(n) < design.z_p).astype(float)
    z1 = None
    shift_x = shift_y = 0.0
    if design.z1_p is not None:
        z1 = (rng.random(n) < design.z1_p).astype(float)
        shift_x, shift_y = design.pi3 * z1, design.b3 * z1
    # keep uniforms off the boundary so Φ⁻¹ stays finite
    tiny = np.finfo(float).tiny
    v = np.clip(v, tiny, 1.0 - 1e-16)
    u = np.clip(u, tiny, 1.0 - 1e-16)
    ev = ndtri(v)
    x = design.pi1 + design.pi2 * z + shift_x + design.sigma_x * ev
    scale = design.scale(x)
    if np.any(scale <= 0):
        raise DesignInvalid("s1 + s2*x is not positive on the generated support")
    eps = design.theta * ev + np.sqrt(1.0 - design.theta ** 2) * ndtri(u)
    y = design.b1 + design.b2 * x + shift_y + scale * eps
    return ObservationTable(y=y, x=x, z2=z, z1=z1)


def _z1_mix(design: TriangularDesign, z1):
    """(shift, probability) pairs for the Z1 law, or the single fixed value."""
    if design.z1_p is None:
        return [(0.0, 1.0)]
    if z1 is not None:
        return [(design.b3 * float(z1), 1.0)]
    return [(0.0, 1.0 - design.z1_p), (design.b3, design.z1_p)]


def oracle(design: TriangularDesign, kind: str, point, z1=None) -> float:
    """True ASF(x), QSF(τ, x) or DSF(y, x); ``point`` is x, (τ, x) or (y, x).

    With a Z1 covariate the surfaces average over its law unless ``z1``
    fixes it.
    """
    mix = _z1_mix(design, z1)
    if kind == "ASF":
        x = float(np.ravel(point)[-1])
        return float(sum(p * (design.b1 + design.b2 * x + c) for c, p in mix))
    a, x = (float(v) for v in point)
    sc = float(design.scale(x))
    if sc <= 0:
        raise DesignInvalid("s1 + s2*x must be positive at the oracle point")
    if kind == "DSF":
        return float(sum(p * ndtr((a - design.b1 - design.b2 * x - c) / sc) for c, p in mix))
    if kind == "QSF":
        if len(mix) == 1:
            return float(design.b1 + design.b2 * x + mix[0][0] + sc * ndtri(a))
        from scipy.optimize import brentq
        center = design.b1 + design.b2 * x
        lo = center + min(c for c, _ in mix) - 40 * sc
        hi = center + max(c for c, _ in mix) + 40 * sc
        return float(brentq(lambda y: oracle(design, "DSF", (y, x)) - a, lo, hi, xtol=1e-13))
    raise InvalidInput(f"unknown oracle kind {kind!r}")


def oracle_points(design: TriangularDesign, kind: str, region, z1=None):
    return [OraclePoint(kind, tuple(map(float, np.atleast_1d(p))),
                        oracle(design, kind, p, z1)) for p in np.asarray(region)]
