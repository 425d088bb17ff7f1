"""Valanis-Landel materials: energy/stress in principal stretches, stiffness fitting.

An isotropic energy density is expressed as
    Psi(s1, s2, s3) = sum a(si) + sum b(si*sj) + c(s1*s2*s3)
with univariate functions a, b, c.  The per-element stiffness used to build
the constant system matrix is the least-squares slope of the uniaxial stress
a'(s) + 2 b'(s) + c'(s) over a stretch interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qnsim.linalg import svd_rv_batch

# Log-based terms (Neo-Hookean, Mooney-Rivlin volume penalty) are replaced by
# a quadratic Taylor continuation below this argument, keeping the energy C^2
# for inverted elements.
LOG_EXTENSION_EPS = 0.01

STIFFNESS_SAMPLES = 1001

BUILTIN_NAMES = ("corotated", "stvk", "neohookean", "mooney_rivlin", "polynomial", "spline")


class MaterialError(Exception):
    pass


class ZeroFn:
    def __call__(self, x):
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    def deriv(self, x):
        return np.zeros_like(np.asarray(x, dtype=np.float64))


class PolyFn:
    """Polynomial scalar function, coefficients in ascending order."""

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=np.float64)
        self.dcoeffs = np.polynomial.polynomial.polyder(self.coeffs) if len(self.coeffs) > 1 else np.zeros(1)

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=np.float64), self.coeffs)

    def deriv(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=np.float64), self.dcoeffs)


class LogFn:
    """alpha*log(x) + (beta/2)*log(x)^2, Taylor-continued (C^2) below eps."""

    def __init__(self, alpha, beta, eps=LOG_EXTENSION_EPS):
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.eps = float(eps)
        le = np.log(self.eps)
        self._f_eps = self.alpha * le + 0.5 * self.beta * le * le
        self._df_eps = (self.alpha + self.beta * le) / self.eps
        self._ddf_eps = (self.beta - self.alpha - self.beta * le) / (self.eps * self.eps)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        safe = np.where(x > self.eps, x, 1.0)
        lx = np.log(safe)
        core = self.alpha * lx + 0.5 * self.beta * lx * lx
        d = x - self.eps
        ext = self._f_eps + self._df_eps * d + 0.5 * self._ddf_eps * d * d
        return np.where(x > self.eps, core, ext)

    def deriv(self, x):
        x = np.asarray(x, dtype=np.float64)
        safe = np.where(x > self.eps, x, 1.0)
        core = (self.alpha + self.beta * np.log(safe)) / safe
        ext = self._df_eps + self._ddf_eps * (x - self.eps)
        return np.where(x > self.eps, core, ext)


class HermiteFn:
    """Cubic Hermite spline from (x, y, tangent) control points.

    Linear extrapolation outside the knot range keeps evaluation total.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise MaterialError("spline needs >= 2 control points of form [x, y, tangent]")
        order = np.argsort(pts[:, 0])
        pts = pts[order]
        if np.any(np.diff(pts[:, 0]) <= 0):
            raise MaterialError("spline knots must have distinct x values")
        self.xs, self.ys, self.ts = pts[:, 0], pts[:, 1], pts[:, 2]

    def _segments(self, x):
        i = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, len(self.xs) - 2)
        h = self.xs[i + 1] - self.xs[i]
        u = (x - self.xs[i]) / h
        return i, h, u

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        i, h, u = self._segments(x)
        u2, u3 = u * u, u * u * u
        val = (
            (2 * u3 - 3 * u2 + 1) * self.ys[i]
            + (u3 - 2 * u2 + u) * h * self.ts[i]
            + (-2 * u3 + 3 * u2) * self.ys[i + 1]
            + (u3 - u2) * h * self.ts[i + 1]
        )
        lo = x < self.xs[0]
        hi = x > self.xs[-1]
        val = np.where(lo, self.ys[0] + self.ts[0] * (x - self.xs[0]), val)
        val = np.where(hi, self.ys[-1] + self.ts[-1] * (x - self.xs[-1]), val)
        return val

    def deriv(self, x):
        x = np.asarray(x, dtype=np.float64)
        i, h, u = self._segments(x)
        u2 = u * u
        val = (
            (6 * u2 - 6 * u) * self.ys[i] / h
            + (3 * u2 - 4 * u + 1) * self.ts[i]
            + (-6 * u2 + 6 * u) * self.ys[i + 1] / h
            + (3 * u2 - 2 * u) * self.ts[i + 1]
        )
        val = np.where(x < self.xs[0], self.ts[0], val)
        val = np.where(x > self.xs[-1], self.ts[-1], val)
        return val


@dataclass(frozen=True)
class FitInterval:
    x_start: float = 0.5
    x_end: float = 1.5

    def __post_init__(self):
        if not (0.0 < self.x_start < 1.0 < self.x_end):
            raise MaterialError(f"fit interval must satisfy 0 < start < 1 < end, got {self}")


@dataclass
class MaterialModel:
    """Valanis-Landel triple with a cached stiffness slope."""

    a: object
    b: object
    c: object
    name: str
    shift: float = 0.0
    k_fit: float | None = field(default=None, compare=False)

    def __post_init__(self):
        # normalize so the rest configuration has zero energy
        self.shift = float(3 * self.a(1.0) + 3 * self.b(1.0) + self.c(1.0))


@dataclass(frozen=True)
class PDMaterial:
    """Projection material (native projective-dynamics energy): springs or ARAP tets."""

    kind: str  # "mass_spring" | "arap"
    k: float

    def __post_init__(self):
        if self.kind not in ("mass_spring", "arap"):
            raise MaterialError(f"unknown PD material kind {self.kind!r}")
        if self.k <= 0:
            raise MaterialError("PD material stiffness must be positive")


def vl_energy(mat: MaterialModel, sigma) -> float:
    """Energy density at a stretch triple (symmetric in the stretches)."""
    return float(vl_energy_batch(mat, np.asarray(sigma, dtype=np.float64)[None])[0])


def vl_energy_batch(mat: MaterialModel, sigma: np.ndarray) -> np.ndarray:
    s1, s2, s3 = sigma[..., 0], sigma[..., 1], sigma[..., 2]
    return (
        mat.a(s1) + mat.a(s2) + mat.a(s3)
        + mat.b(s1 * s2) + mat.b(s2 * s3) + mat.b(s1 * s3)
        + mat.c(s1 * s2 * s3)
        - mat.shift
    )


def vl_stress(mat: MaterialModel, sigma) -> np.ndarray:
    """Partial derivatives (dPsi/ds1, dPsi/ds2, dPsi/ds3)."""
    return vl_stress_batch(mat, np.asarray(sigma, dtype=np.float64)[None])[0]


def vl_stress_batch(mat: MaterialModel, sigma: np.ndarray) -> np.ndarray:
    s1, s2, s3 = sigma[..., 0], sigma[..., 1], sigma[..., 2]
    da1, da2, da3 = mat.a.deriv(s1), mat.a.deriv(s2), mat.a.deriv(s3)
    db12 = mat.b.deriv(s1 * s2)
    db23 = mat.b.deriv(s2 * s3)
    db13 = mat.b.deriv(s1 * s3)
    dc = mat.c.deriv(s1 * s2 * s3)
    out = np.empty_like(sigma)
    out[..., 0] = da1 + db12 * s2 + db13 * s3 + dc * s2 * s3
    out[..., 1] = da2 + db12 * s1 + db23 * s3 + dc * s1 * s3
    out[..., 2] = da3 + db23 * s2 + db13 * s1 + dc * s1 * s2
    return out


def uniaxial_stress(mat: MaterialModel, s):
    """Stress along one stretch axis with the other two at rest."""
    s = np.asarray(s, dtype=np.float64)
    return mat.a.deriv(s) + 2.0 * mat.b.deriv(s) + mat.c.deriv(s)


def estimate_stiffness(mat: MaterialModel, iv: FitInterval = FitInterval()) -> float:
    """Slope of the best linear fit of the uniaxial stress over the interval.

    Ordinary least squares with intercept, dense uniform sampling."""
    xs = np.linspace(iv.x_start, iv.x_end, STIFFNESS_SAMPLES)
    ys = uniaxial_stress(mat, xs)
    xm, ym = xs.mean(), ys.mean()
    k = float(np.dot(xs - xm, ys - ym) / np.dot(xs - xm, xs - xm))
    if k <= 0:
        raise MaterialError(
            f"material {mat.name!r}: non-positive fitted stiffness {k} over {iv}"
        )
    mat.k_fit = k
    return k


def element_energy_gradient(mat: MaterialModel, G: np.ndarray, x: np.ndarray, volume: float):
    """Energy and per-vertex gradient of one tet with positions x (4,3).

    The gradient uses dPsi/dF = U diag(dPsi/dsigma) V^T chained through the
    constant difference operator G (4,3); entries sum to zero over the element.
    """
    F = np.einsum("va,vc->ac", x, G)
    U, s, V = svd_rv_batch(F[None])
    energy = volume * float(vl_energy_batch(mat, s)[0])
    stress = vl_stress_batch(mat, s)
    P = U[0] @ np.diag(stress[0]) @ V[0].T
    grad = volume * np.einsum("ac,vc->va", P, G)
    return energy, grad


def _positive(params, key, default=None):
    val = params.get(key, default)
    if val is None:
        raise MaterialError(f"missing material parameter {key!r}")
    val = float(val)
    if val <= 0:
        raise MaterialError(f"material parameter {key!r} must be positive, got {val}")
    return val


def make_builtin(name: str, params: dict | None = None) -> MaterialModel:
    """Construct a built-in material model by name."""
    params = dict(params or {})
    if name == "polynomial":
        mu = _positive(params, "mu")
        return MaterialModel(a=PolyFn(mu * np.array([1, -4, 6, -4, 1.0])), b=ZeroFn(), c=ZeroFn(), name=name)
    if name == "corotated":
        mu = _positive(params, "mu")
        lam = float(params.get("lambda", params.get("lam", 0.0)))
        a = PolyFn([mu + 1.5 * lam, -2 * mu - 3 * lam, mu + 0.5 * lam])
        b = PolyFn([0.0, lam])
        return MaterialModel(a=a, b=b, c=ZeroFn(), name=name)
    if name == "stvk":
        mu = _positive(params, "mu")
        lam = float(params.get("lambda", params.get("lam", 0.0)))
        A = mu / 4.0 + lam / 8.0
        a = PolyFn([A + lam / 2.0, 0.0, -2 * A - lam / 2.0, 0.0, A])
        b = PolyFn([-lam / 4.0, 0.0, lam / 4.0])
        return MaterialModel(a=a, b=b, c=ZeroFn(), name=name)
    if name == "neohookean":
        mu = _positive(params, "mu")
        lam = float(params.get("lambda", params.get("lam", 0.0)))
        a = PolyFn([-mu / 2.0, 0.0, mu / 2.0])
        return MaterialModel(a=a, b=ZeroFn(), c=LogFn(alpha=-mu, beta=lam), name=name)
    if name == "mooney_rivlin":
        mu1 = _positive(params, "mu1")
        mu2 = float(params.get("mu2", 0.0))
        if mu2 < 0:
            raise MaterialError("mu2 must be non-negative")
        lam = float(params.get("lambda", params.get("lam", 0.0)))
        a = PolyFn([-mu1, 0.0, mu1])
        b = PolyFn([-mu2, 0.0, mu2]) if mu2 > 0 else ZeroFn()
        return MaterialModel(a=a, b=b, c=LogFn(alpha=-(2 * mu1 + 4 * mu2), beta=lam), name=name)
    if name == "spline":
        fa = HermiteFn(params["spline_a"]) if params.get("spline_a") else ZeroFn()
        fb = HermiteFn(params["spline_b"]) if params.get("spline_b") else ZeroFn()
        fc = HermiteFn(params["spline_c"]) if params.get("spline_c") else ZeroFn()
        if isinstance(fa, ZeroFn) and isinstance(fb, ZeroFn) and isinstance(fc, ZeroFn):
            raise MaterialError("spline material needs at least one of spline_a/spline_b/spline_c")
        return MaterialModel(a=fa, b=fb, c=fc, name=name)
    raise MaterialError(f"unknown material {name!r}; valid: {', '.join(BUILTIN_NAMES)}")
