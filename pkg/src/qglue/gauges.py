"""Dimension constants, gauge transforms, the cylindrical fourth-order
conformal operator and the constant-curvature residual.

Conventions fixed here and used everywhere else:

* cylindrical coordinate t = -log(dist/r0), so t grows toward the puncture;
* angular Laplacian sign Delta_theta phi = -lambda phi with lambda = l(l+n-2);
* a field on the cylinder is stored per angular mode: v(t, theta) =
  sum_l w_l(t) phi_l(theta) with phi_l the degree-l zonal polynomial
  normalized by phi_l(1) = 1 (so phi_0 == 1 and phi_1 = <theta, e>).
"""

from dataclasses import dataclass, field
from functools import lru_cache
import json

import numpy as np
from scipy.special import eval_gegenbauer, roots_gegenbauer

from .errors import DomainError
from .fd import apply_derivative

__all__ = [
    "GaugeConstants", "derive_constants", "CylField", "AngularBasis",
    "emden_fowler_forward", "emden_fowler_inverse", "kelvin", "kelvin_cyl",
    "paneitz_cyl_apply", "q_residual", "QResidual",
]


@dataclass(frozen=True)
class GaugeConstants:
    """All dimension-dependent coefficients of the cylindrical problem.

    c2, c0   second- and zeroth-order ODE coefficients,
    cN       coefficient of the critical nonlinearity v^p,
    p        critical exponent (n+4)/(n-4),
    qTarget  the constant curvature value n(n^2-4)/8,
    epsBar   largest necksize; the constant solution of the ODE,
    K        linearized potential coefficient n(n+4)(n^2-4)/16,
    cH       coefficient of v^(2n/(n-4)) in the conserved energy.
    """

    n: int
    c2: float
    c0: float
    cN: float
    p: float
    qTarget: float
    epsBar: float
    K: float
    cH: float

    @property
    def qExp(self):
        """Exponent 2n/(n-4) of the energy's potential term."""
        return 2.0 * self.n / (self.n - 4)

    def lam(self, l):
        """Angular eigenvalue of the degree-l zonal mode."""
        return float(l * (l + self.n - 2))


def derive_constants(n):
    """Constants of the cylindrical equation in dimension n >= 5."""
    if int(n) != n or n < 5:
        raise DomainError(f"dimension must be an integer >= 5, got {n}")
    n = int(n)
    return GaugeConstants(
        n=n,
        c2=(n * (n - 4) + 8) / 2.0,
        c0=n ** 2 * (n - 4) ** 2 / 16.0,
        cN=n * (n ** 2 - 4) * (n - 4) / 16.0,
        p=(n + 4) / (n - 4),
        qTarget=n * (n ** 2 - 4) / 8.0,
        epsBar=(n * (n - 4) / (n ** 2 - 4)) ** ((n - 4) / 8.0),
        K=n * (n + 4) * (n ** 2 - 4) / 16.0,
        cH=(n - 4) ** 2 * (n ** 2 - 4) / 32.0,
    )


# ----------------------------------------------------------------------
# angular machinery: zonal modes on S^{n-1}


class AngularBasis:
    """Zonal harmonics of degree 0..L on S^{n-1} sampled at Gauss-Gegenbauer
    quadrature nodes in c = cos(polar angle).

    phi_l(c) is the degree-l Gegenbauer polynomial C_l^{(n-2)/2} normalized to
    phi_l(1) = 1; projection uses the sphere measure factor (1-c^2)^{(n-3)/2}.
    """

    def __init__(self, n, degrees, nquad=None):
        self.n = n
        self.degrees = tuple(int(l) for l in degrees)
        L = max(self.degrees) if self.degrees else 0
        nq = nquad if nquad is not None else max(16, 2 * L + 12)
        alpha = (n - 2) / 2.0
        # roots_gegenbauer uses weight (1-c^2)^(alpha - 1/2) = (1-c^2)^((n-3)/2)
        nodes, weights = roots_gegenbauer(nq, alpha)
        self.nodes = nodes
        self.weights = weights
        self.phi = np.empty((len(self.degrees), nq))
        self.norm2 = np.empty(len(self.degrees))
        for k, l in enumerate(self.degrees):
            vals = eval_gegenbauer(l, alpha, nodes)
            at_one = eval_gegenbauer(l, alpha, 1.0)
            self.phi[k] = vals / at_one
            self.norm2[k] = np.sum(weights * self.phi[k] ** 2)

    def reconstruct(self, coeffs):
        """Point values on the quadrature nodes from mode coefficients.

        coeffs: (nmodes, nt) -> (nt, nquad) array.
        """
        return np.asarray(coeffs).T @ self.phi

    def project(self, point_vals):
        """Mode coefficients from (nt, nquad) point values."""
        out = (point_vals * self.weights) @ self.phi.T
        return (out / self.norm2).T


@lru_cache(maxsize=None)
def _basis_cached(n, degrees, nquad):
    return AngularBasis(n, degrees, nquad)


# ----------------------------------------------------------------------
# cylinder fields


@dataclass
class Mode:
    l: int
    lam: float
    samples: np.ndarray


@dataclass
class CylField:
    """Function on a truncated cylinder stored as zonal-mode coefficients on a
    uniform t-grid."""

    constants: GaugeConstants
    t: np.ndarray
    modes: list = field(default_factory=list)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if len(self.t) < 2:
            raise DomainError("t grid needs at least two points")
        dt = np.diff(self.t)
        if not np.allclose(dt, dt[0], rtol=1e-12, atol=1e-12 * abs(dt[0])):
            raise DomainError("t grid must be uniform")
        prev = -1.0
        for m in self.modes:
            m.samples = np.asarray(m.samples, dtype=float)
            if m.samples.shape != self.t.shape:
                raise DomainError("mode sample length must match the t grid")
            expected = self.constants.lam(m.l)
            if abs(m.lam - expected) > 1e-10 * max(1.0, expected):
                raise DomainError(
                    f"mode {m.l}: eigenvalue {m.lam} != l(l+n-2) = {expected}")
            if m.lam < prev - 1e-14:
                raise DomainError("mode eigenvalues must be nondecreasing")
            prev = m.lam

    # -- constructors ---------------------------------------------------

    @classmethod
    def from_modes(cls, constants, t, samples_by_degree):
        modes = [Mode(l, constants.lam(l), np.asarray(s, dtype=float))
                 for l, s in sorted(samples_by_degree.items())]
        return cls(constants, np.asarray(t, dtype=float), modes)

    @classmethod
    def mode0(cls, constants, t, samples):
        return cls.from_modes(constants, t, {0: samples})

    # -- basic accessors ------------------------------------------------

    @property
    def h(self):
        return float(self.t[1] - self.t[0])

    @property
    def degrees(self):
        return [m.l for m in self.modes]

    def mode(self, l):
        for m in self.modes:
            if m.l == l:
                return m
        raise KeyError(f"no mode of degree {l}")

    def coeff_matrix(self):
        return np.stack([m.samples for m in self.modes], axis=0)

    def basis(self, nquad=None):
        return _basis_cached(self.constants.n, tuple(self.degrees),
                             nquad if nquad is not None else
                             max(16, 2 * max(self.degrees, default=0) + 12))

    def point_values(self, nquad=None):
        """(nt, nquad) samples of the field on the angular quadrature set."""
        return self.basis(nquad).reconstruct(self.coeff_matrix())

    def like(self, samples_by_degree):
        return CylField.from_modes(self.constants, self.t, samples_by_degree)

    def copy(self):
        return self.like({m.l: m.samples.copy() for m in self.modes})

    def sup_norm(self):
        """Pointwise sup over the t grid and the angular quadrature set."""
        return float(np.max(np.abs(self.point_values())))

    # -- arithmetic ------------------------------------------------------

    def _check_compatible(self, other):
        if len(other.t) != len(self.t) or abs(other.t[0] - self.t[0]) > 1e-12 \
                or abs(other.h - self.h) > 1e-14:
            raise DomainError("fields live on different grids")

    def __add__(self, other):
        self._check_compatible(other)
        out = {m.l: m.samples.copy() for m in self.modes}
        for m in other.modes:
            out[m.l] = out.get(m.l, 0.0) + m.samples
        return CylField.from_modes(self.constants, self.t, out)

    def __sub__(self, other):
        return self + (other * -1.0)

    def __mul__(self, scalar):
        return self.like({m.l: m.samples * float(scalar) for m in self.modes})

    __rmul__ = __mul__

    # -- serialization ----------------------------------------------------

    def to_json(self):
        return {
            "n": self.constants.n,
            "tMin": float(self.t[0]),
            "tMax": float(self.t[-1]),
            "nT": int(len(self.t)),
            "modes": [
                {"l": int(m.l), "lambda": float(m.lam),
                 "samples": [float(x) for x in m.samples]}
                for m in self.modes
            ],
        }

    @classmethod
    def from_json(cls, doc):
        consts = derive_constants(doc["n"])
        t = np.linspace(doc["tMin"], doc["tMax"], doc["nT"])
        modes = [Mode(m["l"], m["lambda"], np.array(m["samples"], dtype=float))
                 for m in doc["modes"]]
        return cls(consts, t, modes)

    def dump(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


# ----------------------------------------------------------------------
# gauge transforms


def emden_fowler_forward(profiles, t, constants, r0=1.0):
    """Log-radial transform of Euclidean-gauge mode profiles to the cylinder.

    profiles: {degree: callable r -> samples}; the cylinder field is
    v_l(t) = r^{(n-4)/2} u_l(r) at r = r0 e^{-t}, so the scale-invariant
    radial profile |x|^{(4-n)/2} maps to the constant 1 for any r0.
    """
    if r0 <= 0:
        raise DomainError("r0 must be positive")
    t = np.asarray(t, dtype=float)
    r = r0 * np.exp(-t)
    n = constants.n
    out = {}
    for l, u in sorted(profiles.items()):
        ur = np.asarray(u(r), dtype=float)
        out[l] = r ** ((n - 4) / 2.0) * ur
    fld = CylField.from_modes(constants, t, out)
    if np.any(fld.point_values() <= 0):
        raise DomainError("conformal factor must be positive")
    return fld


def emden_fowler_inverse(v, r0=1.0):
    """Inverse transform; returns (radii, {degree: samples}) with
    u_l(r) = r^{(4-n)/2} v_l(-log(r/r0)).  Radii descend along the t grid."""
    if r0 <= 0:
        raise DomainError("r0 must be positive")
    n = v.constants.n
    r = r0 * np.exp(-v.t)
    return r, {m.l: r ** ((4 - n) / 2.0) * m.samples for m in v.modes}


def kelvin(radii, profiles, constants):
    """Inversion through the unit sphere on radial mode samples:
    K(u)_l(r) = r^{4-n} u_l(1/r); output samples live at radii 1/r."""
    r = np.asarray(radii, dtype=float)
    if np.any(r <= 0):
        raise DomainError("Kelvin transform undefined at the origin")
    n = constants.n
    new_r = 1.0 / r
    return new_r, {l: new_r ** (4 - n) * np.asarray(s, dtype=float)
                   for l, s in profiles.items()}


def kelvin_cyl(v):
    """Kelvin transform in the cylindrical gauge: t -> -t (r0 = 1)."""
    t_new = -v.t[::-1]
    return CylField.from_modes(v.constants, t_new,
                               {m.l: m.samples[::-1].copy() for m in v.modes})


# ----------------------------------------------------------------------
# the fourth-order operator and the residual


def _mode_paneitz(consts, lam, w, h, acc, boundary):
    d4 = apply_derivative(w, h, 4, acc=acc, boundary=boundary)
    d2 = apply_derivative(w, h, 2, acc=acc, boundary=boundary)
    return (d4 + lam ** 2 * w - 2 * lam * d2 - consts.c2 * d2
            + (consts.n * (consts.n - 4) / 2.0) * lam * w + consts.c0 * w)


def paneitz_cyl_apply(v, acc=8, boundary="biased"):
    """Apply the cylindrical fourth-order conformal operator mode by mode:
    w -> w'''' + lam^2 w - 2 lam w'' - c2 w'' + (n(n-4)/2) lam w + c0 w."""
    h = v.h
    out = {m.l: _mode_paneitz(v.constants, m.lam, m.samples, h, acc, boundary)
           for m in v.modes}
    return v.like(out)


@dataclass
class QResidual:
    residual: CylField
    qField: CylField
    supResidual: float
    supQ: float
    trim: int


def q_residual(v, acc=8, boundary="biased", trim=None):
    """Constant-curvature residual and pointwise curvature deviation.

    residual = P_cyl(v) - cN v^p re-projected to modes;
    qField   = (2/(n-4)) v^{-p} P_cyl(v) - qTarget, the deviation of the
               curvature of v^{4/(n-4)} g_cyl from its target value.

    Sup norms are taken over the t-grid and the angular quadrature set; with
    boundary="biased" the reported sups skip `trim` points at each end (the
    one-sided-stencil zone, default one stencil width) while the returned
    fields cover the full grid.
    """
    consts = v.constants
    Pv = paneitz_cyl_apply(v, acc=acc, boundary=boundary)
    basis = v.basis()
    vals = basis.reconstruct(v.coeff_matrix())
    if np.any(vals <= 0):
        raise DomainError("conformal factor must be positive on the "
                          "angular quadrature set")
    Pvals = basis.reconstruct(Pv.coeff_matrix())
    res_vals = Pvals - consts.cN * vals ** consts.p
    q_vals = (2.0 / (consts.n - 4)) * vals ** (-consts.p) * Pvals - consts.qTarget
    res_coeffs = basis.project(res_vals)
    q_coeffs = basis.project(q_vals)
    degrees = v.degrees
    residual = v.like(dict(zip(degrees, res_coeffs)))
    qfield = v.like(dict(zip(degrees, q_coeffs)))
    if trim is None:
        from .fd import stencil_size
        trim = stencil_size(4, acc) // 2 if boundary == "biased" else 0
    sl = slice(trim, len(v.t) - trim) if trim else slice(None)
    return QResidual(
        residual=residual,
        qField=qfield,
        supResidual=float(np.max(np.abs(res_vals[sl]))),
        supQ=float(np.max(np.abs(q_vals[sl]))),
        trim=trim,
    )
