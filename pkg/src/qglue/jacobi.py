"""Linearization about a periodic orbit: per-mode operators, solution
generators from the deformation families, Floquet analysis, the conserved
boundary pairing, and deficiency-space bases.
"""

from dataclasses import dataclass, field
import json
from math import comb

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import BPoly

from .errors import DomainError, NumericalError
from .fd import apply_derivative
from .gauges import CylField
from .delaunay import DelaunayOrbit, solve_orbit

__all__ = [
    "ModeOperator", "mode_apply", "monodromy", "MonodromyData",
    "monodromy_data", "IndicialSpectrum", "indicial_roots",
    "orbit_sensitivities", "VariationalField", "JacobiBasis", "generators",
    "symplectic_pairing", "CutoffSpec", "DeficiencyField", "deficiency_basis",
    "deficiency_gram",
]


@dataclass(frozen=True)
class ModeOperator:
    """Mode-l linearized operator about an orbit:
    w -> w'''' - (2 lam + c2) w''
         + (lam^2 + (n(n-4)/2) lam + c0 - K v_eps^{p-1}) w."""

    orbit: DelaunayOrbit
    lam: float

    @property
    def constants(self):
        return self.orbit.constants

    @property
    def A(self):
        """Coefficient of -w''."""
        return 2.0 * self.lam + self.constants.c2

    def potential(self, t):
        """Zeroth-order coefficient Q(t)."""
        c = self.constants
        v = self.orbit.eval(t, 0)
        return (self.lam ** 2 + c.n * (c.n - 4) / 2.0 * self.lam + c.c0
                - c.K * v ** (c.p - 1))


def mode_apply(op, t, w, acc=8, boundary="biased"):
    """Apply the mode operator to samples w on the uniform grid t."""
    t = np.asarray(t, dtype=float)
    w = np.asarray(w, dtype=float)
    h = t[1] - t[0]
    d4 = apply_derivative(w, h, 4, acc=acc, boundary=boundary)
    d2 = apply_derivative(w, h, 2, acc=acc, boundary=boundary)
    return d4 - op.A * d2 + op.potential(t) * w


# ----------------------------------------------------------------------
# Floquet analysis


def _flow_rhs(op):
    A = op.A

    def rhs(t, Y):
        Y = Y.reshape(4, -1)
        out = np.empty_like(Y)
        out[0] = Y[1]
        out[1] = Y[2]
        out[2] = Y[3]
        out[3] = A * Y[2] - op.potential(t) * Y[0]
        return out.reshape(-1)

    return rhs


@dataclass
class MonodromyData:
    matrix: np.ndarray          # forward flow over one period
    backward: np.ndarray        # backward flow over one period (= inverse)
    detFactored: float          # det from subinterval factors
    t0: float
    period: float


def monodromy_data(op, t0=0.0, n_sub=24, tol=1e-12):
    """Forward and backward one-period flows of the mode system, with the
    determinant accumulated over subintervals (the direct determinant of the
    assembled matrix is destroyed by the dynamic range of the multipliers)."""
    T = op.orbit.period
    rhs = _flow_rhs(op)

    def sweep(direction):
        M = np.eye(4)
        det = 1.0
        edges = t0 + direction * np.linspace(0.0, T, n_sub + 1)
        for k in range(n_sub):
            r = solve_ivp(rhs, (edges[k], edges[k + 1]),
                          np.eye(4).reshape(-1), method="DOP853",
                          rtol=tol, atol=tol)
            if not r.success:
                raise NumericalError("monodromy integration failed")
            F = r.y[:, -1].reshape(4, 4)
            M = F @ M
            det *= np.linalg.det(F)
        return M, det

    Mf, detf = sweep(+1.0)
    Mb, _ = sweep(-1.0)
    return MonodromyData(matrix=Mf, backward=Mb, detFactored=detf,
                         t0=t0, period=T)


def monodromy(op, t0=0.0, n_sub=24, tol=1e-12):
    """One-period flow matrix of the mode system (columns are flows of the
    canonical jet basis)."""
    return monodromy_data(op, t0=t0, n_sub=n_sub, tol=tol).matrix


def dominant_direction(M):
    """Unit eigenvector of the largest-multiplier eigenvalue, sign-normalized
    so the largest component is positive."""
    ev, V = np.linalg.eig(M)
    i = int(np.argmax(np.abs(ev)))
    vec = np.real(V[:, i])
    nrm = np.linalg.norm(vec)
    if nrm == 0:
        raise NumericalError("degenerate dominant eigenvector")
    vec = vec / nrm
    if vec[np.argmax(np.abs(vec))] < 0:
        vec = -vec
    return vec


@dataclass
class IndicialSpectrum:
    eps: float
    n: int
    perMode: list  # entries: dict(l, lambda, exponents, jordanFlags, frequencies)

    def exponents(self, l):
        for entry in self.perMode:
            if entry["l"] == l:
                return entry["exponents"]
        raise KeyError(f"no mode of degree {l}")

    def to_json(self):
        return {
            "eps": self.eps,
            "n": self.n,
            "modes": [
                {"l": e["l"], "lambda": e["lambda"],
                 "exponents": [float(x) for x in e["exponents"]],
                 "jordanFlags": [bool(b) for b in e["jordanFlags"]],
                 "frequencies": [float(x) for x in e["frequencies"]]}
                for e in self.perMode
            ],
        }

    def dump(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, sort_keys=True)


def _constant_mode_exponents(consts, lam):
    """Characteristic-quartic exponents about the equilibrium orbit."""
    q0 = (lam ** 2 + consts.n * (consts.n - 4) / 2.0 * lam + consts.c0
          - consts.K * consts.epsBar ** (consts.p - 1))
    mu = np.roots([1.0, 0.0, -(2 * lam + consts.c2), 0.0, q0])
    exps = sorted(float(np.real(m)) for m in mu)
    freqs = sorted(float(abs(np.imag(m))) for m in mu)
    return exps, [False] * 4, freqs


def indicial_roots(orbit, degrees=None, n_sub=24, tol=1e-12):
    """Per-mode Floquet exponents (exponential growth rates).

    Exponents are extracted from the two multipliers outside the unit circle
    and mirrored (the flow preserves the boundary pairing, so multipliers come
    in reciprocal pairs); multiplier clusters at |mu| = 1 are snapped to
    exponent 0 with a Jordan flag when the cluster is numerically defective.
    For the constant orbit the exponents come from the characteristic quartic
    (the same values the monodromy path reproduces, with oscillation
    frequencies resolvable there).
    """
    consts = orbit.constants
    if degrees is None:
        degrees = range(5)
    entries = []
    for l in sorted(set(int(d) for d in degrees)):
        lam = consts.lam(l)
        if orbit.isConstant:
            exps, flags, freqs = _constant_mode_exponents(consts, lam)
        else:
            data = monodromy_data(ModeOperator(orbit, lam),
                                  n_sub=n_sub, tol=tol)
            M, T = data.matrix, data.period
            ev = np.linalg.eigvals(M)
            order = np.argsort(-np.abs(ev))
            ev = ev[order]
            big = ev[:2]
            # adaptive neutral-cluster tolerance from the matrix scale
            tau = max(1e-8, 10.0 * np.sqrt(np.finfo(float).eps
                                           * np.linalg.norm(M, 2)))
            gam = []
            flags_pos = []
            freqs_pos = []
            for mu in big:
                if abs(abs(mu) - 1.0) <= tau:
                    gam.append(0.0)
                    defective = (np.linalg.matrix_rank(
                        M - np.eye(4) * np.real(mu), tol=tau) > 2)
                    flags_pos.append(bool(defective))
                else:
                    gam.append(float(np.log(np.abs(mu)) / T))
                    flags_pos.append(False)
                freqs_pos.append(float(abs(np.angle(mu)) / T))
            exps = sorted([-gam[0], -gam[1], gam[1], gam[0]])
            flags = [flags_pos[0], flags_pos[1], flags_pos[1], flags_pos[0]]
            freqs = sorted([freqs_pos[0], freqs_pos[1]] * 2)
        entries.append({"l": l, "lambda": lam, "exponents": exps,
                        "jordanFlags": flags, "frequencies": freqs})
    return IndicialSpectrum(eps=orbit.eps, n=consts.n, perMode=entries)


# ----------------------------------------------------------------------
# family sensitivities and the variational solution


def orbit_sensitivities(orbit, n_sub=24, tol=1e-13):
    """(ds/deps, dT/deps) of the shooting data along the orbit family.

    Differentiating the periodicity of the family in the necksize gives
    (M - I) zeta0 + T' F0 = 0 with zeta0 = (1, 0, ds/deps, 0) and F0 the
    phase direction at the minimum; solved least-squares against the
    one-period flow M, this pins both sensitivities to near machine accuracy
    without extra orbit solves.
    """
    if orbit.isConstant:
        raise DomainError("sensitivities undefined at the family endpoint")
    consts = orbit.constants
    M = monodromy_data(ModeOperator(orbit, 0.0), n_sub=n_sub, tol=tol).matrix
    F0 = orbit.jet(0.0, max_deriv=4)[1:5]
    A = np.stack([(M - np.eye(4))[:, 2], F0], axis=1)
    rhsv = -(M - np.eye(4))[:, 0]
    sol, *_ = np.linalg.lstsq(A, rhsv, rcond=None)
    ds_deps = float(sol[0])
    dT_deps = float(sol[1])
    return ds_deps, dT_deps


class VariationalField:
    """The necksize derivative of the orbit as a function of t, with full
    jets.

    Integrated on half a period and extended by the family structure:
      phi(t + kT) = phi(t) - k T' vdot(t)
      phi(t)      = phi(T-t) + T' vdot(T-t)   for t in [T/2, T].
    """

    def __init__(self, orbit, ds_deps, dT_deps, nodes=1025, tol=1e-13):
        self.orbit = orbit
        self.dsdEps = ds_deps
        self.dTdEps = dT_deps
        c = orbit.constants
        half = orbit.period / 2.0

        def rhs(t, y):
            v = orbit.eval(t, 0)
            pot = c.c0 - c.K * v ** (c.p - 1)
            return (y[1], y[2], y[3], c.c2 * y[2] - pot * y[0])

        tg = np.linspace(0.0, half, nodes)
        sol = solve_ivp(rhs, (0.0, half), [1.0, 0.0, ds_deps, 0.0],
                        method="DOP853", rtol=tol, atol=tol, t_eval=tg,
                        max_step=half / (nodes - 1))
        if not sol.success:
            raise NumericalError("variational integration failed")
        w, w1, w2, w3 = sol.y
        vj = orbit.jet(tg, max_deriv=1)
        pot = c.c0 - c.K * vj[0] ** (c.p - 1)
        potdot = -c.K * (c.p - 1) * vj[0] ** (c.p - 2) * vj[1]
        w4 = c.c2 * w2 - pot * w
        w5 = c.c2 * w3 - pot * w1 - potdot * w
        comps = [(w, w1, w2), (w1, w2, w3), (w2, w3, w4), (w3, w4, w5)]
        # per-component quintic Hermite keeps each derivative at sample-level
        # accuracy instead of amplifying integrator noise
        self._interp = [BPoly.from_derivatives(tg, np.stack(j, axis=1))
                        for j in comps]

    def sample_states(self, tgrid, tol=1e-13):
        """Contiguous joint (orbit + variational) integration over the
        window; seam-free but only trustworthy while e^{gamma |t|} times the
        initial-data error stays small (about a half period of margin), which
        is all residual-grade checks need."""
        tgrid = np.asarray(tgrid, dtype=float)
        c = self.orbit.constants
        orbit = self.orbit

        def rhs(t, y):
            v = y[0]
            pot = c.c0 - c.K * v ** (c.p - 1)
            return (y[1], y[2], y[3],
                    c.c2 * y[2] - c.c0 * v + c.cN * v ** c.p,
                    y[5], y[6], y[7], c.c2 * y[6] - pot * y[4])

        cap = orbit.period / 512.0
        if len(tgrid) > 1:
            cap = min(cap, 0.5 * float(np.min(np.diff(np.sort(tgrid)))))
        y0 = [orbit.eps, 0.0, orbit.vDdot0, 0.0, 1.0, 0.0, self.dsdEps, 0.0]
        out = np.empty((4, len(tgrid)))
        for mask, direction in ((tgrid < 0, -1), (tgrid >= 0, +1)):
            if not mask.any():
                continue
            te = np.sort(tgrid[mask])
            if direction < 0:
                te = te[::-1]
            t_end = float(te[-1]) if te[-1] != 0.0 else direction * cap
            sol = solve_ivp(rhs, (0.0, t_end), y0, method="DOP853",
                            rtol=tol, atol=tol, t_eval=te, max_step=cap)
            if not sol.success:
                raise NumericalError("variational sampling failed")
            lookup = {t: sol.y[4:, i] for i, t in enumerate(te)}
            for j in np.where(mask)[0]:
                out[:, j] = lookup[tgrid[j]]
        return out

    def jet(self, t, max_deriv=3):
        """Stacked derivatives 0..max_deriv (max 3) at t."""
        T = self.orbit.period
        Tp = self.dTdEps
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.floor(t / T)
        x = t - k * T
        refl = x > T / 2
        xr = np.where(refl, T - x, x)
        out = np.empty((max_deriv + 1, len(t)))
        vj = self.orbit.jet(xr, max_deriv=max_deriv + 1)
        for d in range(max_deriv + 1):
            base = self._interp[d](xr)
            sign = (-1.0) ** d
            reflected = sign * (base + Tp * vj[d + 1])
            val = np.where(refl, reflected, base)
            # periodic shift uses the derivative of vdot at the reduced point
            vjx = self.orbit.jet(x, max_deriv=max_deriv + 1)
            out[d] = val - k * Tp * vjx[d + 1]
        return out

    def __call__(self, t, deriv=0):
        res = self.jet(t, max_deriv=max(1, deriv))[deriv]
        return float(res[0]) if np.ndim(t) == 0 else res


# ----------------------------------------------------------------------
# generator fields


def _exp_profile_jet(orbit, t, sign, max_deriv=3):
    """Jets of e^{-sigma t} ((n-4)/2 sigma v - vdot) with sigma = +1 for the
    decaying translation field and sigma = -1 for the growing one."""
    c = orbit.constants
    sigma = 1.0 if sign == "+" else -1.0
    a = sigma * (c.n - 4) / 2.0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    vj = orbit.jet(t, max_deriv=max_deriv + 1)
    q = [a * vj[k] - vj[k + 1] for k in range(max_deriv + 1)]
    e = np.exp(-sigma * t)
    out = np.empty((max_deriv + 1, len(t)))
    for k in range(max_deriv + 1):
        acc = np.zeros(len(t))
        for j in range(k + 1):
            acc += comb(k, j) * (-sigma) ** (k - j) * q[j]
        out[k] = e * acc
    return out


@dataclass
class JacobiBasis:
    """Generator solutions of the linearized equation, one slot per deficiency
    index l = 0..n (slots 1..n share the degree-1 profile pair).

    Each slot carries a +/- pair: slot 0 holds the phase derivative (bounded,
    periodic) and the necksize derivative (linear growth); slots 1..n hold
    the translation profiles e^{-t}((n-4)/2 v - vdot) (decaying) and
    e^{+t}((4-n)/2 v - vdot) (growing)."""

    orbit: DelaunayOrbit
    varField: VariationalField | None
    dsdEps: float
    dTdEps: float
    crossValidationError: float
    growthTags: dict = field(default_factory=lambda: {
        ("0", "+"): "bounded-periodic",
        ("0", "-"): "linear",
        ("l", "+"): "decaying e^{-t}",
        ("l", "-"): "growing e^{+t}",
    })

    @property
    def slots(self):
        return list(range(self.orbit.constants.n + 1))

    def degree(self, slot):
        return 0 if slot == 0 else 1

    def jet(self, slot, sign, t, max_deriv=3):
        """Jets of the generator in the given slot; slots >= 1 all return the
        degree-1 profile."""
        if slot == 0:
            if sign == "+":
                t = np.atleast_1d(np.asarray(t, dtype=float))
                return self.orbit.jet(t, max_deriv=max_deriv + 1)[1:max_deriv + 2]
            return self.varField.jet(t, max_deriv=max_deriv)
        return _exp_profile_jet(self.orbit, t, sign, max_deriv=max_deriv)

    def profile(self, slot, sign, t, deriv=0):
        res = self.jet(slot, sign, t, max_deriv=max(deriv, 0))[deriv]
        return float(res[0]) if np.ndim(t) == 0 else res

    def fields(self):
        """The distinct (tag, degree) profile pairs."""
        return [("0", "+", 0), ("0", "-", 0), ("l", "+", 1), ("l", "-", 1)]

    def measured_rate(self, slot, sign, t0=0.5, periods=3):
        """Growth rate from the exact per-period ratio |w(t0 + KT)/w(t0)|."""
        T = self.orbit.period
        w0 = self.profile(slot, sign, t0)
        wK = self.profile(slot, sign, t0 + periods * T)
        return float(np.log(abs(wK / w0)) / (periods * T))

    def sample_profile(self, slot, sign, tgrid, tol=1e-13):
        """Seam-free generator samples for residual-grade checks, from
        contiguous integrations (the periodic/reflected evaluation in jet()
        is globally accurate but carries derivative kinks of the size of the
        shooting defect at the reduction seams, which high-order difference
        stencils amplify)."""
        tgrid = np.asarray(tgrid, dtype=float)
        if slot == 0 and sign == "-":
            return self.varField.sample_states(tgrid, tol=tol)[0]
        states = self.orbit.sample_states(tgrid, tol=tol)
        if slot == 0:
            return states[1]
        c = self.orbit.constants
        sigma = 1.0 if sign == "+" else -1.0
        a = sigma * (c.n - 4) / 2.0
        return np.exp(-sigma * tgrid) * (a * states[0] - states[1])


def generators(orbit, d_eps=1e-4, validate=True):
    """All generator solutions of the linearized equation about the orbit.

    The necksize derivative is integrated from monodromy-derived initial data
    (variational route) and, when `validate` is set, cross-checked against
    centered differences of neighboring shooting orbits; the max discrepancy
    over one period is recorded.
    """
    if orbit.isConstant:
        raise DomainError("generators need an interior orbit; the constant "
                          "orbit has a degenerate phase derivative")
    ds_deps, dT_deps = orbit_sensitivities(orbit)
    var = VariationalField(orbit, ds_deps, dT_deps)
    cross = float("nan")
    if validate:
        consts = orbit.constants
        eps = orbit.eps
        hi = solve_orbit(consts, eps + d_eps)
        lo = solve_orbit(consts, eps - d_eps)
        ts = np.linspace(0.0, orbit.period, 60)
        fd = (hi.eval(ts, 0) - lo.eval(ts, 0)) / (2.0 * d_eps)
        cross = float(np.max(np.abs(var.jet(ts, 0)[0] - fd)))
    return JacobiBasis(orbit=orbit, varField=var, dsdEps=ds_deps,
                       dTdEps=dT_deps, crossValidationError=cross)


# ----------------------------------------------------------------------
# conserved boundary pairing


def symplectic_pairing(op, vjet, wjet, t):
    """Bilinear concomitant of the mode operator at cross-section t:
    omega(v, w) = v w''' - w v''' - v' w'' + w' v'' - A (v w' - w v'),
    obtained by integrating v L w - w L v by parts in t once; constant in t
    when v and w both solve the mode equation.

    vjet/wjet: callables t -> array of derivatives 0..3, or such arrays.
    """
    a = vjet(t) if callable(vjet) else np.asarray(vjet)
    b = wjet(t) if callable(wjet) else np.asarray(wjet)
    A = op.A
    return float(a[0] * b[3] - b[0] * a[3] - a[1] * b[2] + b[1] * a[2]
                 - A * (a[0] * b[1] - b[0] * a[1]))


# ----------------------------------------------------------------------
# deficiency spaces


def smooth_step(x):
    """C-infinity ramp: 1 for x <= 0, 0 for x >= 1, antisymmetric about 1/2,
    built from the e^{-1/x} mollifier pair."""
    x = np.asarray(x, dtype=float)

    def f(u):
        out = np.zeros_like(u)
        pos = u > 0
        out[pos] = np.exp(-1.0 / u[pos])
        return out

    fx = f(1.0 - x)
    gx = f(x)
    return fx / (fx + gx)


@dataclass(frozen=True)
class CutoffSpec:
    """One-end cutoff on a given grid: 1 on [end, plateau edge], smooth decay
    to 0 across `width`, 0 beyond."""

    side: str           # "left" or "right"
    plateau: float      # distance from the grid end over which chi = 1
    width: float        # transition width

    def samples(self, t):
        t = np.asarray(t, dtype=float)
        if self.side == "left":
            x = (t - (t[0] + self.plateau)) / self.width
        elif self.side == "right":
            x = ((t[-1] - self.plateau) - t) / self.width
        else:
            raise DomainError(f"unknown side {self.side!r}")
        return smooth_step(x)


@dataclass
class DeficiencyField:
    l: int             # deficiency index 0..n
    sign: str          # "+" or "-"
    degree: int        # zonal degree of the angular factor (0 or 1)
    field: CylField
    cutoff: np.ndarray


def deficiency_basis(basis, cutoff, t, phase=0.0):
    """Cutoff generator fields chi v^{l,+/-} phi_l for l = 0..n near one end.

    `basis` is a JacobiBasis; `phase` shifts the orbit argument (the field is
    evaluated at t + phase).  Returns 2(n+1) fields; slots 1..n share the
    degree-1 profile but carry distinct angular indices.
    """
    t = np.asarray(t, dtype=float)
    chi = cutoff.samples(t)
    consts = basis.orbit.constants
    out = []
    for slot in basis.slots:
        deg = basis.degree(slot)
        for sign in ("+", "-"):
            prof = basis.profile(slot, sign, t + phase)
            fld = CylField.from_modes(consts, t, {deg: chi * prof})
            out.append(DeficiencyField(l=slot, sign=sign, degree=deg,
                                       field=fld, cutoff=chi))
    return out


def deficiency_gram(fields):
    """Gram matrix of deficiency fields in the cylinder L2 inner product,
    using exact orthogonality between distinct angular indices."""
    k = len(fields)
    G = np.zeros((k, k))
    for i in range(k):
        fi = fields[i]
        si = fi.field.mode(fi.degree).samples
        h = fi.field.h
        for j in range(i, k):
            fj = fields[j]
            if fi.l != fj.l and not (fi.l == 0 and fj.l == 0):
                continue  # distinct angular indices are orthogonal
            sj = fj.field.mode(fj.degree).samples
            G[i, j] = G[j, i] = float(np.sum(si * sj) * h)
    return G
