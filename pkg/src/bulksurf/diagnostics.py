"""Entropy, dissipation, lower bounds, decay fitting and spectral constants.

The relative entropy of a state against the homogeneous equilibrium is the
sum of three Boltzmann integrals s log(s/s_inf) - s + s_inf (one over the
bulk for u, two over the surface for w and z), with the 0 log 0 = 0
convention.  The dissipation functional combines the three Fisher
informations with the exchange term (z - u w) log(z / u w):

    Dtilde = (dO/2) int |grad u|^2/u + (dG/2) int |grad_G w|^2/w
           + (dG'/2) int |grad_G z|^2/z + int (z - u w) log(z/(u w)).

Gradients are centered differences in reference coordinates mapped through
the current metric; logarithms and denominators are floored to keep exact
zeros finite without perturbing desk-scale values.

The entropy-to-L1 lower bound is assembled from the explicit constants of
the Pinsker-type argument (gamma = 0.9 in the convexity inequality for
s log s - s + 1): each species contributes a fluctuation constant
0.9^2 / (4 Mbar^2 measure) and a mean-offset constant
1 / (measure (sqrt(Mbar) + sqrt(s_inf))^2), where Mbar bounds the spatial
average through the conserved masses; combining the two halves of
|s - s_inf| costs a factor 1/2.
"""

from __future__ import annotations

import dataclasses
import math
import os

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (DegenerateSampler, EigenFailure, InsufficientData,
                     MassMismatch, NonfiniteField, NonpositiveEntropy)
from .equilibrium import Equilibrium, conserved_masses
from .geometry import EvolvingGeometry
from .mesh import ReferenceMesh, moving_bulk_measures, moving_surface_measures
from .model import ModelParams
from .solver import State, _surface_stiffness, _bulk_stiffness

FLOOR_EPS_DEFAULT = 1e-30

CSV_HEADER = ("t,m1,m2,entropy,dissipation,min_u,min_w,min_z,"
              "max_u,max_w,max_z,l1_u,l1_w,l1_z,area_omega,length_gamma")


@dataclasses.dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    m1: float
    m2: float
    entropy: float
    dissipation: float
    min_u: float
    min_w: float
    min_z: float
    max_u: float
    max_w: float
    max_z: float
    l1_u: float
    l1_w: float
    l1_z: float
    area_omega: float
    length_gamma: float

    def csv_row(self) -> str:
        vals = (self.t, self.m1, self.m2, self.entropy, self.dissipation,
                self.min_u, self.min_w, self.min_z, self.max_u, self.max_w,
                self.max_z, self.l1_u, self.l1_w, self.l1_z,
                self.area_omega, self.length_gamma)
        return ",".join(f"{v:.17g}" for v in vals)


@dataclasses.dataclass(frozen=True)
class InequalityConstants:
    c_pw: float | None = None
    c_trpw: float | None = None
    c_lsi_omega: float | None = None
    c_lsi_gamma: float | None = None
    c_ckp: float | None = None
    lambda_probe: float | None = None


@dataclasses.dataclass(frozen=True)
class DecayFit:
    mu: float
    r_squared: float
    window: tuple
    n_points: int


@dataclasses.dataclass(frozen=True)
class ProbeSample:
    index: int
    ratio: float
    entropy: float
    dissipation: float


@dataclasses.dataclass(frozen=True)
class DissipationParts:
    fisher_u: float
    fisher_w: float
    fisher_z: float
    reaction: float

    @property
    def total(self):
        return self.fisher_u + self.fisher_w + self.fisher_z + self.reaction


def _boltzmann(s, s_inf):
    s = np.asarray(s, dtype=float)
    out = np.full_like(s, s_inf)
    pos = s > 0.0
    out[pos] = s[pos] * np.log(s[pos] / s_inf) - s[pos] + s_inf
    return out


def relative_entropy(state: State, eq: Equilibrium, geom: EvolvingGeometry,
                     mesh: ReferenceMesh) -> float:
    """Sum of the three Boltzmann integrals at state.t; nonnegative."""
    for f in (state.u_hat, state.w_hat, state.z_hat):
        if not np.all(np.isfinite(f)):
            raise NonfiniteField("entropy evaluation on non-finite state")
    mb = moving_bulk_measures(mesh, geom, state.t)
    ms = moving_surface_measures(mesh, geom, state.t)
    e = float(np.dot(_boltzmann(state.u_hat, eq.u_inf), mb))
    e += float(np.dot(_boltzmann(state.w_hat, eq.w_inf), ms))
    e += float(np.dot(_boltzmann(state.z_hat, eq.z_inf), ms))
    return e


def _bulk_gradient_sq(state_u, geom, mesh, t):
    """|grad u|^2 at bulk cell centers via mapped centered differences."""
    u = state_u.reshape(mesh.n_r, mesh.n_theta)
    slope = geom.radial_slope(t)
    rho_c = geom.radius_map(t, mesh.r_centers)
    dudr = np.empty_like(u)
    dudr[1:-1] = (u[2:] - u[:-2]) / (2.0 * slope * mesh.dr)
    dudr[0] = (u[1] - u[0]) / (slope * mesh.dr)
    dudr[-1] = (u[-1] - u[-2]) / (slope * mesh.dr)
    dtan = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (2.0 * mesh.dtheta)
    dtan /= rho_c[:, None]
    return (dudr ** 2 + dtan ** 2).ravel()


def _surface_gradient_sq(field, geom, mesh, t):
    g = geom.surface_stretch(t, mesh.theta_centers)
    ds = (np.roll(field, -1) - np.roll(field, 1)) / (2.0 * mesh.dtheta * g)
    return ds ** 2


def entropy_dissipation_parts(state: State, geom: EvolvingGeometry, mesh: ReferenceMesh,
                              params: ModelParams,
                              floor_eps: float = FLOOR_EPS_DEFAULT) -> DissipationParts:
    """The three Fisher terms and the exchange term, separately."""
    for f in (state.u_hat, state.w_hat, state.z_hat):
        if not np.all(np.isfinite(f)):
            raise NonfiniteField("dissipation evaluation on non-finite state")
    t = state.t
    mb = moving_bulk_measures(mesh, geom, t)
    ms = moving_surface_measures(mesh, geom, t)
    fu = 0.5 * params.delta_omega * float(np.dot(
        _bulk_gradient_sq(state.u_hat, geom, mesh, t) / np.maximum(state.u_hat, floor_eps), mb))
    fw = 0.5 * params.delta_gamma * float(np.dot(
        _surface_gradient_sq(state.w_hat, geom, mesh, t) / np.maximum(state.w_hat, floor_eps), ms))
    fz = 0.5 * params.delta_gamma_prime * float(np.dot(
        _surface_gradient_sq(state.z_hat, geom, mesh, t) / np.maximum(state.z_hat, floor_eps), ms))
    u_tr = state.u_hat[: mesh.n_theta]
    uw = u_tr * state.w_hat
    diff = state.z_hat - uw
    logratio = np.log(np.maximum(state.z_hat, floor_eps) / np.maximum(uw, floor_eps))
    reaction = float(np.dot(diff * logratio, ms))
    return DissipationParts(fu, fw, fz, reaction)


def entropy_dissipation(state: State, geom: EvolvingGeometry, mesh: ReferenceMesh,
                        params: ModelParams, floor_eps: float = FLOOR_EPS_DEFAULT) -> float:
    return entropy_dissipation_parts(state, geom, mesh, params, floor_eps).total


def l1_distances(state: State, eq: Equilibrium, geom: EvolvingGeometry, mesh: ReferenceMesh):
    mb = moving_bulk_measures(mesh, geom, state.t)
    ms = moving_surface_measures(mesh, geom, state.t)
    return (float(np.dot(np.abs(state.u_hat - eq.u_inf), mb)),
            float(np.dot(np.abs(state.w_hat - eq.w_inf), ms)),
            float(np.dot(np.abs(state.z_hat - eq.z_inf), ms)))


def make_record(state: State, geom: EvolvingGeometry, mesh: ReferenceMesh,
                params: ModelParams, eq: Equilibrium) -> DiagnosticsRecord:
    m1, m2 = conserved_masses(state, geom, mesh)
    l1u, l1w, l1z = l1_distances(state, eq, geom, mesh)
    area = float(np.sum(moving_bulk_measures(mesh, geom, state.t)))
    length = float(np.sum(moving_surface_measures(mesh, geom, state.t)))
    return DiagnosticsRecord(
        t=state.t, m1=m1, m2=m2,
        entropy=relative_entropy(state, eq, geom, mesh),
        dissipation=entropy_dissipation(state, geom, mesh, params),
        min_u=float(np.min(state.u_hat)), min_w=float(np.min(state.w_hat)),
        min_z=float(np.min(state.z_hat)),
        max_u=float(np.max(state.u_hat)), max_w=float(np.max(state.w_hat)),
        max_z=float(np.max(state.z_hat)),
        l1_u=l1u, l1_w=l1w, l1_z=l1z,
        area_omega=area, length_gamma=length,
    )


# -- Pinsker-type lower bound ------------------------------------------------------


def ckp_constant(eq: Equilibrium, area: float, length: float) -> float:
    """Explicit constant in E >= C (sum of squared L1 distances)."""
    gamma2 = 0.9 ** 2
    mbar_u = eq.m1 / area          # bounds the bulk average of u
    mbar_s = eq.m2 / length        # bounds the surface averages of w and z
    cs = [
        gamma2 / (4.0 * mbar_u ** 2 * area),
        gamma2 / (4.0 * mbar_s ** 2 * length),
        1.0 / (area * (math.sqrt(mbar_u) + math.sqrt(eq.u_inf)) ** 2),
        1.0 / (length * (math.sqrt(mbar_s) + math.sqrt(eq.w_inf)) ** 2),
        1.0 / (length * (math.sqrt(mbar_s) + math.sqrt(eq.z_inf)) ** 2),
    ]
    # |s - s_inf|^2 <= 2(|s - sbar|^2 + |sbar - s_inf|^2) costs the 1/2
    return 0.5 * min(cs)


def ckp_lower_bound(state: State, eq: Equilibrium, geom: EvolvingGeometry,
                    mesh: ReferenceMesh):
    """(entropy, bound, constant) with entropy >= bound - 1e-10 guaranteed
    for states carrying the equilibrium's masses."""
    m1, m2 = conserved_masses(state, geom, mesh)
    if abs(m1 - eq.m1) > 1e-6 * max(1.0, abs(eq.m1)) or \
            abs(m2 - eq.m2) > 1e-6 * max(1.0, abs(eq.m2)):
        raise MassMismatch(
            f"state masses ({m1:g}, {m2:g}) do not match equilibrium ({eq.m1:g}, {eq.m2:g})")
    lhs = relative_entropy(state, eq, geom, mesh)
    area = float(np.sum(moving_bulk_measures(mesh, geom, state.t)))
    length = float(np.sum(moving_surface_measures(mesh, geom, state.t)))
    c = ckp_constant(eq, area, length)
    l1u, l1w, l1z = l1_distances(state, eq, geom, mesh)
    rhs = c * (l1u ** 2 + l1w ** 2 + l1z ** 2)
    return lhs, rhs, c


# -- decay fitting ---------------------------------------------------------------


def fit_decay_rate(series, window) -> DecayFit:
    """Least-squares exponential rate of an entropy trace on a t-window.

    series is an iterable of (t, E); mu is minus the slope of log E.
    """
    t0, t1 = window
    pts = [(t, e) for (t, e) in series if t0 <= t <= t1]
    if any(e <= 0.0 for _, e in pts):
        raise NonpositiveEntropy(f"window [{t0:g}, {t1:g}] contains nonpositive entropy values")
    if len(pts) < 5:
        raise InsufficientData(f"need >= 5 points with E > 0 in window, got {len(pts)}")
    t = np.array([p[0] for p in pts])
    y = np.log(np.array([p[1] for p in pts]))
    a = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    fit = a @ coef
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return DecayFit(mu=float(-coef[0]), r_squared=min(1.0, r2), window=(t0, t1),
                    n_points=len(pts))


# -- random conservative states and the functional-inequality probe ---------------


def _sample_stream(seed, index):
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def _smooth_bulk(field, mesh):
    """One conservative diffusion application (explicit, positivity-safe)."""
    u = field.reshape(mesh.n_r, mesh.n_theta)
    out = u.copy()
    out[1:] += 0.2 * (u[:-1] - u[1:])
    out[:-1] += 0.2 * (u[1:] - u[:-1])
    out += 0.2 * (np.roll(u, 1, axis=1) - u)
    out += 0.2 * (np.roll(u, -1, axis=1) - u)
    return out.ravel()


def _smooth_surface(field):
    return field + 0.25 * (np.roll(field, 1) - 2.0 * field + np.roll(field, -1))


def project_to_masses(u, w, z, m1, m2, geom, mesh, t=0.0):
    """Multiplicative projection onto the two conservation constraints.

    u and w are scaled by a and b, z by a*b; the pair (a, b) solves the two
    mass equations exactly (one quadratic with a unique positive root), so
    positivity is preserved.
    """
    mb = moving_bulk_measures(mesh, geom, t)
    ms = moving_surface_measures(mesh, geom, t)
    iu = float(np.dot(u, mb))
    iw = float(np.dot(w, ms))
    iz = float(np.dot(z, ms))
    if min(iu, iw, iz) <= 0.0:
        raise ValueError("projection requires positive sampled masses")
    beta = iu * iw + iz * (m1 - m2)
    disc = beta * beta + 4.0 * iw * iz * m2 * iu
    b = 2.0 * m2 * iu / (beta + math.sqrt(disc)) if beta >= 0.0 \
        else (-beta + math.sqrt(disc)) / (2.0 * iw * iz)
    a = m1 / (iu + b * iz)
    return a * u, b * w, a * b * z


def sample_conservative_state(index, seed, eq, geom, mesh, value_range=(0.1, 10.0), t=0.0):
    """One random positive state carrying exactly the equilibrium masses.

    Cell values are log-uniform in value_range, smoothed by one diffusion
    application, then multiplicatively projected onto the constraints.
    Streams are keyed by (seed, index) so results do not depend on batching.
    """
    rng = _sample_stream(seed, index)
    lo, hi = math.log(value_range[0]), math.log(value_range[1])
    u = np.exp(rng.uniform(lo, hi, mesh.n_bulk))
    w = np.exp(rng.uniform(lo, hi, mesh.n_surf))
    z = np.exp(rng.uniform(lo, hi, mesh.n_surf))
    u = _smooth_bulk(u, mesh)
    w = _smooth_surface(w)
    z = _smooth_surface(z)
    u, w, z = project_to_masses(u, w, z, eq.m1, eq.m2, geom, mesh, t)
    return State(t, u, w, z)


def probe_functional_inequality(eq: Equilibrium, geom: EvolvingGeometry, mesh: ReferenceMesh,
                                params: ModelParams, n_samples: int, rng_seed: int,
                                floor_eps: float = FLOOR_EPS_DEFAULT,
                                value_range=(0.1, 10.0), t: float = 0.0,
                                raw_sampler=None, n_threads: int | None = None):
    """Monte-Carlo lower estimate of the entropy to dissipation ratio.

    Draws random positive fields obeying both conservation laws and returns
    (min over samples of Dtilde/E, descriptor of the minimizing sample).
    Samples with E < 1e-12 are skipped; if every sample is skipped the probe
    is degenerate.  The estimate is a positivity check and regression
    baseline, not an assertion of any published value.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if n_threads is None:
        n_threads = threads_from_env()

    def evaluate(index):
        if raw_sampler is None:
            st = sample_conservative_state(index, rng_seed, eq, geom, mesh, value_range, t)
        else:
            rng = _sample_stream(rng_seed, index)
            u, w, z = raw_sampler(index, rng)
            u, w, z = project_to_masses(np.asarray(u, dtype=float), np.asarray(w, dtype=float),
                                        np.asarray(z, dtype=float), eq.m1, eq.m2, geom, mesh, t)
            st = State(t, u, w, z)
        e = relative_entropy(st, eq, geom, mesh)
        if e < 1e-12:
            return None
        d = entropy_dissipation(st, geom, mesh, params, floor_eps)
        return ProbeSample(index=index, ratio=d / e, entropy=e, dissipation=d)

    if n_threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            samples = list(pool.map(evaluate, range(n_samples)))
    else:
        samples = [evaluate(i) for i in range(n_samples)]
    kept = [s for s in samples if s is not None]
    if not kept:
        raise DegenerateSampler(f"all {n_samples} probe samples had entropy below 1e-12")
    worst = min(kept, key=lambda s: (s.ratio, s.index))
    return worst.ratio, worst


def threads_from_env() -> int:
    """Worker cap from BULKSURF_THREADS (0 or unset = single-threaded auto)."""
    raw = os.environ.get("BULKSURF_THREADS", "0")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"BULKSURF_THREADS must be an integer, got {raw!r}") from exc
    if n < 0:
        raise ValueError(f"BULKSURF_THREADS must be >= 0, got {n}")
    if n == 0:
        return 1
    return n


# -- spectral constants -------------------------------------------------------------


def estimate_poincare_constants(mesh: ReferenceMesh, geom: EvolvingGeometry,
                                t: float = 0.0) -> InequalityConstants:
    """Discrete Poincare constants at time t.

    c_pw: smallest nonzero eigenvalue of the surface Laplace-Beltrami pencil
    (stiffness against the moving cell-mass matrix).  c_trpw: reciprocal of
    the largest eigenvalue of the boundary-trace quadratic form compressed
    through the bulk Neumann stiffness (the trace-Poincare quotient), with
    the bulk-average mode removed by a saddle-point solve.
    """
    try:
        a_s = -_surface_stiffness(geom, mesh, t, 1.0).toarray()
        ms = moving_surface_measures(mesh, geom, t)
        vals = scipy.linalg.eigh(a_s, np.diag(ms), eigvals_only=True)
        c_pw = float(vals[1])

        a_b = -_bulk_stiffness(geom, mesh, t, 1.0).tocsc()
        mb = moving_bulk_measures(mesh, geom, t)
        area = float(np.sum(mb))
        n = mesh.n_bulk
        ns = mesh.n_surf
        # KKT system pins the bulk-average mode without perturbing the operator
        kkt = sp.bmat([[a_b, sp.csc_matrix(mb[:, None])],
                       [sp.csc_matrix(mb[None, :]), None]], format="csc")
        lu = spla.splu(kkt)
        sqrt_ms = np.sqrt(ms)
        s = np.empty((ns, ns))
        for k in range(ns):
            g = np.zeros(ns)
            g[k] = sqrt_ms[k]
            # adjoint of trace-minus-average maps surface data to bulk cells
            y = np.zeros(n + 1)
            y[:ns] = g * 1.0
            y[:n] -= mb / area * float(np.sum(g))
            sol = lu.solve(y)
            f = sol[:n]
            trace = f[:ns] - float(np.dot(mb, f)) / area
            s[:, k] = sqrt_ms * trace
        s = 0.5 * (s + s.T)
        smax = float(np.max(scipy.linalg.eigvalsh(s)))
        if smax <= 0.0 or not math.isfinite(smax) or c_pw <= 0.0:
            raise EigenFailure(f"degenerate spectral result (c_pw={c_pw:g}, smax={smax:g})")
        return InequalityConstants(c_pw=c_pw, c_trpw=1.0 / smax)
    except scipy.linalg.LinAlgError as exc:
        raise EigenFailure(f"eigenvalue computation failed: {exc}") from exc
