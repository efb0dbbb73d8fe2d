"""Recursive evaluation of the power-series coefficients ``V_m`` in ``xi``.

Order ``m`` of the functional equation reads

    K0 V_m = a V_m(z1, 0) + C0 c_m + R_{m-1}(z),
    R_{m-1} = -K1 V_{m-1} - a V_{m-1}(z1, 0) + B1 V_{m-1}(0, z2) + C1 c_{m-1},

with ``c_m = V_m(0, 0)`` (``c_0`` from the load, ``c_m = 0`` for ``m >= 1``).
Setting ``z2 = Y0(z1)`` kills the left side and yields the boundary row
``V_m(z1, 0)``; dividing by ``K0`` then yields ``V_m`` everywhere.

All orders are computed level by level on a tensor grid ``F x S``:

* ``F`` holds a circle of ``z1`` values (radius ``r``) plus the query
  ``z1`` values.  ``V_m(0, s)`` is the circle mean; queries with small
  ``|z1|`` use Cauchy's formula on the same circle.
* ``S`` holds the query ``z2`` values, ``0``, every ``Y0(f)`` and a ring
  around each root.  Grid points near the root of their own row are
  filled in from Cauchy's formula on that ring, so the recursion never
  divides by a small kernel value.
* Queries with ``z1`` on top of ``1`` are evaluated at a few radially
  shrunk points and extrapolated.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import DepthExceededError, ModelError, NumericalError, UnstableModelError
from .kernel import KernelBundle, RootSolverConfig, eval_kernel, solve_y0
from .model import ModelSpec, stability

COMPONENTS = ("V", "V0", "V1", "H")


@dataclass(frozen=True)
class PsaConfig:
    """Numerical knobs of the grid scheme.

    Attributes
    ----------
    circle_radius, circle_points : float, int
        ``z1`` circle used for ``V(0, z2)`` and for queries near ``z1 = 0``.
    zero_radius, zero_points : float, int
        Largest radius and size of the ``z2`` ring around each kernel zero
        ``Y0(f)``.  Grid points closer to the zero than ``cauchy_fraction``
        times the radius are taken from Cauchy's formula on the ring.
    zero_radius_min, analytic_radius : float
        The ring radius is ``analytic_radius - |Y0(f)|`` clipped to
        ``[zero_radius_min, zero_radius]``.
    boundary_offset, boundary_nodes : float, int
        Queries at ``z1 = 1`` are extrapolated from the radial nodes
        ``t, 2t, ..., pt`` by the degree ``p - 1`` interpolating polynomial.
    """

    circle_radius: float = 0.3
    circle_points: int = 64
    zero_radius: float = 0.5
    zero_radius_min: float = 0.1
    analytic_radius: float = 1.3
    cauchy_fraction: float = 0.75
    zero_points: int = 128
    boundary_offset: float = 4e-4
    boundary_nodes: int = 5
    boundary_tol: float = 1e-6
    root: RootSolverConfig = field(default_factory=RootSolverConfig)


def _key(z1: complex, z2: complex) -> bytes:
    return np.array([z1, z2], dtype=complex).tobytes()


class CoefficientEvaluator:
    """Memoized evaluator of ``V_m`` (and ``V_m^(1)`` for exponential service).

    Component tags: ``"V"`` is the unknown of the functional equation (the
    idle-server PGF for exponential service, the departure-epoch PGF
    otherwise), ``"V0"`` is an alias of ``"V"`` for exponential variants,
    ``"V1"`` is the busy-server PGF and ``"H"`` is ``V0 + V1``, the joint
    orbit PGF at arbitrary times.
    """

    def __init__(self, model: ModelSpec, max_order: int = 8, config: PsaConfig | None = None):
        rep = stability(model)
        if not rep.stable:
            raise UnstableModelError(f"rho = {rep.rho:.6g} >= 1")
        if max_order < 0:
            raise ValueError("max_order must be >= 0")
        self.model = model
        self.rho = rep.rho
        self.bundle = KernelBundle(model)
        self.max_order = int(max_order)
        self.config = config or PsaConfig()
        g1, g2 = model.gbar
        if model.variant.exponential:
            self.c0 = 1.0 - rep.rho
        else:
            self.c0 = (1.0 - rep.rho) / (g1 + g2)
        self._cache: dict[tuple[str, bytes], np.ndarray] = {}
        self._lock = threading.Lock()
        n = self.config.circle_points
        self._circle = self.config.circle_radius * np.exp(2j * np.pi * np.arange(n) / n)

    @property
    def exponential(self) -> bool:
        return self.model.variant.exponential

    # ------------------------------------------------------------ public
    def values(self, z1, z2, component: str = "V", order: int | None = None) -> np.ndarray:
        """Coefficients ``0..order`` at each point; shape ``(order + 1, n)``."""
        order = self.max_order if order is None else order
        if order > self.max_order:
            raise DepthExceededError(f"order {order} exceeds max_order {self.max_order}")
        if component not in COMPONENTS:
            raise ValueError(f"unknown component {component!r}")
        if component in ("V1", "H") and not self.exponential:
            raise ModelError("V1 and H are defined only for exponential service")
        if component == "V0" and not self.exponential:
            raise ModelError("V0 is defined only for exponential service; use 'V'")
        z1 = np.atleast_1d(np.asarray(z1, dtype=complex)).ravel()
        z2 = np.atleast_1d(np.asarray(z2, dtype=complex)).ravel()
        z1, z2 = np.broadcast_arrays(z1, z2)
        if np.any(np.abs(z1) > 1 + 1e-9) or np.any(np.abs(z2) > 1 + 1e-9):
            raise ValueError("points must lie in the closed unit polydisk")
        comp = "V" if component == "V0" else component
        keys = [_key(a, b) for a, b in zip(z1, z2)]
        with self._lock:
            missing = [i for i, k in enumerate(keys) if ("V", k) not in self._cache]
        if missing:
            # unique points only
            seen: dict[bytes, int] = {}
            for i in missing:
                seen.setdefault(keys[i], i)
            idx = np.fromiter(seen.values(), dtype=int)
            res = self._compute(z1[idx], z2[idx])
            with self._lock:
                for j, i in enumerate(idx):
                    for tag, arr in res.items():
                        self._cache[(tag, keys[i])] = arr[:, j]
        with self._lock:
            out = np.stack([self._cache[(comp, k)] for k in keys], axis=1)
        return out[: order + 1]

    # ------------------------------------------------------------ grid
    def _compute(self, qz1: np.ndarray, qz2: np.ndarray) -> dict[str, np.ndarray]:
        cfg = self.config
        t = cfg.boundary_offset
        p = cfg.boundary_nodes
        # polynomial extrapolation to t = 0 from nodes t, 2t, ..., pt
        ext = [(k, (-1.0) ** (k + 1) * math.comb(p, k)) for k in range(1, p + 1)]
        # expand queries into base points
        base1, base2, owner, wts = [], [], [], []
        for q, (x, y) in enumerate(zip(qz1, qz2)):
            if abs(x - 1.0) < cfg.boundary_tol:
                for k, w in ext:
                    base1.append((1 - k * t) * x)
                    base2.append((1 - k * t) * y)
                    owner.append(q)
                    wts.append(w)
            else:
                base1.append(x)
                base2.append(y)
                owner.append(q)
                wts.append(1.0)
        base1 = np.array(base1, dtype=complex)
        base2 = np.array(base2, dtype=complex)
        vals = self._grid(base1, base2)
        nq = len(qz1)
        out = {}
        owner = np.array(owner)
        wts = np.array(wts)
        for tag, arr in vals.items():
            res = np.zeros((arr.shape[0], nq), dtype=complex)
            np.add.at(res.T, owner, (arr * wts).T)
            out[tag] = res
        return out

    def _grid(self, bx: np.ndarray, by: np.ndarray) -> dict[str, np.ndarray]:
        cfg = self.config
        bundle = self.bundle
        M = self.max_order
        r = cfg.circle_radius
        circ = self._circle
        nc = len(circ)

        # z1 set: circle first, then direct query abscissae
        small = np.abs(bx) < r / 2
        F_list = list(circ)
        f_index: dict[bytes, int] = {np.complex128(f).tobytes(): i for i, f in enumerate(F_list)}
        for x in bx[~small]:
            k = np.complex128(x).tobytes()
            if k not in f_index:
                f_index[k] = len(F_list)
                F_list.append(x)
        F = np.array(F_list, dtype=complex)
        nf = len(F)
        Y = np.asarray(solve_y0(bundle, F, cfg.root), dtype=complex).reshape(nf)

        # z2 set: 0, queries, the roots Y0(f) and a circle around each root
        S_list: list[complex] = []
        s_index: dict[bytes, int] = {}

        def add_s(s):
            k = np.complex128(s).tobytes()
            if k not in s_index:
                s_index[k] = len(S_list)
                S_list.append(complex(s))
            return s_index[k]

        i0 = add_s(0.0)
        for y in by:
            add_s(y)
        y_idx = np.array([add_s(y) for y in Y])
        # ring radius shrinks for roots near the unit circle so the ring stays
        # inside the region where the coefficients are analytic
        Rf = np.clip(cfg.analytic_radius - np.abs(Y), cfg.zero_radius_min, cfg.zero_radius)
        n2 = cfg.zero_points
        ring = np.exp(2j * np.pi * (np.arange(n2) + 0.5) / n2)
        rings = np.array([[add_s(y + R * w) for w in ring] for y, R in zip(Y, Rf)], dtype=int).reshape(nf, n2)
        S = np.array(S_list, dtype=complex)
        ns = len(S)

        # points close to the kernel zero of their own row come from Cauchy's
        # formula on that row's ring, so no small divisor ever enters the recursion
        nz_mask = np.abs(S[None, :] - Y[:, None]) < cfg.cauchy_fraction * Rf[:, None]
        nz_mask[:, i0] = False
        nz_f, nz_s = np.nonzero(nz_mask)
        nz_circ = rings[nz_f]
        ring_pts = S[nz_circ]
        nz_w = (ring_pts - Y[nz_f, None]) / (ring_pts - S[nz_s, None]) / n2

        # coefficients, computed once
        FF, SS = np.meshgrid(F, S, indexing="ij")
        co = bundle.coefficients(FF, SS)
        K0 = co.K0.copy()
        K0[nz_mask] = 1.0  # overwritten later by circle means
        K0[:, i0] = 1.0
        ci = bundle.coefficients(F, Y)
        if np.any(np.abs(ci.a) < 1e-300):
            raise NumericalError("boundary coefficient vanishes at (z1, Y0(z1))")

        # base-point extraction weights over F
        nb = len(bx)
        W = np.zeros((nb, nf), dtype=complex)
        for b in range(nb):
            if small[b]:
                W[b, :nc] = circ / (circ - bx[b]) / nc
            else:
                W[b, f_index[np.complex128(bx[b]).tobytes()]] = 1.0
        by_idx = np.array([s_index[np.complex128(y).tobytes()] for y in by])

        lam = self.model.arrival_rate
        s1, s2 = self.model.mu1_star, self.model.mu2_star
        expo = self.exponential
        mu = self.model.mu if expo else 1.0

        outV = np.zeros((M + 1, nb), dtype=complex)
        outV1 = np.zeros((M + 1, nb), dtype=complex) if expo else None

        P = np.zeros((nf, ns), dtype=complex)  # V_{m-1} on grid
        prev_row = np.zeros(nf, dtype=complex)
        prev_col = np.zeros(ns, dtype=complex)
        prev_c = 0.0
        prev_base = prev_base_row = prev_base_col = None
        for m in range(M + 1):
            c = self.c0 if m == 0 else 0.0
            if m == 0:
                rhs_int = 0.0
                rhs = 0.0
            else:
                rhs_int = (-ci.K1 * P[np.arange(nf), y_idx] - ci.a * prev_row
                           + ci.B1 * prev_col[y_idx] + ci.C1 * prev_c)
                rhs = (-co.K1 * P - co.a * prev_row[:, None]
                       + co.B1 * prev_col[None, :] + co.C1 * prev_c)
            row = -(ci.C0 * c + rhs_int) / ci.a
            V = (co.a * row[:, None] + co.C0 * c + rhs) / K0
            V[:, i0] = row
            if len(nz_f):
                V[nz_f, nz_s] = (V[nz_f[:, None], nz_circ] * nz_w).sum(axis=1)
            col = V[:nc].mean(axis=0)
            if not np.all(np.isfinite(V)):
                raise NumericalError(f"non-finite coefficient at order {m}")

            base = np.einsum("bf,fb->b", W, V[:, by_idx])
            base_row = W @ row
            base_col = col[by_idx]
            outV[m] = base
            if expo:
                v1 = (lam + s2) * base - (s2 - s1) * base_row - s1 * c
                if m > 0:
                    v1 += ((s1 - s2) * prev_base + (s2 - s1) * (prev_base_row + prev_base_col)
                           - (s2 - s1) * prev_c)
                outV1[m] = v1 / mu
            P, prev_row, prev_col, prev_c = V, row, col, c
            prev_base, prev_base_row, prev_base_col = base, base_row, base_col

        res = {"V": outV}
        if expo:
            res["V1"] = outV1
            res["H"] = outV + outV1
        return res


# ---------------------------------------------------------------- operations


def eval_v(ev: CoefficientEvaluator, m: int, z1: complex, z2: complex) -> complex:
    """``V_m(z1, z2)``: the idle-server coefficient for exponential service, the departure-epoch one otherwise."""
    if m < 0:
        raise ValueError("order must be >= 0")
    if m > ev.max_order:
        raise DepthExceededError(f"order {m} exceeds max_order {ev.max_order}")
    return complex(ev.values(z1, z2, "V", m)[m, 0])


def eval_v1(ev: CoefficientEvaluator, m: int, z1: complex, z2: complex) -> complex:
    """Busy-server coefficient ``V_m^(1)(z1, z2)``; exponential service only."""
    if not ev.exponential:
        raise ModelError("V1 is defined only for exponential service")
    if m > ev.max_order:
        raise DepthExceededError(f"order {m} exceeds max_order {ev.max_order}")
    return complex(ev.values(z1, z2, "V1", m)[m, 0])


@dataclass(frozen=True)
class SeriesValue:
    value: complex
    last_term: float


def eval_pgf(ev: CoefficientEvaluator, component: str, xi: float, z1: complex, z2: complex, M: int) -> SeriesValue:
    """Truncated series ``sum_{m<=M} V_m xi^m`` of one component, plus ``|V_M xi^M|``."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError("xi must lie in [0, 1]")
    coef = ev.values(z1, z2, component, M)[:, 0]
    powers = xi ** np.arange(M + 1)
    return SeriesValue(complex(np.sum(coef * powers)), float(abs(coef[-1]) * powers[-1]))


def priority_pgf(model: ModelSpec, z1, z2, cfg: RootSolverConfig | None = None):
    """Direct solution of the ``xi = 0`` functional equation from the named kernels.

    Evaluates ``c [T0(z) S(Y) - S(z) T0(Y)] / (U(z) S(Y))`` in the variant's
    own kernel names, with ``Y = Y0(z1)``.  Independent of the grid code path.
    """
    bundle = KernelBundle(model)
    rep = stability(model)
    g1, g2 = model.gbar
    c = (1 - rep.rho) if model.variant.exponential else (1 - rep.rho) / (g1 + g2)
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    Y = solve_y0(bundle, z1.ravel(), cfg)
    Y = np.asarray(Y).reshape(z1.shape)
    lead, s_name, t_name = {
        "BATCH_GENERAL": ("U", "S", "T0"),
        "BATCH_EXP": ("U1", "U0", "F0"),
        "SINGLE_EXP": ("G", "G10", "G00"),
        "SINGLE_GENERAL": ("Ut", "St", "Tt0"),
    }[model.variant.value]

    def k(name, a, b):
        return eval_kernel(bundle, name, a, b, cfg)

    num = k(t_name, z1, z2) * k(s_name, z1, Y) - k(s_name, z1, z2) * k(t_name, z1, Y)
    return c * num / (k(lead, z1, z2) * k(s_name, z1, Y))
