"""Truncated-CTMC oracle for the exponential-service variants.

States are ``(N1, N2, C)`` with orbit caps ``(K1, K2)``; arrivals that
would push an orbit past its cap land on the cap, which keeps the generator
conservative.  Two constructions are offered:

* :func:`build_generator` enumerates the batch law (infinite laws are cut
  where the tail mass drops below ``1e-12``) and returns the sparse
  generator.
* :func:`solve_geometric_exact` handles the geometric batch law without any
  batch truncation by unrolling each batch job by job through auxiliary
  flow variables.  Its linear system stays sparse at large caps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ModelError, SingularSystemError
from .model import BatchKind, ModelSpec

UNTRUSTED_BOUNDARY_MASS = 1e-8


@dataclass(frozen=True)
class Generator:
    Q: sp.csr_matrix
    caps: tuple[int, int]
    model: ModelSpec


@dataclass(frozen=True)
class CtmcSolution:
    """Stationary distribution of the truncated chain.

    ``p[i, j, c]`` is the probability of ``i`` class-1 and ``j`` class-2
    orbiting jobs with server state ``c`` (0 idle, 1 busy).
    """

    caps: tuple[int, int]
    p: np.ndarray
    residual: float

    @property
    def mean_orbits(self) -> tuple[float, float]:
        marg = self.p.sum(axis=2)
        i = np.arange(marg.shape[0])
        j = np.arange(marg.shape[1])
        return float(i @ marg.sum(axis=1)), float(j @ marg.sum(axis=0))

    @property
    def EN1(self) -> float:
        return self.mean_orbits[0]

    @property
    def EN2(self) -> float:
        return self.mean_orbits[1]

    @property
    def p_busy(self) -> float:
        return float(self.p[:, :, 1].sum())

    @property
    def boundary_mass(self) -> float:
        marg = self.p.sum(axis=2)
        return float(marg[-1, :].sum() + marg[:-1, -1].sum())

    @property
    def trusted(self) -> bool:
        return self.boundary_mass <= UNTRUSTED_BOUNDARY_MASS

    def pgf(self, z1, z2, server: int | None = None):
        """``sum p[i, j, c] z1^i z2^j``; ``server`` selects ``c`` (``None`` sums both)."""
        q = self.p.sum(axis=2) if server is None else self.p[:, :, server]
        z1 = np.asarray(z1, dtype=complex)
        z2 = np.asarray(z2, dtype=complex)
        i = np.arange(q.shape[0])
        j = np.arange(q.shape[1])
        pw1 = z1[..., None] ** i
        pw2 = z2[..., None] ** j
        return np.einsum("...i,ij,...j->...", pw1, q, pw2)


def _retrial_rates(model: ModelSpec, i: np.ndarray, j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Success rates of orbit 1 and orbit 2 retrials from an idle state ``(i, j)``."""
    both = (i > 0) & (j > 0)
    r1 = np.where(both, model.xi * model.mu1_star, np.where(i > 0, model.mu1_star, 0.0))
    r2 = np.where(both, (1 - model.xi) * model.mu2_star, np.where(j > 0, model.mu2_star, 0.0))
    return r1, r2


def build_generator(model: ModelSpec, caps: tuple[int, int], tail: float = 1e-12) -> Generator:
    """Sparse generator of the truncated chain (row sums exactly zero)."""
    if not model.variant.exponential:
        raise ModelError("the CTMC oracle needs exponential service")
    K1, K2 = map(int, caps)
    m1s, m2s, ps = model.arrival_law.support(tail)
    if m1s.max() > K1 or m2s.max() > K2:
        raise ModelError(f"caps {caps} are smaller than the largest batch kept at tail {tail}")
    ps = ps / ps.sum()
    lam, mu = model.arrival_rate, model.mu
    n1, n2 = K1 + 1, K2 + 1
    I, J = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    I, J = I.ravel(), J.ravel()

    def idx(i, j, c):
        return (np.minimum(i, K1) * n2 + np.minimum(j, K2)) * 2 + c

    rows, cols, vals = [], [], []

    def add(src, dst, rate):
        rate = np.broadcast_to(rate, src.shape)
        keep = rate > 0
        rows.append(src[keep])
        cols.append(dst[keep])
        vals.append(rate[keep])

    idle = idx(I, J, 0)
    busy = idx(I, J, 1)
    for m1, m2, g in zip(m1s, m2s, ps):
        rate = lam * g
        # busy server: the whole batch joins the orbits
        add(busy, idx(I + m1, J + m2, 1), rate)
        # idle server
        if m1 > 0 and m2 > 0:
            add(idle, idx(I + m1 - 1, J + m2, 1), rate * model.p1)
            add(idle, idx(I + m1, J + m2 - 1, 1), rate * model.p2)
        elif m1 > 0:
            add(idle, idx(I + m1 - 1, J, 1), rate)
        else:
            add(idle, idx(I, J + m2 - 1, 1), rate)
    r1, r2 = _retrial_rates(model, I, J)
    add(idle, idx(np.maximum(I - 1, 0), J, 1), r1)
    add(idle, idx(I, np.maximum(J - 1, 0), 1), r2)
    add(busy, idle, mu)

    n = 2 * n1 * n2
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    off = r != c  # clipped self-loops carry no flow
    Q = sp.coo_matrix((v[off], (r[off], c[off])), shape=(n, n)).tocsr()
    Q.sum_duplicates()
    Q = (Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())).tocsr()
    assert np.allclose(np.asarray(Q.sum(axis=1)).ravel(), 0.0, atol=1e-9)
    return Generator(Q, (K1, K2), model)


def solve_stationary(gen: Generator) -> CtmcSolution:
    """Solve ``pi Q = 0``, ``sum pi = 1`` by sparse LU.

    One balance equation is replaced by ``pi[0] = 1`` and the solution is
    rescaled afterwards; a dense normalization row would ruin the sparsity
    of the factors.
    """
    Q = gen.Q
    n = Q.shape[0]
    keep = np.ones(n)
    keep[0] = 0.0
    A = sp.diags(keep) @ Q.T.tocsr() + sp.csr_matrix(([1.0], ([0], [0])), shape=(n, n))
    rhs = np.zeros(n)
    rhs[0] = 1.0
    try:
        pi = spla.spsolve(A.tocsc(), rhs)
    except RuntimeError as exc:  # pragma: no cover - SuperLU failure
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(pi)):
        raise SingularSystemError("stationary solve returned non-finite values")
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    residual = float(np.abs(Q.T @ pi).max())
    K1, K2 = gen.caps
    return CtmcSolution(gen.caps, pi.reshape(K1 + 1, K2 + 1, 2), residual)


def solve_geometric_exact(model: ModelSpec, caps: tuple[int, int]) -> CtmcSolution:
    """Stationary solve for a geometric batch law without truncating batch sizes.

    Each batch is unrolled one job at a time.  Besides the tangible
    probabilities ``p0`` (idle) and ``p1`` (busy) the system carries flow
    rates through three kinds of transient nodes per orbit position:

    * ``t1`` (``t2``): idle-server batch with only class-1 (class-2) jobs so
      far, one of them set aside for service;
    * ``b``: batch whose server job is already fixed, remaining jobs going
      to the orbits.
    """
    law = model.arrival_law
    if law.kind != BatchKind.GEOMETRIC_BINOMIAL:
        raise ModelError("solve_geometric_exact needs the geometric batch law")
    if not model.variant.exponential:
        raise ModelError("the CTMC oracle needs exponential service")
    K1, K2 = map(int, caps)
    n1, n2 = K1 + 1, K2 + 1
    n = n1 * n2
    lam, mu = model.arrival_rate, model.mu
    u1, u2, p1, p2 = law.u1, law.u2, model.p1, model.p2
    cont = 1.0 - law.stop
    stop = law.stop
    I, J = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    I, J = I.ravel(), J.ravel()
    pos = I * n2 + J
    up1 = np.minimum(I + 1, K1) * n2 + J
    up2 = I * n2 + np.minimum(J + 1, K2)
    # unknown blocks
    P0, P1, T1, T2, B = (k * n for k in range(5))

    rows, cols, vals = [], [], []

    def add(eq, var, coef):
        coef = np.broadcast_to(np.asarray(coef, dtype=float), eq.shape)
        keep = coef != 0
        rows.append(eq[keep])
        cols.append(var[keep])
        vals.append(coef[keep])

    r1, r2 = _retrial_rates(model, I, J)
    # idle balance: (lam + r1 + r2) p0 = mu p1
    add(P0 + pos, P0 + pos, lam + r1 + r2)
    add(P0 + pos, P1 + pos, -mu)

    # busy balance: (lam + mu) p1 = retrial inflow + landings
    add(P1 + pos, P1 + pos, lam + mu)
    has1 = I > 0
    has2 = J > 0
    src1 = (I - 1) * n2 + J
    src2 = I * n2 + (J - 1)
    # a successful orbit-1 retrial from idle (i, j) lands on busy (i - 1, j)
    add(P1 + src1[has1], P0 + pos[has1], -r1[has1])
    add(P1 + src2[has2], P0 + pos[has2], -r2[has2])

    # outgoing batch steps from every node kind, each landing on a position
    # step(kind flow at pos) -> next position with prob, then stop -> busy landing, cont -> next node
    def step(var_block, weight, target_pos, next_block):
        # landing on busy
        add(P1 + target_pos, var_block + pos, -stop * weight)
        # continuing into the next transient node
        add(next_block + target_pos, var_block + pos, -cont * weight)

    # first job of a batch at an idle server
    step(P0, lam * u1, pos, T1)
    step(P0, lam * u2, pos, T2)
    # from t1: class-1 job joins orbit 1; class-2 job resolves the priority
    step(T1, u1, up1, T1)
    step(T1, u2 * p1, up2, B)
    step(T1, u2 * p2, up1, B)
    # from t2, symmetric
    step(T2, u2, up2, T2)
    step(T2, u1 * p2, up1, B)
    step(T2, u1 * p1, up2, B)
    # busy-server batch start and continuation
    step(P1, lam * u1, up1, B)
    step(P1, lam * u2, up2, B)
    step(B, u1, up1, B)
    step(B, u2, up2, B)
    # transient node definitions: node = inflow
    for blk in (T1, T2, B):
        add(blk + pos, blk + pos, 1.0)

    N = 5 * n
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)).tocsr()
    A.sum_duplicates()
    # p0(0, 0) = 1 replaces the idle balance at (0, 0); rescaled below
    keep = np.ones(N)
    keep[P0] = 0.0
    A = sp.diags(keep) @ A + sp.csr_matrix(([1.0], ([P0], [P0])), shape=(N, N))
    rhs = np.zeros(N)
    rhs[P0] = 1.0
    A = A.tocsc()
    x = spla.spsolve(A, rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("augmented stationary solve returned non-finite values")
    p = np.stack([x[P0:P0 + n], x[P1:P1 + n]], axis=1).reshape(n1, n2, 2)
    total = p.sum()
    residual = float(np.abs(A @ x - rhs).max() / total)
    p = np.maximum(p, 0.0) / total
    return CtmcSolution((K1, K2), p, residual)


def solve_ctmc(model: ModelSpec, caps: tuple[int, int] = (300, 300)) -> CtmcSolution:
    """Pick the exact geometric solver when it applies, the enumerated generator otherwise."""
    if model.variant.batch and model.arrival_law.kind == BatchKind.GEOMETRIC_BINOMIAL:
        return solve_geometric_exact(model, caps)
    return solve_stationary(build_generator(model, caps))


def xi_series(model: ModelSpec, caps: tuple[int, int], M: int) -> tuple[np.ndarray, np.ndarray]:
    """Taylor coefficients in ``xi`` of ``E(N1)`` and ``E(N2)`` for the truncated chain.

    The generator is affine in ``xi``, ``Q = Q0 + xi Q1``, so the expansion
    ``pi = sum_m pi_m xi^m`` satisfies ``pi_m Q0 = -pi_{m-1} Q1`` with
    ``sum pi_m = 0`` for ``m >= 1``.  One factorization serves all orders.
    """
    g0 = build_generator(model.with_xi(0.0), caps)
    Q0 = g0.Q
    Q1 = build_generator(model.with_xi(1.0), caps).Q - Q0
    n = Q0.shape[0]
    keep = np.ones(n)
    keep[0] = 0.0
    A = sp.diags(keep) @ Q0.T.tocsr() + sp.csr_matrix(([1.0], ([0], [0])), shape=(n, n))
    lu = spla.splu(A.tocsc())
    rhs = np.zeros(n)
    rhs[0] = 1.0
    pi = lu.solve(rhs)
    pi /= pi.sum()
    terms = [pi]
    ones = np.ones(n)
    for _ in range(M):
        r = -(Q1.T @ terms[-1])
        r[0] = 0.0
        x = lu.solve(r)
        # pin the free multiple of pi_0 through sum x = 0
        x -= (x @ ones) * pi
        terms.append(x)
    K1, K2 = g0.caps
    i = np.repeat(np.arange(K1 + 1), (K2 + 1) * 2)
    j = np.tile(np.repeat(np.arange(K2 + 1), 2), K1 + 1)
    T = np.array(terms)
    return T @ i, T @ j
