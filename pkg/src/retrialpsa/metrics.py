"""Mean orbit lengths from the coefficient series, Padé acceleration and diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import NanDerivativeError, SingularSystemError
from .psa import CoefficientEvaluator

# one-sided derivative at t = 0 from g(h), g(2h), g(3h); O(h^2)
_STENCIL = np.array([-2.5, 4.0, -1.5])


@dataclass(frozen=True)
class SeriesMetrics:
    """Coefficients ``v[m]`` of ``E(N_k) = sum_m v[m] xi^m``.

    Attributes
    ----------
    k : int
        Orbit index, 1 or 2.
    coefficients : numpy.ndarray
        Real coefficients ``v_{k,0..M}``.
    M : int
        Series order.
    h : float
        Finite-difference step.
    extrapolation : dict
        Raw estimates at steps ``h`` and ``2h`` and the largest imaginary
        residue discarded.
    """

    k: int
    coefficients: np.ndarray
    M: int
    h: float
    extrapolation: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TruncatedValue:
    value: float
    last_term: float


@dataclass(frozen=True)
class PadeApproximant:
    """Rational form ``P(xi) / Q(xi)`` with ``Q(0) = 1``."""

    numerator: np.ndarray
    denominator: np.ndarray
    L: int
    N: int
    defective: bool = False

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.polyval(self.numerator[::-1], xi) / np.polyval(self.denominator[::-1], xi)

    def taylor(self, n: int) -> np.ndarray:
        """First ``n`` Maclaurin coefficients of the rational form."""
        out = np.zeros(n)
        num = np.zeros(n)
        num[: min(n, self.L + 1)] = self.numerator[:n]
        for i in range(n):
            acc = num[i]
            for j in range(1, min(i, self.N) + 1):
                acc -= self.denominator[j] * out[i - j]
            out[i] = acc
        return out


def _component(ev: CoefficientEvaluator) -> str:
    return "H" if ev.exponential else "V"


def _directional(ev: CoefficientEvaluator, M: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives along ``z1`` and along the diagonal at ``(1, 1)``, per order."""
    comp = _component(ev)
    t = h * np.arange(1, 4)
    z1 = np.concatenate([1 - t, 1 - t])
    z2 = np.concatenate([np.ones(3), 1 - t])
    vals = ev.values(z1, z2, comp, M)
    g_row = vals[:, :3] @ _STENCIL / h
    g_diag = vals[:, 3:] @ _STENCIL / h
    return -g_row, -g_diag


def mean_series(ev: CoefficientEvaluator, k: int, M: int | None = None, h: float = 1e-4) -> SeriesMetrics:
    """Series coefficients of ``E(N_k)``.

    ``E(N1)`` is the ``z1`` derivative of the orbit PGF at ``(1, 1)``; the
    total ``E(N1) + E(N2)`` is the derivative along the diagonal, so
    ``E(N2)`` needs no evaluation on the line ``z1 = 1``.  Both derivatives
    use interior nodes ``1 - h, 1 - 2h, 1 - 3h`` and one Richardson step
    against the same stencil at ``2h``.
    """
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    M = ev.max_order if M is None else M
    for attempt in range(2):
        r1, d1 = _directional(ev, M, h)
        r2, d2 = _directional(ev, M, 2 * h)
        row = (4 * r1 - r2) / 3
        diag = (4 * d1 - d2) / 3
        est = row if k == 1 else diag - row
        raw_h = r1 if k == 1 else d1 - r1
        raw_2h = r2 if k == 1 else d2 - r2
        if np.all(np.isfinite(est)):
            break
        h /= 2
    else:
        raise NanDerivativeError("non-finite derivative after halving the step")
    imag = float(np.max(np.abs(est.imag))) if est.size else 0.0
    return SeriesMetrics(k, est.real.copy(), M, h,
                         {"step_h": raw_h.real, "step_2h": raw_2h.real, "imag_residue": imag})


def truncated_mean(sm: SeriesMetrics, xi: float, M: int | None = None) -> TruncatedValue:
    """Horner evaluation of the series through order ``M`` (all of it by default)."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError("xi must lie in [0, 1]")
    c = sm.coefficients if M is None else sm.coefficients[: M + 1]
    acc = 0.0
    for v in c[::-1]:
        acc = acc * xi + v
    return TruncatedValue(float(acc), float(abs(c[-1]) * xi ** (len(c) - 1)))


def pade_from_series(series: SeriesMetrics | Sequence[float], L: int, N: int) -> PadeApproximant:
    """``[L/N]`` Padé approximant of a power series.

    Raises
    ------
    SingularSystemError
        When the denominator system is singular (a defective table entry).
    """
    c = np.asarray(series.coefficients if isinstance(series, SeriesMetrics) else series, dtype=float)
    if L < 0 or N < 0:
        raise ValueError("orders must be nonnegative")
    if L + N + 1 > len(c):
        raise ValueError(f"[{L}/{N}] needs {L + N + 1} coefficients, got {len(c)}")
    if N == 0:
        return PadeApproximant(c[: L + 1].copy(), np.ones(1), L, 0)

    def coef(i):
        return c[i] if i >= 0 else 0.0

    col = np.array([coef(L + i) for i in range(N)])
    row = np.array([coef(L - j) for j in range(N)])
    A = sla.toeplitz(col, row)
    rhs = -np.array([coef(L + 1 + i) for i in range(N)])
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > 1e14:
        raise SingularSystemError(f"[{L}/{N}] Padé system is singular")
    w = np.concatenate([[1.0], np.linalg.solve(A, rhs)])
    num = np.array([sum(w[j] * coef(i - j) for j in range(min(i, N) + 1)) for i in range(L + 1)])
    grid = np.linspace(0.0, 1.0, 2001)
    q = np.polyval(w[::-1], grid)
    defective = bool(np.any(np.sign(q) != np.sign(q[0])) or np.min(np.abs(q)) < 1e-12)
    return PadeApproximant(num, w, L, N, defective)


def normalization_residual(ev: CoefficientEvaluator, xi: float, M: int | None = None) -> float:
    """``|truncated PGF at (1, 1) - 1|``."""
    M = ev.max_order if M is None else M
    vals = ev.values(1.0, 1.0, _component(ev), M)[:, 0]
    return float(abs(np.sum(vals * xi ** np.arange(M + 1)) - 1.0))


def functional_equation_residual(ev: CoefficientEvaluator, xi: float, z1, z2, M: int | None = None) -> np.ndarray:
    """Relative residual of the truncated series in the functional equation.

    The equation ``K V = A V(z1, 0) + B V(0, z2) + C V(0, 0)`` is evaluated
    with every term truncated at order ``M``; the residual is divided by the
    sum of the term magnitudes so that it is scale free.
    """
    M = ev.max_order if M is None else M
    z1 = np.atleast_1d(np.asarray(z1, dtype=complex))
    z2 = np.atleast_1d(np.asarray(z2, dtype=complex))
    n = len(z1)
    pw = xi ** np.arange(M + 1)
    pts1 = np.concatenate([z1, z1, np.zeros(n), [0.0]])
    pts2 = np.concatenate([z2, np.zeros(n), z2, [0.0]])
    s = pw @ ev.values(pts1, pts2, "V", M)
    V, V10, V01, c = s[:n], s[n:2 * n], s[2 * n:3 * n], s[-1]
    K, A, B, C = ev.bundle.coefficients(z1, z2).at_xi(xi)
    terms = [K * V, A * V10, B * V01, C * c]
    resid = terms[0] - terms[1] - terms[2] - terms[3]
    scale = sum(np.abs(t) for t in terms)
    return np.abs(resid) / scale
