"""Kernel functions of the rearranged functional equations and the in-disk root ``Y0``.

Every variant's functional equation is brought to one shape,

    K(z) H(z) = A(z) H(z1, 0) + B(z) H(0, z2) + C(z) H(0, 0),

with coefficients affine in ``xi``::

    K = K0 + xi K1,   A = (1 - xi) a,   B = xi B1,   C = C0 + xi C1.

``H`` is the idle-server PGF ``H0`` for exponential service and the
departure-epoch PGF ``Pi`` otherwise.  The named kernels of each variant
(``U``, ``S``, ``G10`` and so on) are these coefficients divided by ``z1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ModelError, NoConvergenceError, RootOutsideDiskError
from .model import ModelSpec, Variant


@dataclass(frozen=True)
class RootSolverConfig:
    newton_tol: float = 1e-12
    max_iter: int = 200
    fixed_point_fallback: bool = True
    eps0: float = 1e-7

    def __post_init__(self) -> None:
        if not (self.newton_tol > 0 and self.max_iter > 0 and self.eps0 > 0):
            raise ValueError("root solver tolerances must be positive")


@dataclass(frozen=True)
class Coefficients:
    """Coefficient arrays of the functional equation at a set of points."""

    K0: np.ndarray
    K1: np.ndarray
    a: np.ndarray
    B1: np.ndarray
    C0: np.ndarray
    C1: np.ndarray

    @property
    def A0(self) -> np.ndarray:
        return self.a

    @property
    def A1(self) -> np.ndarray:
        return -self.a

    def at_xi(self, xi: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(K, A, B, C)`` for a given ``xi``."""
        return (self.K0 + xi * self.K1, (1.0 - xi) * self.a, xi * self.B1, self.C0 + xi * self.C1)


# (tag, coefficient, sign) per variant; each named kernel is sign * coefficient / z1
_NAMED: dict[Variant, dict[str, tuple[str, float]]] = {
    Variant.BATCH_GENERAL: {"U": ("K0", 1.0), "G0": ("K1", -1.0), "S": ("a", 1.0),
                            "T0": ("C0", 1.0), "T1": ("C1", 1.0)},
    Variant.BATCH_EXP: {"U1": ("K0", 1.0), "U0": ("a", 1.0), "F0": ("C0", 1.0)},
    Variant.SINGLE_EXP: {"G": ("K0", -1.0), "G10": ("a", -1.0), "G00": ("C0", -1.0)},
    Variant.SINGLE_GENERAL: {"Ut": ("K0", 1.0), "Ut0": ("K1", -1.0), "St": ("a", 1.0),
                             "Tt0": ("C0", 1.0), "Tt1": ("C1", 1.0)},
}
_LEAD = {Variant.BATCH_GENERAL: "U", Variant.BATCH_EXP: "U1",
         Variant.SINGLE_EXP: "G", Variant.SINGLE_GENERAL: "Ut"}


class KernelBundle:
    """Evaluable kernel functions for one model.

    Parameters
    ----------
    model : ModelSpec
        Any variant.  Single-arrival variants are handled as batch models
        whose batches hold exactly one job.
    """

    def __init__(self, model: ModelSpec):
        self.model = model
        self.variant = model.variant
        self.lam = model.arrival_rate
        self.law = model.arrival_law
        self.names = tuple(_NAMED[self.variant]) + (("L",) if self.variant.batch else ())
        self.lead = _LEAD[self.variant]

    # -- building blocks
    def G(self, z1, z2):
        return self.law.pgf(z1, z2)

    def L(self, z1, z2):
        m, lam = self.model, self.lam
        z1 = np.asarray(z1, dtype=complex)
        z2 = np.asarray(z2, dtype=complex)
        return lam * ((m.p1 * z2 + m.p2 * z1) * self.G(z1, z2)
                      + (z2 - z1) * (m.p2 * self.G(z1, 0.0) - m.p1 * self.G(0.0, z2)))

    def beta(self, z1, z2):
        """``beta*(lam - lam G(z1, z2))``."""
        return self.model.service.lst(self.lam - self.lam * self.G(z1, z2))

    def coefficients(self, z1, z2) -> Coefficients:
        z1 = np.asarray(z1, dtype=complex)
        z2 = np.asarray(z2, dtype=complex)
        m, lam = self.model, self.lam
        s1, s2 = m.mu1_star, m.mu2_star
        L = self.L(z1, z2)
        if self.variant.exponential:
            mu = m.mu
            W = z1 * z2 * (lam + mu - lam * self.G(z1, z2))
            a = mu * (s2 * z1 - s1 * z2) - W * (s2 - s1)
            K0 = mu * (L + s2 * z1) - W * (lam + s2)
            C0 = mu * s1 * z2 - W * s1
            return Coefficients(K0=K0, K1=-a, a=a, B1=-a, C0=C0, C1=a)
        b = self.beta(z1, z2)
        zz = z1 * z2
        K0 = (lam + s2) * zz - b * (L + s2 * z1)
        K1 = (s1 - s2) * zz - b * (s1 * z2 - s2 * z1)
        a = b * ((s2 - s1) * L + lam * (s1 * z2 - s2 * z1) + s1 * s2 * (z2 - z1)) / (lam + s1)
        B1 = -(lam + s1) / (lam + s2) * a
        C0 = b * (lam + s2) * s1 * (L - lam * z2) / (lam * (lam + s1))
        P0 = L / lam
        P1 = (L + s1 * z2) / (lam + s1)
        P2 = (L + s2 * z1) / (lam + s2)
        C1 = b * ((s1 * z2 - s2 * z1) - (s1 - s2) * (P1 + P2 - P0))
        return Coefficients(K0=K0, K1=K1, a=a, B1=B1, C0=C0, C1=C1)

    def phi(self, z1, z2):
        """Fixed-point map whose fixed points in ``z2`` are the zeros of the lead kernel."""
        m, lam = self.model, self.lam
        z1 = np.asarray(z1, dtype=complex)
        z2 = np.asarray(z2, dtype=complex)
        s2 = m.mu2_star
        return self.beta(z1, z2) * (self.L(z1, z2) / z1 + s2) / (lam + s2)

    def named(self, name: str) -> Callable:
        if name == "L" and "L" in self.names:
            return self.L
        try:
            tag, sign = _NAMED[self.variant][name]
        except KeyError:
            raise ModelError(f"unknown kernel function {name!r} for {self.variant.value}") from None

        def f(z1, z2):
            c = self.coefficients(z1, z2)
            return sign * getattr(c, tag) / np.asarray(z1, dtype=complex)

        return f


def _near_zero_limit(f, z1, z2, eps0):
    """``f`` at ``z1``, replacing points with ``|z1| < eps0`` by a Richardson limit from ``eps0`` and ``2 eps0``."""
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    z1b, z2b = np.broadcast_arrays(z1, z2)
    small = np.abs(z1b) < eps0
    safe = np.where(small, eps0, z1b)
    out = np.asarray(f(safe, z2b), dtype=complex)
    if np.any(small):
        f2 = np.asarray(f(np.full(small.sum(), 2 * eps0), z2b[small]))
        lim = 2.0 * out[small] - f2
        # a genuine pole doubles the value when eps0 halves; no limit exists
        pole = np.abs(out[small] - f2) > 1e-3 * np.maximum(1.0, np.abs(out[small]))
        lim[pole] = complex(np.inf, np.nan)
        out = out.copy()
        out[small] = lim
    return out


def eval_kernel(bundle: KernelBundle, name: str, z1, z2, cfg: RootSolverConfig | None = None):
    """Value of the named kernel function of ``bundle`` at ``(z1, z2)``.

    Near ``z1 = 0`` the ``1/z1`` factor is handled by evaluating at
    ``eps0`` and ``2 eps0`` and taking one Richardson step.  Only the lead
    kernels have a finite limit there; the others keep a simple pole (it
    cancels in the ratios the recursion uses) and evaluate to infinity.
    """
    cfg = cfg or RootSolverConfig()
    f = bundle.named(name)
    out = _near_zero_limit(f, z1, z2, cfg.eps0)
    return out[()] if out.ndim == 0 else out


def _phi_safe(bundle: KernelBundle, z1, z2, eps0):
    return _near_zero_limit(bundle.phi, z1, z2, eps0)


def solve_y0(bundle: KernelBundle, z1, cfg: RootSolverConfig | None = None):
    """Root ``Y0(z1)`` of the lead kernel with ``|Y0| <= 1``; accepts arrays.

    Damped Newton on ``g(z2) = z2 - Phi(z1, z2)`` seeded at 0.  Points where
    Newton fails or leaves the disk are restarted with the fixed-point
    iteration ``z2 <- Phi(z1, z2)``, which contracts inside the disk, and
    then polished by Newton.
    """
    cfg = cfg or RootSolverConfig()
    z1 = np.atleast_1d(np.asarray(z1, dtype=complex))
    if np.any(np.abs(z1) > 1 + 1e-9):
        raise ValueError("solve_y0 needs |z1| <= 1")

    def g(z):
        return z - _phi_safe(bundle, z1, z, cfg.eps0)

    def newton(z, active):
        h = 1e-6
        ok = np.zeros(z.shape, dtype=bool)
        for _ in range(cfg.max_iter):
            gz = g(z)
            dg = (g(z + h) - g(z - h)) / (2 * h)
            step = gz / dg
            # damping: cap the step so iterates stay near the disk
            big = np.abs(step) > 0.5
            step = np.where(big, 0.5 * step / np.abs(np.where(big, step, 1)), step)
            z = np.where(active & ~ok, z - step, z)
            ok |= np.abs(step) < cfg.newton_tol
            if np.all(ok | ~active):
                break
        return z, ok

    active = np.ones(z1.shape, dtype=bool)
    z, ok = newton(np.zeros_like(z1), active)
    bad = ~ok | (np.abs(z) > 1 + 1e-8) | ~np.isfinite(z)
    if np.any(bad) and cfg.fixed_point_fallback:
        y = np.zeros_like(z1)
        for _ in range(20 * cfg.max_iter):
            y_new = np.where(bad, _phi_safe(bundle, z1, y, cfg.eps0), y)
            if np.all(np.abs(y_new - y)[bad] < cfg.newton_tol):
                y = y_new
                break
            y = y_new
        y, ok2 = newton(y, bad)
        z = np.where(bad, y, z)
        ok = np.where(bad, ok2, ok)
    if not np.all(ok):
        raise NoConvergenceError(f"Y0 did not converge at z1={z1[~ok][:3]}")
    if np.any(np.abs(z) > 1 + 1e-8):
        raise RootOutsideDiskError(f"root outside the unit disk at z1={z1[np.abs(z) > 1 + 1e-8][:3]}")
    return z[0] if z.size == 1 else z


def y0_derivative_closed_form(bundle: KernelBundle) -> float | None:
    """Closed form of ``Y0'(1)``, where one is available for the variant."""
    m = bundle.model
    lam, s2 = m.arrival_rate, m.mu2_star
    if m.variant == Variant.SINGLE_EXP:
        return m.lam1 * (lam + s2) / (m.mu * s2 - m.lam2 * (lam + s2))
    if m.variant == Variant.BATCH_GENERAL:
        g1, g2 = m.gbar
        b = m.bbar
        num = lam * (g1 - 1 + g1 * (lam + s2) * b + m.p2 * (1 - m.g10) + m.p1 * m.g01)
        den = s2 - lam * (g2 - 1 + g2 * (lam + s2) * b + m.p1 * (1 - m.g01) + m.p2 * m.g10)
        return num / den
    return None


def y0_derivative_numeric(bundle: KernelBundle, h: float = 1e-5, cfg: RootSolverConfig | None = None) -> float:
    """One-sided second-order difference of ``Y0`` at ``z1 = 1`` (``Y0`` is only defined for ``|z1| <= 1``)."""
    y = solve_y0(bundle, np.array([1.0, 1.0 - h, 1.0 - 2 * h]), cfg)
    return float(((3 * y[0] - 4 * y[1] + y[2]) / (2 * h)).real)


def y0_derivative_at_one(bundle: KernelBundle) -> float:
    """``dY0/dz1`` at ``z1 = 1``: the closed form when one exists, otherwise the numeric slope.

    Use :func:`y0_derivative_method` to see which was used.
    """
    cf = y0_derivative_closed_form(bundle)
    return float(cf) if cf is not None else y0_derivative_numeric(bundle)


def y0_derivative_method(bundle: KernelBundle) -> str:
    return "CLOSED_FORM" if y0_derivative_closed_form(bundle) is not None else "NUMERIC"
