"""Model parameters, arrival/service transforms, stability and busy/idle probabilities.

A model is a single-server retrial queue with two job classes and two
orbit queues.  Orbit ``k`` retries at rate ``phi_k * mu_k_star`` while both
orbits are non-empty (``phi_1 = xi``, ``phi_2 = 1 - xi``) and at its solo
rate ``mu_k_star`` when it is the only non-empty orbit.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ModelError, Tau0ViolationError, UnstableModelError


class Variant(str, enum.Enum):
    BATCH_EXP = "BATCH_EXP"
    BATCH_GENERAL = "BATCH_GENERAL"
    SINGLE_EXP = "SINGLE_EXP"
    SINGLE_GENERAL = "SINGLE_GENERAL"

    @property
    def exponential(self) -> bool:
        return self in (Variant.BATCH_EXP, Variant.SINGLE_EXP)

    @property
    def batch(self) -> bool:
        return self in (Variant.BATCH_EXP, Variant.BATCH_GENERAL)


class BatchKind(str, enum.Enum):
    EXPLICIT_PMF = "explicit_pmf"
    GEOMETRIC_BINOMIAL = "geometric_binomial"


@dataclass(frozen=True)
class BatchLaw:
    """Joint law of the class counts ``(M1, M2)`` in one arriving batch.

    ``EXPLICIT_PMF`` takes a finite table ``{(m1, m2): prob}``.
    ``GEOMETRIC_BINOMIAL`` has batch size ``W`` with ``P(W=m) = stop (1-stop)^(m-1)``
    (``stop = 1/2`` by default) and each job independently of class 1
    with probability ``u1``.
    """

    kind: BatchKind
    pmf: tuple[tuple[int, int, float], ...] = ()
    u1: float = 0.5
    stop: float = 0.5

    def __post_init__(self) -> None:
        if self.kind == BatchKind.EXPLICIT_PMF:
            if not self.pmf:
                raise ModelError("explicit batch pmf is empty")
            total = 0.0
            for m1, m2, p in self.pmf:
                if m1 < 0 or m2 < 0 or p < 0:
                    raise ModelError(f"invalid pmf entry {(m1, m2, p)}")
                if m1 == 0 and m2 == 0 and p > 0:
                    raise ModelError("g_{0,0} must be zero")
                total += p
            if abs(total - 1.0) > 1e-12:
                raise ModelError(f"batch pmf sums to {total!r}, not 1")
        else:
            if not 0.0 <= self.u1 <= 1.0:
                raise ModelError("u1 must lie in [0, 1]")
            if not 0.0 < self.stop <= 1.0:
                raise ModelError("stop probability must lie in (0, 1]")

    @classmethod
    def explicit(cls, pmf: Mapping[tuple[int, int], float]) -> "BatchLaw":
        items = tuple((int(m1), int(m2), float(p)) for (m1, m2), p in sorted(pmf.items()) if p > 0)
        return cls(BatchKind.EXPLICIT_PMF, pmf=items)

    @classmethod
    def geometric_binomial(cls, u1: float, stop: float = 0.5) -> "BatchLaw":
        return cls(BatchKind.GEOMETRIC_BINOMIAL, u1=float(u1), stop=float(stop))

    @property
    def u2(self) -> float:
        return 1.0 - self.u1

    def pgf(self, z1, z2):
        z1 = np.asarray(z1, dtype=complex)
        z2 = np.asarray(z2, dtype=complex)
        if self.kind == BatchKind.GEOMETRIC_BINOMIAL:
            w = self.u1 * z1 + self.u2 * z2
            # sum_m stop (1-stop)^(m-1) w^m
            return self.stop * w / (1.0 - (1.0 - self.stop) * w)
        out = np.zeros(np.broadcast(z1, z2).shape, dtype=complex)
        for m1, m2, p in self.pmf:
            out = out + p * z1**m1 * z2**m2
        return out

    @cached_property
    def means(self) -> tuple[float, float]:
        if self.kind == BatchKind.GEOMETRIC_BINOMIAL:
            ew = 1.0 / self.stop
            return self.u1 * ew, self.u2 * ew
        g1 = sum(m1 * p for m1, _, p in self.pmf)
        g2 = sum(m2 * p for _, m2, p in self.pmf)
        return g1, g2

    def support(self, tail: float = 1e-12) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Arrays ``(m1, m2, prob)``; infinite laws are cut where the dropped mass is below ``tail``."""
        if self.kind == BatchKind.EXPLICIT_PMF:
            a = np.array(self.pmf, dtype=float)
            return a[:, 0].astype(int), a[:, 1].astype(int), a[:, 2]
        from scipy.stats import binom

        # P(W > n) = (1-stop)^n
        q = 1.0 - self.stop
        wmax = 1 if q == 0 else max(1, int(math.ceil(math.log(tail) / math.log(q))))
        m1s, m2s, ps = [], [], []
        for w in range(1, wmax + 1):
            pw = self.stop * q ** (w - 1)
            k = np.arange(w + 1)
            pk = binom.pmf(k, w, self.u1)
            m1s.append(k)
            m2s.append(w - k)
            ps.append(pw * pk)
        m1 = np.concatenate(m1s)
        m2 = np.concatenate(m2s)
        p = np.concatenate(ps)
        keep = p > 0
        return m1[keep], m2[keep], p[keep]

    def to_json(self) -> dict[str, Any]:
        if self.kind == BatchKind.GEOMETRIC_BINOMIAL:
            return {"kind": self.kind.value, "u1": self.u1, "stop": self.stop}
        return {"kind": self.kind.value, "pmf": [list(e) for e in self.pmf]}


class ServiceKind(str, enum.Enum):
    EXPONENTIAL = "exponential"
    DETERMINISTIC = "deterministic"
    ERLANG = "erlang"
    HYPEREXP = "hyperexp"


@dataclass(frozen=True)
class ServiceLaw:
    kind: ServiceKind
    rate: float = 1.0  # exponential / erlang phase rate
    value: float = 1.0  # deterministic duration
    k: int = 1  # erlang shape
    probs: tuple[float, ...] = ()
    rates: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind in (ServiceKind.EXPONENTIAL, ServiceKind.ERLANG) and not self.rate > 0:
            raise ModelError("service rate must be positive")
        if self.kind == ServiceKind.DETERMINISTIC and not self.value > 0:
            raise ModelError("deterministic service time must be positive")
        if self.kind == ServiceKind.ERLANG and self.k < 1:
            raise ModelError("erlang shape must be >= 1")
        if self.kind == ServiceKind.HYPEREXP:
            if len(self.probs) != len(self.rates) or not self.probs:
                raise ModelError("hyperexp needs matching probs and rates")
            if any(r <= 0 for r in self.rates) or any(p < 0 for p in self.probs):
                raise ModelError("hyperexp rates must be positive, probs nonnegative")
            if abs(sum(self.probs) - 1.0) > 1e-12:
                raise ModelError("hyperexp probs must sum to 1")

    @classmethod
    def exponential(cls, mu: float) -> "ServiceLaw":
        return cls(ServiceKind.EXPONENTIAL, rate=float(mu))

    @classmethod
    def deterministic(cls, b: float) -> "ServiceLaw":
        return cls(ServiceKind.DETERMINISTIC, value=float(b))

    @classmethod
    def erlang(cls, k: int, rate: float) -> "ServiceLaw":
        return cls(ServiceKind.ERLANG, k=int(k), rate=float(rate))

    @classmethod
    def hyperexp(cls, probs, rates) -> "ServiceLaw":
        return cls(ServiceKind.HYPEREXP, probs=tuple(map(float, probs)), rates=tuple(map(float, rates)))

    @property
    def mean(self) -> float:
        if self.kind == ServiceKind.EXPONENTIAL:
            return 1.0 / self.rate
        if self.kind == ServiceKind.DETERMINISTIC:
            return self.value
        if self.kind == ServiceKind.ERLANG:
            return self.k / self.rate
        return sum(q / r for q, r in zip(self.probs, self.rates))

    def lst(self, s):
        """Laplace-Stieltjes transform of the service time at ``s``."""
        s = np.asarray(s, dtype=complex)
        if self.kind == ServiceKind.EXPONENTIAL:
            return self.rate / (self.rate + s)
        if self.kind == ServiceKind.DETERMINISTIC:
            return np.exp(-s * self.value)
        if self.kind == ServiceKind.ERLANG:
            return (self.rate / (self.rate + s)) ** self.k
        out = np.zeros_like(s)
        for q, r in zip(self.probs, self.rates):
            out = out + q * r / (r + s)
        return out

    def to_json(self) -> dict[str, Any]:
        if self.kind == ServiceKind.EXPONENTIAL:
            return {"kind": "exponential", "rate": self.rate}
        if self.kind == ServiceKind.DETERMINISTIC:
            return {"kind": "deterministic", "value": self.value}
        if self.kind == ServiceKind.ERLANG:
            return {"kind": "erlang", "k": self.k, "rate": self.rate}
        return {"kind": "hyperexp", "probs": list(self.probs), "rates": list(self.rates)}


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant
    mu1_star: float
    mu2_star: float
    xi: float
    service: ServiceLaw
    p1: float = 0.5
    lam: float | None = None
    lam1: float | None = None
    lam2: float | None = None
    batch: BatchLaw | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        if not (self.mu1_star > 0 and self.mu2_star > 0):
            raise ModelError("solo retrial rates must be positive")
        if not 0.0 <= self.xi <= 1.0:
            raise ModelError("xi must lie in [0, 1]")
        if not 0.0 <= self.p1 <= 1.0:
            raise ModelError("p1 must lie in [0, 1]")
        if self.variant.batch:
            if self.batch is None or self.lam is None:
                raise ModelError("batch variants need lam and a batch law")
            if self.lam1 is not None or self.lam2 is not None:
                raise ModelError("batch variants take a single arrival rate lam")
            if not self.lam > 0:
                raise ModelError("arrival rate must be positive")
        else:
            if self.batch is not None or self.lam is not None:
                raise ModelError("single-arrival variants take lam1, lam2 and no batch law")
            if self.lam1 is None or self.lam2 is None:
                raise ModelError("single-arrival variants need lam1 and lam2")
            if self.lam1 < 0 or self.lam2 < 0 or self.lam1 + self.lam2 <= 0:
                raise ModelError("class arrival rates must be nonnegative with positive sum")
        if self.variant.exponential and self.service.kind != ServiceKind.EXPONENTIAL:
            raise ModelError(f"{self.variant.value} requires exponential service")

    # derived quantities, computed once
    @cached_property
    def arrival_rate(self) -> float:
        return float(self.lam) if self.variant.batch else float(self.lam1 + self.lam2)

    @cached_property
    def arrival_law(self) -> BatchLaw:
        """Batch law driving the system; single arrivals are one-job batches."""
        if self.variant.batch:
            return self.batch
        lam = self.arrival_rate
        return BatchLaw.explicit({(1, 0): self.lam1 / lam, (0, 1): self.lam2 / lam})

    @cached_property
    def gbar(self) -> tuple[float, float]:
        return self.arrival_law.means

    @cached_property
    def g10(self) -> float:
        return float(self.arrival_law.pgf(1.0, 0.0).real)

    @cached_property
    def g01(self) -> float:
        return float(self.arrival_law.pgf(0.0, 1.0).real)

    @cached_property
    def entry_probs(self) -> tuple[float, float]:
        """P(a class-k job takes the idle server | batch arrives to an idle server)."""
        mixed = 1.0 - self.g10 - self.g01
        q1 = self.p1 * mixed + self.g10
        return q1, 1.0 - q1

    @property
    def p2(self) -> float:
        return 1.0 - self.p1

    @property
    def mu(self) -> float:
        if self.service.kind != ServiceKind.EXPONENTIAL:
            raise ModelError("service rate mu is only defined for exponential service")
        return self.service.rate

    @property
    def bbar(self) -> float:
        return self.service.mean

    def with_xi(self, xi: float) -> "ModelSpec":
        return replace(self, xi=float(xi))

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    def to_json(self) -> dict[str, Any]:
        rates: dict[str, float] = {"mu1_star": self.mu1_star, "mu2_star": self.mu2_star}
        if self.variant.batch:
            rates["lambda"] = self.lam
        else:
            rates["lambda1"] = self.lam1
            rates["lambda2"] = self.lam2
        out: dict[str, Any] = {"variant": self.variant.value, "rates": rates,
                               "service": self.service.to_json(), "xi": self.xi, "p1": self.p1}
        if self.batch is not None:
            out["batch"] = self.batch.to_json()
        return out


def batch_pgf(batch: BatchLaw, z1, z2):
    return batch.pgf(z1, z2)


def service_lst(service: ServiceLaw, s):
    return service.lst(s)


# ---------------------------------------------------------------- stability


@dataclass(frozen=True)
class StabilityReport:
    rho: float
    stable: bool
    variant_formula: str
    tau0: float | None = None
    nu0: float | None = None
    drift: dict[str, float] = field(default_factory=dict)
    disagreements: tuple[str, ...] = ()


def _load_rho(m: ModelSpec) -> float:
    lam, b = m.arrival_rate, m.bbar
    g1, g2 = m.gbar
    G10, G01, p1, p2 = m.g10, m.g01, m.p1, m.p2
    m1, m2 = m.mu1_star, m.mu2_star
    t1 = g1 * b * (lam + m1) + (g1 - 1 + p2 * (1 - G10) + p1 * G01) * (1 + lam * g2 * b * (m1 - m2) / m2)
    t2 = g2 * b * (lam + m2) + (g2 - 1 + p1 * (1 - G01) + p2 * G10) * (1 + lam * g1 * b * (m2 - m1) / m1)
    return lam / m1 * t1 + lam / m2 * t2


def _drift_quantities(m: ModelSpec) -> dict[str, float]:
    """tau_k, nu_k exactly as displayed, plus both sides of the drift condition."""
    lam, b, xi = m.arrival_rate, m.bbar, m.xi
    g1, g2 = m.gbar
    G10, G01, p1, p2 = m.g10, m.g01, m.p1, m.p2
    m1, m2 = m.mu1_star, m.mu2_star
    den0 = lam + m2 - xi * (m2 - m1)
    tau0 = (lam * (g1 * b * (lam + m2) + g1 + p2 * (1 - G10) + p1 * G01) + m2
            - xi * (m2 + lam * g1 * b * (m2 - m1))) / den0
    nu0 = (lam * (g2 * b * (lam + m2) + g2 + p1 * (1 - G01) + p2 * G10)
           + xi * (m1 + lam * g2 * b * (m1 - m2))) / den0
    tau1 = lam * (g1 * b * (lam + m1) + g1 + p2 * (1 - G10) + p1 * G01) / (lam + m1)
    nu1 = lam * (g2 * b * (lam + m1) + g1 - 1 + p1 * (1 - G01) + p2 * G10) / (lam + m1)
    tau2 = lam * (g1 * b * (lam + m2) + g1 - 1 + p2 * (1 - G10) + p1 * G01) / (lam + m2)
    nu2 = lam * (g2 * b * (lam + m2) + g1 + p1 * (1 - G01) + p2 * G10) / (lam + m2)
    ratio = (1 - tau1) / (1 - nu1) if nu1 != 1 else math.inf
    return {
        "tau0": tau0, "nu0": nu0, "tau1": tau1, "nu1": nu1, "tau2": tau2, "nu2": nu2,
        "drift_lhs": tau1 - 1 - nu1 * ratio,
        "drift_rhs": tau2 - 1 - nu2 * ratio,
    }


def _phi0_slopes(m: ModelSpec, h: float = 1e-6) -> tuple[float, float]:
    """d/dz1 and d/dz2 of the embedded-chain drift map phi0 at (1, 1), by central differences."""
    lam, xi = m.arrival_rate, m.xi
    m1, m2 = m.mu1_star, m.mu2_star
    law, p1, p2 = m.arrival_law, m.p1, m.p2

    def phi0(z1, z2):
        G = law.pgf(z1, z2)
        L = lam * ((p1 * z2 + p2 * z1) * G + (z2 - z1) * (p2 * law.pgf(z1, 0.0) - p1 * law.pgf(0.0, z2)))
        b = m.service.lst(lam - lam * G)
        return ((xi * m1 * z2 + (1 - xi) * m2 * z1 + L) * b / (lam + m2 - xi * (m2 - m1))).real

    d1 = (phi0(1 + h, 1.0) - phi0(1 - h, 1.0)) / (2 * h)
    d2 = (phi0(1.0, 1 + h) - phi0(1.0, 1 - h)) / (2 * h)
    return float(d1), float(d2)


def stability(model: ModelSpec) -> StabilityReport:
    """Load ``rho`` for the model's variant and the stability verdict ``rho < 1``.

    Batch variants use the batch load formula (with ``bbar = 1/mu`` for
    exponential service); the single-arrival variants use their own closed
    forms.  For batch variants the displayed drift quantities are also
    evaluated and any disagreement with ``rho`` is listed in the report.
    """
    m = model
    lam = m.arrival_rate
    if m.variant == Variant.SINGLE_EXP:
        rho = m.lam1 / m.mu * (lam + m.mu1_star) / m.mu1_star + m.lam2 / m.mu * (lam + m.mu2_star) / m.mu2_star
        return StabilityReport(rho, rho < 1, "sta0")
    if m.variant == Variant.SINGLE_GENERAL:
        rho = m.bbar * (m.lam1 * (lam + m.mu1_star) / m.mu1_star + m.lam2 * (lam + m.mu2_star) / m.mu2_star)
        return StabilityReport(rho, rho < 1, "stabb")

    rho = _load_rho(m)
    drift = _drift_quantities(m)
    tau0_num, nu0_num = _phi0_slopes(m)
    drift["tau0_numeric"] = tau0_num
    drift["nu0_numeric"] = nu0_num
    notes = []
    if abs(tau0_num - drift["tau0"]) > 1e-5:
        notes.append("tau0 closed form differs from the slope of phi0")
    if abs(nu0_num - drift["nu0"]) > 1e-5:
        notes.append("nu0 closed form differs from the slope of phi0")
    if abs(drift["drift_lhs"] - drift["drift_rhs"]) > 1e-9:
        notes.append("the two sides of the displayed drift condition differ")
    if (drift["drift_lhs"] < 0) != (rho < 1):
        notes.append("displayed drift condition and rho < 1 give different verdicts")
    if tau0_num >= 1 and nu0_num >= 1:
        raise Tau0ViolationError(
            f"tau0={tau0_num:.6g} and nu0={nu0_num:.6g} are both >= 1; the chain cannot be stable")
    return StabilityReport(rho, rho < 1, "load", tau0_num, nu0_num, drift, tuple(notes))


def busy_idle_probs(model: ModelSpec) -> tuple[float, float]:
    """Time-stationary (P(busy), P(idle)) for exponential service.

    Every arriving job is eventually served once, so ``mu P(busy)`` equals
    the job arrival rate ``lam (g1 + g2)``.  For single arrivals this is
    ``lam / mu``.
    """
    if not model.variant.exponential:
        raise ModelError("busy/idle probabilities are only provided for exponential service")
    if not stability(model).stable:
        raise UnstableModelError("model is unstable")
    g1, g2 = model.gbar
    busy = model.arrival_rate * (g1 + g2) / model.mu
    return busy, 1.0 - busy


def laap_busy_probability(model: ModelSpec) -> float:
    """Busy probability from the cut-equation closed form
    ``lam / (mu - lam (1 - G(0,1) - G(1,0)))``.

    Agrees with :func:`busy_idle_probs` only when ``g1 + g2 = 1``; kept for
    comparison against the oracle.
    """
    lam = model.arrival_rate
    return lam / (model.mu - lam * (1.0 - model.g01 - model.g10))


# ---------------------------------------------------------------- JSON I/O

_TOP_KEYS = {"variant", "rates", "batch", "service", "xi", "p1"}
_RATE_KEYS = {"lambda", "lambda1", "lambda2", "mu1_star", "mu2_star"}


def _check_keys(obj: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ModelError(f"unknown field(s) in {where}: {sorted(unknown)}")


def batch_from_json(obj: Mapping[str, Any]) -> BatchLaw:
    kind = obj.get("kind")
    if kind == BatchKind.GEOMETRIC_BINOMIAL.value:
        _check_keys(obj, {"kind", "u1", "stop"}, "batch")
        return BatchLaw.geometric_binomial(obj["u1"], obj.get("stop", 0.5))
    if kind == BatchKind.EXPLICIT_PMF.value:
        _check_keys(obj, {"kind", "pmf"}, "batch")
        return BatchLaw.explicit({(int(a), int(b)): float(p) for a, b, p in obj["pmf"]})
    raise ModelError(f"unknown batch kind {kind!r}")


def service_from_json(obj: Mapping[str, Any]) -> ServiceLaw:
    kind = obj.get("kind")
    if kind == "exponential":
        _check_keys(obj, {"kind", "rate"}, "service")
        return ServiceLaw.exponential(obj["rate"])
    if kind == "deterministic":
        _check_keys(obj, {"kind", "value"}, "service")
        return ServiceLaw.deterministic(obj["value"])
    if kind == "erlang":
        _check_keys(obj, {"kind", "k", "rate"}, "service")
        return ServiceLaw.erlang(obj["k"], obj["rate"])
    if kind == "hyperexp":
        _check_keys(obj, {"kind", "probs", "rates"}, "service")
        return ServiceLaw.hyperexp(obj["probs"], obj["rates"])
    raise ModelError(f"unknown service kind {kind!r}")


def model_from_json(obj: Mapping[str, Any], extra_keys: set[str] = frozenset()) -> ModelSpec:
    _check_keys(obj, _TOP_KEYS | set(extra_keys), "model")
    rates = obj.get("rates", {})
    _check_keys(rates, _RATE_KEYS, "rates")
    try:
        variant = Variant(obj["variant"])
    except (KeyError, ValueError) as exc:
        raise ModelError(f"bad or missing variant: {obj.get('variant')!r}") from exc
    return ModelSpec(
        variant=variant,
        mu1_star=float(rates["mu1_star"]),
        mu2_star=float(rates["mu2_star"]),
        xi=float(obj.get("xi", 0.0)),
        p1=float(obj.get("p1", 0.5)),
        service=service_from_json(obj["service"]),
        lam=float(rates["lambda"]) if "lambda" in rates else None,
        lam1=float(rates["lambda1"]) if "lambda1" in rates else None,
        lam2=float(rates["lambda2"]) if "lambda2" in rates else None,
        batch=batch_from_json(obj["batch"]) if "batch" in obj else None,
    )


def load_model(path: str | Path) -> ModelSpec:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh))
