"""Discrete-event simulation of the two-class retrial queue.

Retrials follow the constant retrial policy: each nonempty orbit emits
retrials at a rate that does not depend on its size.  A retrial that finds
the server busy leaves the orbit unchanged, and since the retrial clocks
are exponential such attempts have no effect on the state.  While the
server is busy the event loop therefore only tracks arrivals and the
service completion.

Random numbers come from NumPy's ``Philox`` counter-based generator.  Each
replication gets its own stream spawned from ``SeedSequence(seed)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats

from .errors import ModelError
from .model import ModelSpec, ServiceKind

log = logging.getLogger(__name__)

_SVC_CODE = {ServiceKind.EXPONENTIAL: 0, ServiceKind.DETERMINISTIC: 1,
             ServiceKind.ERLANG: 2, ServiceKind.HYPEREXP: 3}

# columns of the per-batch statistics array
_T, _N1, _N2, _BUSY, _DEP, _DN1, _DN2 = range(7)


@dataclass(frozen=True)
class SimConfig:
    """Run length and output settings.

    ``warmup`` and ``events`` count state-changing events (arrivals,
    successful retrials and service completions) per replication.
    """

    seed: int = 12345
    warmup: int = 100_000
    events: int = 1_000_000
    replications: int = 4
    batches: int = 20
    watchdog: int = 1_000_000
    confidence: float = 0.95
    debug: bool = False

    def __post_init__(self) -> None:
        if self.events <= 0 or self.replications <= 0 or self.batches <= 0:
            raise ValueError("events, replications and batches must be positive")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if self.events < 10 * self.warmup:
            log.warning("measured events (%d) below 10x warmup (%d)", self.events, self.warmup)


@dataclass(frozen=True)
class SimResult:
    """Time averages over all replications with confidence half-widths.

    ``EN1_dep``/``EN2_dep`` are orbit sizes seen just after departures, the
    quantity targeted by the departure-epoch analysis of general service.
    """

    EN1: float
    EN2: float
    p_busy: float
    ci1: float
    ci2: float
    ci_busy: float
    EN1_dep: float
    EN2_dep: float
    ci1_dep: float
    ci2_dep: float
    events: int
    sim_time: float
    diverged: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "EN1", "EN2", "p_busy", "ci1", "ci2", "ci_busy", "EN1_dep", "EN2_dep",
            "ci1_dep", "ci2_dep", "events", "sim_time", "diverged")}
        out["diagnostics"] = dict(self.diagnostics)
        return out


@numba.njit(cache=True)
def _service(rng, code, p0, k, probs, rates):
    if code == 0:
        return rng.exponential(1.0 / p0)
    if code == 1:
        return p0
    if code == 2:
        s = 0.0
        for _ in range(k):
            s += rng.exponential(1.0 / p0)
        return s
    u = rng.random()
    acc = 0.0
    for i in range(len(probs)):
        acc += probs[i]
        if u < acc:
            return rng.exponential(1.0 / rates[i])
    return rng.exponential(1.0 / rates[len(rates) - 1])


@numba.njit(cache=True)
def _run(rng, lam, cum, m1s, m2s, p1, xi, s1, s2, code, p0, k, probs, rates,
         warmup, events, nbatch, watchdog):
    """Event loop.  Returns (batch stats, ledger, flags)."""
    stat = np.zeros((nbatch, 7))
    n1 = 0
    n2 = 0
    busy = 0
    t = 0.0
    t_done = 0.0
    arrived = 0
    served = 0
    empty_fire = 0
    diverged = 0
    total = warmup + events
    per = events // nbatch
    ev = 0
    while ev < total:
        b = -1
        if ev >= warmup:
            b = min((ev - warmup) // per, nbatch - 1)
        if busy == 1:
            ta = t + rng.exponential(1.0 / lam)
            if ta < t_done:
                dt = ta - t
                nxt = 0
            else:
                dt = t_done - t
                nxt = 1
        else:
            r1 = 0.0
            r2 = 0.0
            if n1 > 0 and n2 > 0:
                r1 = xi * s1
                r2 = (1.0 - xi) * s2
            elif n1 > 0:
                r1 = s1
            elif n2 > 0:
                r2 = s2
            tot = lam + r1 + r2
            dt = rng.exponential(1.0 / tot)
            u = rng.random() * tot
            if u < lam:
                nxt = 0
            elif u < lam + r1:
                nxt = 2
            else:
                nxt = 3
        if b >= 0:
            stat[b, 0] += dt
            stat[b, 1] += n1 * dt
            stat[b, 2] += n2 * dt
            stat[b, 3] += busy * dt
        t += dt
        if nxt == 0:
            u = rng.random()
            j = np.searchsorted(cum, u, side="right")
            if j >= len(cum):
                j = len(cum) - 1
            a1 = m1s[j]
            a2 = m2s[j]
            arrived += a1 + a2
            if busy == 1:
                n1 += a1
                n2 += a2
            else:
                # one job of the winning class takes the server
                if a1 > 0 and a2 > 0:
                    if rng.random() < p1:
                        a1 -= 1
                    else:
                        a2 -= 1
                elif a1 > 0:
                    a1 -= 1
                else:
                    a2 -= 1
                n1 += a1
                n2 += a2
                busy = 1
                t_done = t + _service(rng, code, p0, k, probs, rates)
        elif nxt == 1:
            busy = 0
            served += 1
            if b >= 0:
                stat[b, 4] += 1.0
                stat[b, 5] += n1
                stat[b, 6] += n2
        else:
            if nxt == 2:
                if n1 == 0:
                    empty_fire += 1
                n1 -= 1
            else:
                if n2 == 0:
                    empty_fire += 1
                n2 -= 1
            busy = 1
            t_done = t + _service(rng, code, p0, k, probs, rates)
        ev += 1
        if n1 + n2 > watchdog:
            diverged = 1
            break
    ledger = np.array([arrived, served, n1, n2, busy, ev])
    flags = np.array([diverged, empty_fire])
    return stat, ledger, flags


def _service_args(model: ModelSpec):
    s = model.service
    code = _SVC_CODE[s.kind]
    probs = np.asarray(s.probs or (1.0,), dtype=float)
    rates = np.asarray(s.rates or (1.0,), dtype=float)
    if s.kind in (ServiceKind.EXPONENTIAL, ServiceKind.ERLANG):
        p0 = float(s.rate)
    elif s.kind == ServiceKind.DETERMINISTIC:
        p0 = float(s.value)
    else:
        p0 = 0.0
    return code, p0, int(s.k or 1), probs, rates


def _ci(samples: np.ndarray, conf: float) -> tuple[float, float]:
    n = len(samples)
    mean = float(samples.mean())
    if n < 2:
        return mean, math.inf
    half = stats.t.ppf(0.5 + conf / 2, n - 1) * samples.std(ddof=1) / math.sqrt(n)
    return mean, float(half)


def simulate(model: ModelSpec, cfg: SimConfig | None = None) -> SimResult:
    """Simulate ``cfg.replications`` independent runs and pool their batch means."""
    cfg = cfg or SimConfig()
    law = model.arrival_law
    m1s, m2s, ps = law.support(1e-15)
    cum = np.cumsum(ps / ps.sum())
    cum[-1] = 1.0
    code, p0, k, probs, rates = _service_args(model)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.replications)
    nb = min(cfg.batches, cfg.events)
    stats_all, diverged, empty_fire, ev_total, t_total = [], False, 0, 0, 0.0
    ledger_ok = True
    for child in children:
        rng = np.random.Generator(np.random.Philox(child))
        stat, ledger, flags = _run(rng, float(model.arrival_rate), cum, m1s.astype(np.int64),
                                   m2s.astype(np.int64), float(model.p1), float(model.xi),
                                   float(model.mu1_star), float(model.mu2_star), code, p0, k,
                                   probs, rates, cfg.warmup, cfg.events, nb, cfg.watchdog)
        arrived, served, n1, n2, busy, ev = (int(x) for x in ledger)
        # every arrived job is served, waiting in an orbit or in service
        if arrived != served + n1 + n2 + busy:
            ledger_ok = False
        if cfg.debug:
            assert arrived == served + n1 + n2 + busy, "job ledger does not balance"
            assert flags[1] == 0, "retrial from an empty orbit"
        diverged |= bool(flags[0])
        empty_fire += int(flags[1])
        ev_total += ev
        t_total += float(stat[:, _T].sum())
        stats_all.append(stat)
    st = np.concatenate(stats_all)
    st = st[st[:, _T] > 0]
    diag = {"ledger_balanced": ledger_ok, "empty_orbit_retrials": empty_fire,
            "replications": cfg.replications, "batches": nb}
    if diverged or len(st) == 0:
        nan = math.nan
        return SimResult(nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, ev_total, t_total,
                         True, {**diag, "reason": f"orbit size exceeded watchdog {cfg.watchdog}"})
    T = st[:, _T]
    en1, ci1 = _ci(st[:, _N1] / T, cfg.confidence)
    en2, ci2 = _ci(st[:, _N2] / T, cfg.confidence)
    pb, cib = _ci(st[:, _BUSY] / T, cfg.confidence)
    dep = np.maximum(st[:, _DEP], 1.0)
    d1, cd1 = _ci(st[:, _DN1] / dep, cfg.confidence)
    d2, cd2 = _ci(st[:, _DN2] / dep, cfg.confidence)
    return SimResult(en1, en2, pb, ci1, ci2, cib, d1, d2, cd1, cd2, ev_total, t_total, False, diag)


def sweep_simulate(template: ModelSpec, parameter: str, grid, cfg: SimConfig | None = None) -> list:
    """One :class:`SimResult` per grid value (or the exception raised there).

    Point ``i`` uses seed ``cfg.seed + i``.
    """
    cfg = cfg or SimConfig()
    out = []
    for i, value in enumerate(grid):
        try:
            model = template.with_(**{parameter: value})
            out.append(simulate(model, _reseed(cfg, cfg.seed + i)))
        except (ModelError, ValueError, ArithmeticError) as exc:
            out.append(exc)
    return out


def _reseed(cfg: SimConfig, seed: int) -> SimConfig:
    from dataclasses import replace

    return replace(cfg, seed=seed)
