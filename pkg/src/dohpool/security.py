"""Attack-probability model for a pool built from N independently attacked resolvers.

Two readings of "probability of compromising at least M = ceil(x*N)
resolvers" live side by side:

* :func:`attack_probability_paper` -- the closed form ``p**M``, the chance
  that one particular set of M resolvers is compromised;
* :func:`attack_probability_exact` -- the binomial tail over all sets.

:func:`attack_probability_montecarlo` is an empirical oracle for the tail.
Fractions given as floats are read through their decimal repr (``0.1`` is
1/10) so thresholds such as ``ceil(0.7 * 10)`` do not drift by one ulp.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Optional, Union

import numpy as np

from . import _kernels

Real = Union[float, int, Fraction]

MC_CHUNK = 1 << 16


def as_fraction(value: Real) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {value!r}")
    return Fraction(repr(float(value)))


@dataclass(frozen=True)
class ThreatParams:
    n: int
    x: Real
    p_attack: Real
    y: Real = Fraction(1, 2)
    k: int = 1

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 <= as_fraction(self.x) <= 1:
            raise ValueError(f"x must lie in [0, 1], got {self.x}")
        if not 0 < as_fraction(self.y) <= 1:
            raise ValueError(f"y must lie in (0, 1], got {self.y}")
        if not 0 <= as_fraction(self.p_attack) <= 1:
            raise ValueError(f"p_attack must lie in [0, 1], got {self.p_attack}")
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")

    @property
    def threshold(self) -> int:
        """M = ceil(x * n), the number of compromised resolvers that counts as success."""
        return math.ceil(as_fraction(self.x) * self.n)


def min_compromised_resolvers(n: int, y: Real) -> int:
    """Fewest compromised resolvers that control at least a ``y`` share of the pool.

    Each resolver contributes exactly K entries, so controlling m resolvers
    means controlling m/n of the pool; the answer is ceil(y * n).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    yf = as_fraction(y)
    if not 0 < yf <= 1:
        raise ValueError(f"y must lie in (0, 1], got {y}")
    return math.ceil(yf * n)


def attack_probability_paper(params: ThreatParams) -> float:
    """``p_attack ** ceil(x*n)``, evaluated exactly and rounded once."""
    return float(as_fraction(params.p_attack) ** params.threshold)


def _log_term(n: int, m: int, p: float) -> float:
    return math.log(math.comb(n, m)) + m * math.log(p) + (n - m) * math.log1p(-p)


def attack_probability_exact(params: ThreatParams) -> float:
    """P[Binomial(n, p) >= ceil(x*n)], summed in log space with fsum."""
    n, m0 = params.n, params.threshold
    p = float(params.p_attack)
    if m0 <= 0:
        return 1.0
    if m0 > n or p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    return min(1.0, math.fsum(math.exp(_log_term(n, m, p)) for m in range(m0, n + 1)))


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    stderr: float
    trials: int
    hits: int


def attack_probability_montecarlo(params: ThreatParams, trials: int, seed: int) -> MonteCarloEstimate:
    """Fraction of ``trials`` draws of n Bernoulli(p) compromises reaching the threshold.

    Uniforms come from numpy's PCG64 in fixed-size chunks, so the estimate
    depends only on ``seed`` and not on whether the numba kernel is active.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = float(params.p_attack)
    rng = np.random.Generator(np.random.PCG64(seed))
    hits = 0
    remaining = trials
    while remaining:
        rows = min(MC_CHUNK, remaining)
        u = rng.random((rows, params.n))
        hits += _kernels.threshold_hits(u, p, params.threshold)
        remaining -= rows
    est = hits / trials
    return MonteCarloEstimate(est, math.sqrt(est * (1.0 - est) / trials), trials, hits)


def halving_step(x: Real, p: Real) -> Optional[int]:
    """Resolvers to add so that ``p ** ceil(x*n)`` at least halves, from any n.

    ``ceil(log(1/2) / (x log p))`` alone is only the average rate: the
    ceiling in the threshold can hold M flat for up to ``ceil(1/x) - 1``
    extra resolvers, so that much slack is added. None if there is no decay.
    """
    xf, pf = as_fraction(x), as_fraction(p)
    if xf <= 0 or pf >= 1:
        return None
    slack = math.ceil(1 / xf)
    if pf == 0:
        return slack
    return math.ceil(math.log(0.5) / (float(xf) * math.log(float(pf)))) + slack


@dataclass(frozen=True)
class CurveRow:
    n: int
    x: float
    p: float
    paper_prob: float
    exact_prob: float
    mc_estimate: Optional[float] = None
    mc_stderr: Optional[float] = None

    @property
    def threshold(self) -> int:
        return math.ceil(as_fraction(self.x) * self.n)


CURVE_COLUMNS = ("n", "x", "p", "paper_prob", "exact_prob", "mc_estimate", "mc_stderr")


def security_curve(
    n_range: Iterable[int],
    x: Real,
    p_range: Iterable[Real],
    mc_trials: int = 0,
    seed: int = 0,
) -> list[CurveRow]:
    """Closed-form and exact attack probabilities over a grid of (n, p).

    With ``mc_trials > 0`` each row also gets a Monte Carlo estimate; per-row
    seeds are spawned from ``seed``.
    """
    ns, ps = list(n_range), list(p_range)
    seeds = iter(np.random.SeedSequence(seed).generate_state(len(ns) * len(ps)))
    rows = []
    for p in ps:
        for n in ns:
            params = ThreatParams(n=n, x=x, p_attack=p)
            mc_est = mc_err = None
            row_seed = int(next(seeds))
            if mc_trials:
                mc = attack_probability_montecarlo(params, mc_trials, row_seed)
                mc_est, mc_err = mc.estimate, mc.stderr
            rows.append(
                CurveRow(n, float(x), float(p), attack_probability_paper(params), attack_probability_exact(params), mc_est, mc_err)
            )
    return rows


def decay_violations(rows: Iterable[CurveRow], ratio: float = 0.1) -> list[str]:
    """Check monotone decay of the closed form along n for each (x, p).

    Reports rows where the probability rises with n, and pairs (n, n+2)
    where the threshold rose by exactly one but the probability fell by
    less than ``ratio`` (p must then be <= ratio for the check to apply).
    """
    problems = []
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.x, r.p), []).append(r)
    for (x, p), group in groups.items():
        group.sort(key=lambda r: r.n)
        by_n = {r.n: r for r in group}
        for a, b in zip(group, group[1:]):
            if b.paper_prob > a.paper_prob:
                problems.append(f"x={x} p={p}: paper_prob rises from n={a.n} to n={b.n}")
        for r in group:
            nxt = by_n.get(r.n + 2)
            if nxt is None or nxt.threshold != r.threshold + 1 or r.paper_prob == 0:
                continue
            if nxt.paper_prob / r.paper_prob > ratio:
                problems.append(
                    f"x={x} p={p}: ratio {nxt.paper_prob / r.paper_prob!r} between n={r.n} and n={nxt.n}"
                )
    return problems


def curve_to_csv(rows: Iterable[CurveRow], out: Optional[io.TextIOBase] = None) -> str:
    buf = out if out is not None else io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CURVE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        row = asdict(r)
        writer.writerow({k: ("" if row[k] is None else row[k]) for k in CURVE_COLUMNS})
    return buf.getvalue() if out is None else ""
