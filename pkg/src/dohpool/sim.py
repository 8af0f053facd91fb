"""Adversary simulation: fleets of benign and compromised resolvers.

A scenario fixes which resolvers the attacker controls and what each of them
answers. :func:`run_scenario` pushes the synthesized answers through
:func:`~dohpool.combine.combine_pool` and measures the attacker's share of
the pool; :func:`run_naive_baseline` does the same for a plain union with no
truncation. :func:`sweep` draws random compromise patterns for comparison
with :mod:`dohpool.security`.
"""

from __future__ import annotations

import asyncio
import csv
import io
import ipaddress
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import yaml

from . import _kernels
from .codec import AddressRecord, Question, RRType
from .combine import AddressPool, CombineInput, EmptyPool, InsufficientResponders, PoolEntry, combine_pool
from .doh import Failure, FailureKind, ResolverResponse
from .security import as_fraction

DEFAULT_BENIGN = ("192.0.2.1", "192.0.2.2", "192.0.2.3", "192.0.2.4")
ATTACKER_V4 = ipaddress.ip_network("10.66.0.0/16")
ATTACKER_V6 = ipaddress.ip_network("fd66::/64")


@dataclass(frozen=True)
class Honest:
    """Compromised, but answers like a benign resolver."""


@dataclass(frozen=True)
class Overwhelm:
    """Pad the answer with ``list_length`` attacker addresses."""

    list_length: int


@dataclass(frozen=True)
class Starve:
    """Answer NOERROR with no records (the accepted DoS case)."""


@dataclass(frozen=True)
class Substitute:
    addresses: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "addresses", tuple(self.addresses))


@dataclass(frozen=True)
class Duplicate:
    """Repeat one address ``count`` times."""

    address: str
    count: int


Strategy = Union[Honest, Overwhelm, Starve, Substitute, Duplicate]

_STRATEGIES = {
    "honest": Honest,
    "overwhelm": Overwhelm,
    "starve": Starve,
    "substitute": Substitute,
    "duplicate": Duplicate,
}


def parse_strategy(name: str, params: Optional[dict] = None) -> Strategy:
    try:
        cls = _STRATEGIES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(_STRATEGIES)}") from None
    try:
        return cls(**(params or {}))
    except TypeError as exc:
        raise ValueError(f"strategy {name!r}: {exc}") from None


def attacker_addresses(count: int, qtype: int = RRType.A) -> list[str]:
    net = ATTACKER_V4 if qtype == RRType.A else ATTACKER_V6
    if count > net.num_addresses - 2:
        raise ValueError(f"cannot synthesize {count} attacker addresses")
    base = int(net.network_address) + 1
    return [str(ipaddress.ip_address(base + i)) for i in range(count)]


@dataclass(frozen=True)
class Policy:
    min_responders: Optional[int] = None
    empty_is_failure: bool = False


@dataclass
class AttackScenario:
    n: int
    compromised: frozenset = frozenset()
    strategy: Union[Strategy, Mapping[int, Strategy]] = Honest()
    benign_template: Sequence[str] = DEFAULT_BENIGN
    seed: int = 0
    jitter: bool = True
    unreachable: frozenset = frozenset()
    qname: str = "pool.ntp.org"
    qtype: int = RRType.A
    ttl: int = 150

    def __post_init__(self) -> None:
        self.compromised = frozenset(self.compromised)
        self.unreachable = frozenset(self.unreachable)
        self.benign_template = tuple(self.benign_template)
        if self.n < 1:
            raise ValueError("n must be >= 1")
        for idx in self.compromised | self.unreachable:
            if not 0 <= idx < self.n:
                raise ValueError(f"resolver index {idx} outside 0..{self.n - 1}")

    @property
    def labels(self) -> list[str]:
        return [f"r{i}" for i in range(self.n)]

    def strategy_for(self, index: int) -> Strategy:
        if isinstance(self.strategy, Mapping):
            return self.strategy.get(index, Honest())
        return self.strategy

    def list_for(self, index: int, rng: random.Random) -> list[str]:
        benign = list(self.benign_template)
        if self.jitter:
            rng.shuffle(benign)
        if index not in self.compromised:
            return benign
        s = self.strategy_for(index)
        if isinstance(s, Overwhelm):
            return attacker_addresses(s.list_length, self.qtype)
        if isinstance(s, Starve):
            return []
        if isinstance(s, Substitute):
            return list(s.addresses)
        if isinstance(s, Duplicate):
            return [s.address] * s.count
        return benign

    def list_length(self, index: int) -> int:
        """Answer count of resolver ``index`` without building the list; -1 if unreachable."""
        if index in self.unreachable:
            return -1
        if index not in self.compromised:
            return len(self.benign_template)
        s = self.strategy_for(index)
        if isinstance(s, Overwhelm):
            return s.list_length
        if isinstance(s, Starve):
            return 0
        if isinstance(s, Substitute):
            return len(s.addresses)
        if isinstance(s, Duplicate):
            return s.count
        return len(self.benign_template)


def synthesize_responses(scenario: AttackScenario) -> list[ResolverResponse]:
    """Each resolver's answer for the scenario, deterministic in ``scenario.seed``."""
    rng = random.Random(scenario.seed)
    out = []
    for i, label in enumerate(scenario.labels):
        addresses = scenario.list_for(i, rng)
        if i in scenario.unreachable:
            out.append(ResolverResponse(label, failure=Failure(FailureKind.TIMEOUT)))
            continue
        records = tuple(AddressRecord(scenario.qname, scenario.qtype, scenario.ttl, a) for a in addresses)
        out.append(ResolverResponse(label, answers=records, rcode=0))
    return out


@dataclass
class ScenarioOutcome:
    pool: Optional[AddressPool]
    attacker_fraction: Fraction
    servfail: bool = False
    empty: bool = False
    notes: list[str] = field(default_factory=list)


def _attacker_fraction(pool: Optional[AddressPool], scenario: AttackScenario) -> Fraction:
    if pool is None or not pool.entries:
        return Fraction(0)
    bad = {scenario.labels[i] for i in scenario.compromised}
    return Fraction(sum(e.provenance in bad for e in pool.entries), len(pool.entries))


def _outcome(responses: list[ResolverResponse], scenario: AttackScenario, policy: Policy) -> ScenarioOutcome:
    notes = [r.summary() for r in responses]
    inp = CombineInput(responses, policy.min_responders, policy.empty_is_failure)
    try:
        pool = combine_pool(inp)
    except InsufficientResponders as exc:
        return ScenarioOutcome(None, Fraction(0), servfail=True, notes=notes + [str(exc)])
    except EmptyPool as exc:
        return ScenarioOutcome(exc.pool, Fraction(0), empty=True, notes=notes + [str(exc)])
    return ScenarioOutcome(pool, _attacker_fraction(pool, scenario), notes=notes)


def run_scenario(scenario: AttackScenario, policy: Policy = Policy(), transport: str = "inprocess") -> ScenarioOutcome:
    """Combine the scenario's answers and measure the attacker's share of the pool.

    ``transport="https"`` serves each answer list from a local DoH server and
    goes through the real client and fan-out path instead of handing the
    lists over in process.
    """
    if transport == "inprocess":
        responses = synthesize_responses(scenario)
    elif transport == "https":
        responses = asyncio.run(_responses_over_https(scenario, policy))
    else:
        raise ValueError(f"unknown transport {transport!r}")
    return _outcome(responses, scenario, policy)


async def _responses_over_https(scenario: AttackScenario, policy: Policy) -> list[ResolverResponse]:
    from .service import ServiceConfig, fan_out
    from .testing import MockDohServer, make_test_pki

    pki = make_test_pki()
    synthesized = synthesize_responses(scenario)
    servers = []
    try:
        for resp in synthesized:
            if resp.ok:
                addrs = [rec.text for rec in resp.answers]
                servers.append(MockDohServer(pki, addrs, label=resp.resolver, ttl=scenario.ttl).start())
            else:
                servers.append(MockDohServer(pki, label=resp.resolver, hang=True, hang_limit=5).start())
        config = ServiceConfig(
            resolvers=[s.endpoint(timeout_ms=2000) for s in servers],
            min_responders=policy.min_responders,
            empty_is_failure=policy.empty_is_failure,
            deadline_ms=2000,
        )
        inp = await fan_out(Question(scenario.qname, scenario.qtype), config)
        return list(inp.responses)
    finally:
        for s in servers:
            s.stop()


def run_naive_baseline(scenario: AttackScenario) -> ScenarioOutcome:
    """Plain concatenation of every answer list, no truncation."""
    responses = synthesize_responses(scenario)
    usable = [r for r in responses if r.ok]
    entries = tuple(PoolEntry(rec, r.resolver) for r in usable for rec in r.answers)
    pool = AddressPool(entries, None, len(usable), tuple(r.resolver for r in usable))
    return ScenarioOutcome(
        pool, _attacker_fraction(pool, scenario), empty=not entries, notes=[r.summary() for r in responses]
    )


@dataclass
class SweepResult:
    n: int
    p: float
    y: Fraction
    compromised: np.ndarray  # runs x n, bool
    bad: np.ndarray
    used: np.ndarray
    status: np.ndarray

    @property
    def runs(self) -> int:
        return len(self.status)

    @property
    def successes(self) -> np.ndarray:
        """Runs where the attacker holds at least a ``y`` share of a non-empty pool."""
        ok = self.status == _kernels.STATUS_OK
        # bad/used >= num/den, in integers
        return ok & (self.bad * self.y.denominator >= self.y.numerator * self.used)

    @property
    def success_rate(self) -> float:
        return float(np.count_nonzero(self.successes)) / self.runs

    @property
    def stderr(self) -> float:
        r = self.success_rate
        return (r * (1 - r) / self.runs) ** 0.5

    def fractions(self) -> np.ndarray:
        return np.where(self.used > 0, self.bad / np.maximum(self.used, 1), 0.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "compromised", "attacker_fraction", "status", "success"])
        names = {_kernels.STATUS_OK: "ok", _kernels.STATUS_SERVFAIL: "servfail", _kernels.STATUS_EMPTY: "empty"}
        succ = self.successes
        frac = self.fractions()
        for i in range(self.runs):
            w.writerow([i, int(self.compromised[i].sum()), repr(float(frac[i])), names[int(self.status[i])], int(succ[i])])
        return buf.getvalue()


def sweep(
    n: int,
    p: float,
    y,
    runs: int,
    seed: int = 0,
    strategy: Strategy = Overwhelm(100),
    policy: Policy = Policy(),
    benign_template: Sequence[str] = DEFAULT_BENIGN,
    unreachable: frozenset = frozenset(),
) -> SweepResult:
    """Random compromise patterns: each resolver falls to the attacker with probability ``p``.

    Only list lengths and provenance decide the attacker's share of a
    truncated pool, so runs are evaluated by the counting kernel rather than
    by materializing pools; :func:`scenario_for_run` rebuilds any single run
    for a full :func:`run_scenario` check.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    compromised = rng.random((runs, n)) < float(p)
    template = AttackScenario(n, frozenset(range(n)), strategy, benign_template, unreachable=unreachable)
    attacked = np.array([template.list_length(j) for j in range(n)], dtype=np.int64)
    benign_len = np.where(
        np.isin(np.arange(n), list(unreachable)), -1, len(template.benign_template)
    ).astype(np.int64)
    lengths = np.where(compromised, attacked, benign_len)
    min_resp = n if policy.min_responders is None else policy.min_responders
    bad, used, status = _kernels.pool_counts(lengths, compromised, min_resp, policy.empty_is_failure)
    return SweepResult(n, float(p), as_fraction(y), compromised, bad, used, status)


def scenario_for_run(
    result: SweepResult,
    run: int,
    strategy: Strategy = Overwhelm(100),
    benign_template: Sequence[str] = DEFAULT_BENIGN,
    unreachable: frozenset = frozenset(),
) -> AttackScenario:
    pattern = frozenset(int(j) for j in np.flatnonzero(result.compromised[run]))
    return AttackScenario(result.n, pattern, strategy, benign_template, seed=run, unreachable=unreachable)


# -- scenario files ---------------------------------------------------------------


@dataclass
class ScenarioFile:
    scenario: AttackScenario
    policy: Policy
    sweep: Optional[dict] = None


def load_scenario(path: str) -> ScenarioFile:
    """Read a YAML scenario.

    Keys: ``n``, ``compromised``, ``strategy``, ``params``, ``seed``,
    ``policy`` (``min_responders``, ``empty_is_failure``), and optionally
    ``benign``, ``per_resolver`` (index -> {strategy, params}),
    ``unreachable``, ``qname``, ``qtype``, ``jitter`` and ``sweep``
    (``p``, ``y``, ``runs``).
    """
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return scenario_from_dict(data)


def scenario_from_dict(data: dict) -> ScenarioFile:
    known = {"n", "compromised", "strategy", "params", "seed", "policy", "benign", "per_resolver",
             "unreachable", "qname", "qtype", "jitter", "sweep", "ttl"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    strategy: Union[Strategy, dict] = parse_strategy(data.get("strategy", "honest"), data.get("params"))
    if data.get("per_resolver"):
        default = strategy
        per = {int(i): parse_strategy(v["strategy"], v.get("params")) for i, v in data["per_resolver"].items()}
        strategy = {i: per.get(i, default) for i in range(int(data["n"]))}
    qtype = data.get("qtype", "A")
    qtype = RRType[qtype.upper()] if isinstance(qtype, str) else int(qtype)
    kwargs = dict(
        n=int(data["n"]),
        compromised=frozenset(data.get("compromised", [])),
        strategy=strategy,
        seed=int(data.get("seed", 0)),
        unreachable=frozenset(data.get("unreachable", [])),
        qname=data.get("qname", "pool.ntp.org"),
        qtype=qtype,
        jitter=bool(data.get("jitter", True)),
    )
    if "benign" in data:
        kwargs["benign_template"] = tuple(data["benign"])
    if "ttl" in data:
        kwargs["ttl"] = int(data["ttl"])
    pol = data.get("policy") or {}
    policy = Policy(pol.get("min_responders"), bool(pol.get("empty_is_failure", False)))
    return ScenarioFile(AttackScenario(**kwargs), policy, data.get("sweep"))


def outcome_rows(scenario: AttackScenario, outcomes: Mapping[str, ScenarioOutcome]) -> str:
    """CSV summary: one row per (variant, resolver) plus each variant's attacker fraction."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "k", "n_used", "pool_size", "attacker_entries", "attacker_fraction", "servfail", "empty"])
    for name, out in outcomes.items():
        pool = out.pool
        size = len(pool) if pool is not None else 0
        bad = out.attacker_fraction * size
        w.writerow([
            name,
            "" if pool is None or pool.k is None else pool.k,
            "" if pool is None else pool.n_used,
            size,
            int(bad),
            str(out.attacker_fraction),
            int(out.servfail),
            int(out.empty),
        ])
    return buf.getvalue()
