"""Combining per-resolver answer lists into one address pool.

``combine_pool`` is the shortest-list truncation scheme: every responding
resolver contributes the same number of entries, so a resolver that pads
its answer cannot gain weight, and the attacker's share of the pool is
bounded by the share of resolvers it controls. ``majority_vote`` is the
stricter mode that keeps only addresses a majority of resolvers agree on.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

from .codec import AddressRecord, Question
from .doh import ResolverResponse


class InsufficientResponders(Exception):
    """Fewer usable responses than the policy requires (served as SERVFAIL)."""

    def __init__(self, got: int, needed: int):
        super().__init__(f"{got} usable responses, {needed} required")
        self.got = got
        self.needed = needed


class EmptyPool(Exception):
    """The shortest usable list was empty, so the pool is valid but empty.

    Carries the (empty) pool so callers can still report on it.
    """

    def __init__(self, pool: "AddressPool"):
        super().__init__(f"shortest answer list is empty across {pool.n_used} resolvers")
        self.pool = pool


@dataclass(frozen=True)
class PoolEntry:
    record: AddressRecord
    provenance: str


@dataclass(frozen=True)
class AddressPool:
    entries: tuple[PoolEntry, ...]
    k: Optional[int]  # None for an untruncated union
    n_used: int
    contributors: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def records(self) -> list[AddressRecord]:
        return [e.record for e in self.entries]

    def by_resolver(self) -> dict[str, list[AddressRecord]]:
        out: dict[str, list[AddressRecord]] = defaultdict(list)
        for e in self.entries:
            out[e.provenance].append(e.record)
        return dict(out)

    def fraction_from(self, labels) -> float:
        """Share of entries supplied by any of ``labels``; 0 for an empty pool."""
        if not self.entries:
            return 0.0
        labels = set(labels)
        return sum(e.provenance in labels for e in self.entries) / len(self.entries)


@dataclass
class CombineInput:
    responses: Sequence[ResolverResponse]
    min_responders: Optional[int] = None  # None: every configured resolver must answer
    empty_is_failure: bool = False

    def __post_init__(self) -> None:
        labels = [r.resolver for r in self.responses]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate resolver labels in {labels}")

    @property
    def required(self) -> int:
        return len(self.responses) if self.min_responders is None else self.min_responders

    def usable(self) -> list[ResolverResponse]:
        return [
            r for r in self.responses if r.ok and not (self.empty_is_failure and not r.answers)
        ]


def _usable_or_raise(inp: CombineInput) -> list[ResolverResponse]:
    usable = inp.usable()
    if len(usable) < inp.required:
        raise InsufficientResponders(len(usable), inp.required)
    return usable


def combine_pool(inp: CombineInput) -> AddressPool:
    """Truncate every usable list to the shortest one and interleave them.

    Entry ``i * n_used + j`` is record ``i`` of the ``j``-th usable resolver,
    resolvers taken in configuration order.

    Raises:
        InsufficientResponders: fewer usable responses than ``min_responders``.
        EmptyPool: the shortest usable list is empty.
    """
    usable = _usable_or_raise(inp)
    labels = tuple(r.resolver for r in usable)
    k = min((len(r.answers) for r in usable), default=0)
    entries = tuple(
        PoolEntry(r.answers[i], r.resolver) for i in range(k) for r in usable
    )
    pool = AddressPool(entries, k, len(usable), labels)
    if k == 0:
        raise EmptyPool(pool)
    return pool


def majority_vote(inp: CombineInput) -> list[AddressRecord]:
    """Addresses reported by a strict majority of usable resolvers.

    Each resolver counts once per address however many times it repeats it.
    Output is ordered by support (descending), then address bytes; each
    address carries the smallest TTL seen among its supporting records.
    """
    usable = _usable_or_raise(inp)
    support: Counter = Counter()
    min_ttl: dict = {}
    first: dict = {}
    for r in usable:
        seen = set()
        for rec in r.answers:
            key = (rec.rtype, rec.address)
            min_ttl[key] = min(min_ttl.get(key, rec.ttl), rec.ttl)
            first.setdefault(key, rec)
            if key not in seen:
                seen.add(key)
                support[key] += 1
    n = len(usable)
    winners = [key for key, count in support.items() if 2 * count > n]
    winners.sort(key=lambda key: (-support[key], key[1]))
    return [AddressRecord(first[key].name, key[0], min_ttl[key], key[1]) for key in winners]


def pool_to_answers(pool: AddressPool, question: Question) -> list[AddressRecord]:
    """Wire answers for a pool: query name and type, pool-wide minimum TTL, pool order."""
    if not pool.entries:
        return []
    ttl = min(e.record.ttl for e in pool.entries)
    return [AddressRecord(question.qname, question.qtype, ttl, e.record.address) for e in pool.entries]
