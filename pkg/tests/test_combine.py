from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dohpool.codec import AddressRecord, Question, RRType
from dohpool.combine import (
    CombineInput,
    EmptyPool,
    InsufficientResponders,
    combine_pool,
    majority_vote,
    pool_to_answers,
)
from dohpool.doh import Failure, FailureKind, ResolverResponse


def rec(addr, ttl=300, name="pool.ntp.org"):
    return AddressRecord(name, RRType.A, ttl, addr)


def answered(label, addrs, ttl=300):
    return ResolverResponse(label, answers=[rec(a, ttl) for a in addrs])


def failed(label):
    return ResolverResponse(label, failure=Failure(FailureKind.TIMEOUT))


def addrs(prefix, n):
    return [f"{prefix}.{i + 1}" for i in range(n)]


def test_truncates_to_shortest():
    inp = CombineInput([answered("a", addrs("10.0.0", 4)), answered("b", addrs("10.0.1", 5)), answered("c", addrs("10.0.2", 3))])
    pool = combine_pool(inp)
    assert pool.k == 3 and pool.n_used == 3 and len(pool) == 9
    assert {k: len(v) for k, v in pool.by_resolver().items()} == {"a": 3, "b": 3, "c": 3}


def test_round_robin_order():
    inp = CombineInput([answered("a", ["10.0.0.1", "10.0.0.2"]), answered("b", ["10.0.1.1", "10.0.1.2", "10.0.1.3"])])
    pool = combine_pool(inp)
    assert [(e.provenance, e.record.text) for e in pool.entries] == [
        ("a", "10.0.0.1"), ("b", "10.0.1.1"), ("a", "10.0.0.2"), ("b", "10.0.1.2"),
    ]


def test_single_resolver_identity():
    lst = ["10.0.0.3", "10.0.0.1", "10.0.0.2"]
    pool = combine_pool(CombineInput([answered("only", lst)]))
    assert [r.text for r in pool.records] == lst and pool.k == 3


def test_overwhelm_fixture():
    inp = CombineInput([answered("evil", addrs("10.66.0", 100)), answered("b1", addrs("192.0.2", 4)), answered("b2", addrs("198.51.100", 4))])
    pool = combine_pool(inp)
    assert pool.k == 4 and len(pool) == 12
    assert Fraction(sum(e.provenance == "evil" for e in pool.entries), len(pool)) == Fraction(1, 3)


def test_empty_list_is_empty_pool():
    inp = CombineInput([answered("a", addrs("10.0.0", 4)), answered("b", []), answered("c", addrs("10.0.2", 4))])
    with pytest.raises(EmptyPool) as exc:
        combine_pool(inp)
    assert exc.value.pool.k == 0 and len(exc.value.pool) == 0 and exc.value.pool.n_used == 3


def test_empty_is_failure_excludes_empty_lists():
    responses = [answered("a", addrs("10.0.0", 4)), answered("b", []), answered("c", addrs("10.0.2", 3))]
    with pytest.raises(InsufficientResponders) as exc:
        combine_pool(CombineInput(responses, empty_is_failure=True))
    assert (exc.value.got, exc.value.needed) == (2, 3)
    pool = combine_pool(CombineInput(responses, min_responders=2, empty_is_failure=True))
    assert pool.k == 3 and pool.n_used == 2 and pool.contributors == ("a", "c")


def test_failures_excluded_and_counted():
    responses = [answered("a", addrs("10.0.0", 4)), failed("b"), answered("c", addrs("10.0.2", 5))]
    with pytest.raises(InsufficientResponders):
        combine_pool(CombineInput(responses))
    pool = combine_pool(CombineInput(responses, min_responders=2))
    assert pool.n_used == 2 and len(pool) == 8


def test_duplicate_labels_rejected():
    with pytest.raises(ValueError):
        CombineInput([answered("a", []), answered("a", [])])


def test_duplicates_kept_as_distinct_entries():
    pool = combine_pool(CombineInput([answered("a", ["10.0.0.1"] * 3), answered("b", addrs("10.0.1", 3))]))
    assert [r.text for r in pool.by_resolver()["a"]] == ["10.0.0.1"] * 3


# -- majority vote ----------------------------------------------------------------


def test_majority_two_of_three():
    inp = CombineInput([answered("a", ["10.0.0.1", "10.0.0.2"]), answered("b", ["10.0.0.1"]), answered("c", ["10.0.0.3"])])
    assert [r.text for r in majority_vote(inp)] == ["10.0.0.1"]


def test_majority_strict_at_boundary():
    inp = CombineInput([answered("a", ["10.0.0.1"]), answered("b", ["10.0.0.1"]), answered("c", []), answered("d", [])])
    assert majority_vote(inp) == []


def test_majority_duplicates_count_once():
    inp = CombineInput([answered("a", ["10.0.0.9"] * 5), answered("b", []), answered("c", [])])
    assert majority_vote(inp) == []


def test_majority_counts_responders_not_configured():
    inp = CombineInput([answered("a", ["10.0.0.1"]), answered("b", ["10.0.0.1"]), failed("c"), failed("d")], min_responders=2)
    assert [r.text for r in majority_vote(inp)] == ["10.0.0.1"]


def test_majority_order_and_ttl():
    inp = CombineInput([
        ResolverResponse("a", answers=[rec("10.0.0.2", 100), rec("10.0.0.1", 50), rec("10.0.0.3")]),
        ResolverResponse("b", answers=[rec("10.0.0.1", 70), rec("10.0.0.2", 30), rec("10.0.0.3")]),
        ResolverResponse("c", answers=[rec("10.0.0.2", 200), rec("10.0.0.9")]),
    ])
    out = majority_vote(inp)
    assert [(r.text, r.ttl) for r in out] == [("10.0.0.2", 30), ("10.0.0.1", 50), ("10.0.0.3", 300)]


# -- pool_to_answers -----------------------------------------------------------------


def test_pool_to_answers_min_ttl_and_name():
    inp = CombineInput([
        ResolverResponse("a", answers=[rec("10.0.0.1", 30)]),
        ResolverResponse("b", answers=[rec("10.0.0.2", 300)]),
        ResolverResponse("c", answers=[rec("10.0.0.3", 3600)]),
    ])
    q = Question("POOL.ntp.org", RRType.A)
    out = pool_to_answers(combine_pool(inp), q)
    assert [(r.text, r.ttl) for r in out] == [("10.0.0.1", 30), ("10.0.0.2", 30), ("10.0.0.3", 30)]
    assert all(str(r.name) == "POOL.ntp.org" for r in out)


def test_pool_to_answers_cardinality_and_empty():
    inp = CombineInput([answered(l, addrs(f"10.0.{i}", 3)) for i, l in enumerate("abc")])
    assert len(pool_to_answers(combine_pool(inp), Question("x", 1))) == 9
    with pytest.raises(EmptyPool) as exc:
        combine_pool(CombineInput([answered("a", [])]))
    assert pool_to_answers(exc.value.pool, Question("x", 1)) == []


# -- properties ------------------------------------------------------------------------

address = st.integers(0, 2**32 - 1).map(lambda i: i.to_bytes(4, "big"))


@st.composite
def fleets(draw):
    n = draw(st.integers(1, 8))
    responses, compromised = [], set()
    for j in range(n):
        bad = draw(st.booleans())
        if bad:
            compromised.add(f"r{j}")
            kind = draw(st.sampled_from(["huge", "tiny", "dup", "any", "empty", "fail"]))
            if kind == "fail":
                responses.append(failed(f"r{j}"))
                continue
            size = {"huge": draw(st.integers(50, 400)), "tiny": 1, "empty": 0}.get(kind, draw(st.integers(0, 20)))
            if kind == "dup":
                lst = [draw(address)] * draw(st.integers(1, 60))
            else:
                lst = [draw(address) for _ in range(size)]
        else:
            lst = [draw(address) for _ in range(draw(st.integers(1, 8)))]
        responses.append(ResolverResponse(f"r{j}", answers=[rec(a) for a in lst]))
    return responses, compromised


@settings(max_examples=500, deadline=None)
@given(fleets(), st.booleans(), st.data())
def test_attacker_share_bounded_by_resolver_share(fleet, empty_is_failure, data):
    responses, compromised = fleet
    inp = CombineInput(responses, min_responders=0, empty_is_failure=empty_is_failure)
    try:
        pool = combine_pool(inp)
    except EmptyPool:
        return
    usable = inp.usable()
    bad_used = sum(r.resolver in compromised for r in usable)
    share = Fraction(sum(e.provenance in compromised for e in pool.entries), len(pool))
    assert share == Fraction(bad_used, len(usable))
    # the guarantee: fewer than ceil(y*|S|) compromised -> share < y
    y = data.draw(st.fractions(min_value=Fraction(1, 100), max_value=1))
    if bad_used < -(-y.numerator * len(usable) // y.denominator):
        assert share < y


@settings(max_examples=300, deadline=None)
@given(fleets())
def test_equal_weight_prefix_and_determinism(fleet):
    responses, _ = fleet
    inp = CombineInput(responses, min_responders=0)
    try:
        pool = combine_pool(inp)
    except EmptyPool:
        return
    assert len(pool) == pool.n_used * pool.k
    per = pool.by_resolver()
    for r in inp.usable():
        assert per[r.resolver] == list(r.answers[: pool.k])
    assert combine_pool(CombineInput(responses, min_responders=0)) == pool


@settings(max_examples=300, deadline=None)
@given(fleets())
def test_majority_vote_recount(fleet):
    responses, _ = fleet
    inp = CombineInput(responses, min_responders=0)
    out = majority_vote(inp)
    usable = inp.usable()
    union = {(a.rtype, a.address) for r in usable for a in r.answers}
    for o in out:
        assert (o.rtype, o.address) in union
        support = sum(any(a.address == o.address for a in r.answers) for r in usable)
        assert 2 * support > len(usable)
    keys = [(o.rtype, o.address) for o in out]
    assert len(keys) == len(set(keys))
    # nothing with majority support is missing
    for key in union:
        support = sum(any((a.rtype, a.address) == key for a in r.answers) for r in usable)
        assert (2 * support > len(usable)) == (key in keys)
