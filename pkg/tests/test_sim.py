import math
import random
from fractions import Fraction

import pytest

from dohpool.security import ThreatParams, attack_probability_exact, min_compromised_resolvers
from dohpool.sim import (
    AttackScenario,
    Duplicate,
    Honest,
    Overwhelm,
    Policy,
    Starve,
    Substitute,
    load_scenario,
    outcome_rows,
    run_naive_baseline,
    run_scenario,
    scenario_for_run,
    sweep,
    synthesize_responses,
)


def test_overwhelm_is_capped():
    sc = AttackScenario(3, {0}, Overwhelm(100))
    out = run_scenario(sc)
    assert out.attacker_fraction == Fraction(1, 3)
    assert out.pool.k == 4 and len(out.pool) == 12
    assert not out.servfail and not out.empty


def test_naive_union_is_overwhelmed():
    out = run_naive_baseline(AttackScenario(3, {0}, Overwhelm(100)))
    assert out.attacker_fraction == Fraction(100, 108)
    assert out.attacker_fraction > Fraction(1, 2)
    assert out.pool.k is None and len(out.pool) == 108


def test_starve_gives_empty_pool():
    out = run_scenario(AttackScenario(3, {0}, Starve()), Policy(empty_is_failure=False))
    assert out.empty and len(out.pool) == 0 and out.attacker_fraction == 0


def test_starve_with_empty_is_failure():
    sc = AttackScenario(3, {0}, Starve())
    assert run_scenario(sc, Policy(empty_is_failure=True)).servfail
    out = run_scenario(sc, Policy(min_responders=2, empty_is_failure=True))
    assert out.attacker_fraction == 0 and len(out.pool) == 8


def test_no_attacker():
    out = run_scenario(AttackScenario(3, set(), Honest()))
    assert out.attacker_fraction == 0


def test_honest_baseline_matches_membership():
    sc = AttackScenario(4, {1}, Honest(), seed=3)
    a, b = run_scenario(sc), run_naive_baseline(sc)
    assert sorted(r.address for r in a.pool.records) == sorted(r.address for r in b.pool.records)


def test_all_compromised_baseline():
    out = run_naive_baseline(AttackScenario(3, {0, 1, 2}, Overwhelm(7)))
    assert out.attacker_fraction == 1


def test_duplicate_and_substitute():
    sc = AttackScenario(3, {0, 1}, {0: Duplicate("10.66.0.9", 50), 1: Substitute(("10.66.1.1", "10.66.1.2"))})
    out = run_scenario(sc)
    assert out.pool.k == 2 and out.attacker_fraction == Fraction(2, 3)
    assert [r.text for r in out.pool.by_resolver()["r0"]] == ["10.66.0.9"] * 2


def test_unreachable_resolver():
    sc = AttackScenario(3, {0}, Overwhelm(9), unreachable={2})
    assert run_scenario(sc).servfail
    out = run_scenario(sc, Policy(min_responders=2))
    assert out.attacker_fraction == Fraction(1, 2)


def test_deterministic_under_seed():
    sc = AttackScenario(5, {1, 3}, Overwhelm(20), seed=42)
    assert run_scenario(sc).pool == run_scenario(sc).pool
    other = AttackScenario(5, {1, 3}, Overwhelm(20), seed=43)
    assert synthesize_responses(sc) != synthesize_responses(other)


def test_jitter_only_reorders():
    sc = AttackScenario(4, set(), seed=7)
    lists = [[a.text for a in r.answers] for r in synthesize_responses(sc)]
    assert all(sorted(l) == sorted(lists[0]) for l in lists)
    assert len({tuple(l) for l in lists}) > 1


def test_invalid_indices():
    with pytest.raises(ValueError):
        AttackScenario(3, {3})


STRATEGIES = [
    lambda r: Overwhelm(r.randint(0, 300)),
    lambda r: Starve(),
    lambda r: Substitute(tuple(f"10.66.{r.randint(0, 255)}.{r.randint(1, 254)}" for _ in range(r.randint(0, 12)))),
    lambda r: Duplicate("10.66.0.1", r.randint(1, 200)),
    lambda r: Honest(),
]


def test_defense_holds_for_every_strategy():
    rng = random.Random(17)
    for trial in range(1500):
        n = rng.randint(1, 9)
        y = Fraction(rng.randint(1, 10), 10)
        limit = min_compromised_resolvers(n, y)
        bad = set(rng.sample(range(n), rng.randint(0, limit - 1)))
        strategy = {i: rng.choice(STRATEGIES)(rng) for i in bad}
        template = [f"192.0.2.{i}" for i in range(1, rng.randint(1, 8) + 1)]
        out = run_scenario(AttackScenario(n, bad, strategy, template, seed=trial))
        assert out.attacker_fraction < y
        overwhelm_only = run_scenario(AttackScenario(n, bad, Overwhelm(rng.randint(1, 500)), template, seed=trial))
        assert overwhelm_only.attacker_fraction <= Fraction(len(bad), n)


def test_baseline_falls_to_single_overwhelm():
    for y in (Fraction(1, 2), Fraction(9, 10), Fraction(99, 100)):
        benign = 4
        # one attacker with L entries among (n-1)*4 benign: L/(L+(n-1)*4) >= y
        n = 5
        need = math.ceil(y * (n - 1) * benign / (1 - y))
        out = run_naive_baseline(AttackScenario(n, {0}, Overwhelm(need)))
        assert out.attacker_fraction >= y
        assert run_scenario(AttackScenario(n, {0}, Overwhelm(need))).attacker_fraction == Fraction(1, n)


def test_cross_module_threshold_consistency():
    rng = random.Random(5)
    for _ in range(400):
        n = rng.randint(1, 12)
        y = Fraction(rng.randint(1, 12), 12)
        m = min_compromised_resolvers(n, y)
        below = run_scenario(AttackScenario(n, set(range(m - 1)), Overwhelm(50)))
        at = run_scenario(AttackScenario(n, set(range(m)), Overwhelm(50)))
        assert below.attacker_fraction < y <= at.attacker_fraction


def test_sweep_matches_exact_tail():
    result = sweep(3, 0.1, Fraction(2, 3), 100_000, seed=8)
    exact = attack_probability_exact(ThreatParams(3, Fraction(2, 3), 0.1))
    se = math.sqrt(exact * (1 - exact) / result.runs)
    assert abs(result.success_rate - exact) <= 4 * se


@pytest.mark.parametrize("p, rate", [(0, 0.0), (1, 1.0)])
def test_sweep_extremes(p, rate):
    assert sweep(4, p, 0.5, 5000, seed=1).success_rate == rate


def test_sweep_runs_match_full_scenarios():
    strategy = Duplicate("10.66.0.1", 2)
    result = sweep(6, 0.4, Fraction(1, 2), 3000, seed=2, strategy=strategy, policy=Policy(min_responders=4), unreachable=frozenset({5}))
    fracs = result.fractions()
    for run in range(0, 3000, 7):
        sc = scenario_for_run(result, run, strategy, unreachable=frozenset({5}))
        out = run_scenario(sc, Policy(min_responders=4))
        assert out.servfail == (result.status[run] == 1)
        if not out.servfail:
            assert float(out.attacker_fraction) == pytest.approx(fracs[run], abs=1e-15)
            assert (out.attacker_fraction >= Fraction(1, 2)) == bool(result.successes[run])


def test_sweep_deterministic_and_csv():
    a = sweep(4, 0.3, 0.5, 1000, seed=3)
    b = sweep(4, 0.3, 0.5, 1000, seed=3)
    assert (a.compromised == b.compromised).all() and a.success_rate == b.success_rate
    lines = a.to_csv().splitlines()
    assert lines[0] == "run,compromised,attacker_fraction,status,success" and len(lines) == 1001


def test_scenario_file(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text(
        "n: 3\ncompromised: [0]\nstrategy: overwhelm\nparams: {list_length: 100}\nseed: 1\n"
        "policy: {min_responders: 3, empty_is_failure: false}\n"
    )
    loaded = load_scenario(str(path))
    assert loaded.scenario.strategy == Overwhelm(100) and loaded.policy.min_responders == 3
    out = run_scenario(loaded.scenario, loaded.policy)
    csv_text = outcome_rows(loaded.scenario, {"truncated": out, "naive_union": run_naive_baseline(loaded.scenario)})
    rows = csv_text.strip().splitlines()
    assert rows[1] == "truncated,4,3,12,4,1/3,0,0"
    assert rows[2] == "naive_union,,3,108,100,25/27,0,0"


def test_scenario_file_per_resolver(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text(
        "n: 4\ncompromised: [0, 2]\nstrategy: starve\nper_resolver:\n  0: {strategy: duplicate, params: {address: 10.66.0.1, count: 9}}\n"
        "benign: [192.0.2.1, 192.0.2.2]\nqtype: A\n"
    )
    loaded = load_scenario(str(path))
    assert loaded.scenario.strategy_for(0) == Duplicate("10.66.0.1", 9)
    assert loaded.scenario.strategy_for(2) == Starve()
    with pytest.raises(ValueError):
        path.write_text("n: 3\nbogus: 1\n")
        load_scenario(str(path))


def test_https_transport_end_to_end():
    sc = AttackScenario(3, {0}, Overwhelm(40))
    out = run_scenario(sc, transport="https")
    assert out.attacker_fraction == Fraction(1, 3) and out.pool.k == 4
    assert out.pool == run_scenario(sc).pool
