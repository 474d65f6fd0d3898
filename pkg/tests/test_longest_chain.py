import pytest

from btlab import checker
from btlab.blocktree import common_prefix
from btlab.longest_chain import OBSERVER, run_counterexample

def test_lead_changes_every_round():
    trace = run_counterexample([3], rounds=5)

    crossovers = trace.summary['crossovers']
    assert [item['round'] for item in crossovers] == [0, 1, 2, 3, 4]
    assert [item['leader'] for item in crossovers] == [1, 0, 1, 0, 1]
    assert all(item['sLeader'] > item['sOvertaken'] for item in crossovers)
    assert crossovers[0]['siblings'] == 2

def test_observer_alternates_between_branches():
    trace = run_counterexample([3, 2], rounds=4)
    reads = [event for event in trace.history.reads(OBSERVER) if len(event.chain) > 1]

    assert len(common_prefix([event.chain for event in reads])) == 1
    assert checker.churn(trace.history)[1] == 4

def test_eventual_prefix_fails_at_first_position():
    trace = run_counterexample([3], rounds=5)
    verdict = checker.check_eventual_prefix(trace.history, window=0.5)

    assert verdict.status == checker.FAIL
    assert verdict.witness['position'] == 1

def test_eventual_strong_prefix_cut_is_last_read():
    history = run_counterexample([3], rounds=5).history
    verdict = checker.check_eventual_strong_prefix(history, cut_fraction=0.5)

    assert verdict.status == checker.FAIL
    assert verdict.metrics.min_esp_cut == len(history.reads()) - 1
    assert not checker.check_strong_prefix(history).passed

def test_run_stays_valid():
    trace = run_counterexample([2], rounds=3, seed=5)
    history = trace.history

    assert history.header['seed'] == 5
    assert history.header['rounds'] == 3
    assert checker.check_chain_validity(history).passed
    assert checker.check_chain_integrity(history).passed
    assert checker.check_oracle_audit(trace.audit, k=2).passed

def test_heaviest_branch_wins_final_read():
    trace = run_counterexample([1], rounds=2)
    weights = trace.summary['branchWeights']
    final = trace.history.reads(OBSERVER)[-1]

    assert final.chain[1].creator == max(weights, key=weights.get)

def test_heaviest_selects_by_weight():
    trace = run_counterexample([1], rounds=1)
    history = trace.history

    # the poised block of the waiting process outweighs the one-block stint
    assert history.reads(OBSERVER)[-1].chain[1].creator == 1

@pytest.mark.parametrize('h_targets, rounds', [([3], 0), ([0], 2), ([], 2)])
def test_rejects_empty_schedules(h_targets, rounds):
    with pytest.raises(ValueError):
        run_counterexample(h_targets, rounds)
