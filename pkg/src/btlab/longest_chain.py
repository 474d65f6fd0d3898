"""Scripted schedule defeating eventual prefix under the heaviest-chain rule.

Two appenders share a Θ_{F,2} oracle and select chains with `f_longest`
measured by `chain_weight`. One of them is always poised: it has been granted
a block but not set it yet. The other leads a stint of appends on its branch.
At the end of the stint the leader becomes poised on its own tip and the
waiting process sets its block, whose weight was chosen so that its branch
overtakes the leader's at the end of the stint. The reads of an observer
process therefore alternate between two branches sharing only the genesis
block, for as many lead changes as requested.

Typical usage example:

  trace = longest_chain.run_counterexample([3, 2], rounds=5, seed=0)

  reads = trace.history.reads(longest_chain.OBSERVER)
"""

import logging

from .blocktree import Block, chain_weight, f_longest
from .history import History, Trace
from .oracle import OracleThetaFk

logger = logging.getLogger(__name__)

APPENDERS = (0, 1)
OBSERVER = 2

def heaviest(tree):
    return f_longest(tree, length=chain_weight)

class _Poised:
    """A granted block waiting for its set."""

    def __init__(self, pid, parent, block):
        self.pid = pid
        self.parent = parent
        self.block = block

class _Schedule:
    """Mutable state of one counterexample run."""

    def __init__(self, seed):
        self.oracle = OracleThetaFk(2)
        self.history = History({
            'protocol': 'counterexample',
            'oracle': self.oracle.name,
            'forkBound': self.oracle.k,
            'seed': seed
        })
        self.tick = 0
        self.tips = {pid: self.oracle.shared.genesis for pid in APPENDERS}
        self.crossovers = []

    def weight(self, pid):
        return chain_weight(self.oracle.shared.chain_of(self.tips[pid]))

    def step(self):
        self.tick += 1

    def observe(self):
        self.history.invoke_read(OBSERVER, self.tick)
        chain = heaviest(self.oracle.update_view(OBSERVER).tree)
        self.history.respond_read(OBSERVER, chain, self.tick)

        return chain

    def poise(self, pid, weight):
        """Grant the next block of a process without setting it."""
        view = self.oracle.update_view(pid)
        parent = heaviest(view.tree).last_block()
        if parent.id != self.tips[pid]:
            raise AssertionError(f'Process {pid} does not select its own branch')

        payload = f'{pid}:poised:{self.tick}'.encode('utf-8')
        block = Block.create(parent, pid, payload, weight=weight, tick=self.tick)

        self.history.invoke_append(pid, block, self.tick)
        if not self.oracle.get_valid_block(parent.id, block, pid):
            raise AssertionError(f'Poised block of process {pid} refused')

        return _Poised(pid, parent.id, block)

    def release(self, poised):
        """Set a poised block, the lead changes to its process."""
        siblings = self.oracle.set_valid_block(poised.parent, poised.block, poised.pid)
        self.history.respond_append(poised.pid, True, self.tick)
        self.tips[poised.pid] = poised.block.id

        return siblings

    def append(self, pid, index):
        """Append and read a weight-one block on the leader's own branch."""
        view = self.oracle.update_view(pid)
        parent = heaviest(view.tree).last_block()
        if parent.id != self.tips[pid]:
            raise AssertionError(f'Leader {pid} left its branch')

        payload = f'{pid}:{index}'.encode('utf-8')
        block = Block.create(parent, pid, payload, tick=self.tick)

        self.history.invoke_append(pid, block, self.tick)
        granted = self.oracle.get_valid_block(parent.id, block, pid)
        if not granted:
            raise AssertionError(f'Append of leader {pid} refused')
        self.oracle.set_valid_block(parent.id, block, pid)
        self.history.respond_append(pid, True, self.tick)
        self.tips[pid] = block.id

        self.history.invoke_read(pid, self.tick)
        chain = heaviest(self.oracle.update_view(pid).tree)
        self.history.respond_read(pid, chain, self.tick)

        return chain

def run_counterexample(h_targets, rounds, seed=0):
    """Replay the alternating-branch schedule.

    Stint r is led by process r mod 2 and appends h_targets[r mod len]
    blocks. Every stint ends with a lead change. The observer reads after
    every step and once more after the last lead change.

    Args:
        h_targets: list, the number of appends of every stint, each at least 1.
        rounds: int, the number of stints and lead changes.
        seed: int, recorded in the trace header, the schedule is fixed.

    Returns:
        Trace, the history, the oracle audit log and the crossover values.

    Raises:
        ValueError: if rounds is lower than 1 or a stint is empty.
        AssertionError: if a crossover inequality fails.
    """
    if rounds < 1:
        raise ValueError('At least one round is required', rounds)
    if not h_targets or min(h_targets) < 1:
        raise ValueError('Every stint needs at least one append', h_targets)

    def stint(r):
        return h_targets[r % len(h_targets)]

    schedule = _Schedule(seed)
    schedule.observe()
    schedule.step()

    # the waiting process must outweigh the first stint
    leader, waiting = APPENDERS
    poised = schedule.poise(waiting, stint(0) + 1)
    schedule.observe()
    schedule.step()

    for r in range(rounds):
        for index in range(stint(r)):
            schedule.append(leader, index)
            schedule.observe()
            schedule.step()

        s_leader = schedule.weight(leader)
        next_poised = None
        if r + 1 < rounds:
            # the leader waits until the next leader finished its stint
            s_next = schedule.weight(waiting) + poised.block.weight + stint(r + 1)
            next_poised = schedule.poise(leader, s_next - s_leader + 1)

        siblings = schedule.release(poised)
        s_overtaking = schedule.weight(waiting)
        if not s_overtaking > s_leader:
            raise AssertionError(
                f'No crossover at round {r}: {s_overtaking} <= {s_leader}'
            )
        chosen = heaviest(schedule.oracle.update_view(waiting).tree)
        if chosen.last_block().id != schedule.tips[waiting]:
            raise AssertionError(f'Process {waiting} does not select its branch')

        schedule.crossovers.append({
            'round': r,
            'leader': waiting,
            'overtaken': leader,
            'sOvertaken': s_leader,
            'sLeader': s_overtaking,
            'siblings': len(siblings)
        })
        logger.debug('Lead change %d: %d > %d', r, s_overtaking, s_leader)

        schedule.observe()
        schedule.step()

        leader, waiting, poised = waiting, leader, next_poised

    schedule.history.header['horizon'] = schedule.tick - 1
    schedule.history.header['hTargets'] = list(h_targets)
    schedule.history.header['rounds'] = rounds

    summary = {
        'protocol': 'counterexample',
        'rounds': rounds,
        'crossovers': schedule.crossovers,
        'branchWeights': {pid: schedule.weight(pid) for pid in APPENDERS}
    }
    logger.info('Counterexample done: %d lead changes', rounds)

    return Trace(schedule.history, schedule.oracle.audit, summary)
