"""Eventual prefix protocol over the shared-memory oracle.

Every process appends by refreshing its view of the global tree, selecting
the chain with `f_lowest_id` and asking the oracle to grant a block extending
its last block. Reads refresh the view and return the same selection. Because
a process contributes at most one block per parent that `f_lowest_id`
considers, every position of the selected chain changes a bounded number of
times, whatever the number of Byzantine appenders.

Appends are split into a grant step and a set step so the scheduler can
interleave other processes between them.

Typical usage example:

  process = eventual_prefix.EpProcess(1, oracle, history)

  process.ep_append(b'tx', tick=3)
  chain = process.ep_read(tick=4)
"""

import logging
import random

from .blocktree import Block, f_lowest_id
from .history import History, Trace
from .network import FIFO, Network
from .oracle import OracleThetaFk, OracleThetaP, UnknownParentError

logger = logging.getLogger(__name__)

# Byzantine appenders

class RandomParent:
    """Append under a uniformly chosen block of the view."""
    name = 'random-parent'

    def choose(self, process, view, rng, tick):
        return rng.choice(view.tree.blocks()), None

class Equivocate:
    """Append twice under the same parent, every other append."""
    name = 'equivocate'

    def __init__(self):
        self.last_parent = None

    def choose(self, process, view, rng, tick):
        if self.last_parent is not None and self.last_parent in view.tree:
            parent = view.tree.block(self.last_parent)
            self.last_parent = None
        else:
            parent = f_lowest_id(view.tree).last_block()
            self.last_parent = parent.id

        return parent, None

class Grind:
    """Append a sibling of the selected leaf with the lowest identifier found.

    The payload is ground over a fixed number of nonces so that the block
    displaces the current leaf under `f_lowest_id` whenever possible.
    """
    name = 'grind'

    def __init__(self, attempts=16):
        self.attempts = attempts

    def choose(self, process, view, rng, tick):
        leaf = f_lowest_id(view.tree).last_block()
        parent = leaf if leaf.is_genesis else view.tree.block(leaf.parent)

        best = None
        for nonce in range(self.attempts):
            payload = f'{process.pid}:grind:{tick}:{nonce}'.encode('utf-8')
            block = Block.create(parent, process.pid, payload, tick=tick)
            if block.id in view.tree:
                continue
            if best is None or block.id < best[0]:
                best = (block.id, payload)

        return parent, best[1] if best else None

class Silent:
    """Never append."""
    name = 'silent'

    def choose(self, process, view, rng, tick):
        return None

BEHAVIOURS = {
    behaviour.name: behaviour
    for behaviour in (RandomParent, Equivocate, Grind, Silent)
}

def behaviour_for(tag):
    """Returns a new behaviour instance for a tag.

    Raises:
        ValueError: if the tag is unknown.
    """
    if tag not in BEHAVIOURS:
        raise ValueError('Unknown ep-async behaviour', tag)

    return BEHAVIOURS[tag]()

class EpProcess:
    """A class to represent a process running the eventual prefix protocol.

    Attributes:
        pid: int, the process identifier.
        oracle: OracleThetaP, the oracle guarding the global tree.
        history: History, the history the process records into.
        behaviour: object, the Byzantine behaviour, None for a correct process.
        appended: int, the number of acknowledged appends.
        rejected: int, the number of refused appends.
    """

    def __init__(self, pid, oracle, history, behaviour=None, rng=None):
        self.pid = pid
        self.oracle = oracle
        self.history = history
        self.behaviour = behaviour
        self.rng = rng or random.Random(pid)
        self.appended = 0
        self.rejected = 0
        self._pending = None

    @property
    def is_byzantine(self):
        return self.behaviour is not None

    @property
    def busy(self):
        return self._pending is not None

    def _candidate(self, payload, tick, lag):
        view = self.oracle.update_view(self.pid, lag)

        if self.behaviour is None:
            return f_lowest_id(view.tree).last_block(), payload

        choice = self.behaviour.choose(self, view, self.rng, tick)
        if choice is None:
            return None
        parent, forged = choice

        return parent, forged if forged is not None else payload

    def begin_append(self, payload, tick, lag=0):
        """Invoke append and request a grant from the oracle.

        On an unknown parent the view is refreshed and the grant requested
        once more.

        Args:
            payload: bytes, the content of the new block.
            tick: int, the current tick.
            lag: int, the staleness allowed for the view.

        Returns:
            bool, whether the block was granted. A refused append is
            completed with ⊥ immediately. None when the behaviour stays
            silent.
        """
        candidate = self._candidate(payload, tick, lag)
        if candidate is None:
            return None

        parent, content = candidate
        block = Block.create(parent, self.pid, content, tick=tick)

        try:
            granted = self.oracle.get_valid_block(parent.id, block, self.pid)
        except UnknownParentError:
            parent, content = self._candidate(payload, tick, 0)
            block = Block.create(parent, self.pid, content, tick=tick)
            try:
                granted = self.oracle.get_valid_block(parent.id, block, self.pid)
            except UnknownParentError:
                granted = False

        self.history.invoke_append(self.pid, block, tick)

        if not granted:
            self.rejected += 1
            self.history.respond_append(self.pid, False, tick)
            return False

        self._pending = (parent.id, block)

        return True

    def complete_append(self, tick):
        """Set the granted block and respond ⊤.

        Returns:
            frozenset, the children of the parent at return time.
        """
        parent, block = self._pending
        siblings = self.oracle.set_valid_block(parent, block, self.pid)
        self._pending = None
        self.appended += 1
        self.history.respond_append(self.pid, True, tick)

        return siblings

    def ep_append(self, payload, tick, lag=0):
        """Run both append steps without interleaving.

        Returns:
            bool, the acknowledgement.
        """
        granted = self.begin_append(payload, tick, lag)
        if granted:
            self.complete_append(tick)

        return bool(granted)

    def ep_read(self, tick, lag=0):
        """Read the chain selected by `f_lowest_id` on a refreshed view.

        Returns:
            Chain, the returned chain.
        """
        self.history.invoke_read(self.pid, tick)
        chain = f_lowest_id(self.oracle.update_view(self.pid, lag).tree)
        self.history.respond_read(self.pid, chain, tick)

        return chain

def make_oracle(workload, predicate=None):
    """Build the oracle named by a workload.

    Args:
        workload: dict, the `epAsync` configuration section.
        predicate: ValidityPredicate, the validity predicate P.

    Returns:
        OracleThetaP, the oracle.
    """
    if workload.get('oracle', 'theta-p') == 'theta-fk':
        return OracleThetaFk(workload.get('k', 2), predicate=predicate)

    return OracleThetaP(predicate=predicate)

def run(config, workload=None, predicate=None):
    """Simulate the eventual prefix protocol up to the horizon.

    Every process performs a fixed number of appends spaced by a think time,
    Byzantine processes with their own budget `byzantineAppends`. The first
    appends of the processes are staggered evenly over one think time. Within
    a tick, pending appends complete before any process invokes a new
    operation. Correct processes read at a fixed interval and once more, on a
    fresh view, at the horizon. Byzantine processes follow their behaviour and
    never read. Crashed processes stop at their crash tick, possibly with an
    append left pending.

    Args:
        config: NetConfig, the network configuration.
        workload: dict, the `epAsync` configuration section.
        predicate: ValidityPredicate, the validity predicate P.

    Returns:
        Trace, the recorded history, oracle audit log and run summary.
    """
    config.validate()
    workload = dict(workload or {})
    appends = workload.get('appends', 10)
    byzantine_appends = workload.get('byzantineAppends', appends)
    think_time = max(1, workload.get('thinkTime', 5))
    read_interval = max(1, workload.get('readInterval', 3))

    network = Network(config)
    oracle = make_oracle(workload, predicate)
    rng = random.Random(f'{config.seed}:ep-async')
    history = History({
        'protocol': 'ep-async',
        'network': config.to_dict(),
        'workload': workload,
        'oracle': oracle.name,
        'forkBound': getattr(oracle, 'k', None),
        'seed': config.seed,
        'horizon': config.horizon
    })

    processes = {
        pid: EpProcess(
            pid,
            oracle,
            history,
            behaviour=behaviour_for(config.byzantine[pid])
            if config.is_byzantine(pid) else None,
            rng=random.Random(f'{config.seed}:{pid}')
        )
        for pid in config.processes()
    }
    budget = {
        pid: byzantine_appends if process.is_byzantine else appends
        for pid, process in processes.items()
    }
    remaining = dict(budget)
    next_append = {pid: pid * think_time // config.n for pid in processes}
    next_read = {pid: rng.randrange(read_interval) for pid in processes}
    complete_at = {}
    last_append_tick = 0

    logger.info(
        'ep-async run: n=%d, byzantine=%d, horizon=%d',
        config.n, len(config.byzantine), config.horizon
    )

    for tick in range(config.horizon):
        order = [pid for pid in config.processes() if not config.is_crashed(pid, tick)]
        if config.adversary != FIFO:
            rng.shuffle(order)

        for pid in order:
            if processes[pid].busy and tick >= complete_at[pid]:
                processes[pid].complete_append(tick)
                last_append_tick = tick

        for pid in order:
            process = processes[pid]
            if process.busy:
                continue

            if remaining[pid] and tick >= next_append[pid]:
                remaining[pid] -= 1
                next_append[pid] = tick + think_time
                payload = f'{pid}:{budget[pid] - remaining[pid]}'.encode('utf-8')
                granted = process.begin_append(payload, tick, network.staleness())
                if granted:
                    complete_at[pid] = network.append_delay(pid, tick)
                continue

            if not process.is_byzantine and tick >= next_read[pid]:
                next_read[pid] = tick + read_interval
                process.ep_read(tick, network.staleness())

    final = config.horizon
    alive = [pid for pid in config.processes() if not config.is_crashed(pid, final)]
    for pid in alive:
        if processes[pid].busy:
            processes[pid].complete_append(final)
            last_append_tick = final
    for pid in alive:
        if not processes[pid].is_byzantine:
            processes[pid].ep_read(final)

    tree = oracle.shared
    summary = {
        'protocol': 'ep-async',
        'blocks': len(tree),
        'appended': {pid: p.appended for pid, p in processes.items()},
        'rejected': {pid: p.rejected for pid, p in processes.items()},
        'maxForkWidth': max(len(tree.children(b.id)) for b in tree.blocks()),
        'lastAppendTick': last_append_tick,
        'oracle': oracle.name
    }
    logger.info('ep-async run done: %d blocks', len(tree))

    return Trace(history, oracle.audit, summary)
