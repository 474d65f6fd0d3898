"""Transformations layered over a base blocktree protocol.

A `PrunedReader` returns the chain read from a base protocol without its
last `dis` blocks, or without its second half when the bound on displacement
is unknown. An `EcInstance` turns reads of a growing chain into the decisions
of an eventual consensus object: instance j decides the first read chain
filling position j.

Typical usage example:

  reader = reduction.PrunedReader(process.ep_read, dis=3)
  chain = reduction.pruned_read(reader, tick=10)

  pruned = reduction.prune_history(history, dis=None)
"""

from .blocktree import ValidityPredicate, prune_half, prune_last
from .history import READ_RSP, Event, History

class PrunedReader:
    """A class to represent reads pruned before being returned.

    Attributes:
        base: callable, the read operation of the base protocol.
        dis: int, the number of blocks to prune, None to prune half.
    """

    def __init__(self, base, dis=None):
        if dis is not None and dis < 0:
            raise ValueError('Displacement bound must be non-negative', dis)

        self.base = base
        self.dis = dis

    @property
    def mode(self):
        return 'half' if self.dis is None else f'dis={self.dis}'

    def read(self, *args, **kwargs):
        return prune_chain(self.base(*args, **kwargs), self.dis)

def prune_chain(chain, dis=None):
    """Prune the last `dis` blocks, or the second half when `dis` is None."""
    if dis is None:
        return prune_half(chain)

    return prune_last(chain, dis)

def pruned_read(reader, *args, **kwargs):
    """Read through the base protocol and prune the returned chain.

    Args:
        reader: PrunedReader, the reader.
        *args: the arguments of the base read.
        **kwargs: the keyword arguments of the base read.

    Returns:
        Chain, a prefix of the base chain.
    """
    return reader.read(*args, **kwargs)

def prune_history(history, dis=None):
    """Rewrite every read response of a history through `prune_chain`.

    Reads leave the tree unchanged, so pruning after the run is the same as
    pruning every read while it happens.

    Args:
        history: History, the base history.
        dis: int, the number of blocks to prune, None to prune half.

    Returns:
        History, a new history with pruned read responses.
    """
    header = dict(history.header)
    header['prune'] = 'half' if dis is None else dis
    pruned = History(header)

    for event in history.events:
        chain = event.chain
        if event.kind == READ_RSP:
            chain = prune_chain(chain, dis)
        pruned.record(Event(
            event.process,
            event.kind,
            event.tick,
            block=event.block,
            ack=event.ack,
            chain=chain
        ))

    return pruned

class EcInstance:
    """A class to represent one instance of eventual consensus.

    Attributes:
        j: int, the index of the instance, also the decided chain position.
        predicate: ValidityPredicate, the predicate P_EC, equal to P.
        decided: Chain, the decided chain, None while undecided.
        tick: int, the tick of the decision.
    """

    def __init__(self, j, predicate=None):
        if j < 1:
            raise ValueError('Instances start at index 1', j)

        self.j = j
        self.predicate = predicate or ValidityPredicate()
        self.decided = None
        self.tick = None

    @property
    def value(self):
        """Returns bc[j] of the decided chain, or None."""
        return None if self.decided is None else self.decided[self.j]

    def accepts(self, chain):
        return len(chain) > self.j and self.predicate(chain[:self.j + 1])

    def decide(self, chain, tick=None):
        """Write the decision of the instance, once.

        Raises:
            ValueError: if the instance already decided.
        """
        if self.decided is not None:
            raise ValueError('Instance already decided', self.j)

        self.decided = chain
        self.tick = tick

        return chain

def propose_ec(instance, value, append, read, max_polls=1000, tick=None):
    """Propose a value and poll reads until position j is filled.

    Args:
        instance: EcInstance, the instance to decide.
        value: bytes, the proposed value.
        append: callable, submits the value to the base protocol.
        read: callable, reads a chain from the base protocol.
        max_polls: int, the number of reads before giving up.
        tick: int, the tick recorded with the decision.

    Returns:
        Chain, the decided chain, None when the base tree did not grow enough.
    """
    append(value)

    for _ in range(max_polls):
        chain = read()
        if instance.accepts(chain):
            return instance.decide(chain, tick)

    return None

def _skip(value):
    return None

class EcClient:
    """A class to represent a process invoking consecutive instances.

    Instance j + 1 is proposed only once instance j decided. Reads are polled
    once per tick and are not recorded in the history.

    Attributes:
        process: int, the process identifier.
        instances: int, the number of instances to decide.
        decisions: list, the decisions as JSON-serializable records.
    """

    def __init__(self, process, read, submit, instances, predicate=None):
        self.process = process
        self.read = read
        self.submit = submit
        self.instances = instances
        self.predicate = predicate or ValidityPredicate()
        self.decisions = []
        self._current = EcInstance(1, self.predicate)
        self._submitted = False

    @property
    def done(self):
        return self._current is None

    def value(self, j):
        return f'ec:{self.process}:{j}'.encode('utf-8')

    def tick(self, now):
        """Submit the current value if needed and poll one read.

        Returns:
            EcInstance, the instance decided at this tick, or None.
        """
        if self._current is None:
            return None

        instance = self._current
        append = _skip if self._submitted else self.submit
        self._submitted = True

        chain = propose_ec(
            instance, self.value(instance.j), append, self.read, max_polls=1, tick=now
        )
        if chain is None:
            return None

        self.decisions.append({
            'process': self.process,
            'j': instance.j,
            'tick': now,
            'block': instance.value.id,
            'payload': instance.value.payload.hex(),
            'chain': list(chain.ids[:instance.j + 1])
        })

        if instance.j < self.instances:
            self._current = EcInstance(instance.j + 1, self.predicate)
            self._submitted = False
        else:
            self._current = None

        return instance
