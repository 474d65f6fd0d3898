"""Record concurrent histories of blocktree operations.

A history is the ordered log of append and read invocation and response
events of every process. Events receive a global sequence number (eid) when
recorded; that order refines the program order and is the linearization the
checker works with. The process order, operation order and program order are
derived on demand.

Traces are written as JSON lines: a header line with the run configuration,
then block definitions and events. A block definition precedes the first
event referencing it, events reference blocks by identifier.

Typical usage example:

  record = history.History({'protocol': 'ep-async', 'seed': 7})

  record.invoke_read(process=1, tick=0)
  record.respond_read(process=1, chain=chain, tick=0)

  record.dump('trace.jsonl')
"""

import json
import os

from .blocktree import Block, Chain, genesis_block
from .oracle import write_audit

APPEND_INV = 'append_inv'
APPEND_RSP = 'append_rsp'
READ_INV = 'read_inv'
READ_RSP = 'read_rsp'

KINDS = (APPEND_INV, APPEND_RSP, READ_INV, READ_RSP)
MATCHING = {APPEND_RSP: APPEND_INV, READ_RSP: READ_INV}

class HistoryError(ValueError):
    """The event cannot be recorded in the history."""

class Event:
    """A class to represent an invocation or response event.

    Attributes:
        eid: int, the global sequence number, set when recorded.
        process: int, the process producing the event.
        kind: str, one of `append_inv`, `append_rsp`, `read_inv`, `read_rsp`.
        tick: int, the logical time of occurrence.
        block: Block, the appended block for `append_inv`.
        ack: bool, the acknowledgement for `append_rsp`.
        chain: Chain, the returned chain for `read_rsp`.
        inv: int, the eid of the matching invocation for responses.
    """
    __slots__ = ('eid', 'process', 'kind', 'tick', 'block', 'ack', 'chain', 'inv')

    def __init__(self, process, kind, tick, block=None, ack=None, chain=None):
        self.eid = None
        self.process = process
        self.kind = kind
        self.tick = tick
        self.block = block
        self.ack = ack
        self.chain = chain
        self.inv = None

    @property
    def is_invocation(self):
        return self.kind in (APPEND_INV, READ_INV)

    @property
    def is_response(self):
        return self.kind in MATCHING

    def to_dict(self):
        """Render the event for a trace file, blocks by identifier."""
        body = {
            'eid': self.eid,
            'process': self.process,
            'kind': self.kind,
            'tick': self.tick
        }
        if self.block is not None:
            body['block'] = self.block.id
        if self.ack is not None:
            body['ack'] = self.ack
        if self.chain is not None:
            body['chain'] = list(self.chain.ids)

        return body

    def __repr__(self):
        return f'Event({self.eid}, p{self.process}, {self.kind}, t={self.tick})'

class History:
    """A class to represent a concurrent history.

    Attributes:
        header: dict, the run configuration written on the first trace line.
        events: list, the recorded events in eid order.
    """

    def __init__(self, header=None):
        """Initializes an empty history.

        Args:
            header: dict, the run configuration. Defaults to an empty header.
        """
        self.header = dict(header or {})
        self.events = []
        self._pending = {}
        self._last_tick = 0
        self._bounds = None

    def pending(self, process):
        """Returns the open invocation of a process, or None."""
        return self._pending.get(process)

    def record(self, event):
        """Append a well-formed event to the history.

        Args:
            event: Event, the event to record.

        Returns:
            History, the history itself.

        Raises:
            HistoryError: if the event is malformed, orphan, or earlier than
                the last recorded event.
        """
        if event.kind not in KINDS:
            raise HistoryError('Unknown event kind', event.kind)
        if event.tick < self._last_tick:
            raise HistoryError('Event tick goes back in time', event.tick)

        opened = self._pending.get(event.process)

        if event.is_invocation:
            if opened is not None:
                raise HistoryError('Process has a pending operation', event.process)
            if event.kind == APPEND_INV and event.block is None:
                raise HistoryError('Append invocation without block')
            self._pending[event.process] = event
        else:
            if opened is None or opened.kind != MATCHING[event.kind]:
                raise HistoryError('Orphan response', event.process, event.kind)
            if event.tick < opened.tick:
                raise HistoryError('Response before its invocation', event.tick)
            if event.kind == READ_RSP and event.chain is None:
                raise HistoryError('Read response without chain')
            event.inv = opened.eid
            del self._pending[event.process]

        event.eid = len(self.events)
        self.events.append(event)
        self._last_tick = event.tick
        self._bounds = None

        return self

    def invoke_append(self, process, block, tick):
        return self.record(Event(process, APPEND_INV, tick, block=block))

    def respond_append(self, process, ack, tick):
        return self.record(Event(process, APPEND_RSP, tick, ack=bool(ack)))

    def invoke_read(self, process, tick):
        return self.record(Event(process, READ_INV, tick))

    def respond_read(self, process, chain, tick):
        return self.record(Event(process, READ_RSP, tick, chain=chain))

    def reads(self, process=None):
        """Returns the read responses in eid order."""
        return [
            event for event in self.events
            if event.kind == READ_RSP and (process is None or event.process == process)
        ]

    def appends(self):
        """Returns the append invocations in eid order."""
        return [event for event in self.events if event.kind == APPEND_INV]

    def processes(self):
        return sorted({event.process for event in self.events})

    @property
    def horizon(self):
        """Returns the run horizon from the header, else the last tick."""
        if 'horizon' in self.header:
            return self.header['horizon']
        return self.events[-1].tick if self.events else 0

    # Derived relations

    def process_order(self, first, second):
        """e ↦ e′: same process, e recorded before e′."""
        return first.process == second.process and first.eid < second.eid

    def operation_order(self, first, second):
        """e ≺ e′: e is a response occurring strictly before invocation e′."""
        return first.is_response and second.is_invocation and \
            first.tick < second.tick

    def _compute_bounds(self):
        """Index, per event, the tick of the next own response and of the last
        own invocation, both inclusive."""
        if self._bounds is not None:
            return self._bounds

        next_response = [None] * len(self.events)
        last_invocation = [None] * len(self.events)

        latest = {}
        for event in self.events:
            if event.is_invocation:
                latest[event.process] = event.tick
            last_invocation[event.eid] = latest.get(event.process)

        upcoming = {}
        for event in reversed(self.events):
            if event.is_response:
                upcoming[event.process] = event.tick
            next_response[event.eid] = upcoming.get(event.process)

        self._bounds = (next_response, last_invocation)

        return self._bounds

    def precedes(self, first, second):
        """e ↗ e′, the transitive closure of process and operation orders.

        Ticks never decrease along the process order, so a path exists iff the
        two events share a process in order, or the first own response at or
        after e occurs strictly before the last own invocation at or before e′.
        """
        if first.eid == second.eid:
            return False
        if self.process_order(first, second):
            return True

        next_response, last_invocation = self._compute_bounds()
        response = next_response[first.eid]
        invocation = last_invocation[second.eid]

        return response is not None and invocation is not None and \
            response < invocation

    def verify_relations(self):
        """Check the relation invariants over every pair of events.

        Quadratic, meant for histories of at most a few thousand events.

        Returns:
            list, the violated (name, eid, eid) triples, empty when consistent.
        """
        violations = []
        for first in self.events:
            if self.process_order(first, first) or self.operation_order(first, first):
                violations.append(('irreflexive', first.eid, first.eid))
            for second in self.events:
                if first.eid == second.eid:
                    continue
                ordered = self.precedes(first, second)
                if self.process_order(first, second) and not ordered:
                    violations.append(('process-order', first.eid, second.eid))
                if self.operation_order(first, second) and not ordered:
                    violations.append(('operation-order', first.eid, second.eid))
                if ordered and first.eid > second.eid:
                    violations.append(('linearization', first.eid, second.eid))

        return violations

    # Trace files

    def lines(self):
        """Render the history as trace lines, deterministic byte for byte."""
        def dump(body):
            return json.dumps(body, sort_keys=True, separators=(',', ':'))

        out = [dump({'header': self.header})]
        defined = {genesis_block().id}

        for event in self.events:
            referenced = []
            if event.block is not None:
                referenced.append(event.block)
            if event.chain is not None:
                referenced.extend(event.chain)
            for block in referenced:
                if block.id not in defined:
                    defined.add(block.id)
                    out.append(dump({'block': block.to_dict()}))
            out.append(dump({'event': event.to_dict()}))

        return out

    def dump(self, path):
        """Write the history as a JSON lines trace file.

        Args:
            path: str, the destination file.
        """
        with open(path, 'w', encoding='utf-8') as f:
            for line in self.lines():
                f.write(line + '\n')

        return None

    @classmethod
    def from_lines(cls, lines):
        """Rebuild a history from trace lines.

        Args:
            lines: iterable, the JSON lines of a trace.

        Returns:
            History, the replayed history.

        Raises:
            HistoryError: if an event references an undefined block or breaks
                the recording rules.
        """
        history = cls()
        genesis = genesis_block()
        blocks = {genesis.id: genesis}

        for line in lines:
            if not line.strip():
                continue
            body = json.loads(line)
            if 'header' in body:
                history.header = body['header']
            elif 'block' in body:
                block = Block.from_dict(body['block'])
                blocks[block.id] = block
            elif 'event' in body:
                item = body['event']
                try:
                    block = blocks[item['block']] if 'block' in item else None
                    chain = Chain(blocks[i] for i in item['chain']) \
                        if 'chain' in item else None
                except KeyError as e:
                    raise HistoryError('Undefined block in trace', e.args[0]) from e
                history.record(Event(
                    item['process'],
                    item['kind'],
                    item['tick'],
                    block=block,
                    ack=item.get('ack'),
                    chain=chain
                ))

        return history

    @classmethod
    def load(cls, path):
        """Read a trace file written by `dump`.

        Args:
            path: str, the trace file.

        Returns:
            History, the replayed history.
        """
        with open(path, 'r', encoding='utf-8') as f:
            return cls.from_lines(f.readlines())

def reads_in_program_order(history, process=None):
    """Returns the read responses in the eid linearization of ↗.

    Args:
        history: History, the recorded history.
        process: int, restrict to one process. Defaults to every process.

    Returns:
        list, the read response events.
    """
    return history.reads(process)

class Trace:
    """A class to represent the artifacts of one simulation run.

    Attributes:
        history: History, the recorded history.
        audit: list, the oracle audit log entries, empty for message passing.
        summary: dict, protocol-specific run measurements.
    """

    def __init__(self, history, audit=None, summary=None):
        self.history = history
        self.audit = list(audit or [])
        self.summary = dict(summary or {})

    def write(self, directory, name):
        """Write the trace, audit log and summary files.

        Args:
            directory: str, the output directory, created when missing.
            name: str, the file name prefix.

        Returns:
            dict, the written paths keyed by artifact.
        """
        os.makedirs(directory, exist_ok=True)
        paths = {
            'trace': os.path.join(directory, f'{name}.trace.jsonl'),
            'audit': os.path.join(directory, f'{name}.audit.jsonl'),
            'summary': os.path.join(directory, f'{name}.summary.json')
        }

        self.history.dump(paths['trace'])

        write_audit(self.audit, paths['audit'])

        with open(paths['summary'], 'w', encoding='utf-8') as f:
            json.dump(self.summary, f, sort_keys=True, indent=2)

        return paths
