"""Decide or measure the consistency criteria of a recorded history.

Every check takes a history and returns a `Verdict`. Criteria about the
whole run (strong prefix, validity, integrity, ever growing tree) are exact
on a finite history. Eventual criteria are approximated: eventual prefix by
a fill window and a late window over the run horizon, eventual strong prefix
by the earliest read index after which all reads are prefix-comparable. The
global event order stands for the program order when ordering reads.

Typical usage example:

  history = History.load('run.trace.jsonl')
  report = checker.check_history(history, window=0.5, cut_fraction=0.5)

  print(checker.format_table(report))
"""

import logging
import math

from .blocktree import (
    ValidityPredicate,
    common_prefix,
    common_prefix_length,
    is_prefix
)
from .history import APPEND_INV, APPEND_RSP

logger = logging.getLogger(__name__)

CHAIN_VALIDITY = 'ChainValidity'
CHAIN_INTEGRITY = 'ChainIntegrity'
EVENTUAL_PREFIX = 'EventualPrefix'
EVER_GROWING_TREE = 'EverGrowingTree'
STRONG_PREFIX = 'StrongPrefix'
EVENTUAL_STRONG_PREFIX = 'EventualStrongPrefix'
BOUNDED_DISPLACEMENT = 'BoundedDisplacement'
EVENTUAL_CONSENSUS = 'EventualConsensus'
ORACLE_AUDIT = 'OracleAudit'

PASS = 'pass'
FAIL = 'fail'
INCONCLUSIVE = 'inconclusive'
MEASURED = 'measured'

class Verdict:
    """A class to represent the outcome of a criterion over a history.

    Attributes:
        criterion: str, the criterion name.
        status: str, `pass`, `fail`, `inconclusive` or `measured`.
        witness: dict, the evidence of a failure, or None.
        params: dict, the approximation parameters used.
        metrics: Metrics, the measurements taken along, or None.
    """

    def __init__(self, criterion, status, witness=None, params=None, metrics=None):
        self.criterion = criterion
        self.status = status
        self.witness = witness
        self.params = dict(params or {})
        self.metrics = metrics

    @property
    def passed(self):
        return self.status == PASS

    def to_dict(self):
        body = {
            'criterion': self.criterion,
            'verdict': self.status,
            'witness': self.witness,
            'params': self.params
        }
        if self.metrics is not None:
            body['metrics'] = self.metrics.to_dict()

        return body

    def __repr__(self):
        return f'Verdict({self.criterion}, {self.status})'

class Metrics:
    """A class to represent the quantitative measurements of a history.

    Attributes:
        churn: dict, the change count of every chain position.
        max_displacement: int, the largest displacement between ordered reads.
        plateau: bool, whether the first half of the reads already reaches
            the largest displacement.
        common_prefix_series: list, (tick, length) samples of the common
            prefix of the latest reads.
        min_esp_cut: int, the earliest read index after which all reads are
            prefix-comparable.
        smallest_k_ec: int, the index after which all decisions agree.
    """

    def __init__(self, **kwargs):
        self.churn = kwargs.get('churn', {})
        self.max_displacement = kwargs.get('max_displacement')
        self.plateau = kwargs.get('plateau')
        self.common_prefix_series = kwargs.get('common_prefix_series', [])
        self.min_esp_cut = kwargs.get('min_esp_cut')
        self.smallest_k_ec = kwargs.get('smallest_k_ec')

    def update(self, other):
        for key, value in vars(other).items():
            if value not in (None, {}, []):
                setattr(self, key, value)
        return self

    def to_dict(self):
        return {
            'churn': {str(i): count for i, count in sorted(self.churn.items())},
            'maxDisplacement': self.max_displacement,
            'plateau': self.plateau,
            'commonPrefixSeries': [list(sample) for sample in self.common_prefix_series],
            'minEspCut': self.min_esp_cut,
            'smallestKEc': self.smallest_k_ec
        }

def _read_ref(event):
    return {'eid': event.eid, 'process': event.process, 'tick': event.tick}

def check_chain_validity(history, predicate=None):
    """Every returned chain satisfies P."""
    predicate = predicate or ValidityPredicate()

    for event in history.reads():
        if not predicate(event.chain):
            return Verdict(CHAIN_VALIDITY, FAIL, witness={'read': _read_ref(event)})

    return Verdict(CHAIN_VALIDITY, PASS)

def check_chain_integrity(history, strict=False):
    """Every returned non-genesis block was appended before the read.

    Args:
        history: History, the recorded history.
        strict: bool, order events by the closure of process and operation
            orders instead of the global event order.

    Returns:
        Verdict, with the read and the unexplained block on failure.
    """
    appended = {}
    checked = {}

    for event in history.events:
        if event.kind == APPEND_INV:
            appended.setdefault(event.block.id, []).append(event)
            continue
        if event.chain is None:
            continue

        for block in event.chain:
            if block.is_genesis or checked.get(block.id):
                continue
            invocations = appended.get(block.id, [])
            if strict:
                explained = any(history.precedes(inv, event) for inv in invocations)
            else:
                explained = bool(invocations)
                checked[block.id] = explained
            if not explained:
                return Verdict(
                    CHAIN_INTEGRITY,
                    FAIL,
                    witness={'read': _read_ref(event), 'block': block.id},
                    params={'strict': strict}
                )

    return Verdict(CHAIN_INTEGRITY, PASS, params={'strict': strict})

def churn(history):
    """Count, per position, how often consecutive reads of a process change it.

    Only positions filled in both reads count. The result is the largest
    count over the processes.

    Returns:
        dict, the non-zero change counts keyed by position.
    """
    worst = {}
    previous = {}

    for event in history.reads():
        last = previous.get(event.process)
        previous[event.process] = event
        if last is None:
            continue

        start = common_prefix_length(last.chain, event.chain)
        end = min(len(last.chain), len(event.chain))
        if start >= end:
            continue

        counts = worst.setdefault(event.process, {})
        for position in range(start, end):
            counts[position] = counts.get(position, 0) + 1

    result = {}
    for counts in worst.values():
        for position, count in counts.items():
            result[position] = max(result.get(position, 0), count)

    return result

def check_eventual_prefix(history, window=0.5):
    """Finite approximation of eventual prefix.

    Every position filled by a read before tick window·T must hold the same
    block in all reads after tick (1 − (1 − window)/2)·T, T being the run
    horizon. A late read too short to fill such a position disagrees.

    Args:
        history: History, the recorded history.
        window: float, the fill window as a fraction of the horizon.

    Returns:
        Verdict, with the churn metrics and the lowest failing position.

    Raises:
        ValueError: if the window is not within (0, 1).
    """
    if not 0 < window < 1:
        raise ValueError('Window must lie within (0, 1)', window)

    horizon = history.horizon
    fill_cut = window * horizon
    late_cut = (1 - (1 - window) / 2) * horizon
    params = {'window': window, 'fillCut': fill_cut, 'lateCut': late_cut}
    metrics = Metrics(churn=churn(history))

    reads = history.reads()
    late = [event for event in reads if event.tick >= late_cut]
    if len(reads) < 2 or not late:
        return Verdict(EVENTUAL_PREFIX, INCONCLUSIVE, params=params, metrics=metrics)

    filled = max(
        (len(event.chain) for event in reads if event.tick < fill_cut), default=0
    )
    reference = late[0]
    failing = None

    for event in late:
        position = min(
            common_prefix_length(reference.chain, event.chain),
            len(reference.chain),
            len(event.chain)
        )
        if position < filled and (failing is None or position < failing[0]):
            failing = (position, event)

    if failing is None:
        return Verdict(EVENTUAL_PREFIX, PASS, params=params, metrics=metrics)

    position, event = failing
    witness = {
        'position': position,
        'reads': [_read_ref(reference), _read_ref(event)]
    }

    return Verdict(EVENTUAL_PREFIX, FAIL, witness=witness, params=params, metrics=metrics)

def check_ever_growing_tree(history, k):
    """Some read returns a chain longer than k."""
    best = None
    for event in history.reads():
        if best is None or len(event.chain) > len(best.chain):
            best = event

    longest = len(best.chain) if best else 0
    if longest > k:
        return Verdict(
            EVER_GROWING_TREE, PASS,
            witness={'read': _read_ref(best), 'length': longest},
            params={'k': k}
        )

    return Verdict(
        EVER_GROWING_TREE, FAIL, witness={'longest': longest}, params={'k': k}
    )

def successful_appends(history):
    return sum(1 for event in history.events if event.kind == APPEND_RSP and event.ack)

def k_sweep(history, fractions=(0.1, 0.25, 0.5)):
    """Sweep the ever growing tree check over fractions of the appends.

    Returns:
        list, one verdict per k = ⌈fraction · successful appends⌉.
    """
    total = successful_appends(history)

    return [
        check_ever_growing_tree(history, math.ceil(fraction * total))
        for fraction in fractions
    ]

def check_strong_prefix(history):
    """Every pair of returned chains is prefix-comparable.

    Sorting reads by length, all pairs are comparable iff every read prefixes
    the next one.
    """
    reads = sorted(history.reads(), key=lambda event: (len(event.chain), event.eid))

    for shorter, longer in zip(reads, reads[1:]):
        if not is_prefix(shorter.chain, longer.chain):
            return Verdict(
                STRONG_PREFIX,
                FAIL,
                witness={'reads': [_read_ref(shorter), _read_ref(longer)]}
            )

    return Verdict(STRONG_PREFIX, PASS)

def minimal_cut(history):
    """Find the earliest read index after which all reads are comparable.

    Returns:
        tuple, the index and the pair of reads breaking comparability just
        before it, None when the cut is 0.
    """
    reads = history.reads()
    longest = None
    for index in range(len(reads) - 1, -1, -1):
        event = reads[index]
        if longest is None or is_prefix(longest.chain, event.chain):
            longest = event
        elif not is_prefix(event.chain, longest.chain):
            return index + 1, (event, longest)

    return 0, None

def check_eventual_strong_prefix(history, cut_fraction=0.5):
    """Finite approximation of eventual strong prefix.

    Args:
        history: History, the recorded history.
        cut_fraction: float, the largest admissible cut as a fraction of the
            number of reads.

    Returns:
        Verdict, with `min_esp_cut` in the metrics.
    """
    reads = history.reads()
    params = {'cutFraction': cut_fraction, 'reads': len(reads)}
    if len(reads) < 2:
        return Verdict(EVENTUAL_STRONG_PREFIX, INCONCLUSIVE, params=params)

    cut, pair = minimal_cut(history)
    metrics = Metrics(min_esp_cut=cut)

    if cut <= cut_fraction * len(reads):
        return Verdict(EVENTUAL_STRONG_PREFIX, PASS, params=params, metrics=metrics)

    witness = {'cut': cut, 'reads': [_read_ref(event) for event in pair]}

    return Verdict(
        EVENTUAL_STRONG_PREFIX, FAIL, witness=witness, params=params, metrics=metrics
    )

class _Trie:
    """Prefix tree of the chains read so far, with subtree maxima."""

    def __init__(self):
        self.root = {'children': {}, 'best': (0, None)}

    def insert(self, event):
        node = self.root
        size = len(event.chain)
        for block_id in event.chain.ids:
            if size > node['best'][0]:
                node['best'] = (size, event)
            node = node['children'].setdefault(block_id, {'children': {}, 'best': (0, None)})
        if size > node['best'][0]:
            node['best'] = (size, event)

    def worst(self, chain):
        """Returns the largest displacement of an inserted chain against `chain`.

        An inserted chain leaving the path of `chain` after `depth` shared
        blocks has displacement length − depth.
        """
        best = (0, None)
        node = self.root
        ids = chain.ids
        for depth in range(len(ids) + 1):
            following = ids[depth] if depth < len(ids) else None
            for block_id, child in node['children'].items():
                if block_id == following:
                    continue
                length, event = child['best']
                if event is not None and depth > 0 and length - depth > best[0]:
                    best = (length - depth, event)
                elif event is not None and depth == 0 and length > best[0]:
                    best = (length, event)
            if following is None or following not in node['children']:
                break
            node = node['children'][following]

        return best

def displacement_pairs(history):
    """Yield, per read, the earlier read of largest displacement against it."""
    trie = _Trie()
    for event in history.reads():
        value, earlier = trie.worst(event.chain)
        yield value, earlier, event
        trie.insert(event)

def measure_displacement(history):
    """Largest displacement over ordered pairs of reads.

    Returns:
        Verdict, measured, with `max_displacement` and `plateau` in the
        metrics and the maximizing pair as witness.
    """
    reads = history.reads()
    half = len(reads) // 2
    largest = 0
    first_half = 0
    witness = None

    for index, (value, earlier, event) in enumerate(displacement_pairs(history)):
        if value > largest:
            largest = value
            witness = {'reads': [_read_ref(earlier), _read_ref(event)], 'value': value}
        if index < half:
            first_half = largest

    metrics = Metrics(max_displacement=largest, plateau=first_half == largest)

    return Verdict(BOUNDED_DISPLACEMENT, MEASURED, witness=witness, metrics=metrics)

def displacement_witnesses(history, dis):
    """Find an ordered pair of reads with displacement above a bound.

    Returns:
        tuple, the earlier and later read events, None when none exceeds it.
    """
    for value, earlier, event in displacement_pairs(history):
        if value > dis:
            return earlier, event

    return None

def common_prefix_series(history, sample_every=10):
    """Sample the common prefix length of the latest read of every process.

    Returns:
        list, (tick, length) pairs every `sample_every` ticks.
    """
    sample_every = max(1, sample_every)
    reads = history.reads()
    latest = {}
    series = []
    index = 0

    for tick in range(0, history.horizon + 1, sample_every):
        while index < len(reads) and reads[index].tick <= tick:
            latest[reads[index].process] = reads[index].chain
            index += 1
        if latest:
            series.append((tick, len(common_prefix(list(latest.values())))))

    return series

def check_eventual_consensus(decisions, instances=None, predicate=None):
    """Measure eventual consensus over the decisions of every client.

    Args:
        decisions: list, the decision records with `process`, `j`, `block`
            and `payload` entries.
        instances: int, the number of instances every client should decide.
        predicate: ValidityPredicate, the predicate P_EC.

    Returns:
        Verdict, failed on a double decision or an invalid value, measured
        otherwise with `smallest_k_ec` in the metrics.
    """
    predicate = predicate or ValidityPredicate()
    decided = {}

    for record in decisions:
        key = (record['process'], record['j'])
        if key in decided:
            return Verdict(EVENTUAL_CONSENSUS, FAIL, witness={'integrity': list(key)})
        if not predicate.accepts_payload(bytes.fromhex(record['payload'])):
            return Verdict(EVENTUAL_CONSENSUS, FAIL, witness={'validity': list(key)})
        decided[key] = record['block']

    processes = sorted({process for process, _ in decided})
    last = max((j for _, j in decided), default=0)
    if instances is None:
        instances = last

    terminated = all(
        (process, j) in decided
        for process in processes for j in range(1, instances + 1)
    )

    smallest_k = 0
    for j in range(1, last + 1):
        values = {decided[(p, j)] for p in processes if (p, j) in decided}
        if len(values) > 1:
            smallest_k = j

    metrics = Metrics(smallest_k_ec=smallest_k)
    params = {'instances': instances, 'terminated': terminated}

    return Verdict(EVENTUAL_CONSENSUS, MEASURED, params=params, metrics=metrics)

def check_oracle_audit(entries, k=None):
    """Verify an oracle audit log.

    Every set follows a granted get for the same pair, the views handed to a
    process never go back, and no parent exceeds k children.

    Args:
        entries: list, the audit entries.
        k: int, the fork bound, None for Θ_P.

    Returns:
        Verdict, with the offending entry index on failure.
    """
    granted = set()
    views = {}

    for index, entry in enumerate(entries):
        op = entry['op']
        pair = (entry['parent'], entry['block'])
        if op == 'get_valid_block' and entry['result']:
            granted.add(pair)
        elif op == 'set_valid_block':
            if pair not in granted:
                return Verdict(ORACLE_AUDIT, FAIL, witness={'entry': index, 'ungranted': True})
            if k is not None and len(entry['result']) > k:
                return Verdict(ORACLE_AUDIT, FAIL, witness={'entry': index, 'forks': len(entry['result'])})
        elif op == 'update_view':
            if entry['version'] < views.get(entry['process'], 0):
                return Verdict(ORACLE_AUDIT, FAIL, witness={'entry': index, 'stale': True})
            views[entry['process']] = entry['version']

    return Verdict(ORACLE_AUDIT, PASS, params={'k': k, 'entries': len(entries)})

def check_history(
        history,
        predicate=None,
        window=0.5,
        cut_fraction=0.5,
        k_fractions=(0.1, 0.25, 0.5),
        sample_every=10,
        strict=False
    ):
    """Run every criterion over a history.

    Returns:
        dict, the JSON-serializable report with criteria verdicts, merged
        metrics and parameters.
    """
    verdicts = [
        check_chain_validity(history, predicate),
        check_chain_integrity(history, strict=strict),
        check_strong_prefix(history),
        check_eventual_strong_prefix(history, cut_fraction),
        check_eventual_prefix(history, window),
        measure_displacement(history)
    ]
    verdicts.extend(k_sweep(history, k_fractions))

    metrics = Metrics(common_prefix_series=common_prefix_series(history, sample_every))
    for verdict in verdicts:
        if verdict.metrics is not None:
            metrics.update(verdict.metrics)

    logger.info('Checked %d events', len(history.events))

    return {
        'criteria': [verdict.to_dict() for verdict in verdicts],
        'metrics': metrics.to_dict(),
        'params': {
            'window': window,
            'cutFraction': cut_fraction,
            'kFractions': list(k_fractions),
            'sampleEvery': sample_every,
            'strict': strict
        }
    }

def format_table(report):
    """Render a report as a human-readable table.

    Returns:
        str, one line per criterion followed by the headline metrics.
    """
    lines = [f'{"criterion":<24} {"verdict":<13} detail']
    for item in report['criteria']:
        detail = ''
        if item['criterion'] == EVER_GROWING_TREE:
            detail = f'k={item["params"]["k"]}'
        elif item['witness']:
            detail = ', '.join(
                f'{key}={value}' for key, value in sorted(item['witness'].items())
                if key in ('position', 'cut', 'value', 'block', 'longest')
            )
        lines.append(f'{item["criterion"]:<24} {item["verdict"]:<13} {detail}')

    metrics = report['metrics']
    lines.append('')
    lines.append(f'max displacement: {metrics["maxDisplacement"]}')
    lines.append(f'min ESP cut:      {metrics["minEspCut"]}')
    top = sorted(metrics['churn'].items(), key=lambda item: -item[1])[:5]
    lines.append(f'churn (top):      {", ".join(f"{p}:{c}" for p, c in top) or "none"}')

    return '\n'.join(lines)
