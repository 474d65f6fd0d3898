"""Streamlet with majority notarization and Byzantine exclusion.

Time is divided in epochs of 2Δ ticks, each with a leader known to every
process. The leader proposes a block extending one of its longest notarized
chains; processes vote for the first leader proposal of the current epoch
that extends one of their own longest notarized chains. A block is notarized
once a strict majority of the non-excluded processes voted for it. Three
adjacent notarized blocks with consecutive epochs finalize the chain up to
the middle one.

A majority lets two forks finalize when Byzantine processes vote on both. A
process observing two finalized chains that are not prefix of one another
looks for voters of inconsistent blocks (same epoch, or a later epoch at a
strictly smaller height), excludes them and recomputes notarization over the
remaining voters. Every vote carries the era of its voter, the number of
processes it had excluded when voting. A correct process releases its height
lock when its era grows, so a lower vote cast in a later era exposes nobody.
The `two-thirds` threshold restores the original quorum for differential
runs.

Typical usage example:

  trace = streamlet.run(NetConfig(n=4, gst=50, delta=2, horizon=400))

  finalized = trace.summary['finalizedHeights']
"""

import logging
from hashlib import sha256
from itertools import groupby

from .blocktree import Block, Chain, ValidityPredicate, genesis_block
from .history import History, Trace
from .network import PROPOSE, VOTE, Message, Network
from .reduction import EcClient

logger = logging.getLogger(__name__)

MAJORITY = 'majority'
TWO_THIRDS = 'two-thirds'

THRESHOLDS = (MAJORITY, TWO_THIRDS)

def epoch_of(tick, delta):
    return tick // (2 * delta)

def epoch_leader(epoch, n, seed):
    """Returns the leader of an epoch, a public function of the seed."""
    digest = sha256(f'{seed}:{epoch}'.encode('utf-8')).hexdigest()

    return int(digest, 16) % n

class Vote:
    """A class to represent the signed vote of a process on a block.

    Attributes:
        voter: int, the voting process.
        block: Block, the voted block.
        epoch: int, the epoch of the vote.
        era: int, the number of processes the voter had excluded.
    """

    def __init__(self, voter, block, epoch, era=0):
        self.voter = voter
        self.block = block
        self.epoch = epoch
        self.era = era

    def to_message(self):
        return Message(VOTE, self.epoch, self.block, self.voter, era=self.era)

class Proposal:
    """A class to represent the proposal of a block by a leader.

    Attributes:
        leader: int, the proposing process.
        block: Block, the proposed block.
        epoch: int, the epoch of the proposal.
    """

    def __init__(self, leader, block, epoch):
        self.leader = leader
        self.block = block
        self.epoch = epoch

    def to_message(self):
        return Message(PROPOSE, self.epoch, self.block, self.leader)

def inconsistent(block, other):
    """Tell whether votes on both blocks expose a Byzantine voter.

    Two distinct blocks are inconsistent when they share the same epoch, or
    when the block of strictly larger epoch has a strictly smaller height.
    The genesis block is consistent with every block.

    Args:
        block: Block, a notarized block.
        other: Block, another notarized block.

    Returns:
        bool, whether the blocks are inconsistent.
    """
    if block.id == other.id or block.is_genesis or other.is_genesis:
        return False
    if block.epoch == other.epoch:
        return True

    early, late = sorted((block, other), key=lambda b: b.epoch)

    return late.height < early.height

class NotarizationState:
    """A class to represent the votes and notarized blocks known to a process.

    Notarization is tracked incrementally as votes arrive. A block is
    chain-notarized when it and all its ancestors are notarized. Excluding
    voters triggers a full recomputation over the remaining voters.

    Attributes:
        n: int, the number of processes.
        threshold: str, `majority` or `two-thirds`.
        blocks: dict, the known blocks by identifier.
        votes: dict, the voters of every block, each with the era of its vote.
        excluded: set, the processes detected as Byzantine.
        notarized: set, the identifiers of the notarized blocks.
        ever_notarized: set, every identifier notarized at some point.
        chain_notarized: set, the identifiers of the chain-notarized blocks.
        final_tips: set, the middle blocks of finalizing triples.
        longest: Block, the tip of the longest notarized chain.
        version: int, bumped whenever the finalization may change.
    """

    def __init__(self, n, threshold=MAJORITY, genesis=None):
        if threshold not in THRESHOLDS:
            raise ValueError('Unknown notarization threshold', threshold)

        root = genesis or genesis_block()
        self.n = n
        self.threshold = threshold
        self.genesis = root.id
        self.blocks = {root.id: root}
        self.votes = {}
        self.excluded = set()
        self.notarized = {root.id}
        self.ever_notarized = {root.id}
        self.chain_notarized = {root.id}
        self.final_tips = set()
        self.longest = root
        self.version = 0
        self._children = {}

    def quorum(self):
        active = self.n - len(self.excluded)
        if self.threshold == TWO_THIRDS:
            return -(-2 * active // 3)
        return active // 2 + 1

    def active_votes(self, block_id):
        return sum(
            1 for voter in self.votes.get(block_id, ()) if voter not in self.excluded
        )

    def add_block(self, block):
        """Learn a block, possibly before its parent.

        Returns:
            bool, whether the block was new.
        """
        if block.id in self.blocks:
            return False

        self.blocks[block.id] = block
        self._children.setdefault(block.parent, []).append(block.id)
        self._propagate([block.id])

        return True

    def add_vote(self, voter, block, era=0):
        """Count the vote of a process on a block.

        Args:
            voter: int, the voting process.
            block: Block, the voted block.
            era: int, the era of the vote, the first one seen is kept.

        Returns:
            bool, whether the vote was new.
        """
        self.add_block(block)
        voters = self.votes.setdefault(block.id, {})
        if voter in voters:
            return False
        voters[voter] = era

        if block.id not in self.notarized and \
                self.active_votes(block.id) >= self.quorum():
            self.notarized.add(block.id)
            self.ever_notarized.add(block.id)
            self._propagate([block.id])

        return True

    def _propagate(self, pending):
        while pending:
            current = pending.pop()
            if current in self.chain_notarized or current not in self.notarized:
                continue
            block = self.blocks.get(current)
            if block is None or block.parent not in self.chain_notarized:
                continue

            self.chain_notarized.add(current)
            if (block.height, self.longest.id) > (self.longest.height, block.id):
                self.longest = block
            self._check_final(block)
            pending.extend(self._children.get(current, ()))

    def _check_final(self, block):
        middle = self.blocks[block.parent]
        if middle.is_genesis:
            return None

        first = self.blocks[middle.parent]
        if first.epoch + 1 == middle.epoch and middle.epoch + 1 == block.epoch:
            self.final_tips.add(middle.id)
            self.version += 1

        return None

    def recompute(self):
        """Re-evaluate every notarization over the non-excluded voters."""
        quorum = self.quorum()
        self.notarized = {self.genesis} | {
            block_id for block_id in self.votes
            if block_id in self.blocks and self.active_votes(block_id) >= quorum
        }
        self.ever_notarized |= self.notarized
        self.chain_notarized = {self.genesis}
        self.final_tips = set()
        self.longest = self.blocks[self.genesis]
        self.version += 1
        self._propagate(list(self._children.get(self.genesis, ())))

        return None

    def exclude(self, culprits):
        """Exclude detected processes and recompute.

        Returns:
            set, the processes excluded by this call.
        """
        new = set(culprits) - self.excluded
        if new:
            self.excluded |= new
            self.recompute()

        return new

    def chain_of(self, block_id):
        """Returns the chain from genesis to a known block.

        Raises:
            KeyError, if an ancestor is unknown.
        """
        path = [self.blocks[block_id]]
        while not path[-1].is_genesis:
            path.append(self.blocks[path[-1].parent])
        path.reverse()

        return Chain(path)

    def extends_longest(self, block):
        """Tell whether a block extends one of the longest notarized chains."""
        return block.parent in self.chain_notarized and \
            self.blocks[block.parent].height == self.longest.height

def detect_byzantine(state):
    """Find every process that voted for two inconsistent notarized blocks.

    Ballots of every voter are scanned by increasing epoch. Two blocks in one
    epoch expose the voter, as does a block lower than one it voted in an
    earlier epoch of the same or a later era.

    Args:
        state: NotarizationState, the votes known to a process.

    Returns:
        set, the detected processes, excluded ones included.
    """
    ballots = {}
    for block_id in state.ever_notarized:
        block = state.blocks.get(block_id)
        if block is None or block.is_genesis:
            continue
        for voter, era in state.votes.get(block_id, {}).items():
            ballots.setdefault(voter, []).append((block, era))

    culprits = set()
    for voter, cast in ballots.items():
        cast.sort(key=lambda ballot: (ballot[0].epoch, ballot[0].id))
        highest = {}
        for _, group in groupby(cast, key=lambda ballot: ballot[0].epoch):
            group = list(group)
            if len(group) > 1:
                culprits.add(voter)
                break
            block, era = group[0]
            if any(
                    height > block.height
                    for seen, height in highest.items() if seen >= era
                ):
                culprits.add(voter)
                break
            highest[era] = max(highest.get(era, 0), block.height)

    return culprits

class StreamletNode:
    """A class to represent a correct process running the protocol.

    Attributes:
        pid: int, the process identifier.
        state: NotarizationState, the votes and notarized blocks known.
        finalized: Chain, the finalized chain.
        mempool: list, the payloads waiting for inclusion.
        detections: list, the exclusions performed, with their tick.
        conflicts: int, the episodes of conflicting finalization observed.
        unresolved: int, the episodes no detection could explain.
    """
    is_byzantine = False

    def __init__(
            self,
            pid,
            n,
            delta,
            seed,
            history,
            threshold=MAJORITY,
            predicate=None
        ):
        self.pid = pid
        self.n = n
        self.delta = delta
        self.seed = seed
        self.history = history
        self.predicate = predicate or ValidityPredicate()
        self.state = NotarizationState(n, threshold)
        self.finalized = self._genesis_chain()
        self.mempool = []
        self.detections = []
        self.conflicts = 0
        self.unresolved = 0
        self.max_voted_height = 0
        self._voted_epochs = set()
        self._proposed_epochs = set()
        self._first_proposal = {}
        self._final_version = 0
        self._in_conflict = False
        self._unexplained = False

    @property
    def era(self):
        return len(self.state.excluded)

    def _genesis_chain(self):
        return Chain([self.state.blocks[self.state.genesis]])

    def is_leader(self, epoch):
        return epoch_leader(epoch, self.n, self.seed) == self.pid

    def tick(self, now, inbox=()):
        """Advance the process by one tick.

        Args:
            now: int, the current tick.
            inbox: list, the messages delivered at this tick.

        Returns:
            list, the (message, receivers) pairs to send, receivers None for
            every process.
        """
        epoch = epoch_of(now, self.delta)
        out = []

        for msg in inbox:
            if msg.type == PROPOSE:
                self.state.add_block(msg.block)
                out.extend(
                    self.on_proposal(Proposal(msg.sender, msg.block, msg.epoch), epoch)
                )
            elif msg.type == VOTE:
                self.state.add_vote(msg.sender, msg.block, msg.era)

        self.try_finalize(now)

        if self.is_leader(epoch) and epoch not in self._proposed_epochs:
            self._proposed_epochs.add(epoch)
            out.extend(self.propose(epoch, now))

        return out

    def next_payload(self, epoch, tip=None):
        """Returns the oldest mempool payload missing from a chain.

        Args:
            epoch: int, the epoch of the proposal.
            tip: Block, the last block of the chain. Defaults to the tip of
                the longest notarized chain.
        """
        tip = tip or self.state.longest
        included = {block.payload for block in self.state.chain_of(tip.id)}
        for payload in self.mempool:
            if payload not in included:
                return payload

        return f'{self.pid}:{epoch}'.encode('utf-8')

    def record_append(self, block, now):
        self.history.invoke_append(self.pid, block, now)
        self.history.respond_append(self.pid, True, now)

    def propose(self, epoch, now):
        parent = self.state.longest
        block = Block.create(
            parent, self.pid, self.next_payload(epoch), epoch=epoch, tick=now
        )
        self.record_append(block, now)
        logger.debug('Process %d proposes %s in epoch %d', self.pid, block, epoch)

        return [(Proposal(self.pid, block, epoch).to_message(), None)]

    def on_proposal(self, proposal, epoch):
        """Vote for the first leader proposal of the current epoch.

        Returns:
            list, the vote to broadcast, if any.
        """
        block = proposal.block
        if proposal.epoch != epoch or block.epoch != epoch:
            return []
        if epoch_leader(epoch, self.n, self.seed) != proposal.leader:
            return []
        if proposal.leader in self.state.excluded:
            return []
        if block.creator != proposal.leader or epoch in self._first_proposal:
            return []
        self._first_proposal[epoch] = block.id

        if epoch in self._voted_epochs:
            return []
        if not self.state.extends_longest(block):
            return []
        # never vote below a height voted in the current era
        if block.height < self.max_voted_height:
            return []
        # the parent is chain-notarized, its chain was checked by a correct voter
        if not self.predicate.accepts_extension(self.state.blocks[block.parent], block):
            return []

        self._voted_epochs.add(epoch)
        self.max_voted_height = block.height

        return [(Vote(self.pid, block, epoch, self.era).to_message(), None)]

    def _final_choice(self):
        """Pick the finalized chain among the finalizing triples.

        Returns:
            tuple, the chain of the highest middle block (lowest id on ties),
            None without any triple, and whether another middle block lies
            off that chain.
        """
        tips = [self.state.blocks[tip] for tip in self.state.final_tips]
        if not tips:
            return None, False

        best = min(tips, key=lambda block: (-block.height, block.id))
        chain = self.state.chain_of(best.id)

        return chain, any(chain.position(tip.height) != tip for tip in tips)

    def try_finalize(self, now=None):
        """Update the finalized chain from the finalizing triples.

        Conflicting finalized chains trigger the detection and exclusion of
        the voters of inconsistent blocks. An exclusion opens a new era: the
        height lock is released and the finalized chain is recomputed, back
        to the genesis block when no triple survives.

        Args:
            now: int, the current tick, recorded with detections.

        Returns:
            Chain, the finalized chain.
        """
        if self.state.version == self._final_version:
            return self.finalized

        chain, conflicting = self._final_choice()
        if conflicting:
            if not self._in_conflict:
                self._in_conflict = True
                self.conflicts += 1

            new = self.state.exclude(detect_byzantine(self.state))
            if new:
                self.detections.append({'tick': now, 'culprits': sorted(new)})
                self.max_voted_height = 0
                logger.warning(
                    'Process %d excludes %s at tick %s', self.pid, sorted(new), now
                )
                chain, conflicting = self._final_choice()
            elif not self._unexplained:
                self._unexplained = True
                self.unresolved += 1
                logger.warning(
                    'Process %d cannot explain a finalization conflict', self.pid
                )

        if not conflicting:
            self._in_conflict = False
            self._unexplained = False

        self.finalized = chain if chain is not None else self._genesis_chain()
        self._final_version = self.state.version

        return self.finalized

class ByzantineNode(StreamletNode):
    """A class to represent a Byzantine process.

    Behaviours:
        double-voter: votes every proposal it receives. As a leader, sends one
            block to each half of the processes and votes both.
        vote-low: proposes on the grandparent of its longest notarized tip
            and votes every proposal.
        equivocator: as a leader, sends one block to each half of the
            processes and votes both; otherwise votes the first proposal of
            every epoch.
        silent: does nothing.

    The halves are the even and the odd process identifiers, each block
    extending the highest notarized block its half voted for.

    Attributes:
        behaviour: str, the behaviour tag.
    """
    is_byzantine = True
    behaviours = ('double-voter', 'vote-low', 'equivocator', 'silent')

    def __init__(self, pid, n, delta, seed, history, behaviour, **kwargs):
        if behaviour not in self.behaviours:
            raise ValueError('Unknown streamlet behaviour', behaviour)

        super().__init__(pid, n, delta, seed, history, **kwargs)
        self.behaviour = behaviour
        self._voted = set()

    def tick(self, now, inbox=()):
        if self.behaviour == 'silent':
            return []

        return super().tick(now, inbox)

    def try_finalize(self, now=None):
        return self.finalized

    def _vote(self, block, epoch):
        if block.id in self._voted:
            return []
        self._voted.add(block.id)

        return [(Vote(self.pid, block, epoch, self.era).to_message(), None)]

    def on_proposal(self, proposal, epoch):
        block = proposal.block
        if self.behaviour == 'equivocator':
            if block.epoch in self._first_proposal:
                return []
            self._first_proposal[block.epoch] = block.id

        return self._vote(block, block.epoch)

    def halves(self):
        return (
            [pid for pid in range(self.n) if pid % 2 == 0],
            [pid for pid in range(self.n) if pid % 2 == 1]
        )

    def half_tip(self, receivers):
        """Returns the highest chain-notarized block voted by a receiver."""
        others = set(receivers) - {self.pid}
        tips = [
            self.state.blocks[block_id] for block_id in self.state.chain_notarized
            if others & set(self.state.votes.get(block_id, ()))
        ]
        if not tips:
            return self.state.blocks[self.state.genesis]

        return min(tips, key=lambda block: (-block.height, block.id))

    def propose(self, epoch, now):
        tip = self.state.longest

        if self.behaviour == 'vote-low' and not tip.is_genesis:
            parent = self.state.blocks[tip.parent]
            if not parent.is_genesis:
                parent = self.state.blocks[parent.parent]
            block = Block.create(parent, self.pid, self.next_payload(epoch, parent),
                                 epoch=epoch, tick=now)
            self.record_append(block, now)
            return [(Proposal(self.pid, block, epoch).to_message(), None)]

        if self.behaviour in ('double-voter', 'equivocator'):
            out = []
            for side, receivers in enumerate(self.halves()):
                parent = self.half_tip(receivers)
                block = Block.create(
                    parent, self.pid, f'{self.pid}:{epoch}:{side}'.encode('utf-8'),
                    epoch=epoch, tick=now
                )
                self.record_append(block, now)
                out.append((
                    Proposal(self.pid, block, epoch).to_message(),
                    sorted(set(receivers) | {self.pid})
                ))
                out.extend(self._vote(block, epoch))
            logger.debug('Process %d splits epoch %d', self.pid, epoch)
            return out

        return super().propose(epoch, now)

def streamlet_tick(node, now, inbox=()):
    """Advance one process by one tick, see `StreamletNode.tick`."""
    return node.tick(now, inbox)

def run(config, workload=None, predicate=None):
    """Simulate the protocol up to the horizon.

    Correct processes read their finalized chain every `readInterval` ticks
    and at the horizon. With `ecInstances` set, every correct process runs an
    eventual consensus client over its finalized chain.

    Args:
        config: NetConfig, the network configuration.
        workload: dict, the `streamlet` configuration section.
        predicate: ValidityPredicate, the validity predicate P, also P_EC.

    Returns:
        Trace, the history and run summary.
    """
    config.validate()
    workload = dict(workload or {})
    threshold = workload.get('threshold', MAJORITY)
    read_interval = max(1, workload.get('readInterval', 2 * config.delta))
    ec_instances = workload.get('ecInstances', 0)
    predicate = predicate or ValidityPredicate()

    network = Network(config)
    history = History({
        'protocol': 'streamlet',
        'network': config.to_dict(),
        'workload': workload,
        'seed': config.seed,
        'horizon': config.horizon
    })

    nodes = {}
    for pid in config.processes():
        if config.is_byzantine(pid):
            nodes[pid] = ByzantineNode(
                pid, config.n, config.delta, config.seed, history,
                config.byzantine[pid], threshold=threshold, predicate=predicate
            )
        else:
            nodes[pid] = StreamletNode(
                pid, config.n, config.delta, config.seed, history,
                threshold=threshold, predicate=predicate
            )
    correct = [pid for pid in config.processes() if not config.is_byzantine(pid)]

    def submit(value):
        for pid in correct:
            nodes[pid].mempool.append(value)

    clients = []
    if ec_instances:
        clients = [
            EcClient(
                pid,
                read=lambda pid=pid: nodes[pid].finalized,
                submit=submit,
                instances=ec_instances,
                predicate=predicate
            )
            for pid in correct
        ]

    logger.info(
        'streamlet run: n=%d, byzantine=%d, threshold=%s',
        config.n, len(config.byzantine), threshold
    )

    for now in range(config.horizon + 1):
        inbox = network.deliver(now)
        for pid in config.processes():
            if config.is_crashed(pid, now):
                continue
            for msg, receivers in streamlet_tick(nodes[pid], now, inbox.get(pid, [])):
                network.broadcast(msg, now, receivers)

        for client in clients:
            if not config.is_crashed(client.process, now):
                client.tick(now)

        if now % read_interval == 0 or now == config.horizon:
            for pid in correct:
                if config.is_crashed(pid, now):
                    continue
                history.invoke_read(pid, now)
                history.respond_read(pid, nodes[pid].finalized, now)

    summary = {
        'protocol': 'streamlet',
        'threshold': threshold,
        'finalizedHeights': {pid: len(nodes[pid].finalized) - 1 for pid in correct},
        'detections': {
            pid: nodes[pid].detections for pid in correct if nodes[pid].detections
        },
        'conflicts': {pid: nodes[pid].conflicts for pid in correct},
        'unresolved': {pid: nodes[pid].unresolved for pid in correct},
        'lateMessages': len(network.audit_delays()),
        'decisions': [
            decision for client in clients for decision in client.decisions
        ]
    }
    logger.info('streamlet run done: heights %s', summary['finalizedHeights'])

    return Trace(history, summary=summary)
