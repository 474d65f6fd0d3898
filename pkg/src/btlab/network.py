"""Deterministic message scheduler for partially synchronous runs.

The network holds in-flight messages in a priority queue ordered by delivery
tick. A delivery policy decides when each message arrives: before the global
stabilization time (GST) the adversary may delay correct traffic up to
max(GST, sent + Δ), after it every message arrives within Δ ticks. The same
policy decides how stale the views handed out by the shared-memory oracles
are. All randomness derives from the run seed.

Typical usage example:

  net = network.Network(network.NetConfig(n=4, gst=100, delta=2))

  net.broadcast(message, now=10)
  inbox = net.deliver(now=12)
"""

import heapq
import logging
import random
from hashlib import sha256

logger = logging.getLogger(__name__)

FIFO = 'fifo'
RANDOM_DELAY = 'random-delay'
TARGETED_RACE = 'targeted-race'

POLICIES = (FIFO, RANDOM_DELAY, TARGETED_RACE)

PROPOSE = 'propose'
VOTE = 'vote'

class NetConfig:
    """A class to represent the configuration of a simulated network.

    Attributes:
        n: int, the number of processes, identified 0 to n-1.
        byzantine: dict, the behaviour tag of every Byzantine process.
        gst: int, the global stabilization tick.
        delta: int, the message delay bound Δ after GST.
        horizon: int, the last tick of the run.
        seed: int, the seed of every random choice.
        adversary: str, the delivery policy.
        max_staleness: int, the bound on oracle view staleness in versions.
        crashed: dict, the crash tick of every crash-prone process.
    """

    def __init__(
            self,
            n=4,
            byzantine=None,
            gst=0,
            delta=1,
            horizon=1000,
            seed=0,
            adversary=FIFO,
            max_staleness=0,
            crashed=None
        ):
        self.n = n
        self.byzantine = dict(byzantine or {})
        self.gst = gst
        self.delta = delta
        self.horizon = horizon
        self.seed = seed
        self.adversary = adversary
        self.max_staleness = max_staleness
        self.crashed = dict(crashed or {})

    @classmethod
    def from_dict(cls, body):
        """Build a configuration from a `network` configuration section.

        Args:
            body: dict, the camelCase configuration entries. Unknown keys are
                ignored.

        Returns:
            NetConfig, the configuration.
        """
        return cls(
            n=body.get('n', 4),
            byzantine={
                int(pid): tag for pid, tag in (body.get('byzantine') or {}).items()
            },
            gst=body.get('gst', 0),
            delta=body.get('delta', 1),
            horizon=body.get('horizon', 1000),
            seed=body.get('seed', 0),
            adversary=body.get('adversary', FIFO),
            max_staleness=body.get('maxStaleness', 0),
            crashed={
                int(pid): tick for pid, tick in (body.get('crashed') or {}).items()
            }
        )

    def to_dict(self):
        return {
            'n': self.n,
            'byzantine': {str(pid): tag for pid, tag in sorted(self.byzantine.items())},
            'gst': self.gst,
            'delta': self.delta,
            'horizon': self.horizon,
            'seed': self.seed,
            'adversary': self.adversary,
            'maxStaleness': self.max_staleness,
            'crashed': {str(pid): tick for pid, tick in sorted(self.crashed.items())}
        }

    def validate(self):
        """Reject an inconsistent configuration before any step.

        Returns:
            NetConfig, the configuration itself.

        Raises:
            ValueError: if an entry is out of range.
        """
        if self.n < 1:
            raise ValueError('At least one process is required', self.n)
        if self.delta < 1:
            raise ValueError('Delay bound must be at least 1', self.delta)
        if self.horizon < 1:
            raise ValueError('Horizon must be positive', self.horizon)
        if not 0 <= self.gst <= self.horizon:
            raise ValueError('GST must lie within the horizon', self.gst)
        if self.adversary not in POLICIES:
            raise ValueError('Unknown delivery policy', self.adversary)
        if self.max_staleness < 0:
            raise ValueError('Staleness bound must be non-negative', self.max_staleness)
        for pid in list(self.byzantine) + list(self.crashed):
            if not 0 <= pid < self.n:
                raise ValueError('Unknown process', pid)

        return self

    def processes(self):
        return list(range(self.n))

    def is_byzantine(self, pid):
        return pid in self.byzantine

    def is_crashed(self, pid, tick):
        return pid in self.crashed and tick >= self.crashed[pid]

class Message:
    """A class to represent a protocol message on the wire.

    Attributes:
        type: str, `propose` or `vote`.
        epoch: int, the epoch of the message.
        block: Block, the proposed or voted block.
        sender: int, the sending process.
        era: int, the era of a vote, see `streamlet`.
        tag: str, the simulated signature binding sender and content.
    """
    __slots__ = ('type', 'epoch', 'block', 'sender', 'era', 'tag')

    def __init__(self, msg_type, epoch, block, sender, era=0):
        self.type = msg_type
        self.epoch = epoch
        self.block = block
        self.sender = sender
        self.era = era
        self.tag = sha256(
            f'{sender}:{msg_type}:{epoch}:{era}:{block.id}'.encode('utf-8')
        ).hexdigest()[:16]

    def __repr__(self):
        return f'Message({self.type}, e={self.epoch}, from={self.sender})'

class PendingMessage:
    """A class to represent a message in flight.

    Attributes:
        msg: Message, the carried message.
        sent: int, the sending tick.
        deliver_at: int, the delivery tick.
        sender: int, the sending process.
        receiver: int, the receiving process.
        seq: int, the sending sequence number, breaks delivery ties.
    """
    __slots__ = ('msg', 'sent', 'deliver_at', 'sender', 'receiver', 'seq')

    def __init__(self, msg, sent, deliver_at, sender, receiver, seq):
        self.msg = msg
        self.sent = sent
        self.deliver_at = deliver_at
        self.sender = sender
        self.receiver = receiver
        self.seq = seq

    def __lt__(self, other):
        return (self.deliver_at, self.seq) < (other.deliver_at, other.seq)

def delay_bound(config, sent):
    """Returns the latest admissible delivery tick max(GST, sent + Δ)."""
    return max(config.gst, sent + config.delta)

def schedule_delivery(config, rng, sender, receiver, sent):
    """Choose the delivery tick of a message.

    Args:
        config: NetConfig, the network configuration.
        rng: Random, the seeded generator of the run.
        sender: int, the sending process.
        receiver: int, the receiving process.
        sent: int, the sending tick.

    Returns:
        int, the delivery tick, within [sent + 1, max(GST, sent + Δ)].
    """
    if sender == receiver or config.adversary == FIFO:
        return sent + 1

    bound = delay_bound(config, sent)

    if config.adversary == RANDOM_DELAY:
        return rng.randint(sent + 1, bound)

    # targeted-race: correct traffic crossing the parity partition waits for
    # the bound, Byzantine traffic races ahead
    if config.is_byzantine(sender) or config.is_byzantine(receiver):
        return sent + 1
    if sender % 2 != receiver % 2:
        return bound

    return sent + 1

class Network:
    """A class to represent the simulated network of a run.

    Attributes:
        config: NetConfig, the network configuration.
        delivered: list, every delivered PendingMessage, for auditing.
    """

    def __init__(self, config, rng=None):
        """Initializes the instance based on attributes.

        Args:
            config: NetConfig, the validated configuration.
            rng: Random, the generator of delivery choices. Defaults to one
                seeded with the configuration seed.
        """
        self.config = config
        self.rng = rng or random.Random(f'{config.seed}:network')
        self.delivered = []
        self._queue = []
        self._seq = 0

    def __len__(self):
        return len(self._queue)

    def send(self, msg, receiver, now):
        """Put a message in flight toward one receiver.

        Crashed senders are silent, their messages are dropped.

        Args:
            msg: Message, the message.
            receiver: int, the receiving process.
            now: int, the sending tick.

        Returns:
            PendingMessage, the scheduled message, or None when dropped.
        """
        if self.config.is_crashed(msg.sender, now):
            return None

        deliver_at = schedule_delivery(
            self.config, self.rng, msg.sender, receiver, now
        )
        pending = PendingMessage(msg, now, deliver_at, msg.sender, receiver, self._seq)
        self._seq += 1
        heapq.heappush(self._queue, pending)

        return pending

    def broadcast(self, msg, now, receivers=None):
        """Send a message to several receivers, every process by default.

        Byzantine senders may address a subset of the processes.

        Returns:
            list, the scheduled messages.
        """
        targets = self.config.processes() if receivers is None else receivers
        scheduled = [self.send(msg, receiver, now) for receiver in targets]

        return [pending for pending in scheduled if pending is not None]

    def deliver(self, now):
        """Pop every message due at or before a tick.

        Messages addressed to crashed processes are discarded.

        Args:
            now: int, the current tick.

        Returns:
            dict, the due messages keyed by receiver, in delivery order.
        """
        inbox = {}
        while self._queue and self._queue[0].deliver_at <= now:
            pending = heapq.heappop(self._queue)
            if self.config.is_crashed(pending.receiver, now):
                continue
            self.delivered.append(pending)
            inbox.setdefault(pending.receiver, []).append(pending.msg)

        return inbox

    def staleness(self):
        """Choose how many versions behind an oracle view may be."""
        if self.config.adversary == FIFO:
            return 0
        if self.config.adversary == RANDOM_DELAY:
            return self.rng.randint(0, self.config.max_staleness)

        return self.config.max_staleness

    def append_delay(self, pid, now):
        """Choose the tick at which a granted append completes."""
        if self.config.adversary == FIFO:
            return now + 1
        if self.config.adversary == RANDOM_DELAY:
            return self.rng.randint(now + 1, now + self.config.delta)

        return now + (self.config.delta if pid % 2 else 1)

    def audit_delays(self):
        """Check every delivered message from a correct sender.

        Returns:
            list, the messages delivered after max(GST, sent + Δ).
        """
        late = [
            pending for pending in self.delivered
            if not self.config.is_byzantine(pending.sender)
            and pending.deliver_at > delay_bound(self.config, pending.sent)
        ]
        if late:
            logger.warning('%d messages exceeded the delay bound', len(late))

        return late
