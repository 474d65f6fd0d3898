"""Blocktree abstract data type, selection functions and chain utilities.

A blocktree is a directed rooted tree of uniquely identified blocks whose root
is the genesis block. The `append` and `read` operations of the abstract data
type are the transition and output functions `apply_append` and `read_tree`,
parameterized by a selection function and a validity predicate. Trees are
immutable snapshots: attaching a block returns a new tree.

Typical usage example:

  tree = blocktree.new_tree()
  block = blocktree.Block.create(tree.genesis_block, creator=1, payload=b'tx')

  tree, ack = blocktree.apply_append(
    tree,
    block,
    blocktree.f_lowest_id,
    blocktree.ValidityPredicate()
  )

  chain = blocktree.read_tree(tree, blocktree.f_lowest_id)
"""

from hashlib import sha256

GENESIS_PAYLOAD = b'genesis'

class DuplicateBlockError(KeyError):
    """A block with the same identifier is already part of the tree."""

def block_digest(parent, creator, epoch, payload, weight=1):
    """Compute the identifier of a block.

    Args:
        parent: str, the hex identifier of the parent block.
        creator: int, the identifier of the creating process.
        epoch: int, the epoch of the block, 0 outside epoch protocols.
        payload: bytes, the opaque content of the block.
        weight: int, the contribution of the block to a weighted chain length.

    Returns:
        str, a fixed-width hex digest.
    """
    digest = sha256(bytes.fromhex(parent))
    digest.update(f'|{creator}|{epoch}|{weight}|'.encode('utf-8'))
    digest.update(payload)

    return digest.hexdigest()

class Block:
    """A class to represent a node of the blocktree.

    Attributes:
        id: str, the hex identifier of the block.
        parent: str, the hex identifier of the parent block, the block itself
            for the genesis block.
        creator: int, the identifier of the creating process, None for the
            genesis block.
        epoch: int, the epoch the block was proposed in.
        payload: bytes, the opaque content of the block.
        height: int, the distance from the genesis block.
        weight: int, the contribution to a weighted chain length.
        tick: int, the simulation tick of creation. Not part of the identifier.
    """
    __slots__ = (
        'id', 'parent', 'creator', 'epoch', 'payload', 'height', 'weight', 'tick'
    )

    def __init__(
            self,
            block_id,
            parent,
            creator=None,
            epoch=0,
            payload=b'',
            height=0,
            weight=1,
            tick=0
        ):
        """Initializes the instance based on attributes.

        Args:
            block_id: str, the hex identifier of the block.
            parent: str, the hex identifier of the parent block.
            creator: int, the identifier of the creating process.
            epoch: int, the epoch the block was proposed in.
            payload: bytes, the opaque content of the block.
            height: int, the distance from the genesis block.
            weight: int, the contribution to a weighted chain length.
            tick: int, the simulation tick of creation.
        """
        self.id = block_id
        self.parent = parent
        self.creator = creator
        self.epoch = epoch
        self.payload = payload
        self.height = height
        self.weight = weight
        self.tick = tick

    @classmethod
    def create(cls, parent, creator, payload=b'', epoch=0, weight=1, tick=0):
        """Create a block extending a parent block.

        The identifier is derived from the parent, creator, epoch, weight and
        payload, so identical content always yields the identical block.

        Args:
            parent: Block, the block to extend.
            creator: int, the identifier of the creating process.
            payload: bytes, the opaque content of the block.
            epoch: int, the epoch the block is proposed in.
            weight: int, the contribution to a weighted chain length.
            tick: int, the simulation tick of creation.

        Returns:
            Block, the new block.
        """
        return cls(
            block_digest(parent.id, creator, epoch, payload, weight),
            parent.id,
            creator=creator,
            epoch=epoch,
            payload=payload,
            height=parent.height + 1,
            weight=weight,
            tick=tick
        )

    @property
    def is_genesis(self):
        return self.parent == self.id

    def to_dict(self):
        """Render the canonical JSON representation of the block.

        Returns:
            dict, the key-value representation of the block.
        """
        return {
            'id': self.id,
            'parent': self.parent,
            'creator': self.creator,
            'epoch': self.epoch,
            'height': self.height,
            'weight': self.weight,
            'tick': self.tick,
            'payload': self.payload.hex()
        }

    @classmethod
    def from_dict(cls, body):
        """Build a block from its canonical JSON representation.

        Args:
            body: dict, the key-value representation of the block.

        Returns:
            Block, the decoded block.
        """
        return cls(
            body['id'],
            body['parent'],
            creator=body.get('creator'),
            epoch=body.get('epoch', 0),
            payload=bytes.fromhex(body.get('payload', '')),
            height=body.get('height', 0),
            weight=body.get('weight', 1),
            tick=body.get('tick', 0)
        )

    def __eq__(self, other):
        return isinstance(other, Block) and self.id == other.id

    def __hash__(self):
        return hash(self.id)

    def __repr__(self):
        return f'Block({self.id[:8]}, h={self.height}, e={self.epoch})'

def genesis_block():
    """Returns the genesis block b_0, identical in every run."""
    block_id = sha256(GENESIS_PAYLOAD).hexdigest()

    return Block(block_id, block_id, payload=GENESIS_PAYLOAD)

class Chain:
    """A class to represent a path from the genesis block.

    Chains support indexing (`bc[i]`), slicing and iteration over their
    blocks. Two chains are equal when they hold the same identifiers.

    Attributes:
        blocks: tuple, the blocks from genesis to the last block.
    """
    __slots__ = ('blocks', '_ids')

    def __init__(self, blocks):
        """Initializes the instance based on attributes.

        Args:
            blocks: iterable, the blocks from genesis to the last block.
        """
        self.blocks = tuple(blocks)
        self._ids = None

    @property
    def ids(self):
        if self._ids is None:
            self._ids = tuple(block.id for block in self.blocks)
        return self._ids

    def last_block(self):
        return self.blocks[-1]

    def extend(self, block):
        """Returns the concatenation bc⌢{b}."""
        chain = Chain(self.blocks + (block,))
        if self._ids is not None:
            chain._ids = self._ids + (block.id,)
        return chain

    def position(self, index):
        """Returns bc[index], or None when the position is empty."""
        if 0 <= index < len(self.blocks):
            return self.blocks[index]
        return None

    def to_list(self):
        return [block.to_dict() for block in self.blocks]

    @classmethod
    def from_list(cls, body):
        return cls(Block.from_dict(item) for item in body)

    def __len__(self):
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __getitem__(self, index):
        if isinstance(index, slice):
            chain = Chain(self.blocks[index])
            if self._ids is not None:
                chain._ids = self._ids[index]
            return chain
        return self.blocks[index]

    def __eq__(self, other):
        return isinstance(other, Chain) and self.ids == other.ids

    def __hash__(self):
        return hash(self.ids)

    def __repr__(self):
        tail = ', '.join(block_id[:8] for block_id in self.ids[-3:])
        return f'Chain(len={len(self.blocks)}, tail=[{tail}])'

def block_count(chain):
    """Chain length as the number of blocks."""
    return len(chain)

def chain_weight(chain):
    """Chain length as the sum of block weights, the heaviest-chain measure."""
    return sum(block.weight for block in chain)

class ValidityPredicate:
    """A class to represent the application-dependent validity predicate P.

    The default predicate checks the structure of the chain (genesis first,
    parent links and heights) and applies an optional check to the payload of
    every non-genesis block. Both checks are prefix-monotone.

    Attributes:
        payload_check: callable, a function from bytes to bool, or None.
        genesis: str, the expected genesis identifier, or None for any.
    """

    def __init__(self, payload_check=None, genesis=None):
        """Initializes the instance based on attributes.

        Args:
            payload_check: callable, a function from bytes to bool. Defaults
                to accepting every payload.
            genesis: str, the expected genesis identifier. Defaults to None.
        """
        self.payload_check = payload_check
        self.genesis = genesis

    def accepts_payload(self, payload):
        return self.payload_check is None or bool(self.payload_check(payload))

    def accepts_extension(self, parent, block):
        """Evaluate P on a valid chain ending at `parent` extended by `block`.

        Only the new link is checked, which is enough for a prefix-monotone
        predicate whose chain checks are local to consecutive blocks.

        Args:
            parent: Block, the last block of a chain already known valid.
            block: Block, the block appended to that chain.

        Returns:
            bool, whether the extended chain is valid.
        """
        if block.parent != parent.id or block.height != parent.height + 1:
            return False

        return self.accepts_payload(block.payload)

    def __call__(self, chain):
        """Evaluate P on a chain.

        Args:
            chain: Chain, the chain to verify.

        Returns:
            bool, whether the chain is valid.
        """
        if len(chain) == 0:
            return False

        root = chain[0]
        if not root.is_genesis or root.height != 0:
            return False
        if self.genesis is not None and root.id != self.genesis:
            return False

        blocks = chain.blocks
        for index in range(1, len(blocks)):
            if not self.accepts_extension(blocks[index - 1], blocks[index]):
                return False

        return True

class _Store:
    """Append-only block storage shared by the snapshots of one tree.

    A snapshot of size s sees the first s attached blocks. Selections computed
    on a snapshot are remembered here under its size.
    """

    MEMO_SIZE = 64

    def __init__(self, blocks):
        self.blocks = {}
        self.order = {}
        self.children = {}
        self.sequence = []
        self.memo = {}
        for block in blocks:
            self.add(block)

    def add(self, block):
        self.order[block.id] = len(self.sequence)
        self.blocks[block.id] = block
        self.children[block.id] = []
        if not block.is_genesis:
            self.children[block.parent].append(block.id)
        self.sequence.append(block)

    def remember(self, key, value):
        self.memo[key] = value
        while len(self.memo) > self.MEMO_SIZE:
            self.memo.pop(next(iter(self.memo)))

class Blocktree:
    """A class to represent an immutable snapshot of the blocktree.

    Snapshots of one lineage share their storage: attaching to the latest
    snapshot costs a constant amount of work, attaching to an older one copies
    the storage it sees.

    Attributes:
        genesis: str, the identifier of the genesis block b_0.
    """

    def __init__(self, genesis=None):
        """Initializes a tree holding only the genesis block.

        Args:
            genesis: Block, the root of the tree. Defaults to `genesis_block()`.
        """
        root = genesis or genesis_block()
        self.genesis = root.id
        self._store = _Store([root])
        self._size = 1

    @classmethod
    def _snapshot(cls, genesis, store, size):
        tree = cls.__new__(cls)
        tree.genesis = genesis
        tree._store = store
        tree._size = size
        return tree

    @property
    def genesis_block(self):
        return self._store.blocks[self.genesis]

    def attach(self, block):
        """Returns a new tree with the block attached under its parent.

        Args:
            block: Block, the block to attach.

        Returns:
            Blocktree, the new snapshot.

        Raises:
            DuplicateBlockError: if the block identifier is already present.
            AssertionError: if attaching would break the tree shape.
        """
        if block.id in self:
            raise DuplicateBlockError(block.id)
        if block.parent not in self:
            raise AssertionError(f'Parent {block.parent} missing from the tree')
        if block.height != self._store.blocks[block.parent].height + 1:
            raise AssertionError(f'Height mismatch for block {block.id}')

        store = self._store
        if len(store.sequence) != self._size:
            store = _Store(store.sequence[:self._size])
        store.add(block)

        return Blocktree._snapshot(self.genesis, store, self._size + 1)

    def block(self, block_id):
        """Returns the block with the given identifier.

        Raises:
            KeyError, if the block is not part of the tree.
        """
        if block_id not in self:
            raise KeyError(block_id)
        return self._store.blocks[block_id]

    def children(self, block_id):
        """Returns the children of a block in attach order."""
        block = self.block(block_id)
        children = []
        for child in self._store.children[block.id]:
            if self._store.order[child] >= self._size:
                break
            children.append(self._store.blocks[child])

        return tuple(children)

    def order(self, block_id):
        """Returns the attach sequence number of a block."""
        return self._store.order[self.block(block_id).id]

    def blocks(self):
        """Returns every block in attach order."""
        return self._store.sequence[:self._size]

    def last_block(self):
        """Returns the most recently attached block."""
        return self._store.sequence[self._size - 1]

    def leaves(self):
        order = self._store.order
        children = self._store.children
        return [
            block for block in self.blocks()
            if not children[block.id] or order[children[block.id][0]] >= self._size
        ]

    def edges(self):
        """Returns the child to parent map E_bt."""
        return {
            block.id: block.parent
            for block in self.blocks()
            if block.id != self.genesis
        }

    def chain_of(self, block_id):
        """Returns the chain from the genesis block to the given block.

        Raises:
            KeyError, if the block is not part of the tree.
        """
        blocks = self._store.blocks
        path = [self.block(block_id)]
        while not path[-1].is_genesis:
            path.append(blocks[path[-1].parent])
        path.reverse()

        return Chain(path)

    def remembered(self, key, back=0):
        """Returns a selection remembered for this snapshot, or None.

        Args:
            key: str, the name of the selection.
            back: int, look up the snapshot that many attaches earlier.
        """
        return self._store.memo.get((key, self._size - back))

    def remember(self, key, value):
        self._store.remember((key, self._size), value)
        return value

    def __contains__(self, block_id):
        order = self._store.order.get(block_id)
        return order is not None and order < self._size

    def __len__(self):
        return self._size

    def __eq__(self, other):
        return isinstance(other, Blocktree) and \
            self.genesis == other.genesis and self.edges() == other.edges()

    def __hash__(self):
        return hash((self.genesis, self._size))

    def __repr__(self):
        return f'Blocktree(blocks={self._size})'

def new_tree(genesis=None):
    """Returns the initial state ξ0, a tree holding only the genesis block."""
    return Blocktree(genesis)

def _first_per_creator(tree, children):
    """Keep the earliest-created child of every creator.

    Args:
        tree: Blocktree, the tree holding the children.
        children: tuple, sibling blocks.

    Returns:
        list, at most one block per creator.
    """
    first = {}
    for child in children:
        key = (child.tick, tree.order(child.id))
        kept = first.get(child.creator)
        if kept is None or key < (kept.tick, tree.order(kept.id)):
            first[child.creator] = child

    return list(first.values())

def _lowest_child(tree, parent_id):
    children = tree.children(parent_id)
    if not children:
        return None
    return min(_first_per_creator(tree, children), key=lambda b: b.id)

def _descend_lowest_id(tree, path):
    child = _lowest_child(tree, path[-1].id)
    while child is not None:
        path.append(child)
        child = _lowest_child(tree, child.id)

    return Chain(path)

def _advance_lowest_id(tree, previous):
    """Update the selection of the snapshot one attach older.

    Only the position under the parent of the newest block can change, and
    only when that parent lies on the previous selection.
    """
    block = tree.last_block()
    position = block.height
    if position > len(previous) or previous.ids[position - 1] != block.parent:
        return previous

    winner = _lowest_child(tree, block.parent)
    if position < len(previous) and previous.ids[position] == winner.id:
        return previous

    return _descend_lowest_id(tree, list(previous.blocks[:position]) + [winner])

def f_lowest_id(tree):
    """Select a chain by following the lowest identifier at every fork.

    Children created by the same process under one parent are reduced to the
    earliest one before comparing identifiers. Selections are remembered per
    snapshot and updated from the previous snapshot when it is known.

    Args:
        tree: Blocktree, the tree to select from.

    Returns:
        Chain, the selected chain from genesis to a leaf.
    """
    chain = tree.remembered('lowest-id')
    if chain is not None:
        return chain

    previous = tree.remembered('lowest-id', back=1) if len(tree) > 1 else None
    if previous is None:
        chain = _descend_lowest_id(tree, [tree.genesis_block])
    else:
        chain = _advance_lowest_id(tree, previous)

    return tree.remember('lowest-id', chain)

def f_longest(tree, length=block_count):
    """Select a maximal-length chain, ties broken by the lowest leaf id.

    Args:
        tree: Blocktree, the tree to select from.
        length: callable, the monotonic length function over chains.
            Defaults to `block_count`.

    Returns:
        Chain, the selected chain from genesis to a leaf.
    """
    if length is block_count:
        leaf = min(tree.leaves(), key=lambda b: (-b.height, b.id))
        return tree.chain_of(leaf.id)

    scored = [(tree.chain_of(leaf.id), leaf) for leaf in tree.leaves()]
    chain, _ = min(scored, key=lambda item: (-length(item[0]), item[1].id))

    return chain

def apply_append(tree, block, f_a, predicate):
    """Apply the transition and output functions of append(b).

    Args:
        tree: Blocktree, the current state.
        block: Block, the block to append.
        f_a: callable, the append selection function.
        predicate: ValidityPredicate, the validity predicate P.

    Returns:
        tuple, the next state and the acknowledgement (True for ⊤).

    Raises:
        DuplicateBlockError: if the block identifier is already present.
    """
    if block.id in tree:
        raise DuplicateBlockError(block.id)

    if not predicate(f_a(tree).extend(block)):
        return tree, False

    return tree.attach(block), True

def read_tree(tree, f_r):
    """Apply the output function of read(), the state is left unchanged."""
    return f_r(tree)

def is_prefix(chain, other):
    """Returns True iff `chain` is an initial segment of `other`."""
    size = len(chain)

    return size <= len(other) and other.ids[:size] == chain.ids

def common_prefix_length(chain, other):
    """Returns the number of leading positions holding the same block."""
    mine, theirs = chain.ids, other.ids
    low, high = 0, min(len(mine), len(theirs))
    if mine[:high] == theirs[:high]:
        return high

    # prefix equality is monotone in the length, bisect over slices
    while low < high:
        middle = (low + high + 1) // 2
        if mine[:middle] == theirs[:middle]:
            low = middle
        else:
            high = middle - 1

    return low

def common_prefix(chains):
    """Returns the longest chain prefixing every given chain.

    Args:
        chains: list, the chains to intersect.

    Returns:
        Chain, the common prefix, empty when the list is empty.
    """
    if not chains:
        return Chain(())

    first = chains[0]
    size = len(first)
    for chain in chains[1:]:
        size = min(size, common_prefix_length(first, chain))

    return first[:size]

def displacement(chain, other):
    """Count the trailing blocks to prune from `chain` to prefix `other`.

    Chains not sharing their genesis block give the full length.

    Returns:
        int, the minimal d with prune_last(chain, d) ⊑ other.
    """
    shared = common_prefix_length(chain, other)

    return len(chain) - shared if shared else len(chain)

def prune_last(chain, dis):
    """Remove the last `dis` blocks, never removing the genesis block."""
    return chain[:max(1, len(chain) - dis)]

def prune_half(chain):
    """Keep the first ⌈n/2⌉ blocks of the chain."""
    return chain[:max(1, (len(chain) + 1) // 2)]
