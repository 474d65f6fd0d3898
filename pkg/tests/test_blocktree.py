from random import Random

import pytest

from btlab.blocktree import (
    Block,
    Chain,
    DuplicateBlockError,
    ValidityPredicate,
    apply_append,
    chain_weight,
    common_prefix,
    common_prefix_length,
    displacement,
    f_longest,
    f_lowest_id,
    genesis_block,
    is_prefix,
    new_tree,
    prune_half,
    prune_last,
    read_tree
)

def _grow(tree, parent, creator, payload, weight=1, tick=0):
    block = Block.create(parent, creator, payload=payload, weight=weight, tick=tick)
    return tree.attach(block), block

def test_genesis_is_shared():
    assert genesis_block() == genesis_block()
    assert genesis_block().is_genesis
    assert len(new_tree()) == 1

def test_block_identifier_depends_on_content():
    root = genesis_block()
    first = Block.create(root, 1, payload=b'a')

    assert first == Block.create(root, 1, payload=b'a')
    assert first != Block.create(root, 2, payload=b'a')
    assert first != Block.create(root, 1, payload=b'b')
    assert first.height == 1

def test_block_dict_keeps_payload():
    block = Block.create(genesis_block(), 3, payload=b'\x00\xff', epoch=2, tick=7)
    decoded = Block.from_dict(block.to_dict())

    assert decoded == block
    assert decoded.payload == b'\x00\xff'
    assert decoded.epoch == 2
    assert decoded.tick == 7

def test_attach_returns_new_snapshot():
    tree = new_tree()
    grown, block = _grow(tree, tree.genesis_block, 1, b'a')

    assert len(tree) == 1
    assert len(grown) == 2
    assert block.id in grown
    assert block.id not in tree

def test_attach_rejects_duplicates_and_orphans():
    tree = new_tree()
    tree, block = _grow(tree, tree.genesis_block, 1, b'a')

    with pytest.raises(DuplicateBlockError):
        tree.attach(block)

    orphan = Block.create(Block.create(block, 1, payload=b'x'), 1, payload=b'y')
    with pytest.raises(AssertionError):
        tree.attach(orphan)

def test_chain_of_follows_parents():
    tree = new_tree()
    tree, first = _grow(tree, tree.genesis_block, 1, b'a')
    tree, second = _grow(tree, first, 1, b'b')

    chain = tree.chain_of(second.id)

    assert chain.ids == (tree.genesis, first.id, second.id)
    assert chain.last_block() == second
    assert chain.position(5) is None

def test_lowest_id_selects_minimal_child():
    tree = new_tree()
    tree, left = _grow(tree, tree.genesis_block, 1, b'a')
    tree, right = _grow(tree, tree.genesis_block, 2, b'b')

    chain = f_lowest_id(tree)

    assert chain[1].id == min(left.id, right.id)

def test_lowest_id_keeps_first_block_per_creator():
    tree = new_tree()
    tree, early = _grow(tree, tree.genesis_block, 1, b'first', tick=1)
    tree, late = _grow(tree, tree.genesis_block, 1, b'second', tick=2)

    assert f_lowest_id(tree)[1] == early

def test_longest_prefers_height_then_lowest_leaf():
    tree = new_tree()
    tree, short = _grow(tree, tree.genesis_block, 1, b'a')
    tree, base = _grow(tree, tree.genesis_block, 2, b'b')
    tree, tip = _grow(tree, base, 2, b'c')

    assert f_longest(tree).last_block() == tip

    tree, other = _grow(tree, short, 1, b'd')
    assert f_longest(tree).last_block().id == min(tip.id, other.id)

def test_longest_with_weights():
    tree = new_tree()
    tree, heavy = _grow(tree, tree.genesis_block, 1, b'a', weight=5)
    tree, light = _grow(tree, tree.genesis_block, 2, b'b')
    tree, _ = _grow(tree, light, 2, b'c')

    assert f_longest(tree, chain_weight).last_block() == heavy
    assert len(f_longest(tree)) == 3

def test_apply_append_checks_predicate():
    predicate = ValidityPredicate(payload_check=lambda payload: payload != b'bad')
    tree = new_tree()

    good = Block.create(tree.genesis_block, 1, payload=b'good')
    tree, ack = apply_append(tree, good, f_lowest_id, predicate)
    assert ack
    assert good.id in tree

    bad = Block.create(good, 1, payload=b'bad')
    unchanged, ack = apply_append(tree, bad, f_lowest_id, predicate)
    assert not ack
    assert unchanged is tree

    with pytest.raises(DuplicateBlockError):
        apply_append(tree, good, f_lowest_id, predicate)

def test_read_leaves_tree_unchanged():
    tree = new_tree()
    tree, _ = _grow(tree, tree.genesis_block, 1, b'a')

    assert read_tree(tree, f_lowest_id) == read_tree(tree, f_lowest_id)
    assert len(tree) == 2

def test_predicate_rejects_broken_links():
    root = genesis_block()
    first = Block.create(root, 1, payload=b'a')
    stray = Block.create(Block.create(root, 2, payload=b'x'), 2, payload=b'y')

    assert ValidityPredicate()(Chain([root, first]))
    assert not ValidityPredicate()(Chain([root, stray]))
    assert not ValidityPredicate()(Chain([first]))
    assert not ValidityPredicate()(Chain([]))
    assert not ValidityPredicate(genesis='00')(Chain([root]))

def test_prefix_utilities():
    tree = new_tree()
    tree, a = _grow(tree, tree.genesis_block, 1, b'a')
    tree, b = _grow(tree, a, 1, b'b')
    tree, c = _grow(tree, a, 2, b'c')

    long = tree.chain_of(b.id)
    fork = tree.chain_of(c.id)

    assert is_prefix(tree.chain_of(a.id), long)
    assert not is_prefix(long, fork)
    assert common_prefix([long, fork]).ids == (tree.genesis, a.id)
    assert len(common_prefix([])) == 0
    assert displacement(long, fork) == 1
    assert displacement(long, long) == 0

def test_pruning_keeps_genesis():
    tree = new_tree()
    parent = tree.genesis_block
    for index in range(4):
        tree, parent = _grow(tree, parent, 1, bytes([index]))
    chain = tree.chain_of(parent.id)

    assert len(prune_last(chain, 2)) == 3
    assert len(prune_last(chain, 10)) == 1
    assert len(prune_half(chain)) == 3
    assert len(prune_half(chain[:1])) == 1
    assert len(prune_half(chain[:4])) == 2

def _random_trees(seed, size):
    """Yield every snapshot of a tree grown under random parents."""
    rng = Random(seed)
    tree = new_tree()
    yield tree
    for index in range(size):
        parent = rng.choice(tree.blocks())
        block = Block.create(
            parent, rng.randrange(3), payload=bytes([index]),
            weight=rng.randrange(1, 4), tick=rng.randrange(5)
        )
        tree = tree.attach(block)
        yield tree

def _lowest_id_by_hand(tree):
    path = [tree.genesis_block]
    while tree.children(path[-1].id):
        first = {}
        for child in tree.children(path[-1].id):
            kept = first.get(child.creator)
            if kept is None or (child.tick, tree.order(child.id)) < (kept.tick, tree.order(kept.id)):
                first[child.creator] = child
        path.append(min(first.values(), key=lambda block: block.id))

    return Chain(path)

def _longest_by_hand(tree, length):
    chains = [tree.chain_of(block.id) for block in tree.blocks()]

    return min(chains, key=lambda chain: (-length(chain), chain.last_block().id))

def test_older_snapshot_is_unchanged_by_attach():
    tree = new_tree()
    older, a = _grow(tree, tree.genesis_block, 1, b'a')
    newer, b = _grow(older, a, 1, b'b')

    assert len(older) == 2
    assert b.id not in older
    assert older.children(a.id) == ()
    assert older.blocks() == [older.genesis_block, a]
    assert older.leaves() == [a]
    assert older.last_block() == a
    with pytest.raises(KeyError):
        older.block(b.id)
    assert newer.children(a.id) == (b,)

def test_branching_from_an_older_snapshot_stays_apart():
    tree = new_tree()
    older, a = _grow(tree, tree.genesis_block, 1, b'a')
    newer, b = _grow(older, a, 1, b'b')
    side, c = _grow(older, a, 2, b'c')
    newest, d = _grow(newer, b, 1, b'd')

    assert c.id not in newer and c.id not in newest
    assert b.id not in side and d.id not in side
    assert newer.children(a.id) == (b,)
    assert side.children(a.id) == (c,)
    assert newest.chain_of(d.id).ids == (tree.genesis, a.id, b.id, d.id)
    assert f_lowest_id(side).last_block() == c
    assert f_lowest_id(newest).last_block() == d

@pytest.mark.parametrize('seed', range(20))
def test_lowest_id_matches_a_fresh_descent(seed):
    for tree in _random_trees(seed, 12):
        assert f_lowest_id(tree) == _lowest_id_by_hand(tree)

def test_lowest_id_of_a_skipped_snapshot():
    trees = list(_random_trees(5, 12))

    # later snapshots first, so no earlier selection is remembered
    for tree in reversed(trees):
        assert f_lowest_id(tree) == _lowest_id_by_hand(tree)

@pytest.mark.parametrize('seed', range(20))
def test_longest_matches_every_chain(seed):
    for tree in _random_trees(seed, 12):
        assert f_longest(tree) == _longest_by_hand(tree, len)
        assert f_longest(tree, chain_weight) == _longest_by_hand(tree, chain_weight)

def test_extension_checks_the_new_link_only():
    root = genesis_block()
    first = Block.create(root, 1, payload=b'a')
    second = Block.create(first, 1, payload=b'b')
    predicate = ValidityPredicate(payload_check=lambda payload: payload != b'bad')

    assert predicate.accepts_extension(root, first)
    assert predicate.accepts_extension(first, second)
    assert not predicate.accepts_extension(root, second)
    assert not predicate.accepts_extension(first, Block.create(first, 2, payload=b'bad'))

def test_common_prefix_length_of_unlinked_chains():
    root = genesis_block()
    x, y, z = (Block.create(root, creator, payload=b'p') for creator in (1, 2, 3))

    assert common_prefix_length(Chain([root, x, y]), Chain([root, x, z])) == 2
    assert common_prefix_length(Chain([root, x, y]), Chain([root, x, y, z])) == 3
    assert common_prefix_length(Chain([x, y]), Chain([y, x])) == 0
    assert common_prefix_length(Chain([]), Chain([root])) == 0
    assert displacement(Chain([x, y]), Chain([y])) == 2
