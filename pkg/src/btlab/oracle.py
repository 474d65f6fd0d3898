"""Oracles granting access to the shared blocktree.

Processes never mutate the global tree directly. They read it through
`update_view` and append to it through a two-step protocol: `get_valid_block`
grants a candidate block for a parent, then `set_valid_block` attaches the
granted block and returns the parent's current children. `OracleThetaP` puts
no bound on forks; `OracleThetaFk` never lets more than k children attach
under one parent, counting pending grants toward the bound.

Every call is appended to an audit log of JSON-serializable entries.

Typical usage example:

  oracle = oracle.OracleThetaFk(k=2)

  view = oracle.update_view(process=1)
  parent = f_lowest_id(view.tree).last_block()
  block = Block.create(parent, creator=1, payload=b'tx')

  if oracle.get_valid_block(parent.id, block, process=1):
    siblings = oracle.set_valid_block(parent.id, block, process=1)
"""

import json
import logging

from .blocktree import ValidityPredicate, new_tree

logger = logging.getLogger(__name__)

class UnknownParentError(LookupError):
    """The parent block is not part of the global tree."""

class UngrantedBlockError(PermissionError):
    """The block was never granted for this parent."""

class ViewSnapshot:
    """A class to represent an immutable view of the global tree.

    Attributes:
        tree: Blocktree, the snapshot.
        version: int, the global version the snapshot was taken at.
    """

    def __init__(self, tree, version):
        self.tree = tree
        self.version = version

    def __repr__(self):
        return f'ViewSnapshot(version={self.version}, blocks={len(self.tree)})'

class OracleThetaP:
    """A class to represent the oracle Θ_P, with unbounded forks.

    Attributes:
        predicate: ValidityPredicate, the validity predicate P.
        versions: list, every global tree version, the last one is current.
        grants: dict, the granted blocks keyed by (parent, block id).
        audit: list, the audit log entries.
    """
    name = 'theta-p'

    def __init__(self, predicate=None, tree=None):
        """Initializes the instance based on attributes.

        Args:
            predicate: ValidityPredicate, the validity predicate P. Defaults to
                the structural predicate.
            tree: Blocktree, the initial global tree. Defaults to the genesis
                tree.
        """
        self.predicate = predicate or ValidityPredicate()
        self.versions = [tree or new_tree()]
        self.grants = {}
        self.audit = []
        self._views = {}
        self._granted = {}

    @property
    def shared(self):
        return self.versions[-1]

    @property
    def version(self):
        return len(self.versions) - 1

    def _log(self, op, process, parent, block, version, result):
        self.audit.append({
            'op': op,
            'process': process,
            'parent': parent,
            'block': block,
            'version': version,
            'result': result
        })

    def update_view(self, process=None, lag=0):
        """Return a snapshot of the global tree, possibly stale.

        The returned version is never older than the last one handed to the
        same process, nor older than its last attached block, so views are
        monotone per process.

        Args:
            process: int, the calling process.
            lag: int, how many versions behind the current one the scheduler
                lets the view be. Defaults to 0, a fresh view.

        Returns:
            ViewSnapshot, the view.
        """
        version = max(self._views.get(process, 0), self.version - max(0, lag))
        self._views[process] = version

        self._log('update_view', process, None, None, version, version)

        return ViewSnapshot(self.versions[version], version)

    def _admissible(self, tree, parent, candidate):
        """Oracle-specific admission rule, none for Θ_P."""
        return True

    def get_valid_block(self, parent, candidate, process=None):
        """Grant a candidate block for a parent.

        Args:
            parent: str, the identifier of the parent block.
            candidate: Block, the block to grant.
            process: int, the calling process.

        Returns:
            bool, whether the block is granted.

        Raises:
            UnknownParentError: if the parent is not in the global tree.
        """
        tree = self.shared
        if parent not in tree:
            raise UnknownParentError(parent)

        key = (parent, candidate.id)
        if key in self.grants:
            result = True
        else:
            result = candidate.parent == parent and \
                self._admissible(tree, parent, candidate) and \
                self.predicate.accepts_extension(tree.block(parent), candidate)
            if result:
                self.grants[key] = candidate
                self._granted.setdefault(parent, set()).add(candidate.id)

        self._log(
            'get_valid_block', process, parent, candidate.id, self.version, result
        )

        return result

    def set_valid_block(self, parent, block, process=None):
        """Attach a granted block and return the parent's children.

        Retrying an applied call leaves the tree unchanged.

        Args:
            parent: str, the identifier of the parent block.
            block: Block, the granted block.
            process: int, the calling process.

        Returns:
            frozenset, the identifiers of the parent's children at return time.

        Raises:
            UngrantedBlockError: if the block was not granted for the parent.
        """
        if (parent, block.id) not in self.grants:
            raise UngrantedBlockError(parent, block.id)

        tree = self.shared
        if block.id not in tree:
            tree = tree.attach(block)
            self.versions.append(tree)
            self._check_fork_bound(tree, parent)
            logger.debug('Block %s attached by %s', block.id[:8], process)

        # a writer always sees its own write in later views
        if process is not None:
            self._views[process] = max(self._views.get(process, 0), self.version)

        result = frozenset(child.id for child in tree.children(parent))

        self._log(
            'set_valid_block', process, parent, block.id, self.version,
            sorted(result)
        )

        return result

    def _check_fork_bound(self, tree, parent):
        return None

class OracleThetaFk(OracleThetaP):
    """A class to represent the oracle Θ_{F,k}, with at most k forks.

    Attributes:
        k: int, the maximal number of children of any block.
    """
    name = 'theta-fk'

    def __init__(self, k, predicate=None, tree=None):
        """Initializes the instance based on attributes.

        Args:
            k: int, the fork bound, at least 1.
            predicate: ValidityPredicate, the validity predicate P.
            tree: Blocktree, the initial global tree.

        Raises:
            ValueError: if k is lower than 1.
        """
        if k < 1:
            raise ValueError('Fork bound must be at least 1', k)

        super().__init__(predicate=predicate, tree=tree)
        self.k = k

    def _admissible(self, tree, parent, candidate):
        attached = {child.id for child in tree.children(parent)}
        pending = self._granted.get(parent, set()) - attached

        return len(attached | pending) < self.k

    def _check_fork_bound(self, tree, parent):
        if len(tree.children(parent)) > self.k:
            raise AssertionError(f'Fork bound {self.k} exceeded under {parent}')
        return None

def read_audit(path):
    """Read an audit log written by `write_audit`.

    Args:
        path: str, the audit log file.

    Returns:
        list, the audit entries.
    """
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]

def write_audit(entries, path):
    """Write audit log entries as JSON lines.

    Args:
        entries: list, the audit entries of an oracle.
        path: str, the destination file.
    """
    with open(path, 'w', encoding='utf-8') as f:
        for entry in entries:
            f.write(json.dumps(entry, sort_keys=True) + '\n')

    return None
