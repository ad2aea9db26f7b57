"""Token-exact radix-tree KV cache with pluggable eviction policies.

The tree stores serialized token paths at 1-token granularity.  Nodes carry
ownership labels (system / reusable / private), optional anchor metadata at
exported boundary offsets, reference counts for active requests, and logical
access timestamps.  Eviction is leaf-only via a min-heap with lazy key
revalidation; policy DART orders leaves by (class, dispatch priority, recency),
the baselines by recency, frequency, or an active-demand bit.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, Sequence


class CachePolicy(str, Enum):
    DART = "DART"
    LRU = "LRU"
    LRU_ACTIVE = "LRU_ACTIVE"
    LFU = "LFU"


class NodeKind(str, Enum):
    SYSTEM = "system"
    REUSABLE = "reusable"
    PRIVATE = "private"


class CacheError(RuntimeError):
    pass


class CapacityError(CacheError):
    """Path cannot be made resident even after maximal eviction."""


class ReleaseError(CacheError):
    """Release of a path that is not currently pinned."""


@dataclass
class AnchorMeta:
    kind: NodeKind
    segment_id: int | None
    prompt_offset: int
    counter_snapshot: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self) -> None:
        if self.kind is NodeKind.REUSABLE and self.segment_id is None:
            raise ValueError("reusable anchor requires segment_id")


@dataclass(frozen=True)
class Anchor:
    """Boundary to materialize during insert: offset plus anchor metadata."""

    offset: int
    kind: NodeKind
    segment_id: int | None = None
    counter_snapshot: tuple[int, int, int] = (0, 0, 0)


@dataclass(frozen=True)
class CacheConfig:
    capacity_tokens: int
    policy: CachePolicy = CachePolicy.DART
    protect_budget: int = 0

    def __post_init__(self) -> None:
        if self.capacity_tokens <= 0:
            raise ValueError("capacity_tokens must be > 0")
        if self.protect_budget < 0:
            raise ValueError("protect_budget must be >= 0")


class RadixNode:
    __slots__ = (
        "edge_tokens",
        "children",
        "parent",
        "ref_count",
        "last_access",
        "access_count",
        "anchor",
        "node_id",
        "kind",
        "segment_id",
    )

    def __init__(self, node_id: int, edge_tokens: list[int], parent: "RadixNode | None"):
        self.node_id = node_id
        self.edge_tokens = edge_tokens
        self.children: dict[int, RadixNode] = {}
        self.parent = parent
        self.ref_count = 0
        self.last_access = 0
        self.access_count = 0
        self.anchor: AnchorMeta | None = None
        self.kind = NodeKind.PRIVATE
        self.segment_id: int | None = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"RadixNode(id={self.node_id}, len={len(self.edge_tokens)})"


def _lcp(a: Sequence[int], b: Sequence[int]) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


class RadixCache:
    """Radix KV cache with a token budget and score-guided retention."""

    def __init__(self, config: CacheConfig):
        self.config = config
        self._next_id = 0
        self.root = self._new_node([], None)
        self.root.kind = NodeKind.SYSTEM
        self.resident_tokens = 0
        self._clock = 0
        self._priorities: dict[int, float] = {}
        self._protected: set[int] = set()
        self._active_segments: set[int] = set()
        self._insert_guard: set[int] = set()
        self.last_evicted: list[RadixNode] = []

    # ------------------------------------------------------------------ nodes

    def _new_node(self, edge: list[int], parent: RadixNode | None) -> RadixNode:
        node = RadixNode(self._next_id, edge, parent)
        self._next_id += 1
        return node

    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    # ------------------------------------------------------------------ match

    def match_prefix(self, token_path: Sequence[int]) -> tuple[int, list[RadixNode]]:
        """Longest exact prefix of ``token_path`` resident in the tree.

        Returns the hit length in tokens and the root-to-node path reaching it
        (including a partially matched final node).  Refreshes last_access and
        access_count along the match; never mutates structure.
        """
        now = self._tick()
        node = self.root
        i = 0
        visited: list[RadixNode] = []
        while i < len(token_path):
            child = node.children.get(token_path[i])
            if child is None:
                break
            k = _lcp(child.edge_tokens, token_path[i:])
            if k == 0:
                break
            child.last_access = now
            child.access_count += 1
            visited.append(child)
            i += k
            if k < len(child.edge_tokens):
                break
            node = child
        return i, visited

    def _walk_resident(self, token_path: Sequence[int]) -> int:
        """Resident prefix length without touching access metadata."""
        node = self.root
        i = 0
        while i < len(token_path):
            child = node.children.get(token_path[i])
            if child is None:
                break
            k = _lcp(child.edge_tokens, token_path[i:])
            i += k
            if k < len(child.edge_tokens):
                break
            node = child
        return i

    # ------------------------------------------------------------------ insert

    def insert_path(
        self, token_path: Sequence[int], anchors: Sequence[Anchor] = ()
    ) -> RadixNode:
        """Make ``token_path`` resident, split at anchor offsets, and pin it.

        Returns the deepest node of the path; the pin holds ref_count along the
        whole root chain until release_path.  Raises CapacityError when the
        path cannot fit even after maximal eviction.
        """
        offsets = [a.offset for a in anchors]
        if offsets != sorted(offsets):
            raise ValueError("anchor offsets must be sorted")
        if offsets and offsets[-1] > len(token_path):
            raise ValueError("anchor offset beyond path length")

        self._reserve(token_path)

        now = self._tick()
        node = self.root
        i = 0
        path_nodes: list[RadixNode] = []
        while i < len(token_path):
            child = node.children.get(token_path[i])
            if child is None:
                child = self._new_node(list(token_path[i:]), node)
                node.children[token_path[i]] = child
                self.resident_tokens += len(child.edge_tokens)
                i = len(token_path)
                child.last_access = now
                child.access_count += 1
                path_nodes.append(child)
                node = child
                break
            k = _lcp(child.edge_tokens, token_path[i:])
            if k < len(child.edge_tokens):
                child = self._split(child, k)
            child.last_access = now
            child.access_count += 1
            path_nodes.append(child)
            node = child
            i += k

        leaf = node
        # Split so every anchor offset lands on a node boundary.
        for off in offsets:
            if 0 < off < len(token_path):
                self._split_at_offset(token_path, off)
        path_nodes = self._collect_path_nodes(token_path)
        self._label_regions(path_nodes, anchors)
        leaf = path_nodes[-1] if path_nodes else self.root
        self._pin(leaf)
        return leaf

    def _reserve(self, token_path: Sequence[int]) -> None:
        missing = len(token_path) - self._walk_resident(token_path)
        shortfall = self.resident_tokens + missing - self.config.capacity_tokens
        if shortfall <= 0:
            return
        # Guard the matched prefix so reclaiming room cannot cannibalize the
        # very tokens this insert is about to reuse.
        guard: set[int] = set()
        node = self.root
        i = 0
        while i < len(token_path):
            child = node.children.get(token_path[i])
            if child is None:
                break
            k = _lcp(child.edge_tokens, token_path[i:])
            if k == 0:
                break
            guard.add(child.node_id)
            i += k
            if k < len(child.edge_tokens):
                break
            node = child
        self._insert_guard = guard
        try:
            freed = self.evict(shortfall)
        finally:
            self._insert_guard = set()
        if freed < shortfall:
            raise CapacityError(
                f"need {shortfall} tokens but could free only {freed}"
            )

    def _split(self, node: RadixNode, k: int) -> RadixNode:
        """Split ``node`` after its first k edge tokens; returns the new parent."""
        assert 0 < k < len(node.edge_tokens)
        upper = self._new_node(node.edge_tokens[:k], node.parent)
        node_first = node.edge_tokens[k]
        node.edge_tokens = node.edge_tokens[k:]
        parent = node.parent
        assert parent is not None
        parent.children[upper.edge_tokens[0]] = upper
        upper.children[node_first] = node
        node.parent = upper
        upper.ref_count = node.ref_count
        upper.last_access = node.last_access
        upper.access_count = node.access_count
        upper.kind = node.kind
        upper.segment_id = node.segment_id
        return upper

    def _split_at_offset(self, token_path: Sequence[int], offset: int) -> None:
        node = self.root
        depth = 0
        while depth < offset:
            child = node.children[token_path[depth]]
            end = depth + len(child.edge_tokens)
            if end > offset:
                self._split(child, offset - depth)
                child = node.children[token_path[depth]]
                end = depth + len(child.edge_tokens)
            depth = end
            node = child

    def _collect_path_nodes(self, token_path: Sequence[int]) -> list[RadixNode]:
        nodes: list[RadixNode] = []
        node = self.root
        depth = 0
        while depth < len(token_path):
            child = node.children[token_path[depth]]
            nodes.append(child)
            depth += len(child.edge_tokens)
            node = child
        return nodes

    def _label_regions(
        self, path_nodes: Iterable[RadixNode], anchors: Sequence[Anchor]
    ) -> None:
        if not anchors:
            return
        bounds = list(anchors)
        idx = 0
        depth = 0
        for node in path_nodes:
            depth += len(node.edge_tokens)
            while idx < len(bounds) and bounds[idx].offset < depth:
                idx += 1
            if idx >= len(bounds):
                break
            a = bounds[idx]
            node.kind = a.kind
            node.segment_id = a.segment_id
            if a.offset == depth:
                node.anchor = AnchorMeta(
                    kind=a.kind,
                    segment_id=a.segment_id,
                    prompt_offset=a.offset,
                    counter_snapshot=a.counter_snapshot,
                )

    # ------------------------------------------------------------------ pins

    def _pin(self, leaf: RadixNode) -> None:
        node: RadixNode | None = leaf
        while node is not None:
            node.ref_count += 1
            node = node.parent

    def release_path(self, leaf: RadixNode) -> None:
        """Drop the pin taken by insert_path.  Double release raises."""
        node: RadixNode | None = leaf
        while node is not None:
            if node.ref_count <= 0:
                raise ReleaseError(f"node {node.node_id} has no active pin")
            node = node.parent
        node = leaf
        while node is not None:
            node.ref_count -= 1
            node = node.parent

    # ------------------------------------------------------------------ round state

    def set_protection(self, dispatch_priorities: Mapping[int, float]) -> set[int]:
        """Recompute the protected set: top-f resident reusable anchors by score.

        Previous protection is cleared.  Returns the protected node IDs.
        """
        self._priorities = dict(dispatch_priorities)
        anchors = [
            n
            for n in self._iter_nodes()
            if n.anchor is not None and n.anchor.kind is NodeKind.REUSABLE
        ]
        anchors.sort(
            key=lambda n: (
                -self._priorities.get(n.segment_id, 0.0),
                n.segment_id if n.segment_id is not None else -1,
                n.node_id,
            )
        )
        self._protected = {n.node_id for n in anchors[: self.config.protect_budget]}
        return set(self._protected)

    def note_active_segments(self, active_segments: Iterable[int]) -> None:
        """Record segments with active demand (used by the LRU_ACTIVE policy)."""
        self._active_segments = set(active_segments)
        for node in self._iter_nodes():
            meta = node.anchor
            if meta is not None and meta.kind is NodeKind.REUSABLE:
                a = 1 if meta.segment_id in self._active_segments else 0
                g, _, n = meta.counter_snapshot
                meta.counter_snapshot = (g, a, n)

    # ------------------------------------------------------------------ evict

    def evict_key(self, node: RadixNode) -> tuple:
        """Lexicographic eviction key; smaller keys are reclaimed first."""
        policy = self.config.policy
        if policy is CachePolicy.DART:
            if node.kind is NodeKind.PRIVATE:
                return (0, 0.0, node.last_access, node.node_id)
            if node.node_id in self._protected:
                return (2, 0.0, node.last_access, node.node_id)
            pri = self._priorities.get(node.segment_id, 0.0)
            return (1, pri, node.last_access, node.node_id)
        if policy is CachePolicy.LRU:
            return (node.last_access, node.node_id)
        if policy is CachePolicy.LFU:
            return (node.access_count, node.last_access, node.node_id)
        if policy is CachePolicy.LRU_ACTIVE:
            active = 1 if node.segment_id in self._active_segments else 0
            return (active, node.last_access, node.node_id)
        raise ValueError(f"unknown policy {policy}")

    def _is_evictable(self, node: RadixNode) -> bool:
        if node.parent is None or node.children or node.ref_count > 0:
            return False
        if node.node_id in self._insert_guard:
            return False
        if self.config.policy is CachePolicy.DART and node.kind is NodeKind.SYSTEM:
            return False
        return True

    def evict(self, k_free: int) -> int:
        """Reclaim at least ``k_free`` tokens, or as much as evictability allows.

        Leaf-only: a node detaches only with no children and no pins.  Uses a
        min-heap with lazy key revalidation; parents become heap-eligible when
        their last child detaches.  Detached nodes are recorded in
        ``last_evicted`` for inspection.
        """
        if k_free < 0:
            raise ValueError("k_free must be >= 0")
        self.last_evicted = []
        if k_free == 0:
            return 0
        heap: list[tuple[tuple, int, RadixNode]] = []
        for node in self._iter_nodes():
            if self._is_evictable(node):
                heap.append((self.evict_key(node), node.node_id, node))
        heapq.heapify(heap)
        freed = 0
        while freed < k_free and heap:
            key, _, node = heapq.heappop(heap)
            if not self._is_evictable(node) or node.parent is None:
                continue
            current = self.evict_key(node)
            if current != key:
                heapq.heappush(heap, (current, node.node_id, node))
                continue
            parent = node.parent
            del parent.children[node.edge_tokens[0]]
            node.parent = None
            self.resident_tokens -= len(node.edge_tokens)
            freed += len(node.edge_tokens)
            self.last_evicted.append(node)
            if self._is_evictable(parent):
                heapq.heappush(heap, (self.evict_key(parent), parent.node_id, parent))
        return freed

    # ------------------------------------------------------------------ debug

    def _iter_nodes(self) -> Iterator[RadixNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node is not self.root:
                yield node
            for first in sorted(node.children, reverse=True):
                stack.append(node.children[first])

    def debug_nodes(self) -> list[dict]:
        """Deterministic depth-first node listing for golden/oracle tests."""
        out = []
        for node in self._iter_nodes():
            parent = node.parent
            out.append(
                {
                    "node_id": node.node_id,
                    "parent_id": parent.node_id if parent is not None else None,
                    "edge_len": len(node.edge_tokens),
                    "kind": node.kind.value,
                    "segment_id": node.segment_id,
                    "ref_count": node.ref_count,
                    "last_access": node.last_access,
                    "access_count": node.access_count,
                    "protected": node.node_id in self._protected,
                    "has_anchor": node.anchor is not None,
                }
            )
        return out

    def debug_dump(self) -> str:
        lines = []
        for rec in self.debug_nodes():
            lines.append(
                f"{rec['node_id']} parent={rec['parent_id']} len={rec['edge_len']} "
                f"kind={rec['kind']} seg={rec['segment_id']} ref={rec['ref_count']} "
                f"last={rec['last_access']} hits={rec['access_count']} "
                f"prot={int(rec['protected'])}"
            )
        return "\n".join(lines)

    def resident_full_paths(self) -> list[list[int]]:
        """Root-to-leaf token paths currently resident (for LCP oracles)."""
        paths: list[list[int]] = []

        def walk(node: RadixNode, prefix: list[int]) -> None:
            cur = prefix + node.edge_tokens
            if not node.children:
                paths.append(cur)
                return
            for first in sorted(node.children):
                walk(node.children[first], cur)

        if not self.root.children:
            return []
        for first in sorted(self.root.children):
            walk(self.root.children[first], [])
        return paths

    def recompute_resident_tokens(self) -> int:
        return sum(len(n.edge_tokens) for n in self._iter_nodes())
