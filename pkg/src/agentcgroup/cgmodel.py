"""Hierarchical cgroup-v2-style memory accounting tree.

Pure mechanism, no policy: charges propagate to every ancestor, soft-limit
(``high``) breaches are reported but never reclaimed here, hard-limit
(``max``) breaches fail the charge and terminate a victim, and ``low`` marks
a protection floor consulted by victim selection. Delay/stall behaviour on
breaches belongs to the engine and policy layers.

Limits are integer bytes or ``None`` for unlimited. The tree is a single
mutable state machine; callers serialize mutations through one owner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum


class Priority(str, Enum):
    HIGH = "high"
    LOW = "low"


class CgroupError(Exception):
    pass


class DeadNodeError(CgroupError):
    pass


class FrozenNodeError(CgroupError):
    pass


class DuplicateNameError(CgroupError):
    pass


class UnchargeUnderflowError(CgroupError):
    pass


@dataclass(frozen=True)
class Ok:
    pass


@dataclass(frozen=True)
class OverHigh:
    """Charge succeeded but usage exceeds a soft limit somewhere on the path."""

    overshoot_bytes: int
    breaching_node: int


@dataclass(frozen=True)
class Oom:
    """Charge failed against a hard limit; ``victims`` were killed."""

    victims: tuple[int, ...]


ChargeOutcome = Ok | OverHigh | Oom


@dataclass
class CgroupNode:
    node_id: int
    name: str
    parent_id: int | None
    usage_bytes: int = 0
    self_bytes: int = 0
    peak_bytes: int = 0
    high_bytes: int | None = None
    max_bytes: int | None = None
    low_bytes: int = 0
    frozen: bool = False
    oom_group: bool = False
    priority: Priority = Priority.LOW
    alive: bool = True
    children: list[int] = field(default_factory=list)


class CgroupTree:
    ROOT_ID = 0

    def __init__(self) -> None:
        root = CgroupNode(node_id=self.ROOT_ID, name="", parent_id=None)
        self._nodes: dict[int, CgroupNode] = {self.ROOT_ID: root}
        self._next_id = 1

    # -- lookup ---------------------------------------------------------

    def node(self, node_id: int) -> CgroupNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise CgroupError(f"unknown node id {node_id}") from None

    @property
    def root(self) -> CgroupNode:
        return self._nodes[self.ROOT_ID]

    @property
    def total_usage(self) -> int:
        return self.root.usage_bytes

    def sessions(self) -> list[CgroupNode]:
        """Alive top-level nodes (children of the root)."""
        return [self._nodes[c] for c in self.root.children
                if c in self._nodes and self._nodes[c].alive]

    def _path_to_root(self, node: CgroupNode) -> list[CgroupNode]:
        path = [node]
        while path[-1].parent_id is not None:
            path.append(self._nodes[path[-1].parent_id])
        return path

    def _effectively_frozen(self, node: CgroupNode) -> bool:
        return any(n.frozen for n in self._path_to_root(node))

    # -- structure ------------------------------------------------------

    def create_child(
        self,
        parent_id: int,
        name: str,
        *,
        high_bytes: int | None = None,
        max_bytes: int | None = None,
        low_bytes: int = 0,
        oom_group: bool = False,
        priority: Priority = Priority.LOW,
    ) -> int:
        parent = self.node(parent_id)
        if not parent.alive:
            raise DeadNodeError(f"parent {parent.name!r} is dead")
        if self._effectively_frozen(parent):
            raise FrozenNodeError(f"parent {parent.name!r} is frozen")
        for cid in parent.children:
            if cid in self._nodes and self._nodes[cid].name == name:
                raise DuplicateNameError(f"sibling named {name!r} already exists")
        node_id = self._next_id
        self._next_id += 1
        self._nodes[node_id] = CgroupNode(
            node_id=node_id,
            name=name,
            parent_id=parent_id,
            high_bytes=high_bytes,
            max_bytes=max_bytes,
            low_bytes=low_bytes,
            oom_group=oom_group,
            priority=priority,
        )
        parent.children.append(node_id)
        return node_id

    # -- accounting -------------------------------------------------------

    def would_breach_max(self, node_id: int, delta_bytes: int) -> int | None:
        """Id of the first node (leaf upward) whose hard limit the charge
        would exceed, or None."""
        for n in self._path_to_root(self.node(node_id)):
            if n.max_bytes is not None and n.usage_bytes + delta_bytes > n.max_bytes:
                return n.node_id
        return None

    def charge(self, node_id: int, delta_bytes: int) -> ChargeOutcome:
        """Charge memory to a node and all its ancestors.

        A hard-limit breach anywhere on the path applies nothing and kills a
        victim inside the breached subtree (largest-usage alive leaf,
        promoted to the topmost enclosing oom_group). A soft-limit breach
        charges normally and reports the largest overshoot on the path.
        """
        if delta_bytes <= 0:
            raise ValueError("charge delta must be > 0")
        node = self.node(node_id)
        if not node.alive:
            raise DeadNodeError(f"cannot charge dead node {node.name!r}")
        if self._effectively_frozen(node):
            raise FrozenNodeError(f"cannot charge frozen node {node.name!r}")
        path = self._path_to_root(node)

        breach = self.would_breach_max(node_id, delta_bytes)
        if breach is not None:
            victims = self._oom_kill(breach)
            return Oom(victims=tuple(victims))

        for n in path:
            n.usage_bytes += delta_bytes
            if n.usage_bytes > n.peak_bytes:
                n.peak_bytes = n.usage_bytes
        node.self_bytes += delta_bytes

        worst: tuple[int, int] | None = None
        for n in path:
            if n.high_bytes is not None and n.usage_bytes > n.high_bytes:
                over = n.usage_bytes - n.high_bytes
                if worst is None or over > worst[0]:
                    worst = (over, n.node_id)
        if worst is not None:
            return OverHigh(overshoot_bytes=worst[0], breaching_node=worst[1])
        return Ok()

    def uncharge(self, node_id: int, delta_bytes: int) -> None:
        """Release memory charged directly to this node; peaks are untouched."""
        if delta_bytes < 0:
            raise ValueError("uncharge delta must be >= 0")
        if delta_bytes == 0:
            return
        node = self.node(node_id)
        if not node.alive:
            raise DeadNodeError(f"cannot uncharge dead node {node.name!r}")
        if delta_bytes > node.self_bytes:
            raise UnchargeUnderflowError(
                f"uncharge {delta_bytes} exceeds usage {node.self_bytes} of {node.name!r}"
            )
        node.self_bytes -= delta_bytes
        for n in self._path_to_root(node):
            n.usage_bytes -= delta_bytes

    # -- lifecycle --------------------------------------------------------

    def freeze(self, node_id: int, on: bool) -> None:
        node = self.node(node_id)
        if not node.alive:
            raise DeadNodeError(f"cannot freeze dead node {node.name!r}")
        node.frozen = on

    def kill_subtree(self, node_id: int) -> list[int]:
        """Kill a node and every descendant; their usage leaves the ancestors."""
        node = self.node(node_id)
        if not node.alive:
            raise DeadNodeError(f"node {node.name!r} already dead")
        released = node.usage_bytes
        parent_id = node.parent_id
        while parent_id is not None:
            parent = self._nodes[parent_id]
            parent.usage_bytes -= released
            parent_id = parent.parent_id

        killed: list[int] = []
        stack = [node_id]
        while stack:
            nid = stack.pop()
            n = self._nodes[nid]
            stack.extend(reversed(n.children))
            if n.alive:
                n.alive = False
                n.usage_bytes = 0
                n.self_bytes = 0
                killed.append(nid)
        return killed

    def remove_leaf_merge_usage(self, node_id: int) -> int:
        """Delete a live leaf, leaving its usage charged to the parent.

        Ancestor counters are untouched (the leaf's usage was already
        propagated); the parent absorbs it as directly-held memory. Returns
        the migrated byte count.
        """
        node = self.node(node_id)
        if not node.alive:
            raise DeadNodeError(f"node {node.name!r} is dead")
        if node.children:
            raise CgroupError(f"node {node.name!r} is not a leaf")
        if node.parent_id is None:
            raise CgroupError("cannot remove the root")
        parent = self._nodes[node.parent_id]
        residual = node.usage_bytes
        parent.self_bytes += residual
        parent.children.remove(node_id)
        del self._nodes[node_id]
        return residual

    # -- OOM victim selection ----------------------------------------------

    def _oom_kill(self, limit_node_id: int) -> list[int]:
        limit_node = self.node(limit_node_id)
        leaves: list[CgroupNode] = []
        stack = [limit_node_id]
        while stack:
            nid = stack.pop()
            n = self._nodes[nid]
            if not n.alive:
                continue
            live_children = [c for c in n.children
                             if c in self._nodes and self._nodes[c].alive]
            if live_children:
                stack.extend(live_children)
            else:
                leaves.append(n)
        if not leaves:
            raise CgroupError("no alive node to OOM-kill")
        victim = max(leaves, key=lambda n: (n.usage_bytes, -n.node_id))

        # oom_group promotes the kill to the topmost flagged ancestor inside
        # the breached subtree
        target = victim
        walk: CgroupNode | None = victim
        while walk is not None:
            if walk.oom_group:
                target = walk
            if walk.node_id == limit_node.node_id:
                break
            walk = self._nodes[walk.parent_id] if walk.parent_id is not None else None
        return self.kill_subtree(target.node_id)

    def select_oom_victim(self) -> int:
        """System-wide victim: the largest-usage session not shielded by its
        ``low`` floor; if every session is shielded, the largest overall.
        Ties break toward the smallest id."""
        sessions = self.sessions()
        if not sessions:
            raise CgroupError("no alive sessions")
        unprotected = [s for s in sessions if s.usage_bytes > s.low_bytes]
        pool = unprotected if unprotected else sessions
        victim = max(pool, key=lambda n: (n.usage_bytes, -n.node_id))
        return victim.node_id

    # -- introspection ------------------------------------------------------

    def snapshot(self, node_id: int | None = None) -> dict:
        n = self.node(self.ROOT_ID if node_id is None else node_id)
        return {
            "id": n.node_id,
            "name": n.name,
            "usage_bytes": n.usage_bytes,
            "self_bytes": n.self_bytes,
            "peak_bytes": n.peak_bytes,
            "high_bytes": n.high_bytes,
            "max_bytes": n.max_bytes,
            "low_bytes": n.low_bytes,
            "frozen": n.frozen,
            "oom_group": n.oom_group,
            "priority": n.priority.value,
            "alive": n.alive,
            "children": [self.snapshot(c) for c in n.children if c in self._nodes],
        }

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":"))
