"""Ground-truth world that simulated skills act on.

The world is itself a :class:`SceneGraph`; robots appear in it as object
nodes flagged ``robot=True`` whose ``at`` attribute names the room or fixture
they stand at. Held objects are ``supports`` children of the robot node.
"""

from __future__ import annotations

from dataclasses import replace

from ..memory.registry import RobotProfile
from ..memory.scene import Observation, ObservedNode, SceneGraph, SceneNode


class World:
    def __init__(self, graph: SceneGraph, profiles: dict[str, RobotProfile] | None = None):
        self.graph = graph
        self.profiles = dict(profiles or {})

    # ------------------------------------------------------------- topology

    def station(self, node_id: str) -> str:
        """The fixture (top-most object below the room) that holds ``node_id``.

        Rooms are their own station; objects held by a robot have the robot
        as their station.
        """
        g = self.graph
        node = g.node(node_id)
        if node.kind != "object":
            return node_id
        cur = node_id
        while True:
            if g.node(cur).attributes.get("robot"):
                return cur
            parent = g.parent(cur)
            if parent is None or g.node(parent).kind != "object":
                return cur
            cur = parent

    def hidden(self, node_id: str) -> bool:
        """True when a closed openable ancestor hides the node."""
        g = self.graph
        for anc in g.ancestors(node_id):
            node = g.node(anc)
            if node.kind != "object":
                return False
            if "openable" in node.affordances and not node.attributes.get("open", False):
                return True
        return False

    def robot_at(self, robot_id: str) -> str:
        return self.graph.node(robot_id).attributes["at"]

    def robot_room(self, robot_id: str) -> str:
        return self.graph.room_of(robot_id)

    def held(self, robot_id: str) -> list[str]:
        g = self.graph
        return [c for c in g.children(robot_id) if g.parent_edge(c).relation == "supports"]

    def reachable(self, robot_id: str, node_id: str) -> bool:
        """Whether the robot is standing where ``node_id`` can be manipulated."""
        target = self.station(node_id)
        if self.graph.node(target).kind == "room":
            return self.robot_room(robot_id) == target
        at = self.robot_at(robot_id)
        return at in self.graph and self.station(at) == target

    def visible_in_room(self, room_id: str) -> list[str]:
        g = self.graph
        return [n for n in g.descendants(room_id)
                if g.node(n).visibility != "removed" and not self.hidden(n)]

    # ---------------------------------------------------------------- effects

    def move_subtree(self, node_id: str, position) -> list[str]:
        touched = [node_id] + self.graph.descendants(node_id)
        for n in touched:
            self.graph.upsert_node(replace(self.graph.node(n), position=position))
        return touched

    def observation(self, robot_id: str, time: float) -> Observation:
        """What the robot sees from its current room, parents before children."""
        g = self.graph
        room = self.robot_room(robot_id)
        seen = []
        for n in sorted(self.visible_in_room(room), key=lambda n: (len(g.ancestors(n)), n)):
            edge = g.parent_edge(n)
            seen.append(ObservedNode(g.node(n), edge.src, edge.relation))
        return Observation(robot_id, room, tuple(seen), (), time)


def robot_node(profile: RobotProfile, at: str, position) -> SceneNode:
    return SceneNode(profile.robot_id, "object", profile.robot_id, position,
                     frozenset({"robot"}),
                     {"robot": True, "at": at, "embodiment": profile.embodiment})


def divergent_nodes(world: SceneGraph, memory: SceneGraph) -> list[str]:
    """Ids whose memory copy disagrees with the world, field by field.

    World nodes that memory has never seen are not divergent; visibility and
    observation time are observer-relative and not compared.
    """
    out = []
    wnodes = world.nodes
    for nid, mnode in sorted(memory.nodes.items()):
        wnode = wnodes.get(nid)
        if wnode is None:
            out.append(nid)
            continue
        if (mnode.kind, mnode.label, mnode.position, mnode.affordances, mnode.attributes) != \
                (wnode.kind, wnode.label, wnode.position, wnode.affordances, wnode.attributes):
            out.append(nid)
            continue
        we, me = world.parent_edge(nid), memory.parent_edge(nid)
        if (we and (we.src, we.relation)) != (me and (me.src, me.relation)):
            out.append(nid)
    return out
