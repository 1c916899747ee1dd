"""
Road networks: intersections, directed road segments, and which segment can follow which.

Segments are the atomic spatial unit. Their ids double as row indices into every volume matrix, so a network's
segment ids must be exactly 0..m-1 in list order (`validate_network` checks this).
"""
import math
from functools import cached_property
from typing import Literal

import networkx as nx
import numpy as np
from pydantic import BaseModel, Field

from volume_inference.config import SPEED_MAX, SPEED_MIN
from volume_inference.errors import UnknownSegmentError

RoadClass = Literal["major", "secondary"]
ROAD_CLASSES: tuple[RoadClass, ...] = ("major", "secondary")

# Allowed relative mismatch between a segment's length and the distance between its end nodes
LENGTH_TOLERANCE = 0.10


#################################
# Types
#################################

class Node(BaseModel):
    """An intersection."""
    id: int = Field(..., description="Unique node id")
    x: float = Field(..., description="Easting, meters")
    y: float = Field(..., description="Northing, meters")


class RoadSegment(BaseModel):
    """A directed stretch of road between two intersections."""
    id: int = Field(..., description="Segment id, equal to its row index")
    from_node: int = Field(..., description="Node the segment leaves")
    to_node: int = Field(..., description="Node the segment enters")
    length: float = Field(..., description="Length in meters")
    lanes: int = Field(1, description="Number of lanes")
    road_class: RoadClass = Field("secondary", description="Major roads have more lanes and higher limits")
    speed_limit: float = Field(..., description="Segment speed limit, m/s")
    monitored: bool = Field(False, description="Whether a sensor sits on the segment")


class RoadNetwork(BaseModel):
    """Nodes, segments, forbidden turns, and sensor locations."""
    nodes: list[Node] = Field(default_factory=list)
    segments: list[RoadSegment] = Field(default_factory=list)
    turn_restrictions: set[tuple[int, int]] = Field(
        default_factory=set, description="Forbidden (from segment, to segment) transitions"
    )
    monitor_points: set[int] = Field(default_factory=set, description="Ids of segments with a sensor")
    connections: list[tuple[int, int]] | None = Field(
        None, description="Explicit allowed transitions. None derives them from shared nodes minus restrictions"
    )

    @property
    def m(self) -> int:
        return len(self.segments)

    @cached_property
    def node_by_id(self) -> dict[int, Node]:
        return {node.id: node for node in self.nodes}

    @cached_property
    def successors(self) -> dict[int, tuple[int, ...]]:
        """Segments a vehicle may enter next, per segment, sorted by id."""
        out: dict[int, list[int]] = {seg.id: [] for seg in self.segments}
        if self.connections is not None:
            for a, b in self.connections:
                if a in out and a != b:
                    out[a].append(b)
        else:
            leaving: dict[int, list[int]] = {}
            for seg in self.segments:
                leaving.setdefault(seg.from_node, []).append(seg.id)
            for seg in self.segments:
                for nxt in leaving.get(seg.to_node, []):
                    if nxt != seg.id and (seg.id, nxt) not in self.turn_restrictions:
                        out[seg.id].append(nxt)
        return {seg_id: tuple(sorted(set(nxts))) for seg_id, nxts in out.items()}

    @cached_property
    def transition_pairs(self) -> frozenset[tuple[int, int]]:
        return frozenset((a, b) for a, nxts in self.successors.items() for b in nxts)

    @cached_property
    def segment_graph(self) -> nx.DiGraph:
        """Directed graph whose nodes are segments and whose edges are allowed transitions."""
        graph = nx.DiGraph()
        graph.add_nodes_from(seg.id for seg in self.segments)
        graph.add_edges_from(self.transition_pairs)
        return graph

    def segment(self, segment_id: int) -> RoadSegment:
        if not 0 <= segment_id < len(self.segments) or self.segments[segment_id].id != segment_id:
            raise UnknownSegmentError(f"Segment {segment_id} does not exist.")
        return self.segments[segment_id]

    def centroid(self, segment_id: int) -> tuple[float, float]:
        seg = self.segment(segment_id)
        a, b = self.node_by_id[seg.from_node], self.node_by_id[seg.to_node]
        return ((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)

    def centroids(self) -> np.ndarray:
        return np.array([self.centroid(seg.id) for seg in self.segments], dtype=float).reshape(-1, 2)

    def is_monitored(self, segment_id: int) -> bool:
        return segment_id in self.monitor_points


class Violation(BaseModel):
    """One broken network invariant."""
    kind: str = Field(..., description="Short name of the broken rule, e.g. 'self-loop'")
    segment_id: int | None = Field(None, description="Offending segment, if any")
    node_id: int | None = Field(None, description="Offending node, if any")
    message: str = Field(..., description="Human readable description")


#################################
# Operations
#################################

def validate_network(net: RoadNetwork) -> list[Violation]:
    """Check every road network invariant.

    Args:
        net: The network to check.

    Returns:
        One violation per broken rule. An empty list means the network is well formed.
    """
    report: list[Violation] = []

    seen_nodes: set[int] = set()
    for node in net.nodes:
        if node.id in seen_nodes:
            report.append(Violation(kind="duplicate node", node_id=node.id, message=f"Node id {node.id} is used twice."))
        seen_nodes.add(node.id)
        if not (math.isfinite(node.x) and math.isfinite(node.y)):
            report.append(Violation(kind="non-finite position", node_id=node.id, message=f"Node {node.id} has non-finite coordinates."))

    nodes = net.node_by_id
    for position, seg in enumerate(net.segments):
        if seg.id != position:
            report.append(Violation(
                kind="segment id order", segment_id=seg.id,
                message=f"Segment {seg.id} sits at position {position}; ids must equal positions.",
            ))
        if seg.from_node == seg.to_node:
            report.append(Violation(kind="self-loop", segment_id=seg.id, message=f"Segment {seg.id} starts and ends at node {seg.from_node}."))
        missing = [n for n in (seg.from_node, seg.to_node) if n not in nodes]
        for n in missing:
            report.append(Violation(kind="dangling endpoint", segment_id=seg.id, node_id=n, message=f"Segment {seg.id} references unknown node {n}."))
        if not seg.length > 0:
            report.append(Violation(kind="non-positive length", segment_id=seg.id, message=f"Segment {seg.id} has length {seg.length}."))
        elif not missing and seg.from_node != seg.to_node:
            a, b = nodes[seg.from_node], nodes[seg.to_node]
            distance = math.hypot(b.x - a.x, b.y - a.y)
            if abs(seg.length - distance) > LENGTH_TOLERANCE * distance:
                report.append(Violation(
                    kind="length mismatch", segment_id=seg.id,
                    message=f"Segment {seg.id} has length {seg.length} but its nodes are {distance:.3f} m apart.",
                ))
        if seg.lanes < 1:
            report.append(Violation(kind="lanes", segment_id=seg.id, message=f"Segment {seg.id} has {seg.lanes} lanes."))
        if not SPEED_MIN <= seg.speed_limit <= SPEED_MAX:
            report.append(Violation(
                kind="speed limit", segment_id=seg.id,
                message=f"Segment {seg.id} limit {seg.speed_limit} is outside [{SPEED_MIN}, {SPEED_MAX}].",
            ))
        if seg.monitored != (seg.id in net.monitor_points):
            report.append(Violation(kind="monitor flag", segment_id=seg.id, message=f"Segment {seg.id} monitor flag disagrees with monitor_points."))

    ids = {seg.id for seg in net.segments}
    by_id = {seg.id: seg for seg in net.segments}
    for seg_id in sorted(net.monitor_points - ids):
        report.append(Violation(kind="unknown monitor point", segment_id=seg_id, message=f"Monitor point {seg_id} is not a segment."))
    if net.segments and len(net.monitor_points & ids) >= len(ids):
        report.append(Violation(kind="all monitored", message="Every segment is monitored; at least one must be unmonitored."))

    for a, b in sorted(net.turn_restrictions):
        for seg_id in (a, b):
            if seg_id not in ids:
                report.append(Violation(kind="unknown restriction segment", segment_id=seg_id, message=f"Turn restriction ({a},{b}) names unknown segment {seg_id}."))

    for a, b in net.connections or []:
        if a not in ids or b not in ids:
            report.append(Violation(kind="dangling adjacency", segment_id=a if a not in ids else b, message=f"Connection ({a},{b}) names an unknown segment."))
        elif by_id[a].to_node != by_id[b].from_node:
            report.append(Violation(kind="dangling adjacency", segment_id=a, message=f"Connection ({a},{b}) joins segments that do not meet."))
        elif (a, b) in net.turn_restrictions:
            report.append(Violation(kind="restricted adjacency", segment_id=a, message=f"Connection ({a},{b}) is also a turn restriction."))

    return report


def adjacent(net: RoadNetwork, i: int, j: int) -> bool:
    """Whether segment j can directly follow segment i. Every segment is adjacent to itself.

    Args:
        net: The road network.
        i: Upstream segment id.
        j: Downstream segment id.

    Returns:
        True if i == j or the transition i -> j is allowed.
    """
    net.segment(i)
    net.segment(j)
    return i == j or (i, j) in net.transition_pairs


def capacity(seg: RoadSegment, min_gap: float) -> float:
    """Vehicles the segment holds at jam density; lanes multiply it."""
    return max(1.0, seg.lanes * seg.length / min_gap)
