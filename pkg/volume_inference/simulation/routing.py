"""
Fastest-path routing over segments.

The cost of a path is the time spent from entering its first segment until entering its last one, so the last
segment's own traversal time is not part of the cost. Ties on cost go to the path with fewer segments, then to
the lexicographically smallest list of segment ids.
"""
import heapq
from collections.abc import Callable

from volume_inference.errors import RoutingError
from volume_inference.network import RoadNetwork


def fastest_path(
    net: RoadNetwork, from_segment: int, to_segment: int, segment_time: Callable[[int], float]
) -> tuple[list[int], float]:
    """Dijkstra over the segment transition graph.

    Labels are (cost, hops, path) so ties resolve deterministically; `nx.dijkstra_path` keeps whichever
    equal-cost path it meets first, and that depends on the graph's insertion order.

    Args:
        net: The road network.
        from_segment: Segment the vehicle is on.
        to_segment: Segment the vehicle has to enter.
        segment_time: Expected traversal time of a segment, seconds.

    Returns:
        The path (both ends included) and its cost in seconds.
    """
    net.segment(from_segment)
    net.segment(to_segment)
    if from_segment == to_segment:
        return [from_segment], 0.0

    best: dict[int, tuple[float, int, tuple[int, ...]]] = {from_segment: (0.0, 0, (from_segment,))}
    heap = [(0.0, 0, (from_segment,))]
    times: dict[int, float] = {}

    while heap:
        cost, hops, path = heapq.heappop(heap)
        u = path[-1]
        if best.get(u) != (cost, hops, path):
            continue
        if u == to_segment:
            return list(path), cost
        if u not in times:
            times[u] = segment_time(u)
        for v in net.successors[u]:
            label = (cost + times[u], hops + 1, path + (v,))
            if v not in best or label < best[v]:
                best[v] = label
                heapq.heappush(heap, label)

    raise RoutingError(from_segment, to_segment)
