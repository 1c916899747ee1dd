import pytest

from tests.conftest import line_network, tiny_gen_config
from volume_inference.errors import UnknownSegmentError
from volume_inference.network import RoadNetwork, RoadSegment, adjacent, capacity, validate_network
from volume_inference.scenario import build_grid_network


def test_line_network_is_valid(line_net):
    assert validate_network(line_net) == []


def test_grid_network_is_valid_and_forbids_u_turns():
    net = build_grid_network(tiny_gen_config())
    # 2 x 3 grid: 7 streets, 2 directions each
    assert net.m == 14
    assert validate_network(net) == []
    for a, b in net.turn_restrictions:
        assert b not in net.successors[a]


def test_successors_skip_restricted_turns(line_net):
    # Forward segment 0 ends at node 1, where segments 1 (forward) and 3 (its own U-turn) start
    assert line_net.successors[0] == (1,)
    assert adjacent(line_net, 0, 1)
    assert not adjacent(line_net, 0, 3)
    assert adjacent(line_net, 2, 2)
    assert not adjacent(line_net, 1, 0)


def test_adjacent_rejects_unknown_segments(line_net):
    with pytest.raises(UnknownSegmentError):
        adjacent(line_net, 0, 99)


def _broken(net: RoadNetwork, **changes) -> RoadNetwork:
    segments = list(net.segments)
    segments[0] = segments[0].model_copy(update=changes)
    return net.model_copy(update={"segments": segments})


@pytest.mark.parametrize(
    "changes, kind",
    [
        ({"to_node": 0}, "self-loop"),
        ({"length": 150.0}, "length mismatch"),
        ({"length": 0.0}, "non-positive length"),
        ({"speed_limit": 45.0}, "speed limit"),
        ({"to_node": 42}, "dangling endpoint"),
        ({"monitored": False}, "monitor flag"),
    ],
)
def test_validate_network_names_each_violation(line_net, changes, kind):
    kinds = {v.kind for v in validate_network(_broken(line_net, **changes))}
    assert kind in kinds


def test_every_segment_monitored_is_a_violation():
    net = line_network(k=1, monitored=(0, 1))
    assert "all monitored" in {v.kind for v in validate_network(net)}


def test_connections_must_join_meeting_segments(line_net):
    net = line_net.model_copy(update={"connections": [(0, 2)]})
    assert "dangling adjacency" in {v.kind for v in validate_network(net)}


def test_capacity_scales_with_lanes():
    seg = RoadSegment(id=0, from_node=0, to_node=1, length=75.0, lanes=2, speed_limit=10.0)
    assert capacity(seg, min_gap=7.5) == 20.0
