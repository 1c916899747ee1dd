"""
Citywide traffic volume inference from sparse monitored volumes, dense (taxi) trajectories, and incomplete
(camera) trajectories recovered with a built-in traffic simulator.

The pipeline runs in four steps:
1. Recover full trajectories from incomplete monitor observations with the simulator, tuning group speed limits with deep Q-learning.
2. Build one spatiotemporal graph per trajectory source.
3. Jointly embed the time-enhanced road segments of both graphs with skip-gram and negative sampling.
4. Propagate the observed volumes through masked pairwise similarities.
"""

__version__ = "0.1.0"
