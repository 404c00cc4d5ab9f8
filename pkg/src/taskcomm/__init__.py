"""Grid-world multi-agent simulator with a learned uplink scheduler.

Subpackages roughly follow the runtime pipeline: gridworld (environment),
codec (observation encoding and fusion), wireless (uplink channel and
allocation policies), aoi (freshness accounting), nn/replay/learners
(training machinery), trainer/experiment/cli (orchestration).
"""

__version__ = "0.1.0"
