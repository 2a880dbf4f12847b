"""Deterministic 2D lane-keeping simulator with a multimodal PPO learner."""

__version__ = "0.1.0"

# px -> m conversion used by the reward constants and the lateral metrics
PX_TO_M = 5.0 / 235.0
LANE_WIDTH_REF_M = 5.0
