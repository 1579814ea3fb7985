"""Single-view occupancy reconstruction of deformed kidney phantoms."""
from .errors import TumorOccError
from .geometry import Scene, TriangleMesh, hausdorff, label_points
from .occnet import NetworkConfig, OccupancyNetwork, TrainConfig, infer_occupancy, predict, train
from .resect import PlanConfig, make_plan

__version__ = "0.1.0"

__all__ = [
    "NetworkConfig", "OccupancyNetwork", "PlanConfig", "Scene", "TrainConfig", "TriangleMesh",
    "TumorOccError", "hausdorff", "infer_occupancy", "label_points", "make_plan", "predict", "train",
]
