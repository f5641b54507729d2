"""Walker-mounted 3D gait pose estimation: geometry, lifting, filtering and evaluation."""
from .filter import OneEuroConfig, OneEuroSmoother
from .geometry import CameraIntrinsics, CameraRig, RigidTransform, default_rig, load_rig
from .lifter import Lifter, LiftingNetwork, ProjectionResidualLifter, load_model
from .metrics import evaluate, mpjpe, pa_mpjpe, pck
from .skeleton import Skeleton2D, Skeleton3D, default_topology

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "CameraRig", "Lifter", "LiftingNetwork", "OneEuroConfig", "OneEuroSmoother",
    "ProjectionResidualLifter", "RigidTransform", "Skeleton2D", "Skeleton3D", "default_rig", "default_topology",
    "evaluate", "load_model", "load_rig", "mpjpe", "pa_mpjpe", "pck",
]
