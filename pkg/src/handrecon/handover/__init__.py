"""Simulated human-to-robot handover: grasp planning, robot motion and the episode loop."""
from .grasps import Grasp, GraspSet, estimate_normals, filter_grasps, points_in_gripper_box, sample_grasps
from .pipeline import (
    PHASES,
    LearnedReconstructor,
    OracleReconstructor,
    PhaseError,
    PipelineConfig,
    PipelineState,
    SafetyViolation,
    World,
    reconstruction_iou,
    run_episode,
    select_and_execute,
    select_grasp,
    simulate_closure,
    step_perception,
    update_reconstruction,
)
from .robot import RobotConfig, pose_distance, step_toward
from .trace import read_trace, write_trace

__all__ = [
    "PHASES",
    "Grasp",
    "GraspSet",
    "LearnedReconstructor",
    "OracleReconstructor",
    "PhaseError",
    "PipelineConfig",
    "PipelineState",
    "RobotConfig",
    "SafetyViolation",
    "World",
    "estimate_normals",
    "filter_grasps",
    "points_in_gripper_box",
    "pose_distance",
    "read_trace",
    "reconstruction_iou",
    "run_episode",
    "sample_grasps",
    "select_and_execute",
    "select_grasp",
    "simulate_closure",
    "step_perception",
    "step_toward",
    "update_reconstruction",
    "write_trace",
]
