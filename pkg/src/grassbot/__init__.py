"""Simulation of a camera-guided robot that collects garbage on a lawn."""

from .camera import CameraModel, GroundHomography, PolarLine, build_homography, hough_line
from .harness import EpisodeTrace, ExperimentReport, run_episode, run_experiment
from .localization import EkfState, Localizer, SensorNoise, ekf_predict, ekf_update_gps
from .navigation import Mode, NavState, coverage_waypoints, find_optimal_direction, navigation_step, return_heading
from .perception import ConfusionModel, ObjectBox, SegmentationFrame, classify, render_segmentation
from .scenario import ScenarioConfig, ScenarioError, load_scenario
from .tracker import tracking_command
from .world import OccupancyGrid, Pose2D, RobotState, World, WorldObject, step_kinematics

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "ConfusionModel", "EkfState", "EpisodeTrace", "ExperimentReport", "GroundHomography",
    "Localizer", "Mode", "NavState", "ObjectBox", "OccupancyGrid", "PolarLine", "Pose2D", "RobotState",
    "ScenarioConfig", "ScenarioError", "SegmentationFrame", "SensorNoise", "World", "WorldObject",
    "build_homography", "classify", "coverage_waypoints", "ekf_predict", "ekf_update_gps",
    "find_optimal_direction", "hough_line", "load_scenario", "navigation_step", "render_segmentation",
    "return_heading", "run_episode", "run_experiment", "step_kinematics", "tracking_command",
]
