"""Tools package for the link simulator."""

from tools.rate_model import predict, net_rate, info_ab, eve_info, sweep_lengths
from tools.photonics import GatedDetector, make_detectors, routing_probs
from tools.protocol import sift, estimate_qber, security_check
from tools.schedule import TrainSchedule, build_schedule
from tools.calibration import calibrate_line_length, measure_visibility

__all__ = [
    "predict",
    "net_rate",
    "info_ab",
    "eve_info",
    "sweep_lengths",
    "GatedDetector",
    "make_detectors",
    "routing_probs",
    "sift",
    "estimate_qber",
    "security_check",
    "TrainSchedule",
    "build_schedule",
    "calibrate_line_length",
    "measure_visibility",
]
