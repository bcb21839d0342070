"""Two-stage link-status prediction: visual user detection, then sub-6 energy.

A detected user is declared unblocked.  When the camera sees nobody, a
sub-6 channel carrying energy means the user is there but blocked;
otherwise the user is absent.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .beamforming import SignalModel, simulate_sub6_rx
from .channel import SUB6, FrequencyChannel, channel_energy
from .learning import ClassifierModel, forward, forward_logits, predict_class
from .scene import ABSENT, BLOCKED, UNBLOCKED, LabeledSample

log = logging.getLogger(__name__)

# detector head layout
PRESENT_CLASS, ABSENT_CLASS = 0, 1
PRESENT, ABSENT_USER = "present", "absent"

NUMERICAL_ZERO = 1e-12
STATUS_ORDER = (ABSENT, UNBLOCKED, BLOCKED)
STATUS_NAMES = {ABSENT: "absent", UNBLOCKED: "unblocked", BLOCKED: "blocked"}


def detection_target(link_status: int) -> int:
    """Detector class for a sample: only unblocked users are visible."""
    return PRESENT_CLASS if link_status == UNBLOCKED else ABSENT_CLASS


def noise_floor_threshold(num_antennas: int, noise_variance: float, factor: float = 10.0) -> float:
    """``factor`` times the per-subcarrier noise energy ``M * sigma^2``."""
    return factor * num_antennas * noise_variance


@dataclass
class BlockagePredictor:
    detector: ClassifierModel
    energy_threshold: float = NUMERICAL_ZERO

    def __post_init__(self):
        if self.detector.num_classes != 2:
            raise ValueError(f"detector head must have 2 classes, has {self.detector.num_classes}")
        if not self.energy_threshold > 0:
            raise ValueError("energy threshold must be > 0")


def detect_user(detector: ClassifierModel, image: np.ndarray) -> str:
    if detector.num_classes != 2:
        raise ValueError(f"detector head must have 2 classes, has {detector.num_classes}")
    return PRESENT if predict_class(forward(detector, image)) == PRESENT_CLASS else ABSENT_USER


def is_channel_active(channel: FrequencyChannel, threshold: float) -> bool:
    if channel.band != SUB6:
        raise ValueError(f"expected a sub-6 channel, got {channel.band}")
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    return channel_energy(channel) > threshold


def status_rule(user_detected: bool, sub6: FrequencyChannel, threshold: float) -> int:
    """The decision rule given the detector's verdict."""
    active = is_channel_active(sub6, threshold)
    if user_detected:
        if not active:
            log.warning("user detected but the sub-6 channel is silent")
        return UNBLOCKED
    return BLOCKED if active else ABSENT


def predict_link_status(pred: BlockagePredictor, image: np.ndarray, sub6: FrequencyChannel) -> int:
    detected = detect_user(pred.detector, image) == PRESENT
    return status_rule(detected, sub6, pred.energy_threshold)


def estimate_sub6_channel(channel: FrequencyChannel, sig: SignalModel) -> FrequencyChannel:
    """Least-squares estimate ``y_k / s`` from one noisy uplink pilot."""
    rx = simulate_sub6_rx(channel, sig)
    return FrequencyChannel(rx / sig.pilot_symbol, SUB6)


@dataclass
class StatusReport:
    accuracy: float
    confusion: np.ndarray  # rows: true status, cols: predicted; order STATUS_ORDER
    anomalies: int  # detected users with a silent channel

    def to_csv(self) -> str:
        return confusion_csv(self.confusion)


def confusion_matrix(true_status: Sequence[int], predicted: Sequence[int]) -> np.ndarray:
    pos = {s: i for i, s in enumerate(STATUS_ORDER)}
    mat = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(true_status, predicted):
        mat[pos[int(t)], pos[int(p)]] += 1
    return mat


def confusion_csv(mat: np.ndarray) -> str:
    out = io.StringIO()
    names = [STATUS_NAMES[s] for s in STATUS_ORDER]
    out.write("true\\predicted," + ",".join(names) + "\n")
    for name, row in zip(names, mat):
        out.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
    return out.getvalue()


def status_accuracy(
    pred: BlockagePredictor,
    samples: Sequence[LabeledSample],
    presence: Optional[Sequence[bool]] = None,
) -> StatusReport:
    """Accuracy and confusion matrix over labelled samples.

    ``presence`` substitutes per-sample detection verdicts for the
    detector (e.g. the ground-truth visibility bit).
    """
    if len(samples) == 0:
        raise ValueError("empty test set")
    if presence is None:
        logits = forward_logits(pred.detector, np.stack([s.image for s in samples]))
        presence = np.argmax(logits, axis=1) == PRESENT_CLASS
    predicted, anomalies = [], 0
    for s, seen in zip(samples, presence):
        active = is_channel_active(s.sub6_channel, pred.energy_threshold)
        anomalies += bool(seen) and not active
        predicted.append(UNBLOCKED if seen else (BLOCKED if active else ABSENT))
    truth = [s.link_status for s in samples]
    mat = confusion_matrix(truth, predicted)
    return StatusReport(float(np.trace(mat)) / len(samples), mat, anomalies)
