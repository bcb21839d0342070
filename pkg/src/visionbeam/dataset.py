"""Dataset generation, on-disk layout and train/test splitting.

Layout of a dataset directory::

    manifest.json
    labels.csv                  index,beam_label,link_status
    images/NNNNN.ppm
    channels/NNNNN.mmw.bin
    channels/NNNNN.sub6.bin
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import formats
from .beamforming import Codebook, build_steering_codebook
from .channel import MMWAVE, SUB6, ChannelConfig
from .scene import (
    ABSENT,
    DEFAULT_GEOMETRY,
    LabeledSample,
    SceneGeometry,
    label_sample,
    sample_scene,
)

SCENARIOS = ("beam", "blockage")
NUM_BEAMS = 64

# 0.5 GHz bandwidth -> 2 ns sampling; 512 subcarriers of which the first 64 are kept
BEAM_MMW = ChannelConfig(64, 512, 256, 2e-9, 0.5, band=MMWAVE, subcarrier_limit=64)
BLOCKAGE_MMW = ChannelConfig(128, 512, 256, 2e-9, 0.5, band=MMWAVE, subcarrier_limit=64)
SUB6_CONFIG = ChannelConfig(4, 64, 16, 50e-9, 0.5, band=SUB6)


def default_configs(scenario: str) -> Tuple[ChannelConfig, ChannelConfig]:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    return (BEAM_MMW if scenario == "beam" else BLOCKAGE_MMW), SUB6_CONFIG


@dataclass
class DatasetManifest:
    sample_count: int
    scenario: str
    seed: int
    image_dims: Tuple[int, int, int]
    num_beams: int
    antenna_spacing: float
    mmw_config: ChannelConfig
    sub6_config: ChannelConfig
    split: Dict[str, float] = field(default_factory=lambda: {"train": 0.7, "test": 0.3})
    root: Optional[Path] = None

    def __post_init__(self):
        if abs(sum(self.split.values()) - 1.0) > 1e-12:
            raise ValueError("split fractions must sum to 1")

    def to_json(self) -> str:
        d = {
            "sample_count": self.sample_count,
            "scenario": self.scenario,
            "seed": self.seed,
            "image_dims": list(self.image_dims),
            "codebook": {"num_beams": self.num_beams, "antenna_spacing": self.antenna_spacing},
            "channels": {"mmw": self.mmw_config.to_dict(), "sub6": self.sub6_config.to_dict()},
            "split": self.split,
        }
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str, root: Optional[Path] = None) -> "DatasetManifest":
        d = json.loads(text)
        return cls(
            sample_count=d["sample_count"],
            scenario=d["scenario"],
            seed=d["seed"],
            image_dims=tuple(d["image_dims"]),
            num_beams=d["codebook"]["num_beams"],
            antenna_spacing=d["codebook"]["antenna_spacing"],
            mmw_config=ChannelConfig.from_dict(d["channels"]["mmw"]),
            sub6_config=ChannelConfig.from_dict(d["channels"]["sub6"]),
            split=d["split"],
            root=root,
        )

    def codebook(self) -> Codebook:
        return build_steering_codebook(self.mmw_config.num_antennas, self.num_beams, self.antenna_spacing)


def build_samples(
    scenario: str,
    count: int,
    seed: int,
    codebook: Optional[Codebook] = None,
    configs: Optional[Tuple[ChannelConfig, ChannelConfig]] = None,
    geom: SceneGeometry = DEFAULT_GEOMETRY,
) -> List[LabeledSample]:
    """Generate labelled samples in memory; sample ``i`` depends only on (seed, i)."""
    mmw, sub6 = configs or default_configs(scenario)
    codebook = codebook or build_steering_codebook(mmw.num_antennas, NUM_BEAMS, mmw.antenna_spacing)
    return [label_sample(sample_scene(scenario, seed, i, geom), codebook, mmw, sub6, geom) for i in range(count)]


def generate_dataset(scenario: str, count: int, seed: int, out_dir, num_beams: int = NUM_BEAMS) -> DatasetManifest:
    """Write ``count`` samples of ``scenario`` under ``out_dir``."""
    if count < 10:
        raise ValueError("a dataset needs at least 10 samples")
    mmw, sub6 = default_configs(scenario)
    codebook = build_steering_codebook(mmw.num_antennas, num_beams, mmw.antenna_spacing)
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "channels").mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        s = label_sample(sample_scene(scenario, seed, i), codebook, mmw, sub6)
        formats.write_ppm(root / "images" / f"{i:05d}.ppm", s.image)
        formats.write_channel(root / "channels" / f"{i:05d}.mmw.bin", s.mmw_channel)
        formats.write_channel(root / "channels" / f"{i:05d}.sub6.bin", s.sub6_channel)
        rows.append((i, "" if s.beam_label is None else s.beam_label, s.link_status))
    with open(root / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "beam_label", "link_status"])
        w.writerows(rows)
    manifest = DatasetManifest(
        count, scenario, seed, (DEFAULT_GEOMETRY.height, DEFAULT_GEOMETRY.width, 3),
        num_beams, mmw.antenna_spacing, mmw, sub6, root=root,
    )
    (root / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    manifest = DatasetManifest.from_json(path.read_text(), root=root)
    n_images = len(list((root / "images").glob("*.ppm")))
    if n_images != manifest.sample_count:
        raise ValueError(f"manifest lists {manifest.sample_count} samples but found {n_images} images")
    return manifest


def read_labels(root) -> Tuple[np.ndarray, np.ndarray]:
    """(beam_label, link_status) arrays; missing beam labels read as 0."""
    beams, statuses = [], []
    with open(Path(root) / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            beams.append(int(row["beam_label"]) if row["beam_label"] else 0)
            statuses.append(int(row["link_status"]))
    return np.array(beams, dtype=np.int64), np.array(statuses, dtype=np.int64)


def load_images(root, indices: Optional[Sequence[int]] = None) -> np.ndarray:
    root = Path(root)
    if indices is None:
        indices = range(load_manifest(root).sample_count)
    return np.stack([formats.read_ppm(root / "images" / f"{i:05d}.ppm") for i in indices])


def load_sample(root, index: int) -> LabeledSample:
    root = Path(root)
    beams, statuses = read_labels(root)
    status = int(statuses[index])
    return LabeledSample(
        formats.read_ppm(root / "images" / f"{index:05d}.ppm"),
        formats.read_channel(root / "channels" / f"{index:05d}.mmw.bin"),
        formats.read_channel(root / "channels" / f"{index:05d}.sub6.bin"),
        None if status == ABSENT else int(beams[index]),
        status,
    )


def split_indices(count: int, train_frac: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle of ``range(count)`` cut at ``round(train_frac * count)``."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie strictly between 0 and 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 3])))
    order = rng.permutation(count)
    cut = int(math.floor(train_frac * count + 0.5))
    return np.sort(order[:cut]), np.sort(order[cut:])


def split_dataset(manifest: DatasetManifest, train_frac: float, seed: int) -> Tuple[List[int], List[int]]:
    train, test = split_indices(manifest.sample_count, train_frac, seed)
    return train.tolist(), test.tolist()
