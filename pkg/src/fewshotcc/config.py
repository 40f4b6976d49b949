"""Run configuration: documented keys, file parsing, precedence.

Config files are plain text, one dotted key per line::

    # comment
    train.variant = lslr
    train.iterations = 2000

Precedence is defaults < file < command-line overrides. Unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .meta import TrainConfig
from .synthcam import SynthConfig


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{raw!r} is not a boolean")


#: key -> (default, parser, help). The single source of truth for --help.
DEFAULTS = {
    "synth.cameras": (4, int, "number of synthetic cameras"),
    "synth.scenes_per_camera": (60, int, "scenes rendered per camera"),
    "synth.image_size": (64, int, "rendered scene side in pixels"),
    "synth.cct_min": (2500.0, float, "coolest illuminant temperature (K)"),
    "synth.cct_max": (9000.0, float, "warmest illuminant temperature (K)"),
    "synth.cct_mode": ("bimodal", str, "illuminant population: bimodal | loguniform"),
    "synth.warm_max": (3500.0, float, "top of the warm band in bimodal mode (K)"),
    "synth.cold_min": (6200.0, float, "bottom of the cold band in bimodal mode (K)"),
    "synth.css_jitter": (0.15, float, "camera sensitivity jitter in [0, 0.3]"),
    "synth.spd_jitter": (True, _parse_bool, "nudge illuminants off the Planckian locus"),
    "synth.noise_sigma": (0.005, float, "additive sensor noise (fraction of full scale)"),
    "synth.n_patches": (12, int, "reflectance patches per scene"),
    "synth.seed": (0, int, "master seed for dataset generation"),
    "tasks.m": (2, int, "CCT histogram bins per camera"),
    "tasks.min_task_size": (20, int, "minimum images per (camera, bin) task"),
    "tasks.global_edges": (False, _parse_bool, "share histogram edges across cameras"),
    "tasks.max_locus_distance": (0.05, float, "off-locus rejection radius in (x, y)"),
    "tasks.degenerate": ("error", str, "all-equal-CCT handling: error | single_bin"),
    "train.variant": ("lslr", str, "maml | metasgd | lslr | baseline"),
    "train.meta_batch_size": (4, int, "tasks per outer update"),
    "train.k_train": (10, int, "support images per episode"),
    "train.q_train": (10, int, "query images per episode"),
    "train.n_train": (5, int, "inner gradient steps during meta-training"),
    "train.beta": (0.001, float, "outer learning rate"),
    "train.beta_decay_rate": (0.96, float, "exponential beta decay factor"),
    "train.beta_decay_every": (0, int, "iterations between decays (0: iterations/25)"),
    "train.alpha_init": (0.001, float, "inner learning rate (initial value for learned variants)"),
    "train.iterations": (2000, int, "outer updates"),
    "train.meta_grad": ("exact", str, "meta-gradient mode: exact | first_order"),
    "train.seed": (0, int, "training seed"),
    "train.input_size": (16, int, "network input side in pixels"),
    "train.spec": ("desk", str, "architecture: desk | paper"),
    "train.held_out_camera": ("", str, "camera excluded from training (leave-one-out)"),
    "eval.k_test": (10, int, "support images per adaptation at test time"),
    "eval.n_test": (10, int, "inner steps at test time"),
    "eval.draws": (10, int, "independent support draws per test image"),
    "eval.seed": (0, int, "evaluation seed"),
    "eval.chunk_size": (32, int, "test images adapted per stacked batch"),
    "knn.k": (10, int, "task size for KNN-in-temperature tasks"),
    "workers": (1, int, "parallelism cap (1 = fully sequential)"),
}


def defaults_help() -> str:
    lines = ["configuration keys (defaults in brackets):"]
    for key, (default, _, help_text) in DEFAULTS.items():
        lines.append(f"  {key} = {default!r:<12} {help_text}")
    return "\n".join(lines)


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def section(self, prefix: str) -> dict:
        plen = len(prefix) + 1
        return {k[plen:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.section("train"))

    def synth_config(self, out_dir) -> SynthConfig:
        s = self.section("synth")
        return SynthConfig(
            out_dir=Path(out_dir),
            cameras=s["cameras"],
            scenes_per_camera=s["scenes_per_camera"],
            image_size=s["image_size"],
            cct_min=s["cct_min"],
            cct_max=s["cct_max"],
            cct_mode=s["cct_mode"],
            warm_max=s["warm_max"],
            cold_min=s["cold_min"],
            css_jitter=s["css_jitter"],
            spd_jitter=s["spd_jitter"],
            noise_sigma=s["noise_sigma"],
            n_patches=s["n_patches"],
            master_seed=s["seed"],
        )


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; returns raw string values by key."""
    raw = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        raw[key] = value.strip()
    return raw


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, file values, and override strings into typed values."""
    values = {key: default for key, (default, _, _) in DEFAULTS.items()}
    for source in (file_values or {}, overrides or {}):
        for key, raw in source.items():
            if key not in DEFAULTS:
                raise ValueError(f"unknown config key {key!r}")
            _, parser, _ = DEFAULTS[key]
            try:
                values[key] = parser(raw) if isinstance(raw, str) else raw
            except ValueError as exc:
                raise ValueError(f"config key {key}: {exc}") from exc
    return RunConfig(values=values)
