"""Experiment configuration: one JSON file plus command-line overrides.

Constraints are written relative to the anchor trajectory (a demonstration
for DMP, the reference mean for KMP) so a scenario transfers between letters:
each point sits at a fraction ``at`` of the duration, at the anchor position
scaled by ``scale`` about the anchor centroid and then shifted by ``offset``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

METHODS = ("dmp", "kmp")
OPTIMIZERS = ("gd", "bo")
METRICS = ("latent", "mse", "mle")

# Named starting points (log10 k_h, log10 lambda).  "adversarial" is the
# over-smoothed, over-regularized corner of the box, where the latent cost
# has a local minimum that traps gradient descent.
INIT_PRESETS = {
    "dmp": {"good": (4.0, -4.0), "adversarial": (-2.0, 2.0)},
    "kmp": {"good": (1.5, -1.0), "adversarial": (-2.0, 2.0)},
}

SCENARIOS = {
    "dmp-shift": {
        "scale": 1.0,
        "points": [{"at": 0.0, "offset": [1.0, 0.5]}, {"at": 1.0, "offset": [1.5, -0.5]}],
    },
    "dmp-enlarge": {
        "scale": 1.4,
        "points": [{"at": 0.0, "offset": [2.0, 1.0]}, {"at": 1.0, "offset": [2.0, 1.0]}],
    },
    "kmp-via": {
        "scale": 1.0,
        "points": [
            {"at": 0.0, "offset": [0.5, -0.4]},
            {"at": 0.5, "offset": [0.6, 0.3]},
            {"at": 1.0, "offset": [-0.4, 0.5]},
        ],
    },
}

DEFAULT_FAILURE_CASES = (
    {"method": "dmp", "letter": "A", "metric": "mse", "scenario": "dmp-enlarge"},
    {"method": "kmp", "letter": "G", "metric": "mle", "scenario": "kmp-via"},
)


@dataclass
class ExperimentConfig:
    method: str = "dmp"
    optimizer: str = "bo"
    metric: str = "latent"
    letter: str = "A"
    scenario: str | None = None
    constraints: dict | None = None
    init: str | list[float] = "adversarial"
    seeds: list[int] = field(default_factory=lambda: [0])
    bo_budget: int = 100
    gd_steps: int = 30
    gd_learning_rate: float = 10.0
    grid_size: int = 20
    failure_cases: list[dict] | None = None
    # corpus
    letters: list[str] = field(default_factory=lambda: ["A", "G", "L", "N", "S", "Z"])
    demos_per_letter: int = 5
    corpus_seed: int = 0
    demos_dir: str | None = None
    demo_index: int = 0
    n_triplets: int = 3026
    # encoder training
    dataset: str | None = None
    preset: str = "desk"
    learning_rate: float | None = None
    batch_size: int | None = None
    epochs: int | None = None
    margin: float | None = None
    # artifacts
    encoder: str | None = None
    out: str = "runs"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if min(self.bo_budget, self.gd_steps, self.grid_size, self.n_triplets, self.demos_per_letter) <= 0:
            raise ValueError("budgets and sizes must be positive")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.scenario is not None and self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; known: {sorted(SCENARIOS)}")
        if isinstance(self.init, str) and self.init not in INIT_PRESETS[self.method]:
            raise ValueError(f"unknown init preset {self.init!r}")
        for name in ("encoder", "dataset", "demos_dir"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise FileNotFoundError(f"{name} path does not exist: {value}")

    def constraint_spec(self) -> dict:
        if self.constraints is not None:
            return self.constraints
        name = self.scenario or ("dmp-shift" if self.method == "dmp" else "kmp-via")
        return SCENARIOS[name]

    def init_theta(self, which: str | None = None) -> tuple[float, float]:
        init = self.init if which is None else which
        if isinstance(init, str):
            return INIT_PRESETS[self.method][init]
        return (float(init[0]), float(init[1]))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def load_config(path=None, **overrides) -> ExperimentConfig:
    data = {}
    if path is not None:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)
