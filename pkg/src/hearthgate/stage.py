"""
Three-stage deployment gating: passive display first, curriculum second,
active controls last. Features only ever accumulate; stage transitions
are forward-only unless an admin override is given (kept for tests and
re-deployments).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .store import Store


class Feature(str, Enum):
    DISPLAY = "display"
    CURRICULUM = "curriculum"
    CONTROLS = "controls"


FEATURE_STAGE = {
    Feature.DISPLAY: 1,
    Feature.CURRICULUM: 2,
    Feature.CONTROLS: 3,
}

_META_KEY = "stage_config"


class StageGateError(Exception):
    """A feature was used below the stage that unlocks it."""

    def __init__(self, feature: Feature, current_stage: int):
        self.feature = feature
        self.current_stage = current_stage
        self.required_stage = FEATURE_STAGE[feature]
        super().__init__(
            f"{feature.value} is locked at stage {current_stage}; "
            f"it unlocks at stage {self.required_stage}"
        )


class StageTransitionError(Exception):
    """Backwards stage transition without an explicit override."""


@dataclass(frozen=True)
class StageConfig:
    stage: int
    stage_started_ms: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2, or 3, not {self.stage}")

    @property
    def features(self) -> frozenset[Feature]:
        return frozenset(f for f, s in FEATURE_STAGE.items() if self.stage >= s)

    def allows(self, feature: Feature) -> bool:
        return self.stage >= FEATURE_STAGE[feature]

    def require(self, feature: Feature) -> None:
        if not self.allows(feature):
            raise StageGateError(feature, self.stage)

    def feature_started_ms(self, feature: Feature) -> int:
        """When the stage unlocking this feature began (0 if locked)."""
        if not self.allows(feature):
            return 0
        return self.stage_started_ms.get(FEATURE_STAGE[feature], 0)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "stage_started_ms": {str(k): v for k, v in self.stage_started_ms.items()},
            "features": sorted(f.value for f in self.features),
        }


class StageManager:
    """Persisted stage state; transitions emit through the caller."""

    def __init__(self, store: Store, initial_stage: int = 1, now_ms: int = 0):
        self.store = store
        if store.get_meta(_META_KEY) is None:
            self._write(StageConfig(stage=1, stage_started_ms={1: now_ms}))
            if initial_stage != 1:
                self.set_stage(initial_stage, now_ms)

    def _write(self, config: StageConfig) -> None:
        self.store.set_meta(
            _META_KEY,
            json.dumps(
                {
                    "stage": config.stage,
                    "stage_started_ms": config.stage_started_ms,
                }
            ),
        )

    def get(self) -> StageConfig:
        raw = self.store.get_meta(_META_KEY)
        data = json.loads(raw)
        return StageConfig(
            stage=data["stage"],
            stage_started_ms={int(k): v for k, v in data["stage_started_ms"].items()},
        )

    def set_stage(self, stage: int, now_ms: int, override: bool = False) -> StageConfig:
        """
        Move to `stage`. Skipping forward is allowed (every skipped stage is
        stamped as starting now); moving backward needs `override`.
        """
        if stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2, or 3, not {stage}")
        current = self.get()
        if stage < current.stage and not override:
            raise StageTransitionError(
                f"stage transitions are forward-only ({current.stage} -> {stage}); "
                "pass the override flag to force"
            )
        started = dict(current.stage_started_ms)
        for s in range(min(current.stage, stage), stage + 1):
            started.setdefault(s, now_ms)
        started.setdefault(stage, now_ms)
        config = StageConfig(stage=stage, stage_started_ms=started)
        self._write(config)
        return config
