"""
Checkpoint files: parameters, the fitted time prior and the resolved config as JSON.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .config_parser import ConfigParser
from .dataset import Dataset
from .environment import TimePrior
from .errors import CheckpointError, ShapeError
from .models import RunConfig
from .policy import MixturePolicy

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """A loaded checkpoint."""
    config: RunConfig
    parameters: dict[str, np.ndarray]
    time_prior: TimePrior
    info: dict[str, Any] = field(default_factory=dict)

    @property
    def num_entity_rows(self) -> int:
        return self.parameters["embedding.entity"].shape[0]

    def restore_policy(self, ds: Dataset) -> MixturePolicy:
        """Rebuild the policy for ``ds`` and load the stored weights into it."""
        policy = MixturePolicy.build(self.config, ds, num_entity_rows=self.num_entity_rows)
        try:
            policy.params.load_state_dict(self.parameters)
        except (KeyError, ShapeError) as exc:
            raise CheckpointError(f"checkpoint does not match the configured model: {exc}") from exc
        return policy


def save_checkpoint(path: str | Path, policy: MixturePolicy, prior: TimePrior,
                    info: dict[str, Any] | None = None) -> None:
    """Save parameters, time prior and config."""
    save_data = {
        "format_version": FORMAT_VERSION,
        "config": policy.config.to_dict(),
        "time_prior": prior.to_dict(),
        "info": info or {},
        "parameters": {
            name: {"shape": list(tensor.shape), "values": tensor.data.reshape(-1).tolist()}
            for name, tensor in policy.params.items()
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(save_data, f)
    logger.info("checkpoint saved to %s", path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Load a checkpoint saved by ``save_checkpoint``."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            save_data = json.load(f)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc

    version = save_data.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r} in {path}")

    try:
        parameters = {
            name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in save_data["parameters"].items()
        }
        prior = TimePrior.from_dict(save_data["time_prior"])
        config = ConfigParser().parse_run_config(save_data["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} is incomplete: {exc}") from exc
    return Checkpoint(config, parameters, prior, save_data.get("info", {}))
