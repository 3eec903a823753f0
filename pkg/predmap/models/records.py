"""
Records kept in repositories: per-step training metrics and run manifests.

Both carry the pk attribute required by the repository protocol. Field metadata
'json' gives the key used in JSON-lines files when it differs from the field name.
"""

from dataclasses import dataclass, field, fields
from typing import Any, TypeVar


@dataclass(slots=True)
class StepMetrics:
    """
    Metrics of one optimizer update.
    step - 0-based index of the update
    l_pred, l_align, loss - prediction, alignment and total loss
    gate_value - tanh of the fusion gate scalar
    grad_norm - global norm of trainable gradients before clipping
    lr - learning rate used for the update
    """
    step: int
    l_pred: float = field(metadata={'json': 'L_pred'})
    l_align: float = field(metadata={'json': 'L_align'})
    loss: float = field(metadata={'json': 'L'})
    gate_value: float
    grad_norm: float
    lr: float
    pk: int = 0


@dataclass(slots=True)
class RunManifest:
    """
    Provenance of one artifact-producing command.
    command - subcommand name
    config_path - config file used ('' if none)
    seed - root seed
    version - git-describe-style version string
    started, finished - ISO timestamps
    output_dir - where the artifacts went
    """
    command: str
    config_path: str
    seed: int
    version: str
    started: str
    finished: str
    output_dir: str
    pk: int = 0


R = TypeVar('R', StepMetrics, RunManifest)


def record_to_json(record: StepMetrics | RunManifest) -> dict[str, Any]:
    """ Record as a JSON-ready dict keyed by json names """
    return {f.metadata.get('json', f.name): getattr(record, f.name)
            for f in fields(record)}


def record_from_json(data_cls: type[R], data: dict[str, Any]) -> R:
    """ Rebuild a record of data_cls from its JSON dict """
    kwargs = {f.name: data[f.metadata.get('json', f.name)]
              for f in fields(data_cls) if f.metadata.get('json', f.name) in data}
    return data_cls(**kwargs)
