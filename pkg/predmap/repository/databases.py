"""
Run registry database structure (pony ORM entities)
"""
from typing import Any

import pony.orm as pny  # type: ignore


db = pny.Database()


class DatabaseHelper():
    """ Static helpers mapping record classes onto registry tables """
    @staticmethod
    def get_table_by_name(name: str) -> Any:
        """ Entity class for a record class name """
        tables = {'StepMetrics': StepMetricsRow, 'RunManifest': RunManifestRow}
        try:
            return tables[name]
        except KeyError:
            raise ValueError(f'no registry table for records of type {name!r}; '
                             f'known: {sorted(tables)}') from None


class StepMetricsRow(db.Entity):  # type: ignore
    """ ORM for registry table of training metrics """
    pk = pny.PrimaryKey(int, auto=True)
    step = pny.Required(int)
    l_pred = pny.Required(float)
    l_align = pny.Required(float)
    loss = pny.Required(float)
    gate_value = pny.Required(float)
    grad_norm = pny.Required(float)
    lr = pny.Required(float)

    def get_data(self) -> dict[str, Any]:
        """ Get data from entity """
        return {
            'pk': self.pk,
            'step': self.step,
            'l_pred': self.l_pred,
            'l_align': self.l_align,
            'loss': self.loss,
            'gate_value': self.gate_value,
            'grad_norm': self.grad_norm,
            'lr': self.lr,
        }


class RunManifestRow(db.Entity):  # type: ignore
    """ ORM for registry table of run manifests """
    pk = pny.PrimaryKey(int, auto=True)
    command = pny.Required(str, 40)
    config_path = pny.Optional(str)
    seed = pny.Required(int)
    version = pny.Required(str, 80)
    started = pny.Required(str, 40)
    finished = pny.Optional(str, 40)
    output_dir = pny.Optional(str)

    def get_data(self) -> dict[str, Any]:
        """ Get data from entity """
        return {
            'pk': self.pk,
            'command': self.command,
            'config_path': self.config_path,
            'seed': self.seed,
            'version': self.version,
            'started': self.started,
            'finished': self.finished,
            'output_dir': self.output_dir,
        }
