"""
Repository backed by the sqlite3 run registry (pony ORM)
"""

import logging
from inspect import get_annotations
from pathlib import Path
from typing import Any

from pony import orm  # type: ignore

from predmap.repository.abstract_repository import AbstractRepository, T, Where, matches
import predmap.repository.databases as registry_dbs
from predmap.utils import py2sqlite_type_converter


logger = logging.getLogger(__name__)

_bound_target: str | None = None


class SQLiteRepository(AbstractRepository[T]):
    """
    SQLite3 repository of one record type.
    data_cls - record dataclass (StepMetrics or RunManifest)
    """
    def __init__(self, data_cls: type) -> None:
        self.table_cls = registry_dbs.DatabaseHelper.get_table_by_name(data_cls.__name__)
        self.data_cls = data_cls
        self.data_cls_fields = get_annotations(self.data_cls, eval_str=True)
        self.data_cls_fields.pop('pk')

    @staticmethod
    def bind_database(db_filename: str | Path = ':memory:') -> None:
        """
        Bind the registry to a database file (created if missing).
        The registry binds once per process; later calls with the same target
        are no-ops and a different target raises.
        """
        global _bound_target  # pylint: disable=global-statement
        target = db_filename if str(db_filename) == ':memory:' \
            else str(Path(db_filename).resolve())
        if _bound_target is not None:
            if _bound_target != target:
                raise RuntimeError(f'run registry already bound to {_bound_target}, '
                                   f'cannot rebind to {target}')
            return
        registry_dbs.db.bind(provider='sqlite', filename=target, create_db=True)
        registry_dbs.db.generate_mapping(create_tables=True)
        _bound_target = target
        logger.info('run registry bound to %s', target)

    def _to_record(self, db_obj: Any) -> T:
        return self.data_cls(**db_obj.get_data())  # type: ignore[no-any-return]

    @orm.db_session
    def add(self, obj: T) -> int:
        if getattr(obj, 'pk', None) != 0:
            raise ValueError(f'trying to add object {obj} with filled `pk` attribute')

        kwargs = {
            f: py2sqlite_type_converter(getattr(obj, f))
            for f in self.data_cls_fields.keys()
        }
        db_obj = self.table_cls(**kwargs)
        orm.commit()

        obj.pk = db_obj.pk
        return obj.pk

    @orm.db_session
    def get(self, pk: int) -> T | None:
        try:
            return self._to_record(self.table_cls[pk])
        except orm.ObjectNotFound:
            return None

    @orm.db_session
    def update(self, obj: T) -> None:
        if obj.pk == 0:
            raise ValueError('attempt to update object with unknown primary key')
        try:
            db_obj = self.table_cls[obj.pk]
        except orm.ObjectNotFound:
            raise ValueError(f'attempt to update unknown record pk={obj.pk}') from None

        for field in self.data_cls_fields.keys():
            setattr(db_obj, field, py2sqlite_type_converter(getattr(obj, field)))

    @orm.db_session
    def get_all(self, where: Where | None = None) -> list[T]:
        db_objs = orm.select(p for p in self.table_cls).order_by(lambda p: p.pk)[:]
        records = [self._to_record(db_obj) for db_obj in db_objs]
        return [rec for rec in records if matches(rec, where)]

    @orm.db_session
    def delete(self, pk: int) -> None:
        try:
            self.table_cls[pk].delete()
        except orm.ObjectNotFound:
            pass
