"""
Repository backed by a JSON-lines file, one record per line.

Appends are cheap; update and delete rewrite the file through a temporary
sibling and an atomic rename. The pk is stored in the line under "pk".
"""

import json
import os
from pathlib import Path
from typing import Any, Callable, Generic

from predmap.errors import ArtifactError
from predmap.repository.abstract_repository import AbstractRepository, T, Where, matches


class JsonLinesRepository(AbstractRepository[T], Generic[T]):
    """
    JSON-lines repository.
    path - backing file, created on first write
    encode - record -> JSON-ready dict
    decode - JSON dict -> record
    """

    def __init__(self, path: str | Path,
                 encode: Callable[[T], dict[str, Any]],
                 decode: Callable[[dict[str, Any]], T]) -> None:
        self.path = Path(path)
        self._encode = encode
        self._decode = decode
        self._records: dict[int, T] = {}
        if self.path.exists():
            self._load()
        self._next_pk = max(self._records, default=0) + 1

    def _load(self) -> None:
        try:
            with open(self.path, encoding='utf-8') as f:
                for lineno, line in enumerate(f, start=1):
                    if not line.strip():
                        continue
                    try:
                        obj = self._decode(json.loads(line))
                    except (ValueError, KeyError, TypeError) as exc:
                        raise ArtifactError(self.path, f'bad record on line {lineno}: {exc}') \
                            from exc
                    self._records[obj.pk] = obj
        except OSError as exc:
            raise ArtifactError(self.path, exc.strerror or 'unreadable') from exc

    def _line(self, obj: T) -> str:
        data = self._encode(obj)
        data['pk'] = obj.pk
        return json.dumps(data, sort_keys=False) + '\n'

    def _rewrite(self) -> None:
        tmp = self.path.with_name(self.path.name + '.tmp')
        try:
            with open(tmp, 'w', encoding='utf-8') as f:
                f.writelines(self._line(obj) for obj in self._records.values())
            os.replace(tmp, self.path)
        except OSError as exc:
            raise ArtifactError(self.path, exc.strerror or 'unwritable') from exc

    def add(self, obj: T) -> int:
        if getattr(obj, 'pk', None) != 0:
            raise ValueError(f'trying to add object {obj} with filled `pk` attribute')
        obj.pk = self._next_pk
        self._next_pk += 1
        self._records[obj.pk] = obj
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, 'a', encoding='utf-8') as f:
                f.write(self._line(obj))
        except OSError as exc:
            raise ArtifactError(self.path, exc.strerror or 'unwritable') from exc
        return obj.pk

    def get(self, pk: int) -> T | None:
        return self._records.get(pk)

    def get_all(self, where: Where | None = None) -> list[T]:
        return [obj for obj in self._records.values() if matches(obj, where)]

    def update(self, obj: T) -> None:
        if obj.pk not in self._records:
            raise ValueError(f'attempt to update unknown record pk={obj.pk}')
        self._records[obj.pk] = obj
        self._rewrite()

    def delete(self, pk: int) -> None:
        self._records.pop(pk)
        self._rewrite()

    def delete_where(self, where: Where) -> int:
        doomed = [pk for pk, obj in self._records.items() if matches(obj, where)]
        for pk in doomed:
            self._records.pop(pk)
        if doomed:
            self._rewrite()
        return len(doomed)
