"""
Abstract repository of run records.

A repository stores records and assigns each one a unique identifier in its pk
(primary key) attribute. Records handed to a repository must carry a pk field
defaulting to 0 and use it for nothing else.
"""

from abc import ABC, abstractmethod
from typing import Any, Callable, Generic, Protocol, TypeVar


class Model(Protocol):  # pylint: disable=too-few-public-methods
    """
    Record must carry a pk attribute
    """
    pk: int


T = TypeVar('T', bound=Model)

Where = dict[str, Any | Callable[[Any], bool]]


def matches(obj: Any, where: Where | None) -> bool:
    """
    Whether obj satisfies every condition of where.
    A condition value is either compared for equality or, when callable,
    used as a predicate on the attribute value.
    """
    if where is None:
        return True
    for attr, cond in where.items():
        value = getattr(obj, attr)
        if callable(cond):
            if not cond(value):
                return False
        elif value != cond:
            return False
    return True


class AbstractRepository(ABC, Generic[T]):
    """
    Abstract repository.
    Abstract methods:
    add
    get
    get_all
    update
    delete
    """

    @abstractmethod
    def add(self, obj: T) -> int:
        """
        Store the record, return its id and write the id into obj.pk.
        """

    @abstractmethod
    def get(self, pk: int) -> T | None:
        """ Record by id, None if absent """

    @abstractmethod
    def get_all(self, where: Where | None = None) -> list[T]:
        """
        All records satisfying where, in insertion order.
        where - {'field': value or predicate}; None returns everything
        """

    @abstractmethod
    def update(self, obj: T) -> None:
        """ Overwrite the stored record with obj. obj.pk must be set. """

    @abstractmethod
    def delete(self, pk: int) -> None:
        """ Remove the record """

    def delete_where(self, where: Where) -> int:
        """ Remove every record satisfying where, return how many went """
        doomed = self.get_all(where)
        for obj in doomed:
            self.delete(obj.pk)
        return len(doomed)
