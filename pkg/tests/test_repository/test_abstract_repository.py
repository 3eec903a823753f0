from predmap.repository.abstract_repository import AbstractRepository, matches

import pytest


def test_cannot_create_abstract_repository():
    with pytest.raises(TypeError):
        AbstractRepository()


def test_can_create_subclass():
    class Test(AbstractRepository):
        def add(self, obj): pass
        def get(self, pk): pass
        def get_all(self, where=None): pass
        def update(self, obj): pass
        def delete(self, pk): pass

    t = Test()
    assert isinstance(t, AbstractRepository)


def test_matches_values_and_predicates():
    class Rec:
        step = 5
        command = 'train'

    assert matches(Rec, None)
    assert matches(Rec, {'command': 'train'})
    assert not matches(Rec, {'command': 'evaluate'})
    assert matches(Rec, {'step': lambda s: s >= 5, 'command': 'train'})
    assert not matches(Rec, {'step': lambda s: s > 5})
