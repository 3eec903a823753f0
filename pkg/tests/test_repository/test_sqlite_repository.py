from predmap.models.records import RunManifest, StepMetrics
from predmap.repository.sqlite_repository import SQLiteRepository

import pytest


@pytest.fixture
def repo_metrics(registry_db):
    repo = SQLiteRepository(StepMetrics)
    repo.delete_where({})
    return repo


@pytest.fixture
def repo_runs(registry_db):
    repo = SQLiteRepository(RunManifest)
    repo.delete_where({})
    return repo


def metrics(step):
    return StepMetrics(step=step, l_pred=0.5 * step, l_align=2.0, loss=2.0 + 0.5 * step,
                       gate_value=0.125, grad_norm=1.5, lr=1e-3)


def manifest(command):
    return RunManifest(command=command, config_path='configs/toy.json', seed=0,
                       version='0.1.0', started='2026-01-01T00:00:00+00:00',
                       finished='2026-01-01T00:01:00+00:00', output_dir='runs/toy')


def test_bind_same_target_is_noop(registry_db):
    SQLiteRepository.bind_database(registry_db)


def test_rebind_other_target_raises(registry_db, tmp_path):
    with pytest.raises(RuntimeError):
        SQLiteRepository.bind_database(tmp_path / 'other.db')


def test_unknown_record_type():
    class Unregistered:
        pk = 0

    with pytest.raises(ValueError):
        SQLiteRepository(Unregistered)


def test_metrics_crud(repo_metrics):
    objs = [metrics(step) for step in range(5)]
    pks = [repo_metrics.add(o) for o in objs]
    assert all(obj.pk == pk for obj, pk in zip(objs, pks))
    assert all(repo_metrics.get(pk) == obj for obj, pk in zip(objs, pks))

    obj2 = metrics(100)
    obj2.pk = pks[0]
    repo_metrics.update(obj2)
    assert repo_metrics.get(pks[0]) == obj2

    pks.extend([345, 34589])
    for pk in pks:
        repo_metrics.delete(pk)
    assert all(repo_metrics.get(pk) is None for pk in pks)


def test_runs_get_all_with_condition(repo_runs):
    objs = [manifest(c) for c in ('synth-data', 'train', 'evaluate', 'train')]
    for o in objs:
        repo_runs.add(o)
    assert repo_runs.get_all({'command': 'train'}) == [objs[1], objs[3]]
    assert repo_runs.get_all() == objs


def test_cannot_add_with_pk(repo_runs):
    obj = manifest('train')
    obj.pk = 1
    with pytest.raises(ValueError):
        repo_runs.add(obj)


def test_cannot_add_without_pk(repo_runs):
    with pytest.raises(ValueError):
        repo_runs.add(0)


def test_cannot_update_unknown(repo_runs):
    obj = manifest('train')
    with pytest.raises(ValueError):
        repo_runs.update(obj)
    obj.pk = 99999
    with pytest.raises(ValueError):
        repo_runs.update(obj)
