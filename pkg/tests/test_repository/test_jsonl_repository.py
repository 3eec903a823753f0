from predmap.errors import ArtifactError
from predmap.models.records import StepMetrics, record_from_json, record_to_json
from predmap.repository.jsonl_repository import JsonLinesRepository

import json
import pytest


def decode(data):
    return record_from_json(StepMetrics, data)


def metrics(step):
    return StepMetrics(step=step, l_pred=1.0 + step, l_align=2.0, loss=3.0 + step,
                       gate_value=0.0, grad_norm=0.5, lr=1e-3)


@pytest.fixture
def path(tmp_path):
    return tmp_path / 'run' / 'metrics.jsonl'


@pytest.fixture
def repo(path):
    return JsonLinesRepository(path, record_to_json, decode)


def test_add_appends_lines(repo, path):
    for step in range(3):
        repo.add(metrics(step))
    lines = path.read_text(encoding='utf-8').splitlines()
    assert len(lines) == 3
    first = json.loads(lines[0])
    assert first['step'] == 0
    assert first['L_pred'] == 1.0
    assert first['pk'] == 1


def test_reload_keeps_records_and_pks(repo, path):
    for step in range(3):
        repo.add(metrics(step))
    again = JsonLinesRepository(path, record_to_json, decode)
    assert [m.step for m in again.get_all()] == [0, 1, 2]
    assert again.add(metrics(3)) == 4


def test_update_and_delete_rewrite_file(repo, path):
    pks = [repo.add(metrics(step)) for step in range(3)]
    changed = metrics(1)
    changed.pk = pks[1]
    changed.loss = 100.0
    repo.update(changed)
    repo.delete(pks[0])
    again = JsonLinesRepository(path, record_to_json, decode)
    assert [m.loss for m in again.get_all()] == [100.0, 5.0]
    assert not path.with_name('metrics.jsonl.tmp').exists()


def test_delete_where_truncates_tail(repo, path):
    for step in range(5):
        repo.add(metrics(step))
    assert repo.delete_where({'step': lambda s: s >= 3}) == 2
    again = JsonLinesRepository(path, record_to_json, decode)
    assert [m.step for m in again.get_all()] == [0, 1, 2]


def test_cannot_add_with_pk(repo):
    obj = metrics(0)
    obj.pk = 1
    with pytest.raises(ValueError):
        repo.add(obj)


def test_cannot_update_unknown(repo):
    obj = metrics(0)
    obj.pk = 42
    with pytest.raises(ValueError):
        repo.update(obj)


def test_bad_line_is_artifact_error(path):
    path.parent.mkdir(parents=True)
    path.write_text('{"step": 0}\nnot json\n', encoding='utf-8')
    with pytest.raises(ArtifactError, match='line 1'):
        JsonLinesRepository(path, record_to_json, decode)
