import numpy as np
import pytest

from quantdiff.data import Episode, make_chunks, read_episodes, write_episodes
from quantdiff.errors import DatasetError


def test_jsonl_round_trip(tmp_path, rng):
    eps = [Episode(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)), task_id=i) for i in range(3)]
    write_episodes(tmp_path / "d.jsonl", eps)
    back = read_episodes(tmp_path / "d.jsonl")
    for a, b in zip(eps, back):
        np.testing.assert_array_equal(a.observations, b.observations)
        np.testing.assert_array_equal(a.actions, b.actions)
        assert a.task_id == b.task_id


def test_task_id_defaults_to_zero(tmp_path):
    (tmp_path / "d.jsonl").write_text('{"observations": [[0.0]], "actions": [[1.0]]}\n\n')
    assert read_episodes(tmp_path / "d.jsonl")[0].task_id == 0


@pytest.mark.parametrize("line,needle", [
    ("not json", ":1:"),
    ('{"actions": [[1.0]]}', "observations"),
    ('{"observations": [[0.0], [1.0]], "actions": [[1.0]]}', "2 observations"),
    ('{"observations": [[0.0]], "actions": [[NaN]]}', "non-finite"),
])
def test_bad_lines_name_the_location(tmp_path, line, needle):
    (tmp_path / "d.jsonl").write_text(line + "\n")
    with pytest.raises(DatasetError) as exc:
        read_episodes(tmp_path / "d.jsonl")
    assert needle in str(exc.value)
    assert exc.value.code == "invalid-dataset"


def test_empty_file(tmp_path):
    (tmp_path / "d.jsonl").write_text("")
    with pytest.raises(DatasetError):
        read_episodes(tmp_path / "d.jsonl")


def test_chunks_pad_with_last_action():
    ep = Episode(np.arange(3.0)[:, None], np.array([[1.0], [2.0], [3.0]]), task_id=2)
    states, tasks, chunks = make_chunks([ep], 4)
    assert chunks.shape == (3, 4, 1)
    np.testing.assert_array_equal(chunks[0, :, 0], [1, 2, 3, 3])
    np.testing.assert_array_equal(chunks[2, :, 0], [3, 3, 3, 3])
    np.testing.assert_array_equal(states[:, 0], [0, 1, 2])
    np.testing.assert_array_equal(tasks, [2, 2, 2])
