import pytest

from conftest import bundled_doc, train_doc
from mpgsim.errors import ConfigError
from mpgsim.scenario import get_param, scenario_from_dict, with_param


def test_negative_init_names_field():
    doc = train_doc(init_time=-1)
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict(doc)
    assert exc.value.field == "jobs[0].runtime.init_time"


def test_unknown_keys_rejected():
    doc = train_doc()
    doc["jobs"][0]["colour"] = "blue"
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict(doc)
    assert exc.value.field == "jobs[0].colour"


@pytest.mark.parametrize("path, value, field", [
    ("jobs[0].chip_kind", "nope", "jobs[0].chip_kind"),
    ("jobs[0].runtime.checkpoint_interval", 0, "jobs[0].runtime.checkpoint_interval"),
    ("horizon", 0, "horizon"),
    ("jobs[0].profile.overlap_fraction", 1.5, "jobs[0].profile.overlap_fraction"),
])
def test_bad_values_name_field(path, value, field):
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict(with_param(train_doc(), path, value))
    assert exc.value.field == field


def test_runtime_presets_and_overrides():
    doc = train_doc()
    doc["runtime_presets"] = {"multi": {"init_time": 9, "restore_time": 4}}
    doc["jobs"][0]["runtime_tag"] = "multi"
    doc["jobs"][0]["runtime"] = {"init_time": 2}
    sc = scenario_from_dict(doc)
    rt = sc.jobs[0].runtime
    assert rt.init_time == 2 and rt.restore_time == 4


def test_repeat_expands_jobs():
    doc = train_doc()
    doc["jobs"][0]["repeat"] = {"count": 3, "every": 10}
    sc = scenario_from_dict(doc)
    assert [(j.job_id, j.request.arrival) for j in sc.jobs] == [
        ("train-0-0", 0), ("train-0-1", 10_000_000), ("train-0-2", 20_000_000)]


def test_duplicate_job_ids_rejected():
    doc = train_doc()
    doc["jobs"].append(dict(doc["jobs"][0]))
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict(doc)
    assert exc.value.field == "jobs[1].id"


def test_param_paths():
    doc = bundled_doc("checkpoint_sweep")
    assert get_param(doc, "jobs[0].runtime.checkpoint_interval") == 20
    changed = with_param(doc, "jobs[0].runtime.checkpoint_interval", 5)
    assert get_param(changed, "jobs[0].runtime.checkpoint_interval") == 5
    assert get_param(doc, "jobs[0].runtime.checkpoint_interval") == 20  # original untouched
    assert get_param(with_param(doc, "jobs[0].runtime.async_checkpoint", True),
                     "jobs[0].runtime.async_checkpoint") is True
    with pytest.raises((KeyError, IndexError)):
        get_param(doc, "jobs[3].runtime")


def test_scenario_hash_tracks_document():
    a = scenario_from_dict(train_doc())
    b = scenario_from_dict(train_doc())
    c = scenario_from_dict(train_doc(init_time=4))
    assert a.scenario_hash == b.scenario_hash != c.scenario_hash
