import json

import pytest

from framedag.graph import INFINITE, BoundedState, Gather, Range, Space, Stencil, Stride, Unsupported, validate_graph
from framedag.jobfile import JobFileError, job_to_dict, parse_job

ACTIVITY = {
    "graph": {
        "ops": [
            {"name": "sample", "kind": "sample", "strategy": {"stride": 10}},
            {"name": "small", "kind": "map", "kernel": "decimate", "params": {"k": 4}},
            {"name": "motion", "kind": "stencil", "kernel": "frame_delta_sum", "offsets": [0, 1]},
            {"name": "detect", "kind": "map", "kernel": "threshold_detector", "params": {"tau": 10.0}},
            {"name": "space", "kind": "space", "strategy": {"stride": 10}},
            {"name": "smooth", "kind": "bounded_state", "kernel": "sliding_mean", "warmup": 8, "params": {"dtype": "u1"}},
        ],
        "edges": [
            {"from": "frames", "to": "sample"},
            {"from": "sample", "to": "small"},
            {"from": "small", "to": "motion"},
            {"from": "motion", "to": "detect"},
            {"from": "detect", "to": "space"},
            {"from": "space", "to": "smooth"},
        ],
        "outputs": {"activity": "smooth"},
    },
    "inputs": {"frames": "video.frame"},
    "output": "activity",
}


def text(d):
    return json.dumps(d, indent=2)


def test_parse_activity_job():
    job, cfg = parse_job(text(ACTIVITY))
    assert cfg == {}
    ops = job.graph.op_map
    assert isinstance(ops["space"].kind, Space) and ops["space"].kind.strategy == Stride(10)
    assert ops["motion"].kind == Stencil((0, 1))
    assert ops["smooth"].kind == BoundedState(8)
    assert validate_graph(job.graph).ok
    assert job.binding("frames") == ("video", "frame")


def test_roundtrip_through_dict():
    d = dict(ACTIVITY, points={"kind": "range", "start": 5, "end": 50, "step": 5}, config={"workers": 3})
    job, cfg = parse_job(text(d))
    again, cfg2 = parse_job(text(job_to_dict(job, cfg)))
    assert again == job and cfg2 == cfg == {"workers": 3}
    assert list(job.requested(100)) == list(range(5, 50, 5))


def test_points_kinds():
    for pts, expected in [
        ({"kind": "all"}, list(range(6))),
        ({"kind": "stride", "step": 4}, [0, 4]),
        ({"kind": "gather", "points": [1, 5]}, [1, 5]),
    ]:
        job, _ = parse_job(text(dict(ACTIVITY, points=pts)))
        assert list(job.requested(6)) == expected


def test_strategies_and_infinite_warmup():
    d = json.loads(text(ACTIVITY))
    d["graph"]["ops"][0]["strategy"] = {"range": [0, 100, 2]}
    d["graph"]["ops"][4] = {"name": "space", "kind": "space", "strategy": {"gather": [1, 3]}, "length": 5}
    d["graph"]["ops"][5]["warmup"] = "inf"
    job, _ = parse_job(text(d))
    ops = job.graph.op_map
    assert ops["sample"].kind.strategy == Range(0, 100, 2)
    assert ops["space"].kind == Space(Gather((1, 3)), 5)
    assert ops["smooth"].kind.warmup == INFINITE


def test_unknown_field_reports_line():
    d = json.loads(text(ACTIVITY))
    d["graph"]["ops"][2]["ofsets"] = [0, 1]
    src = text(d)
    with pytest.raises(JobFileError) as err:
        parse_job(src, "job.json")
    line = next(i for i, l in enumerate(src.splitlines(), 1) if '"ofsets"' in l)
    assert err.value.line == line
    assert "ofsets" in str(err.value) and str(err.value).startswith("job.json:")


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.update(extra=1),
        lambda d: d.pop("inputs"),
        lambda d: d["graph"]["ops"][0].update(kind="zoom"),
        lambda d: d["graph"]["ops"][0].update(strategy={"stride": 2, "range": [0, 1]}),
        lambda d: d["graph"]["ops"][0].update(strategy={"gather": [3, 1]}),
        lambda d: d.update(points={"kind": "stride"}),
        lambda d: d.update(config={"turbo": True}),
        lambda d: d["graph"]["edges"][0].update(weight=2),
        lambda d: d.update(inputs={"frames": 3}),
    ],
)
def test_schema_violations(mutate):
    d = json.loads(text(ACTIVITY))
    mutate(d)
    with pytest.raises(JobFileError):
        parse_job(text(d))


def test_invalid_json():
    with pytest.raises(JobFileError) as err:
        parse_job('{\n  "graph": [,\n}')
    assert err.value.line == 2


def test_unsupported_kinds_parse_then_fail_validation():
    d = json.loads(text(ACTIVITY))
    d["graph"]["ops"][1] = {"name": "small", "kind": "filter", "kernel": "decimate"}
    job, _ = parse_job(text(d))
    assert job.graph.op_map["small"].kind == Unsupported("filter")
    assert "data-dependent length change" in validate_graph(job.graph).kinds()
