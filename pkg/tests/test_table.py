import json

import numpy as np
import pytest

from scalelab.table import RangeError, ScalingParams, SchemaError


def test_roundtrip(tmp_path, synth):
    synth.provenance["de"] = {"grid": [0.44, 0.47, 0.49]}
    path = tmp_path / "p.json"
    synth.save(path)
    back = ScalingParams.load(path)
    assert back == synth
    assert back.to_json() == synth.to_json()


def test_knot_and_midpoint(synth):
    assert synth.lookup("v_pd", 0.47) == 2.17
    mid = synth.lookup("v_pd", (0.44 + 0.47) / 2)
    assert mid == pytest.approx((2.35 + 2.17) / 2)


def test_range(synth):
    with pytest.raises(RangeError):
        synth.lookup("v_pd", 0.43)
    with pytest.raises(RangeError):
        synth.at(0.495)
    assert synth.covers(0.49) and not synth.covers(0.491)


def test_newer_schema_fails(synth):
    doc = json.loads(synth.to_json())
    doc["schema_version"] = 99
    with pytest.raises(SchemaError):
        ScalingParams.from_json(json.dumps(doc))
    del doc["schema_version"]
    with pytest.raises(SchemaError):
        ScalingParams.from_json(json.dumps(doc))


def test_grid_checks():
    with pytest.raises(ValueError):
        ScalingParams(5, 10, 50, [0.45, 0.44])
    with pytest.raises(ValueError):
        ScalingParams(5, 10, 50, [0.44, 0.45], {"v_pd": np.ones(3)})


def test_missing_names(synth):
    with pytest.raises(KeyError):
        synth.lookup("nope", 0.45)
    with pytest.raises(KeyError):
        synth.scalar("nope")


def test_at_namespace(synth):
    p = synth.at(0.47)
    assert p.epsilon == 0.47 and p.sigma2 == 0.106 and p.i_start == 15
