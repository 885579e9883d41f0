import json
import math

import numpy as np

from arbr_drqn.serialize import canonical_json, config_hash, read_json, write_csv, write_json


def test_canonical_json_is_stable():
    a = {"b": 1, "a": [0.1, 2, None], "c": {"z": True, "y": "é"}}
    b = {"c": {"y": "é", "z": True}, "a": [0.1, 2, None], "b": 1}
    assert canonical_json(a) == canonical_json(b)
    assert config_hash(a) == config_hash(b) != config_hash({**a, "b": 2})
    assert json.loads(canonical_json(a)) == a


def test_float_formatting_round_trips():
    xs = [0.1, 1 / 3, 1e-300, 2.0**60, -123.456]
    back = json.loads(canonical_json(xs))
    assert back == xs
    assert canonical_json(0.1).strip() == "0.10000000000000001"
    assert canonical_json([math.nan, math.inf]).strip() == "[null, null]"


def test_numpy_values():
    doc = {"arr": np.arange(3), "f": np.float64(0.5), "i": np.int64(7)}
    assert json.loads(canonical_json(doc)) == {"arr": [0, 1, 2], "f": 0.5, "i": 7}


def test_files(tmp_path):
    write_json(tmp_path / "x.json", {"k": [1.5]})
    assert read_json(tmp_path / "x.json") == {"k": [1.5]}
    write_csv(tmp_path / "x.csv", ["a", "b", "c"], [[1, None, True], [0.25, "s", math.nan]])
    assert (tmp_path / "x.csv").read_text() == "a,b,c\n1,NA,true\n0.25,s,NA\n"
