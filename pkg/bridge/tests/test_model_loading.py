"""Loader tests for weight files and Python source models."""

import json
import textwrap

import pytest

from predictor_bridge.models import LogisticModel, ModelLoadError, PythonModel, load_model


def write_weights(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def logistic_doc():
    return {
        "format": "recourse-audit-logistic/1",
        "intercept": 0.25,
        "features": [
            {"name": "city", "encoding": "table",
             "values": ["paris", "rome"], "weights": [0.5, -1.0]},
            {"name": "age", "encoding": "scaled",
             "weight": 2.0, "low": 10.0, "span": 40.0},
        ],
    }


def test_logistic_weight_file_loads(tmp_path):
    model = load_model(str(write_weights(tmp_path / "m.json", logistic_doc())))
    assert isinstance(model, LogisticModel)
    assert model.feature_names == ("city", "age")


def test_logistic_scores_sum_contributions_in_order(tmp_path):
    model = load_model(str(write_weights(tmp_path / "m.json", logistic_doc())))
    assert model.predict_rows([["paris", "30"]]) == [0.25 + 0.5 + 2.0 * ((30.0 - 10.0) / 40.0)]
    assert model.predict_rows([["rome", "10"]]) == [0.25 - 1.0]


def test_logistic_zero_span_contributes_nothing(tmp_path):
    doc = logistic_doc()
    doc["features"][1]["span"] = 0.0
    model = load_model(str(write_weights(tmp_path / "m.json", doc)))
    assert model.predict_rows([["paris", "99"]]) == [0.75]


def test_logistic_unknown_value_raises(tmp_path):
    model = load_model(str(write_weights(tmp_path / "m.json", logistic_doc())))
    with pytest.raises(ValueError, match="city"):
        model.predict_rows([["berlin", "30"]])


def test_logistic_non_numeric_token_raises(tmp_path):
    model = load_model(str(write_weights(tmp_path / "m.json", logistic_doc())))
    with pytest.raises(ValueError, match="age"):
        model.predict_rows([["paris", "old"]])


def test_wrong_format_key_rejected(tmp_path):
    doc = logistic_doc()
    doc["format"] = "something-else/9"
    with pytest.raises(ModelLoadError, match="recourse-audit-logistic/1"):
        load_model(str(write_weights(tmp_path / "m.json", doc)))


def test_malformed_weight_table_rejected(tmp_path):
    doc = logistic_doc()
    doc["features"][0]["weights"] = [0.5]
    with pytest.raises(ModelLoadError, match="city"):
        load_model(str(write_weights(tmp_path / "m.json", doc)))


def test_unknown_encoding_rejected(tmp_path):
    doc = logistic_doc()
    doc["features"][0]["encoding"] = "hashed"
    with pytest.raises(ModelLoadError, match="hashed"):
        load_model(str(write_weights(tmp_path / "m.json", doc)))


def test_missing_scaled_fields_rejected(tmp_path):
    doc = logistic_doc()
    del doc["features"][1]["span"]
    with pytest.raises(ModelLoadError, match="age"):
        load_model(str(write_weights(tmp_path / "m.json", doc)))


def test_invalid_json_rejected(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ModelLoadError):
        load_model(str(path))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ModelLoadError, match="no such file"):
        load_model(str(tmp_path / "absent.json"))


def test_unsupported_suffix_rejected(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("", encoding="utf-8")
    with pytest.raises(ModelLoadError, match="unsupported"):
        load_model(str(path))


def write_module(path, source):
    path.write_text(textwrap.dedent(source), encoding="utf-8")
    return path


def test_python_module_with_factory(tmp_path):
    path = write_module(tmp_path / "m.py", """
        class Model:
            feature_names = ("a", "b")

            def predict_batch(self, rows):
                return [1 if row[0] == row[1] else -1 for row in rows]

        def load_model():
            return Model()
    """)
    model = load_model(str(path))
    assert isinstance(model, PythonModel)
    assert model.feature_names == ("a", "b")
    assert model.predict_rows([["x", "x"], ["x", "y"]]) == [1, -1]


def test_python_module_with_plain_callable(tmp_path):
    path = write_module(tmp_path / "m.py", """
        def predict_batch(rows):
            return [float(row[0]) for row in rows]
    """)
    model = load_model(str(path))
    assert model.feature_names is None
    assert model.predict_rows([["-2.5"]]) == [-2.5]


def test_python_module_without_entry_point_rejected(tmp_path):
    path = write_module(tmp_path / "m.py", "x = 1\n")
    with pytest.raises(ModelLoadError, match="predict_batch"):
        load_model(str(path))


def test_python_module_import_crash_rejected(tmp_path):
    path = write_module(tmp_path / "m.py", "raise RuntimeError('bad import')\n")
    with pytest.raises(ModelLoadError, match="bad import"):
        load_model(str(path))


def test_python_module_factory_crash_rejected(tmp_path):
    path = write_module(tmp_path / "m.py", """
        def load_model():
            raise RuntimeError("no weights")
    """)
    with pytest.raises(ModelLoadError, match="no weights"):
        load_model(str(path))
