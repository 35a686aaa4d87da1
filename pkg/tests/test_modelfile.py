import pytest

from brwmax.errors import ModelValidationError
from brwmax.model import SUBCRITICAL, SUPERCRITICAL
from brwmax.modelfile import (
    BUILTIN_MODELS,
    SUBCRITICAL_BUILTINS,
    builtin_model,
    load_model,
    model_from_dict,
    parse_probability,
    validate_model_file,
)

GOOD = """\
label: test model
mode: subcritical
jump:
  - [-1, 1/2]
  - [1, 1/2]
offspring:
  - [0, 1/5]
  - [1, 4/5]
"""


def test_parse_probability_forms():
    assert parse_probability("1/5") == 0.2
    assert parse_probability(0.35) == 0.35
    assert parse_probability("0.25") == 0.25
    with pytest.raises((ValueError, ModelValidationError)):
        parse_probability("abc")


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_builtins_load(name):
    model = builtin_model(name)
    expected = SUPERCRITICAL if name == "supercritical" else SUBCRITICAL
    assert model.mode == expected
    assert (name in SUBCRITICAL_BUILTINS) == (expected == SUBCRITICAL)


def test_builtin_r2_mean():
    model = builtin_model("r2_nrc")
    assert model.m == pytest.approx(0.7, abs=1e-12)
    assert model.jump.offsets == (-2, 0, 1, 2)


def test_load_from_path(tmp_path):
    path = tmp_path / "m.yaml"
    path.write_text(GOOD)
    model = load_model(path)
    assert model.m == pytest.approx(0.8)
    assert validate_model_file(path) == []


def test_all_violations_reported(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(GOOD.replace("- [1, 1/2]", "- [1, 0.55]").replace("[-1, 1/2]", "[-1, 0.45]")
                    .replace("[0, 1/5]", "[0, 0.19]"))
    problems = validate_model_file(path)
    assert any("mean-zero" in p for p in problems)
    assert any("sum" in p for p in problems)


def test_parse_error_has_position(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("jump: [\n  - 1")
    (problem,) = validate_model_file(path)
    assert "line 2" in problem and "column" in problem


def test_mode_mismatch_reported():
    doc = {"mode": "supercritical", "jump": [[-1, 0.5], [1, 0.5]], "offspring": [[0, 0.2], [1, 0.8]]}
    with pytest.raises(ModelValidationError):
        model_from_dict(doc)


def test_missing_file():
    assert validate_model_file("/nonexistent/model.yaml")
