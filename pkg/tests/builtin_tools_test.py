"""Unit tests for builtin_tools.py."""

import pytest

from nexus.builtin_tools import (
    builtin_names,
    call_builtin,
    format_answer,
    nernst_temperature,
    unit_convert,
)
from nexus.errors import InvalidToolInput, UnknownTool


def test_registered_builtins() -> None:
    assert builtin_names() == ["format_answer", "nernst_temperature", "unit_convert"]


def test_nernst_temperature() -> None:
    result = nernst_temperature(e_standard=0.637, e_cell=0.568, n=2, q=1e-2 / 1e-4)
    assert result["temperature_k"] == pytest.approx(347.76, abs=0.01)


def test_nernst_with_unit_quotient_is_rejected() -> None:
    inputs = {"e_standard": 0.6, "e_cell": 0.5, "n": 1, "q": 1}
    with pytest.raises(InvalidToolInput, match="undetermined"):
        call_builtin("nernst_temperature", inputs)


@pytest.mark.parametrize(
    ("value", "src", "dst", "expected"),
    [
        (0, "C", "K", 273.15),
        (212, "F", "C", 100.0),
        (1, "eV", "J", 1.602176634e-19),
        (1, "atm", "kPa", 101.325),
        (5, "cm", "mm", 50.0),
    ],
)
def test_unit_convert(value: float, src: str, dst: str, expected: float) -> None:
    assert unit_convert(value, src, dst)["value"] == pytest.approx(expected)


def test_unit_convert_rejects_mixed_dimensions() -> None:
    with pytest.raises(InvalidToolInput, match="length"):
        call_builtin("unit_convert", {"value": 1, "from_unit": "m", "to_unit": "bar"})


def test_format_answer_truncates() -> None:
    assert format_answer(347.769, 1) == {"answer": "347.7"}
    assert format_answer(" 12 K ") == {"answer": "12 K"}


def test_unknown_builtin_and_bad_arguments() -> None:
    with pytest.raises(UnknownTool):
        call_builtin("nope", {})
    with pytest.raises(InvalidToolInput):
        call_builtin("format_answer", {"value": 1, "extra": 2})
