"""
Builtin tool functions.

A manifest with a ``builtin`` entrypoint names one of the functions
registered here. Every function takes JSON inputs as keyword arguments and
returns a JSON-serializable result.
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING, Any, Final

from nexus.errors import InvalidToolInput, UnknownTool

if TYPE_CHECKING:
    from collections.abc import Callable

FARADAY: Final = 96485.0  # C/mol
GAS_CONSTANT: Final = 8.314  # J/(mol K)

_BUILTINS: dict[str, Callable[..., Any]] = {}


def builtin(name: str) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    def register(fn: Callable[..., Any]) -> Callable[..., Any]:
        _BUILTINS[name] = fn
        return fn

    return register


def builtin_names() -> list[str]:
    return sorted(_BUILTINS)


def call_builtin(name: str, inputs: dict[str, Any]) -> Any:
    try:
        fn = _BUILTINS[name]
    except KeyError:
        msg = f"no builtin function {name!r}"
        raise UnknownTool(msg) from None
    try:
        return fn(**inputs)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        msg = f"{name}: {exc}"
        raise InvalidToolInput(msg) from exc


@builtin("nernst_temperature")
def nernst_temperature(
    e_standard: float,
    e_cell: float,
    n: int,
    q: float,
) -> dict[str, float]:
    """
    Solve the Nernst equation for temperature.

    E = E0 - (R T / n F) ln Q, hence T = (E0 - E) n F / (R ln Q).
    """
    log_q = math.log(float(q))
    if log_q == 0:
        msg = "reaction quotient of 1 leaves temperature undetermined"
        raise ValueError(msg)
    drop = float(e_standard) - float(e_cell)
    temperature = drop * int(n) * FARADAY / (GAS_CONSTANT * log_q)
    return {"temperature_k": round(temperature, 4)}


# factor to the base unit of each dimension
_LINEAR_UNITS: Final[dict[str, tuple[str, float]]] = {
    "m": ("length", 1.0),
    "cm": ("length", 1e-2),
    "mm": ("length", 1e-3),
    "nm": ("length", 1e-9),
    "angstrom": ("length", 1e-10),
    "j": ("energy", 1.0),
    "kj": ("energy", 1e3),
    "ev": ("energy", 1.602176634e-19),
    "kcal": ("energy", 4184.0),
    "pa": ("pressure", 1.0),
    "kpa": ("pressure", 1e3),
    "bar": ("pressure", 1e5),
    "atm": ("pressure", 101325.0),
}

_TO_KELVIN: Final[dict[str, Callable[[float], float]]] = {
    "k": lambda v: v,
    "c": lambda v: v + 273.15,
    "f": lambda v: (v - 32) * 5 / 9 + 273.15,
}
_FROM_KELVIN: Final[dict[str, Callable[[float], float]]] = {
    "k": lambda v: v,
    "c": lambda v: v - 273.15,
    "f": lambda v: (v - 273.15) * 9 / 5 + 32,
}


@builtin("unit_convert")
def unit_convert(value: float, from_unit: str, to_unit: str) -> dict[str, Any]:
    src, dst = from_unit.strip().lower(), to_unit.strip().lower()
    if src in _TO_KELVIN and dst in _FROM_KELVIN:
        converted = _FROM_KELVIN[dst](_TO_KELVIN[src](float(value)))
        return {"value": converted, "unit": to_unit}

    if src not in _LINEAR_UNITS or dst not in _LINEAR_UNITS:
        msg = f"cannot convert {from_unit!r} to {to_unit!r}"
        raise ValueError(msg)
    src_dim, src_factor = _LINEAR_UNITS[src]
    dst_dim, dst_factor = _LINEAR_UNITS[dst]
    if src_dim != dst_dim:
        msg = f"{from_unit!r} is a {src_dim} unit, {to_unit!r} a {dst_dim} unit"
        raise ValueError(msg)
    return {"value": float(value) * src_factor / dst_factor, "unit": to_unit}


@builtin("format_answer")
def format_answer(value: Any, decimals: int | None = None) -> dict[str, str]:
    """Render a final answer; numbers are truncated (not rounded) to ``decimals``."""
    if decimals is None or isinstance(value, str):
        return {"answer": str(value).strip()}
    scale = 10 ** int(decimals)
    truncated = math.trunc(float(value) * scale) / scale
    return {"answer": f"{truncated:.{int(decimals)}f}"}
