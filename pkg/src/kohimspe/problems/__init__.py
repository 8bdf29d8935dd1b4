"""Benchmark problems behind a common interface."""

from .analytic import (
    goh_bastos,
    goh_bastos_bias,
    make_goh_bastos,
    make_sinusoid,
    sinusoid,
    sinusoid_bias,
)
from .base import FieldSpec, Problem, generate_field, grid_sites
from .sx import integrate, make_sx, sx_batch, sx_simulate

_FACTORIES = {
    "sinusoid": make_sinusoid,
    "goh-bastos": make_goh_bastos,
    "sx": make_sx,
}


def get_problem(name: str, bias_scale: float = 1.0, **kw) -> Problem:
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; expected one of {sorted(_FACTORIES)}")
    return factory(bias_scale=bias_scale, **kw)


__all__ = [
    "FieldSpec", "Problem", "generate_field", "get_problem", "grid_sites",
    "goh_bastos", "goh_bastos_bias", "make_goh_bastos", "make_sinusoid", "make_sx",
    "sinusoid", "sinusoid_bias", "integrate", "sx_batch", "sx_simulate",
]
