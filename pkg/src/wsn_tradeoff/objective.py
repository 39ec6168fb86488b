"""
Utilities, link error model and the per-node tradeoff objective.

Every function here is vectorised with numpy broadcasting. Per-source
parameters (``gamma``, ``phi`` and the box bounds) may be scalars or arrays
aligned with the source ordering of the instance; see
:meth:`TradeoffParams.resolve`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .model import MBPS, tomllib

_REL = 1e-9  # slack on box checks, absorbs exp(log x) round-off

PER_SOURCE = ("gamma", "phi", "x_min", "x_max", "R_min", "R_max")


class ParamsError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class TradeoffParams:
    """Weights, exponents and box bounds of the tradeoff objective.

    Rates are in bit/s. ``gamma`` weighs rate and reliability against
    lifetime, ``phi`` weighs rate against reliability. Per-source fields
    accept a scalar, a mapping ``node -> value`` or an already resolved array.
    """

    gamma: Any = 0.8
    phi: Any = 0.8
    varpi: float = 3.2768e32
    alpha: float = 1.1
    beta: float = 9.0
    kappa: float = 20.0
    x_min: Any = 0.1e6
    x_max: Any = 2.0e6
    R_min: Any = 0.9
    R_max: Any = 1.0

    def __post_init__(self):
        if not self.varpi > 0:
            raise ParamsError("varpi", "must be > 0")
        if not self.alpha > 0 or self.alpha == 1:
            raise ParamsError("alpha", "must be > 0 and != 1")
        if not self.beta > 1:
            raise ParamsError("beta", "must be > 1")
        if not self.kappa > 0:
            raise ParamsError("kappa", "must be > 0")
        for name in ("gamma", "phi"):
            for v in _values(getattr(self, name)):
                if not 0.0 <= v <= 1.0:
                    raise ParamsError(name, f"must lie in [0, 1], got {v}")
        if any(v <= 0 for v in _values(self.x_min)):
            raise ParamsError("x_min", "must be > 0")
        if any(v < 0 for v in _values(self.R_min)) or any(v > 1 for v in _values(self.R_max)):
            raise ParamsError("R_min", "reliability bounds must lie in [0, 1]")
        if self.alpha > 1 and any(v <= 0 for v in _values(self.R_min)):
            raise ParamsError("R_min", "must be > 0 when alpha > 1")
        if not _all_less(self.x_min, self.x_max):
            raise ParamsError("x_max", "need x_min < x_max")
        if not _all_less(self.R_min, self.R_max):
            raise ParamsError("R_max", "need R_min < R_max")

    def replace(self, **changes) -> "TradeoffParams":
        return dataclasses.replace(self, **changes)

    def resolve(self, sources: Sequence[str]) -> "TradeoffParams":
        """Return a copy whose per-source fields are float arrays over ``sources``."""
        out = {}
        for name in PER_SOURCE:
            v = getattr(self, name)
            if isinstance(v, Mapping):
                missing = [s for s in sources if s not in v]
                if missing:
                    raise ParamsError(name, f"no value for sources {missing}")
                out[name] = np.array([float(v[s]) for s in sources])
            else:
                out[name] = np.broadcast_to(np.asarray(v, dtype=float), (len(sources),)).copy()
        return dataclasses.replace(self, **out)


def _values(v) -> list[float]:
    if isinstance(v, Mapping):
        return [float(x) for x in v.values()]
    return [float(x) for x in np.atleast_1d(v)]


def _all_less(lo, hi) -> bool:
    if isinstance(lo, Mapping) or isinstance(hi, Mapping):
        keys = set(lo if isinstance(lo, Mapping) else ()) | set(hi if isinstance(hi, Mapping) else ())
        get = lambda d, k: d[k] if isinstance(d, Mapping) else float(d)  # noqa: E731
        return all(get(lo, k) < get(hi, k) for k in keys)
    return bool(np.all(np.asarray(lo, float) < np.asarray(hi, float)))


_PARAM_KEYS = set(PER_SOURCE) | {"varpi", "alpha", "beta", "kappa"}
_RATE_KEYS = ("x_min", "x_max")


def params_from_mapping(raw: Mapping[str, Any], base: TradeoffParams | None = None) -> TradeoffParams:
    """Build parameters from a parsed document; rate bounds are in Mbit/s."""
    fields = {}
    for key, value in raw.items():
        if key not in _PARAM_KEYS:
            raise ParamsError(key, "unknown field")
        if key in _RATE_KEYS:
            value = {k: float(v) * MBPS for k, v in value.items()} if isinstance(value, Mapping) else float(value) * MBPS
        elif isinstance(value, Mapping):
            value = {str(k): float(v) for k, v in value.items()}
        elif isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParamsError(key, f"expected a number or a per-source table, got {value!r}")
        else:
            value = float(value)
        fields[key] = value
    return dataclasses.replace(base or TradeoffParams(), **fields)


def load_params(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> TradeoffParams:
    raw: dict[str, Any] = {}
    if path is not None:
        with open(path, "rb") as fh:
            raw.update(tomllib.load(fh))
    raw.update(overrides or {})
    return params_from_mapping(raw)


# ---------------------------------------------------------------------------
# link error model


def error_prob(r, kappa: float):
    """Decoding error probability ``0.5 * exp(-kappa * (1 - r))`` at code rate ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any((r < 0) | (r > 1)):
        raise ValueError("code rate must lie in [0, 1]")
    return 0.5 * np.exp(-kappa * (1.0 - r))


def error_prob_deriv(r, kappa: float):
    r = np.asarray(r, dtype=float)
    if np.any((r < 0) | (r > 1)):
        raise ValueError("code rate must lie in [0, 1]")
    return 0.5 * kappa * np.exp(-kappa * (1.0 - r))


def flow_reliability(r_route, kappa: float, exact: bool = False) -> float:
    """End-to-end reliability of a flow from the code rates along its route.

    By default the union-bound form ``1 - sum(E)``; with ``exact=True`` the
    product ``prod(1 - E)``.
    """
    r_route = np.atleast_1d(np.asarray(r_route, dtype=float))
    if r_route.size == 0:
        raise ValueError("empty route")
    e = error_prob(r_route, kappa)
    if exact:
        return float(np.prod(1.0 - e))
    return float(1.0 - e.sum())


# ---------------------------------------------------------------------------
# utilities


def _in_box(v, lo, hi, name: str) -> None:
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    if np.any(v < lo - _REL * np.abs(lo)) or np.any(v > hi + _REL * np.abs(hi)):
        raise ValueError(f"{name} outside its box")


def _normalized_power(v, lo, hi, alpha):
    e = 1.0 - alpha
    return (np.power(v, e) - np.power(lo, e)) / (np.power(hi, e) - np.power(lo, e))


def rate_utility(x, params: TradeoffParams):
    """Normalised alpha-fair rate utility; 0 at ``x_min`` and 1 at ``x_max``."""
    x = np.asarray(x, dtype=float)
    _in_box(x, params.x_min, params.x_max, "rate")
    return _normalized_power(x, params.x_min, params.x_max, params.alpha)


def reliability_utility(R, params: TradeoffParams):
    R = np.asarray(R, dtype=float)
    _in_box(R, params.R_min, params.R_max, "reliability")
    return _normalized_power(R, params.R_min, params.R_max, params.alpha)


def lifetime_penalty(z, params: TradeoffParams):
    """``varpi / (beta - 1) * z**(beta - 1)`` for normalised power ``z = 1/T``."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("normalised power must be > 0")
    return params.varpi / (params.beta - 1.0) * np.power(z, params.beta - 1.0)


def lifetime_utility_beta(T, beta: float):
    """Lifetime utility: ``log T`` for ``beta == 1``, else ``T**(1-beta) / (1-beta)``."""
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("lifetime must be > 0")
    if beta < 1:
        raise ValueError("beta must be >= 1")
    if beta == 1:
        return np.log(T)
    return np.power(T, 1.0 - beta) / (1.0 - beta)


def combined_objective(x, R, z, params: TradeoffParams):
    g, f = params.gamma, params.phi
    return (
        g * f * rate_utility(x, params)
        + g * (1.0 - f) * reliability_utility(R, params)
        - (1.0 - g) * lifetime_penalty(z, params)
    )


def combined_objective_log(x_log, R, z, params: TradeoffParams):
    """The objective with the rate replaced by its logarithm."""
    return combined_objective(np.exp(x_log), R, z, params)


def gradients(x_log, R, z, params: TradeoffParams):
    """Partial derivatives of :func:`combined_objective_log` in (log-rate, R, z)."""
    x_log = np.asarray(x_log, dtype=float)
    R = np.asarray(R, dtype=float)
    z = np.asarray(z, dtype=float)
    g, f, a = params.gamma, params.phi, params.alpha
    e = 1.0 - a
    dx = g * f * e * np.exp(e * x_log) / (np.power(params.x_max, e) - np.power(params.x_min, e))
    dR = g * (1.0 - f) * e * np.power(R, -a) / (np.power(params.R_max, e) - np.power(params.R_min, e))
    dz = -(1.0 - g) * params.varpi * np.power(z, params.beta - 2.0)
    return dx, dR, dz


# ---------------------------------------------------------------------------
# primal state


@dataclass
class PrimalState:
    """Per-source log-rate, reliability and normalised power; per-pair code rate and capacity share."""

    x_log: np.ndarray
    R: np.ndarray
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return np.exp(self.x_log)

    @property
    def lifetime(self) -> np.ndarray:
        return 1.0 / self.z

    def copy(self) -> "PrimalState":
        return PrimalState(*(np.array(getattr(self, f.name), dtype=float) for f in dataclasses.fields(self)))

    def as_dict(self, sources: Sequence[str], pairs: Sequence[tuple[str, str]]) -> dict:
        return {
            "x": dict(zip(sources, self.x.tolist())),
            "R": dict(zip(sources, self.R.tolist())),
            "T": dict(zip(sources, self.lifetime.tolist())),
            "r": {f"{l},{s}": v for (l, s), v in zip(pairs, self.r.tolist())},
            "c": {f"{l},{s}": v for (l, s), v in zip(pairs, self.c.tolist())},
        }


def total_utility(x, R, z, params: TradeoffParams) -> float:
    return float(np.sum(combined_objective(x, R, z, params)))


def utility_parts(x, R, z, params: TradeoffParams) -> dict[str, float]:
    """Unweighted aggregate rate and reliability utility and lifetime penalty."""
    return {
        "rate_utility": float(np.sum(rate_utility(x, params))),
        "reliability_utility": float(np.sum(reliability_utility(R, params))),
        "lifetime_penalty": float(np.sum(lifetime_penalty(z, params))),
    }
