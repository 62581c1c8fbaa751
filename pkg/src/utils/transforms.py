"""
Parameter transforms between unconstrained (raw) and constrained coordinates.

  identity : x = u
  log      : x = exp(u),           x > 0
  logit    : x = 2 * sigmoid(u) - 1, x in (-1, 1)
"""
from typing import Literal

import numpy as np
from scipy.special import expit, logit as _logit

Transform = Literal["identity", "log", "logit"]


def to_constrained(raw, transforms):
    raw = np.asarray(raw, dtype=float)
    out = np.empty_like(raw)
    for i, (u, kind) in enumerate(zip(raw, transforms)):
        if kind == "identity":
            out[i] = u
        elif kind == "log":
            out[i] = np.exp(u)
        elif kind == "logit":
            out[i] = 2.0 * expit(u) - 1.0
        else:
            raise ValueError(f"unknown transform {kind!r}")
    return out


def to_raw(constrained, transforms):
    x = np.asarray(constrained, dtype=float)
    out = np.empty_like(x)
    for i, (c, kind) in enumerate(zip(x, transforms)):
        if kind == "identity":
            out[i] = c
        elif kind == "log":
            if c <= 0:
                raise ValueError(f"log transform needs a positive value, got {c}")
            out[i] = np.log(c)
        elif kind == "logit":
            if not -1.0 < c < 1.0:
                raise ValueError(f"logit transform needs a value in (-1, 1), got {c}")
            out[i] = _logit((c + 1.0) / 2.0)
        else:
            raise ValueError(f"unknown transform {kind!r}")
    return out


def jacobian_diagonal(raw, transforms):
    """d constrained / d raw, coordinatewise (the transforms act elementwise)."""
    x = to_constrained(raw, transforms)
    out = np.empty_like(x)
    for i, (c, kind) in enumerate(zip(x, transforms)):
        if kind == "identity":
            out[i] = 1.0
        elif kind == "log":
            out[i] = c
        else:
            out[i] = 0.5 * (1.0 - c * c)
    return out
