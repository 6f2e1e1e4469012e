"""Safeguarded Newton for nondecreasing scalar equations."""

from __future__ import annotations

import math
from typing import Callable


class NoConvergence(RuntimeError):
    """A numerical solve did not converge."""


def increasing_root(fn: Callable[[float], tuple[float, float]], guess: float = 0.0, step: float = 1.0,
                    xtol: float = 1e-14, ftol: float = 1e-13, maxiter: int = 200) -> float:
    """Root of a nondecreasing ``g`` given ``fn(x) -> (g(x), g'(x))``.

    Newton steps from ``guess``; while only one side of the root is known,
    steps are capped by a geometrically growing width, and once the root is
    bracketed any step leaving the bracket is replaced by bisection.
    """
    lo, hi = -math.inf, math.inf
    x = guess
    width = step
    for _ in range(maxiter):
        gx, dg = fn(x)
        if not math.isfinite(gx):
            raise NoConvergence(f"non-finite residual at x={x}")
        if abs(gx) <= ftol:
            return x
        if gx < 0:
            lo = x
        else:
            hi = x
        bracketed = math.isfinite(lo) and math.isfinite(hi)
        if bracketed and hi - lo <= xtol * (1.0 + abs(x)):
            return x
        xn = x - gx / dg if dg > 0 and math.isfinite(dg) else math.nan
        if bracketed:
            if not (lo < xn < hi):
                xn = 0.5 * (lo + hi)
        else:
            direction = 1.0 if gx < 0 else -1.0
            if not math.isfinite(xn) or abs(xn - x) > width or (xn - x) * direction <= 0:
                xn = x + direction * width
                width *= 2.0
        x = xn
    raise NoConvergence("Newton iteration did not converge")
