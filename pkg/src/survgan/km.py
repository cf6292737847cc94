"""Kaplan-Meier curves and the survival-specific comparison metrics.

A curve is right-continuous and piecewise constant up to its end time. It
may carry a constant-hazard tail past an extrapolation point, in which case
``S(t) = S(t0) * exp(-rate * (t - t0))`` for ``t >= t0``. All integrals are
computed exactly on the merged breakpoints of the curves involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

TAIL_WINDOW = 0.1


@dataclass(frozen=True, eq=False)
class StepSurvivalCurve:
    """``S(t) = values[k]`` for ``times[k] <= t < times[k+1]``.

    ``times[0]`` is always 0. ``tail_rate`` is the hazard estimated over the
    last 10% of ``[0, end_time]`` and is used by :func:`extrapolate_constant_rate`.
    """

    times: np.ndarray
    values: np.ndarray
    end_time: float
    tail_rate: float = 0.0
    tail_start: float = math.inf

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ValueError("times and values must be aligned non-empty vectors")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must start at 0 and be strictly increasing")
        if np.any(v < 0) or np.any(v > 1) or np.any(np.diff(v) > 1e-12):
            raise ValueError("survival values must be non-increasing within [0, 1]")
        if self.tail_rate < 0:
            raise ValueError("tail rate must be non-negative")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "end_time", float(self.end_time))

    @classmethod
    def from_knots(cls, times, values, end_time: float | None = None) -> "StepSurvivalCurve":
        """Build a curve from arbitrary knots, prepending ``S(0) = 1`` when needed."""
        times = np.asarray(times, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if times.size == 0 or times[0] > 0:
            times = np.concatenate([[0.0], times])
            values = np.concatenate([[1.0], values])
        end = float(times[-1]) if end_time is None else end_time
        return cls(times, values, end)

    @property
    def extrapolated(self) -> bool:
        return math.isfinite(self.tail_start)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], 1.0)
        if self.extrapolated:
            base = self.values[np.searchsorted(self.times, self.tail_start, side="right") - 1]
            tail = base * np.exp(-self.tail_rate * np.maximum(t - self.tail_start, 0.0))
            out = np.where(t >= self.tail_start, tail, out)
        return out

    def to_csv(self, path: str | Path) -> None:
        lines = ["time,survival"] + [f"{t!r},{v!r}" for t, v in zip(self.times.tolist(), self.values.tolist())]
        if self.times[-1] < self.end_time:
            lines.append(f"{self.end_time!r},{float(self(self.end_time))!r}")
        _atomic_write(Path(path), "\n".join(lines) + "\n")


def kaplan_meier(times, events) -> StepSurvivalCurve:
    """Product-limit estimate; at tied times events are processed before censorings."""
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    if times.size == 0:
        raise ValueError("kaplan_meier needs at least one observation")
    if times.shape != events.shape:
        raise ValueError("times and events must be aligned")
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise ValueError("times must be finite and non-negative")
    if not np.all(np.isin(events, (0, 1))):
        raise ValueError("events must be 0 or 1")
    uniq, inverse = np.unique(times, return_inverse=True)
    deaths = np.bincount(inverse, weights=events.astype(np.float64), minlength=uniq.size)
    counts = np.bincount(inverse, minlength=uniq.size)
    at_risk = counts[::-1].cumsum()[::-1].astype(np.float64)
    hit = deaths > 0
    surv = np.cumprod(1.0 - deaths[hit] / at_risk[hit])
    bp, vals = uniq[hit], surv
    if bp.size == 0 or bp[0] > 0:
        bp = np.concatenate([[0.0], bp])
        vals = np.concatenate([[1.0], vals])
    end = float(uniq[-1])
    return StepSurvivalCurve(bp, np.minimum(vals, 1.0), end, _tail_rate(times, events, end))


def _tail_rate(times: np.ndarray, events: np.ndarray, end: float) -> float:
    lo = (1.0 - TAIL_WINDOW) * end
    exposure = np.clip(np.minimum(times, end) - lo, 0.0, None).sum()
    n_events = np.sum((events == 1) & (times >= lo) & (times <= end))
    if n_events == 0 or exposure <= 0:
        return 0.0
    return float(n_events / exposure)


def extrapolate_constant_rate(curve: StepSurvivalCurve, to_time: float) -> StepSurvivalCurve:
    """Extend ``curve`` past its end time with its estimated constant hazard."""
    if to_time < curve.end_time:
        raise ValueError(f"cannot extrapolate backwards: {to_time} < {curve.end_time}")
    if to_time == curve.end_time:
        return curve
    start = curve.end_time if not curve.extrapolated else curve.tail_start
    return replace(curve, end_time=float(to_time), tail_start=start)


def _segment_integrals(syn: StepSurvivalCurve, real: StepSurvivalCurve, horizon: float) -> tuple[float, float]:
    """Exact ``(int (S_syn - S_real), int |S_syn - S_real|)`` over ``[0, horizon]``."""
    edges = [syn.times, real.times, [0.0, horizon]]
    for c in (syn, real):
        if c.extrapolated:
            edges.append([c.tail_start])
    grid = np.unique(np.concatenate(edges))
    grid = grid[(grid >= 0) & (grid <= horizon)]
    a, b = grid[:-1], grid[1:]
    length = b - a
    lvl_s, lvl_r = syn(a), real(a)
    rate_s = np.where(a >= syn.tail_start, syn.tail_rate, 0.0)
    rate_r = np.where(a >= real.tail_start, real.tail_rate, 0.0)
    signed = lvl_s * _expint(rate_s, length) - lvl_r * _expint(rate_r, length)
    absolute = np.abs(signed)
    # the exponential pieces can cross once inside a segment; split at the root
    cross = (rate_s != rate_r) & (lvl_s > 0) & (lvl_r > 0)
    for i in np.flatnonzero(cross):
        root = math.log(lvl_s[i] / lvl_r[i]) / (rate_s[i] - rate_r[i])
        if 0.0 < root < length[i]:
            left = lvl_s[i] * _expint(rate_s[i], root) - lvl_r[i] * _expint(rate_r[i], root)
            absolute[i] = abs(left) + abs(signed[i] - left)
    return float(signed.sum()), float(absolute.sum())


def _expint(rate, length):
    """``int_0^L exp(-rate * s) ds`` with the ``rate -> 0`` limit."""
    rate = np.asarray(rate, dtype=np.float64)
    length = np.asarray(length, dtype=np.float64)
    safe = np.where(rate > 0, rate, 1.0)
    return np.where(rate > 0, -np.expm1(-safe * length) / safe, length)


def _aligned(syn: StepSurvivalCurve, real: StepSurvivalCurve) -> tuple[StepSurvivalCurve, float]:
    horizon = real.end_time
    if horizon <= 0:
        raise ValueError("the real curve's end time must be positive")
    if syn.end_time < horizon:
        syn = extrapolate_constant_rate(syn, horizon)
    return syn, horizon


def optimism(syn: StepSurvivalCurve, real: StepSurvivalCurve) -> float:
    """Mean signed gap ``(1/T) int_0^T (S_syn - S_real) dt`` with ``T`` the real end time."""
    syn, horizon = _aligned(syn, real)
    return _segment_integrals(syn, real, horizon)[0] / horizon


def km_divergence(syn: StepSurvivalCurve, real: StepSurvivalCurve) -> float:
    """Mean absolute gap between the two curves over ``[0, T_real]``."""
    syn, horizon = _aligned(syn, real)
    return _segment_integrals(syn, real, horizon)[1] / horizon


def short_sightedness(syn: StepSurvivalCurve, real: StepSurvivalCurve, generalized: bool = False) -> float:
    """``max(0, (T_real - T_syn) / T_real)``.

    With ``generalized=True`` the signed gap is divided by ``max(T_real, T_syn)``
    instead, so overshooting synthetic horizons give negative values.
    """
    t_real, t_syn = real.end_time, syn.end_time
    if t_real <= 0:
        raise ValueError("the real curve's end time must be positive")
    if generalized:
        return (t_real - t_syn) / max(t_real, t_syn)
    return max(0.0, (t_real - t_syn) / t_real)


@dataclass(frozen=True)
class SurvivalMetrics:
    optimism: float
    short_sightedness: float
    km_divergence: float

    def to_dict(self) -> dict:
        return {"optimism": self.optimism, "short_sightedness": self.short_sightedness, "km_divergence": self.km_divergence}


def survival_metrics(syn_times, syn_events, real_times, real_events) -> SurvivalMetrics:
    syn, real = kaplan_meier(syn_times, syn_events), kaplan_meier(real_times, real_events)
    return SurvivalMetrics(optimism(syn, real), short_sightedness(syn, real), km_divergence(syn, real))


# discrete time distributions and the divergence bounds on optimism


def curve_from_pmf(support, pmf) -> StepSurvivalCurve:
    """Exact survival curve ``S(t) = 1 - sum_{s_k <= t} p_k`` ending at the last support point."""
    support = np.asarray(support, dtype=np.float64)
    pmf = np.asarray(pmf, dtype=np.float64)
    if support.shape != pmf.shape or np.any(np.diff(support) <= 0) or np.any(support <= 0):
        raise ValueError("support must be positive and strictly increasing, aligned with pmf")
    if np.any(pmf < 0) or not math.isclose(pmf.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("pmf must be non-negative and sum to 1")
    values = np.clip(1.0 - np.cumsum(pmf), 0.0, 1.0)
    values = np.minimum.accumulate(values)
    return StepSurvivalCurve.from_knots(support, values, float(support[-1]))


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def optimism_bounds(p_syn, p_real) -> dict[str, float]:
    """Upper bounds on ``|optimism|`` for two distributions on one shared finite support.

    Returns ``tv = 2 D_TV``, ``pinsker = sqrt(2 KL)``, ``bretagnolle_huber =
    2 sqrt(1 - exp(-KL))`` and ``hellinger = 2 sqrt(2) D_H``, where the KL based
    bounds take the smaller of the two orderings and ``D_TV = 0.5 sum |p - q|``.
    """
    p = np.asarray(p_syn, dtype=np.float64)
    q = np.asarray(p_real, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must share a support")
    d_tv = 0.5 * float(np.abs(p - q).sum())
    kl = min(_kl(p, q), _kl(q, p))
    d_h = math.sqrt(max(0.0, 0.5 * float(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2))))
    return {
        "tv": 2.0 * d_tv,
        "pinsker": math.sqrt(2.0 * kl),
        "bretagnolle_huber": 2.0 * math.sqrt(1.0 - math.exp(-kl)),
        "hellinger": 2.0 * math.sqrt(2.0) * d_h,
    }


# export


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _step_points(curve: StepSurvivalCurve, horizon: float, n_tail: int = 50) -> list[tuple[float, float]]:
    pts = []
    times = curve.times[curve.times <= horizon]
    for i, t in enumerate(times):
        if i:
            pts.append((t, curve.values[i - 1]))
        pts.append((t, curve.values[i]))
    stop = min(horizon, curve.tail_start)
    pts.append((stop, float(curve(stop))))
    if curve.extrapolated and horizon > curve.tail_start:
        for t in np.linspace(curve.tail_start, horizon, n_tail)[1:]:
            pts.append((float(t), float(curve(t))))
    return pts


def svg_plot(curves: dict[str, StepSurvivalCurve], title: str = "Kaplan-Meier", width: int = 640, height: int = 400) -> str:
    """Self-contained SVG with one step line per named curve."""
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    pad = 50
    horizon = max(c.end_time for c in curves.values()) or 1.0
    sx = lambda t: pad + (width - 2 * pad) * t / horizon
    sy = lambda s: height - pad - (height - 2 * pad) * s
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for k in range(6):
        t, s = horizon * k / 5, k / 5
        parts.append(f'<text x="{sx(t):.1f}" y="{height - pad + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{t:.3g}</text>')
        parts.append(f'<text x="{pad - 6}" y="{sy(s) + 3:.1f}" text-anchor="end" font-family="sans-serif" font-size="10">{s:.1f}</text>')
    for i, (name, curve) in enumerate(curves.items()):
        color = colors[i % len(colors)]
        pts = " ".join(f"{sx(t):.2f},{sy(s):.2f}" for t, s in _step_points(curve, curve.end_time))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 4}" y="{pad + 14 * (i + 1)}" text-anchor="end" fill="{color}" font-family="sans-serif" font-size="12">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path: str | Path, curves: dict[str, StepSurvivalCurve], title: str = "Kaplan-Meier") -> None:
    _atomic_write(Path(path), svg_plot(curves, title))
