"""Densities on calendar grids: calibration, marginals, HPD regions, grid oracle."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .calcurve import CalibrationCurve
from .errors import GridTooLarge, TooFewSamples
from .inference import posterior_log
from .model import ChronModel

__all__ = [
    "DensityGrid",
    "HpdResult",
    "OracleResult",
    "calibrate_independent",
    "grid_posterior_oracle",
    "marginal_density",
    "hpd",
    "tv_distance",
]

_NORM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """A normalised density on a uniform ascending grid of calendar ages.

    ``density[k]`` is the density at ``theta[k]``, standing for the cell
    ``theta[k] +/- step/2``; ``sum(density) * step == 1``.
    """

    theta: np.ndarray
    density: np.ndarray
    step: float

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        dens = np.array(self.density, dtype=np.float64)
        if theta.ndim != 1 or theta.shape != dens.shape or theta.size == 0:
            raise ValueError("theta and density must be equal-length non-empty 1-D arrays")
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise ValueError("density must be finite and non-negative")
        if theta.size > 1 and not np.allclose(np.diff(theta), self.step, rtol=1e-9, atol=1e-9):
            raise ValueError("grid must be uniform with the stated step")
        if abs(dens.sum() * self.step - 1.0) > _NORM_TOL:
            raise ValueError(f"density integrates to {dens.sum() * self.step!r}, not 1")
        theta.setflags(write=False)
        dens.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "density", dens)
        object.__setattr__(self, "step", float(self.step))

    @classmethod
    def from_weights(cls, theta, weights, step: float) -> "DensityGrid":
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not total > 0:
            raise ValueError("weights sum to zero")
        return cls(theta, w / (total * step), step)

    @property
    def mass(self) -> np.ndarray:
        return self.density * self.step

    def mean(self) -> float:
        return float(np.sum(self.theta * self.mass))

    def sd(self) -> float:
        m = self.mean()
        return float(math.sqrt(np.sum((self.theta - m) ** 2 * self.mass)))

    def mode(self) -> float:
        return float(self.theta[np.argmax(self.density)])

    def to_csv(self) -> str:
        lines = ["theta,density"]
        lines.extend(f"{t!r},{d!r}" for t, d in zip(self.theta.tolist(), self.density.tolist()))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "DensityGrid":
        """Read ``theta,density`` CSV as written by ``to_csv``.

        Raises ``ValueError`` with a line number on malformed input.
        """
        rows = []
        for lineno, line in enumerate(io.StringIO(text), start=1):
            line = line.strip()
            if not line or line.startswith("#") or (lineno == 1 and line[0].isalpha()):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 2 columns")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise ValueError(f"line {lineno}: non-numeric value") from None
        if not rows:
            raise ValueError("no density rows")
        arr = np.array(rows)
        step = float(arr[1, 0] - arr[0, 0]) if len(rows) > 1 else 1.0
        if not step > 0:
            raise ValueError("theta must be ascending")
        return cls.from_weights(arr[:, 0], arr[:, 1], step)


@dataclass(frozen=True)
class HpdResult:
    """Highest-density region as grid-point intervals.

    Interval ends are cell centres, so each interval covers
    ``[low - step/2, high + step/2]``.
    """

    probability: float
    intervals: tuple[tuple[float, float], ...]
    achieved_mass: float
    step: float = 1.0

    @property
    def width(self) -> float:
        """Total calendar length covered by the region's cells."""
        return sum(hi - lo + self.step for lo, hi in self.intervals)

    @property
    def outer(self) -> tuple[float, float]:
        return self.intervals[0][0], self.intervals[-1][1]

    def to_json(self) -> dict:
        return {
            "probability": self.probability,
            "intervals": [list(iv) for iv in self.intervals],
            "achieved_mass": self.achieved_mass,
            "step": self.step,
            "width": self.width,
        }


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    start = math.ceil(lo / step - 1e-9) * step
    n = int(math.floor((hi - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def calibrate_independent(x: float, sigma: float, curve: CalibrationCurve,
                          grid_step: float = 1.0, lo: float | None = None,
                          hi: float | None = None, trim: float = 1e-12) -> DensityGrid:
    """Calibrate one determination on its own under a flat calendar prior.

    The grid covers ``[lo, hi]`` (default: the whole curve) at ``grid_step``;
    tails where the density falls below ``trim`` times its peak are cut off
    before normalising. Pass ``trim=0`` to keep the full range.
    """
    c_lo, c_hi = curve.domain
    lo = c_lo if lo is None else lo
    hi = c_hi if hi is None else hi
    if lo < c_lo or hi > c_hi or not hi > lo:
        raise ValueError(f"grid [{lo}, {hi}] must lie inside the curve domain [{c_lo}, {c_hi}]")
    theta = _grid(lo, hi, grid_step)
    mu, gamma = curve.interp(theta)
    s2 = sigma * sigma + gamma * gamma
    ll = -((x - mu) ** 2) / (2.0 * s2) - 0.5 * np.log(s2)
    w = np.exp(ll - ll.max())
    if trim > 0:
        keep = np.flatnonzero(w >= trim)
        theta, w = theta[keep[0]:keep[-1] + 1], w[keep[0]:keep[-1] + 1]
    return DensityGrid.from_weights(theta, w, grid_step)


def marginal_density(samples, grid_step: float = 1.0, smooth: float | None = None) -> DensityGrid:
    """Histogram of MCMC draws on a grid aligned to multiples of ``grid_step``.

    ``smooth`` applies a Gaussian kernel with that standard deviation in
    calendar years. It is meant for display only; HPD regions should be
    taken from the raw histogram.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 100:
        raise TooFewSamples(f"need at least 100 samples, got {x.size}")
    k_lo = math.floor(x.min() / grid_step + 0.5)
    k_hi = math.floor(x.max() / grid_step + 0.5)
    theta = grid_step * np.arange(k_lo, k_hi + 1)
    idx = np.floor(x / grid_step + 0.5).astype(np.int64) - k_lo
    counts = np.bincount(idx, minlength=theta.size).astype(np.float64)
    if smooth:
        from scipy.ndimage import gaussian_filter1d

        pad = int(math.ceil(4 * smooth / grid_step))
        theta = grid_step * np.arange(k_lo - pad, k_hi + pad + 1)
        counts = gaussian_filter1d(np.pad(counts, pad), smooth / grid_step, mode="constant")
    return DensityGrid.from_weights(theta, counts, grid_step)


def hpd(density: DensityGrid, probability: float) -> HpdResult:
    """Highest-density region holding at least ``probability`` of the mass.

    Cells are taken in decreasing density order until the running mass
    reaches the target; adjacent chosen cells merge into intervals, so a
    multimodal density gives several. Interval ends are grid points.
    """
    if not 0 < probability < 1:
        raise ValueError("probability must be in (0, 1)")
    mass = density.mass
    order = np.argsort(-density.density, kind="stable")
    cum = np.cumsum(mass[order])
    k = int(np.searchsorted(cum, probability, side="left"))
    k = min(k, mass.size - 1)
    chosen = np.zeros(mass.size, dtype=bool)
    chosen[order[:k + 1]] = True
    achieved = float(mass[chosen].sum())

    intervals = []
    edges = np.diff(np.concatenate(([0], chosen.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    for a, b in zip(starts, ends):
        intervals.append((float(density.theta[a]), float(density.theta[b])))
    return HpdResult(float(probability), tuple(intervals), achieved, density.step)


def tv_distance(a: DensityGrid, b: DensityGrid) -> float:
    """Total-variation distance between two densities on aligned grids."""
    if not math.isclose(a.step, b.step, rel_tol=1e-9):
        raise ValueError("grids have different steps")
    step = a.step
    ka = np.rint(a.theta / step).astype(np.int64)
    kb = np.rint(b.theta / step).astype(np.int64)
    if np.any(np.abs(ka * step - a.theta) > 1e-6 * step) or \
            np.any(np.abs(kb * step - b.theta) > 1e-6 * step):
        raise ValueError("grids are not aligned to multiples of the step")
    lo, hi = min(ka[0], kb[0]), max(ka[-1], kb[-1])
    pa = np.zeros(hi - lo + 1)
    pb = np.zeros(hi - lo + 1)
    pa[ka - lo] = a.mass
    pb[kb - lo] = b.mass
    return 0.5 * float(np.abs(pa - pb).sum())


# --------------------------------------------------------------------------
# grid oracle


@dataclass(frozen=True, eq=False)
class OracleResult:
    marginals: dict
    axes: tuple
    joint: np.ndarray | None


def grid_posterior_oracle(model: ChronModel, curve: CalibrationCurve, grid_step: float = 1.0,
                          max_cells: float = 1e8, joint_cells: float = 1e7) -> OracleResult:
    """Exact-on-the-grid posterior of a model with at most three slots.

    Every slot ranges over the calendar window at ``grid_step``; the posterior
    is evaluated at every point of the product grid. The grid is a midpoint
    quadrature of the continuous posterior, so points sitting exactly on an
    ordering or window inequality get half weight per tight inequality.
    Boundary pairs ``alpha > beta`` stay strict. The joint array is kept
    when it has at most ``joint_cells`` entries.

    Raises
    ------
    GridTooLarge
        More than three slots, or more than ``max_cells`` grid points.
    """
    n = model.n_params
    if n > 3:
        raise GridTooLarge(f"grid oracle handles at most 3 parameters, model has {n}")
    t_max, t_min = model.calendar_window
    axis = _grid(t_min, t_max, grid_step)
    cells = float(axis.size) ** n
    if cells > max_cells:
        raise GridTooLarge(f"{cells:.3g} grid cells exceeds the limit of {max_cells:.3g}")

    relaxed = []
    tight = []
    for c in model.constraints:
        if c.kind.startswith("boundary order"):
            relaxed.append(c)
        else:
            relaxed.append(replace(c, strict=False))
            tight.append(c)

    rest = np.stack(np.meshgrid(*([axis] * (n - 1)), indexing="ij"), axis=-1) if n > 1 else None
    keep_joint = cells <= joint_cells
    acc = [np.zeros(axis.size) for _ in range(n)]
    top = -np.inf
    slabs = []
    for i, v0 in enumerate(axis):
        if rest is None:
            states = np.array([v0])
        else:
            states = np.concatenate([np.full(rest.shape[:-1] + (1,), v0), rest], axis=-1)
        lp = np.asarray(posterior_log(states, model, curve, constraints=relaxed), dtype=np.float64)
        for c in tight:
            hi = c.bound if c.older is None else states[..., c.older]
            lo = c.bound if c.younger is None else states[..., c.younger]
            lp = np.where(hi == lo, lp + math.log(0.5), lp)
        m = lp.max()
        if m > top:
            if np.isfinite(top):
                scale = math.exp(top - m)
                acc = [a * scale for a in acc]
                slabs = [sl * scale for sl in slabs]
            top = m
        w = np.exp(lp - top) if np.isfinite(top) else np.zeros_like(lp)
        acc[0][i] += w.sum()
        for k in range(1, n):
            other = tuple(j for j in range(n - 1) if j != k - 1)
            acc[k] += w.sum(axis=other) if other else w
        if keep_joint:
            slabs.append(w)
    if not np.isfinite(top):
        raise ValueError("posterior is zero on the whole grid")

    marginals = {label: DensityGrid.from_weights(axis, acc[slot], grid_step)
                 for slot, label in enumerate(model.labels)}
    joint = None
    if keep_joint:
        joint = np.stack(slabs).reshape((axis.size,) * n)
        joint = joint / (joint.sum() * grid_step ** n)
    return OracleResult(marginals, tuple(axis for _ in range(n)), joint)
