"""Radiocarbon calibration curves.

A curve is a table of knots ``(cal BP, 14C age BP, 1-sigma BP)``. Between
knots both the curve mean and its standard deviation are interpolated
linearly; outside the knot range the curve is undefined.
"""

from __future__ import annotations

import re
from bisect import bisect_right
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateCalAge,
    MalformedRow,
    NegativeSigma,
    ThetaOutOfDomain,
    TooFewKnots,
)

__all__ = [
    "CurveKnot",
    "CalibrationCurve",
    "parse_curve",
    "serialize_curve",
    "load_curve",
    "builtin_curves",
    "curve_at",
]

_SPLIT = re.compile(r"[,\s]+")


@dataclass(frozen=True)
class CurveKnot:
    cal_age: float
    c14_age: float
    curve_sd: float


@dataclass(frozen=True, eq=False)
class CalibrationCurve:
    """Immutable piecewise-linear calibration curve.

    Knot columns are held as read-only float64 arrays sorted by ascending
    calendar age, so a curve can be shared freely between samplers.
    """

    name: str
    cal_age: np.ndarray
    c14_age: np.ndarray
    curve_sd: np.ndarray
    _cal_list: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cols = []
        for col in (self.cal_age, self.c14_age, self.curve_sd):
            arr = np.array(col, dtype=np.float64)
            arr.setflags(write=False)
            cols.append(arr)
        cal, mu, sd = cols
        if not (cal.ndim == 1 and cal.shape == mu.shape == sd.shape):
            raise ValueError("knot columns must be 1-D and equal length")
        if cal.size < 2:
            raise TooFewKnots(f"a curve needs at least 2 knots, got {cal.size}")
        if not np.all(np.isfinite(cal)):
            raise ValueError("calendar ages must be finite")
        if np.any(np.diff(cal) <= 0):
            raise ValueError("knots must be strictly ascending in cal_age")
        if np.any(sd < 0):
            raise NegativeSigma("curve standard deviation must be >= 0")
        object.__setattr__(self, "cal_age", cal)
        object.__setattr__(self, "c14_age", mu)
        object.__setattr__(self, "curve_sd", sd)
        object.__setattr__(self, "_cal_list", cal.tolist())

    @classmethod
    def from_knots(cls, knots, name: str = "curve") -> "CalibrationCurve":
        """Build a curve from ``CurveKnot``s or ``(cal, c14, sd)`` triples in any order."""
        rows = sorted((float(k[0]), float(k[1]), float(k[2])) if not isinstance(k, CurveKnot)
                      else (k.cal_age, k.c14_age, k.curve_sd) for k in knots)
        arr = np.array(rows, dtype=np.float64).reshape(-1, 3)
        return cls(name, arr[:, 0], arr[:, 1], arr[:, 2])

    @property
    def knots(self) -> list[CurveKnot]:
        return [CurveKnot(*row) for row in zip(self.cal_age.tolist(),
                                               self.c14_age.tolist(),
                                               self.curve_sd.tolist())]

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.cal_age[0]), float(self.cal_age[-1])

    def __len__(self):
        return self.cal_age.size

    def __eq__(self, other):
        if not isinstance(other, CalibrationCurve):
            return NotImplemented
        return (self.name == other.name
                and np.array_equal(self.cal_age, other.cal_age)
                and np.array_equal(self.c14_age, other.c14_age)
                and np.array_equal(self.curve_sd, other.curve_sd))

    __hash__ = None

    def __call__(self, theta):
        return curve_at(self, theta)

    def interp(self, theta):
        """Vectorised ``(mu, gamma)`` at an array of calendar ages.

        Values outside the domain come back as NaN instead of raising.
        """
        theta = np.asarray(theta, dtype=np.float64)
        lo, hi = self.domain
        mu = np.interp(theta, self.cal_age, self.c14_age)
        sd = np.interp(theta, self.cal_age, self.curve_sd)
        outside = (theta < lo) | (theta > hi) | np.isnan(theta)
        if np.any(outside):
            mu = np.where(outside, np.nan, mu)
            sd = np.where(outside, np.nan, sd)
        return mu, sd


def curve_at(curve: CalibrationCurve, theta: float) -> tuple[float, float]:
    """Curve mean and standard deviation (both BP) at calendar age ``theta``.

    Raises
    ------
    ThetaOutOfDomain
        If ``theta`` lies outside the knot range.
    """
    theta = float(theta)
    cal = curve._cal_list
    if not (cal[0] <= theta <= cal[-1]):
        raise ThetaOutOfDomain(theta, curve.domain)
    i = bisect_right(cal, theta) - 1
    if cal[i] == theta:
        return float(curve.c14_age[i]), float(curve.curve_sd[i])
    c0, c1 = cal[i], cal[i + 1]
    w = (theta - c0) / (c1 - c0)
    mu0, mu1 = float(curve.c14_age[i]), float(curve.c14_age[i + 1])
    sd0, sd1 = float(curve.curve_sd[i]), float(curve.curve_sd[i + 1])
    return mu0 + w * (mu1 - mu0), sd0 + w * (sd1 - sd0)


def parse_curve(text: str, name: str = "curve") -> CalibrationCurve:
    """Parse a calibration curve table.

    Rows hold at least three comma- or whitespace-separated numbers:
    calendar age (cal BP), radiocarbon age (BP) and the curve's one-sigma
    error (BP). Further columns are ignored. Lines starting with ``#`` and
    blank lines are skipped. Rows may be in either calendar order.

    Raises
    ------
    MalformedRow, NegativeSigma, DuplicateCalAge, TooFewKnots
        All carry the 1-based line number where applicable.
    """
    rows = []
    seen: dict[float, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f for f in _SPLIT.split(line) if f]
        if len(fields) < 3:
            raise MalformedRow(f"expected 3 columns, found {len(fields)}", lineno)
        try:
            cal, c14, sd = (float(f) for f in fields[:3])
        except ValueError:
            raise MalformedRow(f"non-numeric value in {line!r}", lineno) from None
        if not all(np.isfinite((cal, c14, sd))):
            raise MalformedRow(f"non-finite value in {line!r}", lineno)
        if sd < 0:
            raise NegativeSigma(f"negative sigma {sd!r}", lineno)
        if cal in seen:
            raise DuplicateCalAge(f"cal age {cal!r} already given on line {seen[cal]}", lineno)
        seen[cal] = lineno
        rows.append((cal, c14, sd))
    if len(rows) < 2:
        raise TooFewKnots(f"a curve needs at least 2 knots, got {len(rows)}")
    rows.sort()
    arr = np.array(rows, dtype=np.float64)
    return CalibrationCurve(name, arr[:, 0], arr[:, 1], arr[:, 2])


def serialize_curve(curve: CalibrationCurve) -> str:
    """Comma-separated text that ``parse_curve`` reads back bit-exactly."""
    out = [f"# {curve.name}", "# cal BP,14C age BP,sigma BP"]
    for cal, mu, sd in zip(curve.cal_age.tolist(), curve.c14_age.tolist(),
                           curve.curve_sd.tolist()):
        out.append(f"{cal!r},{mu!r},{sd!r}")
    return "\n".join(out) + "\n"


def builtin_curves() -> list[str]:
    """Names of curves shipped with the package."""
    data = resources.files("stratcal") / "data"
    return sorted(p.name.rsplit(".", 1)[0] for p in data.iterdir() if p.name.endswith(".14c"))


def load_curve(source: str | Path) -> CalibrationCurve:
    """Load a curve from a file path or a built-in name such as ``"intcal13"``."""
    path = Path(source)
    if path.is_file():
        return parse_curve(path.read_text(encoding="utf-8", errors="replace"), name=path.stem)
    name = str(source)
    res = resources.files("stratcal") / "data" / f"{name}.14c"
    if res.is_file():
        return parse_curve(res.read_text(encoding="utf-8"), name=name)
    raise FileNotFoundError(f"no curve file or built-in curve named {name!r}")
