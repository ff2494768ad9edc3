"""Convergence and sampling-quality diagnostics.

R-hat is the rank-normalised split-chain statistic: the larger of the bulk
and folded versions. ESS uses Geyer's initial positive sequence on the
combined autocorrelation of all chains, with the monotone correction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import ShapeMismatch, TooFewSamples
from .summary import hpd, marginal_density

__all__ = [
    "r_hat",
    "ess",
    "autocorr_time",
    "suggest_thin",
    "DiagnosticsReport",
    "diagnose",
    "ReproducibilityReport",
    "reproducibility_check",
]

RHAT_MAX = 1.05
ESS_MIN = 400.0


def _as_chains(chains) -> np.ndarray:
    arr = np.asarray(chains, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("expected a (chains, draws) array")
    return arr


def _degenerate(arr: np.ndarray) -> bool:
    return bool(np.all(arr == arr.flat[0]))


def _split(arr: np.ndarray) -> np.ndarray:
    half = arr.shape[1] // 2
    return np.concatenate([arr[:, :half], arr[:, arr.shape[1] - half:]], axis=0)


def _rank_normal(arr: np.ndarray) -> np.ndarray:
    r = rankdata(arr, method="average").reshape(arr.shape)
    return ndtri((r - 0.375) / (arr.size + 0.25))


def _psrf(arr: np.ndarray) -> float:
    m, n = arr.shape
    means = arr.mean(axis=1)
    w = arr.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else math.inf
    var_plus = (n - 1) / n * w + b / n
    return math.sqrt(var_plus / w)


def r_hat(chains) -> float:
    """Potential scale reduction for one parameter across >= 2 chains.

    Parameters
    ----------
    chains : array_like, shape (m, n)
        ``m >= 2`` chains of equal length ``n >= 4``.

    Returns
    -------
    float
        ``max(bulk, tail)`` rank-normalised split R-hat; 1.0 for a sequence
        with no variation at all.
    """
    arr = np.asarray(chains, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise TooFewSamples("R-hat needs at least 2 chains")
    if arr.shape[1] < 4:
        raise TooFewSamples("R-hat needs chains of length >= 4")
    if _degenerate(arr):
        return 1.0
    split = _split(arr)
    bulk = _psrf(_rank_normal(split))
    folded = np.abs(split - np.median(split))
    tail = _psrf(_rank_normal(folded)) if not _degenerate(folded) else 1.0
    return max(bulk, tail)


def _autocov(arr: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row, via FFT."""
    m, n = arr.shape
    centred = arr - arr.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centred, n=size, axis=1)
    acov = np.fft.irfft(f * np.conjugate(f), n=size, axis=1)[:, :n]
    return acov / n


def ess(samples) -> float:
    """Effective sample size of one parameter.

    ``samples`` is a single sequence or an ``(m, n)`` array of chains. The
    result is ``m * n / tau`` where ``tau = 1 + 2 * sum(rho_k)``, truncated
    at the first negative pair sum, and is capped at ``m * n``. A constant
    sequence has ESS 1.
    """
    arr = _as_chains(samples)
    m, n = arr.shape
    if n < 10:
        raise TooFewSamples(f"ESS needs at least 10 draws per chain, got {n}")
    if _degenerate(arr):
        return 1.0
    acov = _autocov(arr)
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += arr.mean(axis=1).var(ddof=1)
    if var_plus == 0:
        return 1.0
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # Geyer initial positive sequence over pairs (rho_2k + rho_2k+1), made monotone
    pairs = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    stop = np.flatnonzero(pairs <= 0)
    k = stop[0] if stop.size else pairs.size
    pairs = np.minimum.accumulate(pairs[:k]) if k else pairs[:0]
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / math.log10(m * n)) if m * n > 1 else 1.0
    return float(min(m * n / tau, m * n))


def autocorr_time(samples) -> float:
    """Integrated autocorrelation time: total draws per effective draw."""
    arr = _as_chains(samples)
    return arr.size / ess(arr)


def suggest_thin(samples) -> int:
    """Thinning stride that leaves roughly independent stored draws."""
    return max(1, math.ceil(autocorr_time(samples)))


@dataclass
class DiagnosticsReport:
    labels: tuple[str, ...]
    r_hat: dict
    ess: dict
    autocorr_time: dict
    suggested_thin: dict
    degenerate: tuple[str, ...]
    total_draws: int
    n_chains: int
    rhat_max: float = RHAT_MAX
    ess_min: float = ESS_MIN
    reproducibility: "ReproducibilityReport | None" = field(default=None)

    def failures(self) -> list[str]:
        out = []
        for lab in self.labels:
            rh = self.r_hat[lab]
            if rh is None:
                out.append(f"{lab}: R-hat not available with {self.n_chains} chain(s)")
            elif not rh < self.rhat_max:
                out.append(f"{lab}: R-hat {rh:.4f} >= {self.rhat_max}")
            if not self.ess[lab] > self.ess_min:
                out.append(f"{lab}: ESS {self.ess[lab]:.0f} <= {self.ess_min:g}")
        if self.reproducibility is not None and not self.reproducibility.passed:
            out.extend(f"{lab}: not reproducible within {self.reproducibility.tolerance} yr"
                       for lab in self.reproducibility.failing)
        return out

    @property
    def passed(self) -> bool:
        return not self.failures()

    def to_json(self) -> dict:
        out = {
            "thresholds": {"r_hat_max": self.rhat_max, "ess_min": self.ess_min},
            "n_chains": self.n_chains,
            "total_draws": self.total_draws,
            "passed": self.passed,
            "failures": self.failures(),
            "degenerate": list(self.degenerate),
            "parameters": {
                lab: {
                    "r_hat": self.r_hat[lab],
                    "ess": self.ess[lab],
                    "autocorr_time": self.autocorr_time[lab],
                    "suggested_thin": self.suggested_thin[lab],
                }
                for lab in self.labels
            },
        }
        if self.reproducibility is not None:
            out["reproducibility"] = self.reproducibility.to_json()
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n"

    def to_table(self) -> str:
        width = max(len(lab) for lab in self.labels)
        lines = [f"{'parameter':<{width}}  {'R-hat':>7}  {'ESS':>8}  {'tau':>7}  status"]
        for lab in self.labels:
            rh = self.r_hat[lab]
            ok = (rh is not None and rh < self.rhat_max) and self.ess[lab] > self.ess_min
            rh_s = "n/a" if rh is None else f"{rh:.3f}"
            lines.append(f"{lab:<{width}}  {rh_s:>7}  {self.ess[lab]:>8.0f}  "
                         f"{self.autocorr_time[lab]:>7.2f}  {'ok' if ok else 'FAIL'}")
        lines.append(f"thresholds: R-hat < {self.rhat_max}, ESS > {self.ess_min:g}; "
                     f"{self.n_chains} chain(s), {self.total_draws} stored draws")
        return "\n".join(lines) + "\n"


def _stack(outputs) -> tuple[tuple[str, ...], np.ndarray]:
    """(labels, array of shape (chains, draws, params)) from ChainOutputs."""
    outputs = list(outputs)
    if not outputs:
        raise TooFewSamples("no chains given")
    labels = tuple(outputs[0].labels)
    for o in outputs[1:]:
        if tuple(o.labels) != labels:
            raise ShapeMismatch("chains disagree on parameter labels")
    lengths = {o.samples.shape[0] for o in outputs}
    if len(lengths) != 1:
        raise ShapeMismatch(f"chains have different lengths: {sorted(lengths)}")
    return labels, np.stack([o.samples for o in outputs])


def diagnose(outputs, rhat_max: float = RHAT_MAX, ess_min: float = ESS_MIN) -> DiagnosticsReport:
    """Per-parameter R-hat, ESS and autocorrelation time for a multi-chain run."""
    labels, arr = _stack(outputs)
    m, n, _ = arr.shape
    rh, es, tau, thin, degen = {}, {}, {}, {}, []
    for p, lab in enumerate(labels):
        x = arr[:, :, p]
        if _degenerate(x):
            degen.append(lab)
        rh[lab] = r_hat(x) if m >= 2 else None
        es[lab] = ess(x)
        tau[lab] = x.size / es[lab]
        thin[lab] = max(1, math.ceil(tau[lab]))
    return DiagnosticsReport(labels, rh, es, tau, thin, tuple(degen), m * n, m,
                             rhat_max, ess_min)


@dataclass
class ReproducibilityReport:
    tolerance: float
    probability: float
    labels: tuple[str, ...]
    means: dict          # label -> list of per-run posterior means
    hpd_outer: dict      # label -> list of per-run (low, high)
    mean_delta: dict     # label -> max pairwise |delta mean|
    hpd_delta: dict      # label -> max pairwise |delta endpoint|

    @property
    def failing_means(self) -> list[str]:
        return [lab for lab in self.labels if not self.mean_delta[lab] <= self.tolerance]

    @property
    def failing_hpd(self) -> list[str]:
        return [lab for lab in self.labels if not self.hpd_delta[lab] <= self.tolerance]

    @property
    def failing(self) -> list[str]:
        bad = set(self.failing_means) | set(self.failing_hpd)
        return [lab for lab in self.labels if lab in bad]

    @property
    def passed(self) -> bool:
        return not self.failing

    def to_json(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "hpd_probability": self.probability,
            "passed": self.passed,
            "parameters": {
                lab: {
                    "means": self.means[lab],
                    "hpd_outer": [list(x) for x in self.hpd_outer[lab]],
                    "max_mean_delta": self.mean_delta[lab],
                    "max_hpd_delta": self.hpd_delta[lab],
                    "mean_ok": self.mean_delta[lab] <= self.tolerance,
                    "hpd_ok": self.hpd_delta[lab] <= self.tolerance,
                }
                for lab in self.labels
            },
        }


def reproducibility_check(runs, tolerance: float, probability: float = 0.95,
                          grid_step: float = 1.0) -> ReproducibilityReport:
    """Compare posterior means and HPD endpoints across repeated runs.

    Parameters
    ----------
    runs : sequence of sequences of ChainOutput
        At least two runs of the same model, differing only in seed.
    tolerance : float
        Largest acceptable difference in calendar years. There is no default:
        what counts as close enough depends on the period being dated.

    Raises
    ------
    ShapeMismatch
        If the runs do not share the same parameters.
    """
    runs = [list(r) for r in runs]
    if len(runs) < 2:
        raise TooFewSamples("reproducibility needs at least 2 runs")
    stacked = [_stack(r) for r in runs]
    labels = stacked[0][0]
    for labs, _ in stacked[1:]:
        if labs != labels:
            raise ShapeMismatch(f"runs disagree on parameters: {labels} vs {labs}")

    means, outer, d_mean, d_hpd = {}, {}, {}, {}
    for p, lab in enumerate(labels):
        ms, ends = [], []
        for _, arr in stacked:
            x = arr[:, :, p].ravel()
            ms.append(float(x.mean()))
            ends.append(hpd(marginal_density(x, grid_step), probability).outer)
        means[lab] = ms
        outer[lab] = ends
        d_mean[lab] = max(abs(a - b) for a in ms for b in ms)
        d_hpd[lab] = max(max(abs(a[0] - b[0]), abs(a[1] - b[1])) for a in ends for b in ends)
    return ReproducibilityReport(float(tolerance), probability, labels, means, outer,
                                 d_mean, d_hpd)
