"""Posterior evaluation and constrained Metropolis-within-Gibbs sampling.

The posterior over all slots of a ``ChronModel`` is

    log p = sum_j -n_j log(alpha_j - beta_j)                 (phase prior)
          + sum_i loglik(x_i, sigma_i, theta_i)              (data)
          + log 1[all ordering constraints hold]

with ``loglik = -(x - mu)^2 / (2 s2) - log(s2) / 2`` and
``s2 = sigma^2 + gamma(theta)^2``. ``posterior_log`` evaluates this directly
(vectorised over stacks of states); the sampler kernel works with per-slot
differences instead and never calls it.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numba
import numpy as np

from .calcurve import CalibrationCurve, curve_at
from .errors import InfeasibleModel
from .model import ChronModel, ParameterState, check_constraints, feasible_init, sampling_range

__all__ = [
    "SamplerConfig",
    "ChainOutput",
    "loglik_single",
    "prior_log",
    "posterior_log",
    "run_chain",
    "run_sampler",
    "chain_seeds",
]

DEFAULT_PROPOSAL_SD = 30.0
ADAPT_INTERVAL = 100
_BLOCK = 2000


@dataclass(frozen=True)
class SamplerConfig:
    """MCMC run settings.

    ``proposal_sd`` is the initial random-walk scale in calendar years for
    every slot; with ``adapt`` on it is tuned per slot during burn-in and
    frozen afterwards. A fraction ``wide_prob`` of steps is drawn
    ``wide_factor`` times wider, which lets chains hop between the separate
    likelihood peaks that calibration-curve wiggles produce. The step
    distribution stays symmetric, so acceptance is plain Metropolis. Set
    ``wide_prob=0`` for a single-scale Gaussian walk.
    """

    iterations: int = 200_000
    burn_in: int = 20_000
    thin: int = 20
    chains: int = 4
    seed: int = 0
    proposal_sd: float = DEFAULT_PROPOSAL_SD
    adapt: bool = True
    wide_prob: float = 0.1
    wide_factor: float = 10.0

    def __post_init__(self):
        for name in ("iterations", "burn_in", "thin", "chains", "seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        sd = float(self.proposal_sd)
        if not (sd > 0 and math.isfinite(sd)):
            raise ValueError("proposal_sd must be positive")
        object.__setattr__(self, "proposal_sd", sd)
        object.__setattr__(self, "adapt", bool(self.adapt))
        wp, wf = float(self.wide_prob), float(self.wide_factor)
        if not 0.0 <= wp < 1.0:
            raise ValueError("wide_prob must be in [0, 1)")
        if not (wf >= 1.0 and math.isfinite(wf)):
            raise ValueError("wide_factor must be >= 1")
        object.__setattr__(self, "wide_prob", wp)
        object.__setattr__(self, "wide_factor", wf)

    @property
    def kept(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class ChainOutput:
    """Retained draws of one chain plus what is needed to reproduce them."""

    chain_id: int
    labels: tuple[str, ...]
    samples: np.ndarray
    config: SamplerConfig
    init_seed: int
    initial: np.ndarray
    acceptance: np.ndarray
    proposal_sd: np.ndarray
    wall_time: float = field(default=0.0)

    def to_csv(self) -> str:
        lines = [",".join(self.labels)]
        lines.extend(",".join(repr(v) for v in row) for row in self.samples.tolist())
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "labels": list(self.labels),
            "config": self.config.to_dict(),
            "init_seed": self.init_seed,
            "kept": int(self.samples.shape[0]),
            "initial": dict(zip(self.labels, self.initial.tolist())),
            "acceptance": dict(zip(self.labels, self.acceptance.tolist())),
            "proposal_sd": dict(zip(self.labels, self.proposal_sd.tolist())),
            "wall_time": self.wall_time,
        }

    def column(self, label: str) -> np.ndarray:
        return self.samples[:, self.labels.index(label)]


def read_chain_csv(text: str) -> tuple[tuple[str, ...], np.ndarray]:
    """Labels and sample matrix from ``ChainOutput.to_csv`` text."""
    lines = text.strip().splitlines()
    labels = tuple(lines[0].split(","))
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    return labels, np.array(rows, dtype=np.float64).reshape(-1, len(labels))


# --------------------------------------------------------------------------
# densities


def loglik_single(x: float, sigma: float, theta: float, curve: CalibrationCurve) -> float:
    """Log-likelihood of one determination ``x +/- sigma`` at calendar age ``theta``.

    Includes the ``-log(s2)/2`` term because the curve error, and therefore
    the total variance, changes with ``theta``.

    Raises
    ------
    ThetaOutOfDomain
    """
    mu, gamma = curve_at(curve, theta)
    s2 = sigma * sigma + gamma * gamma
    return -((x - mu) ** 2) / (2.0 * s2) - 0.5 * math.log(s2)


def _as_values(state) -> np.ndarray:
    if isinstance(state, ParameterState):
        return state.values
    return np.asarray(state, dtype=np.float64)


def _phase_terms(model: ChronModel):
    idx = model.index
    return [(idx[c.alpha], idx[c.beta], len(c.determinations))
            for c in model.contexts if c.boundaries]


def prior_log(state, model: ChronModel, constraints=None):
    """Unnormalised log prior; ``-inf`` wherever any constraint fails.

    Accepts one state or a stack of states (slots on the last axis).
    ``constraints`` replaces ``model.constraints`` when given.
    """
    v = _as_values(state)
    if constraints is None:
        constraints = model.constraints
    ok = np.asarray(check_constraints(v, constraints))
    lp = np.zeros(v.shape[:-1])
    for a, b, n in _phase_terms(model):
        if n == 0:
            continue
        width = v[..., a] - v[..., b]
        lp = lp - n * np.log(np.where(width > 0, width, 1.0))
    lp = np.where(ok, lp, -np.inf)
    return float(lp) if lp.ndim == 0 else lp


def loglik_all(state, model: ChronModel, curve: CalibrationCurve):
    """Summed data log-likelihood; ``-inf`` where any theta is off the curve."""
    v = _as_values(state)
    total = np.zeros(v.shape[:-1])
    for slot, d in enumerate(model.determinations):
        mu, gamma = curve.interp(v[..., slot])
        s2 = d.sigma ** 2 + gamma ** 2
        with np.errstate(invalid="ignore"):
            term = -((d.x - mu) ** 2) / (2.0 * s2) - 0.5 * np.log(s2)
        total = total + np.where(np.isnan(term), -np.inf, term)
    return float(total) if total.ndim == 0 else total


def posterior_log(state, model: ChronModel, curve: CalibrationCurve, constraints=None):
    """Unnormalised log posterior (prior + data); never raises for bad states."""
    lp = prior_log(state, model, constraints)
    ll = loglik_all(state, model, curve)
    with np.errstate(invalid="ignore"):
        out = np.where(np.isneginf(lp) | np.isneginf(ll), -np.inf, np.add(lp, ll))
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# compiled model layout for the kernel


class _Layout(NamedTuple):
    lo_ptr: np.ndarray       # CSR: slots that must be younger than slot s
    lo_idx: np.ndarray
    lo_strict: np.ndarray
    up_ptr: np.ndarray       # CSR: slots that must be older than slot s
    up_idx: np.ndarray
    up_strict: np.ndarray
    win_hi: float
    win_lo: float
    det_x: np.ndarray        # per slot; only meaningful where is_theta
    det_var: np.ndarray
    is_theta: np.ndarray
    cal: np.ndarray
    mu: np.ndarray
    gam: np.ndarray
    ctx_ptr: np.ndarray      # CSR: phase terms touching slot s
    ctx_idx: np.ndarray
    alpha_slot: np.ndarray
    beta_slot: np.ndarray
    n_dates: np.ndarray


def _csr(n, pairs):
    pairs = sorted(pairs)
    ptr = np.zeros(n + 1, dtype=np.int64)
    for s, _, _ in pairs:
        ptr[s + 1] += 1
    ptr = np.cumsum(ptr)
    idx = np.array([p[1] for p in pairs], dtype=np.int64)
    strict = np.array([p[2] for p in pairs], dtype=np.bool_)
    return ptr, idx, strict


def _layout(model: ChronModel, curve: CalibrationCurve) -> _Layout:
    n = model.n_params
    lower, upper = [], []
    for c in model.constraints:
        if c.older is None or c.younger is None:
            continue
        lower.append((c.older, c.younger, c.strict))
        upper.append((c.younger, c.older, c.strict))
    lo_ptr, lo_idx, lo_strict = _csr(n, lower)
    up_ptr, up_idx, up_strict = _csr(n, upper)

    det_x = np.zeros(n)
    det_var = np.ones(n)
    is_theta = np.zeros(n, dtype=np.bool_)
    for slot, d in enumerate(model.determinations):
        det_x[slot] = d.x
        det_var[slot] = d.sigma ** 2
        is_theta[slot] = True

    terms = _phase_terms(model)
    touch = []
    for j, (a, b, _) in enumerate(terms):
        touch.append((a, j, False))
        touch.append((b, j, False))
    ctx_ptr, ctx_idx, _ = _csr(n, touch)
    t_max, t_min = model.calendar_window
    return _Layout(
        lo_ptr, lo_idx, lo_strict, up_ptr, up_idx, up_strict, float(t_max), float(t_min),
        det_x, det_var, is_theta,
        np.ascontiguousarray(curve.cal_age), np.ascontiguousarray(curve.c14_age),
        np.ascontiguousarray(curve.curve_sd),
        ctx_ptr, ctx_idx,
        np.array([t[0] for t in terms], dtype=np.int64),
        np.array([t[1] for t in terms], dtype=np.int64),
        np.array([t[2] for t in terms], dtype=np.float64),
    )


@numba.njit(cache=True)
def _loglik_kernel(x, var, theta, cal, mu, gam):
    n = cal.size
    if not (cal[0] <= theta <= cal[n - 1]):
        return -np.inf
    i = np.searchsorted(cal, theta, side="right") - 1
    if i >= n - 1 or cal[i] == theta:
        m = mu[i]
        g = gam[i]
    else:
        w = (theta - cal[i]) / (cal[i + 1] - cal[i])
        m = mu[i] + w * (mu[i + 1] - mu[i])
        g = gam[i] + w * (gam[i + 1] - gam[i])
    s2 = var + g * g
    return -((x - m) ** 2) / (2.0 * s2) - 0.5 * np.log(s2)


@numba.njit(cache=True)
def _slot_delta(v, s, prop,
                lo_ptr, lo_idx, lo_strict, up_ptr, up_idx, up_strict, win_hi, win_lo,
                det_x, det_var, is_theta, cal, mu, gam,
                ctx_ptr, ctx_idx, alpha_slot, beta_slot, n_dates):
    """Change in log posterior when slot ``s`` moves to ``prop``; -inf if infeasible."""
    if prop > win_hi or prop < win_lo:
        return -np.inf
    for k in range(lo_ptr[s], lo_ptr[s + 1]):
        other = v[lo_idx[k]]
        if lo_strict[k]:
            if not prop > other:
                return -np.inf
        elif not prop >= other:
            return -np.inf
    for k in range(up_ptr[s], up_ptr[s + 1]):
        other = v[up_idx[k]]
        if up_strict[k]:
            if not other > prop:
                return -np.inf
        elif not other >= prop:
            return -np.inf
    delta = 0.0
    if is_theta[s]:
        new = _loglik_kernel(det_x[s], det_var[s], prop, cal, mu, gam)
        if new == -np.inf:
            return -np.inf
        delta += new - _loglik_kernel(det_x[s], det_var[s], v[s], cal, mu, gam)
    for k in range(ctx_ptr[s], ctx_ptr[s + 1]):
        j = ctx_idx[k]
        if n_dates[j] == 0.0:
            continue
        a = v[alpha_slot[j]]
        b = v[beta_slot[j]]
        old_w = a - b
        if alpha_slot[j] == s:
            a = prop
        else:
            b = prop
        delta -= n_dates[j] * (np.log(a - b) - np.log(old_w))
    return delta


@numba.njit(cache=True)
def _sweeps(v, sd, z, logu, accepts, out, out_pos, t0, burn_in, thin,
            lo_ptr, lo_idx, lo_strict, up_ptr, up_idx, up_strict, win_hi, win_lo,
            det_x, det_var, is_theta, cal, mu, gam,
            ctx_ptr, ctx_idx, alpha_slot, beta_slot, n_dates):
    n_iter, n = z.shape
    for t in range(n_iter):
        for s in range(n):
            prop = v[s] + sd[s] * z[t, s]
            d = _slot_delta(v, s, prop,
                            lo_ptr, lo_idx, lo_strict, up_ptr, up_idx, up_strict,
                            win_hi, win_lo, det_x, det_var, is_theta, cal, mu, gam,
                            ctx_ptr, ctx_idx, alpha_slot, beta_slot, n_dates)
            if logu[t, s] < d:
                v[s] = prop
                accepts[s] += 1
        it = t0 + t
        if it >= burn_in and (it - burn_in + 1) % thin == 0:
            out[out_pos, :] = v
            out_pos += 1
    return out_pos


def slot_delta(values, slot: int, proposal: float, model: ChronModel,
               curve: CalibrationCurve) -> float:
    """Python entry to the kernel's incremental update (exposed for testing)."""
    lay = _layout(model, curve)
    v = np.array(_as_values(values), dtype=np.float64)
    return float(_slot_delta(v, int(slot), float(proposal), *lay))


# --------------------------------------------------------------------------
# drivers


def _steps(rng, size, n, config):
    z = rng.standard_normal((size, n))
    if config.wide_prob > 0:
        z = np.where(rng.random((size, n)) < config.wide_prob, z * config.wide_factor, z)
    return z


def chain_seeds(seed: int, chain_id: int) -> tuple[int, np.random.SeedSequence]:
    """Initial-state seed and MCMC seed sequence for one chain of a run."""
    init_ss, mcmc_ss = np.random.SeedSequence(seed, spawn_key=(chain_id,)).spawn(2)
    return int(init_ss.generate_state(1, np.uint64)[0]), mcmc_ss


def run_chain(model: ChronModel, curve: CalibrationCurve, config: SamplerConfig,
              chain_id: int = 0) -> ChainOutput:
    """Run one chain of single-site random-walk Metropolis.

    Each iteration visits every slot in index order, proposing
    ``value + N(0, sd^2)``. Proposals breaking a constraint or leaving the
    curve domain are rejected. Output depends only on
    ``(model, curve, config, chain_id)``.

    Raises
    ------
    InfeasibleModel
        If no feasible starting state exists.
    """
    started = time.perf_counter()
    init_seed, mcmc_ss = chain_seeds(config.seed, chain_id)
    state = feasible_init(model, curve, init_seed)
    if not np.isfinite(posterior_log(state, model, curve)):
        raise InfeasibleModel("initial state has zero posterior density")
    rng = np.random.default_rng(mcmc_ss)
    lay = _layout(model, curve)

    n = model.n_params
    v = np.array(state.values, dtype=np.float64)
    hi, lo = sampling_range(model, curve)
    sd = np.full(n, config.proposal_sd)
    sd_max = max(hi - lo, 1.0)
    out = np.empty((config.kept, n))
    out_pos = 0
    accepts = np.zeros(n, dtype=np.int64)

    t = 0
    batch = 0
    while t < config.iterations:
        adapting = config.adapt and t < config.burn_in
        if adapting:
            size = min(ADAPT_INTERVAL, config.burn_in - t)
        elif t < config.burn_in:
            size = min(_BLOCK, config.burn_in - t)
        else:
            size = min(_BLOCK, config.iterations - t)
        if t == config.burn_in:
            accepts[:] = 0
        z = _steps(rng, size, n, config)
        logu = np.log1p(-rng.random((size, n)))
        before = accepts.copy()
        out_pos = _sweeps(v, sd, z, logu, accepts, out, out_pos, t, config.burn_in,
                          config.thin, *lay)
        if adapting:
            batch += 1
            rate = (accepts - before) / size
            step = min(0.5, 1.0 / math.sqrt(batch))
            sd = np.where(rate > 0.44, sd * math.exp(step), sd * math.exp(-step))
            sd = np.clip(sd, 1e-3, sd_max)
        t += size

    post = config.iterations - config.burn_in
    return ChainOutput(
        chain_id=chain_id,
        labels=model.labels,
        samples=out[:out_pos],
        config=config,
        init_seed=init_seed,
        initial=np.array(state.values),
        acceptance=accepts / post,
        proposal_sd=sd,
        wall_time=time.perf_counter() - started,
    )


def _run_one(args):
    return run_chain(*args)


def run_sampler(model: ChronModel, curve: CalibrationCurve, config: SamplerConfig,
                workers: int = 1) -> list[ChainOutput]:
    """Run ``config.chains`` independent chains, returned in chain_id order.

    With ``workers > 1`` chains run in separate processes; results are
    identical to the sequential run.
    """
    jobs = [(model, curve, config, cid) for cid in range(config.chains)]
    if workers > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, config.chains)) as pool:
            outs = list(pool.map(_run_one, jobs))
    else:
        outs = [_run_one(j) for j in jobs]
    return sorted(outs, key=lambda o: o.chain_id)
