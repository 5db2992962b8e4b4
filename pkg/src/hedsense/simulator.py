"""Monte Carlo engine for one secondary user over hyper-exponential idle
periods.

A trial covers one PU idle period of length ``X``, measured from the
instant the channel frees. The SU transmits for the policy's interval,
then senses:

* PU present at a sensing instant (running time strictly past ``X``):
  detected with probability ``p_detect``; detection ends the trial, a miss
  keeps the SU transmitting for another interval.
* Channel idle: a false alarm (probability ``p_false``) makes the SU vacate
  and probe at exponential ``busy_rate`` intervals until a probe reports
  the channel idle, after which the policy restarts from its first
  interval.

Interference is any transmission after ``X``. Transmit time counts only
segments that finish before ``X``: the segment the PU interrupts collides
and is lost. With delayed occupancy the SU first has to find the idle
channel by busy-period probing; the overshoot is the missed opportunity.
With a sensing duration every sensing holds the SU silent for ``t_sense``.

Two engines share these semantics: :func:`run_full_trial` steps a single
trial through :class:`~hedsense.policies.SensingState`, and
:func:`simulate` advances whole blocks of trials with numpy.
"""

from __future__ import annotations

import math
from functools import lru_cache
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .cost import CostModel, realized_total_cost
from .distributions import HyperExp, sample
from .numerics import integrate, q_function, q_inverse
from .policies import PolicyParams, SensingState, interval_batch, next_interval

MAX_SENSINGS = 10_000_000
BLOCK_SIZE = 1 << 16


class RunawayTrialError(RuntimeError):
    """A trial needed more sensings than the guard allows (degenerate policy)."""


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ChannelModel:
    """PU channel: hyper-exponential idle periods.

    ``on_rate`` describes exponential busy periods. Busy-period probing is
    itself exponential, so the occupancy overshoot does not depend on the
    busy-period length and the engine never draws it.
    """

    off_dist: HyperExp
    on_rate: float | None = None

    def __post_init__(self) -> None:
        if self.on_rate is not None and not self.on_rate > 0:
            raise ValueError("on_rate must be positive")


@dataclass(frozen=True)
class SensingModel:
    """Energy-detector sensing parameters.

    ``snr`` is linear (-20 dB is 0.01). ``p_false`` overrides the false-alarm
    probability derived from the detector model when given.
    """

    p_detect: float = 0.9
    snr: float = 0.01
    sample_rate: float = 20e6
    t_sense: float = 0.0
    busy_rate: float = 100.0
    p_false: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.p_detect <= 1.0:
            raise ValueError("p_detect must lie in (0, 1]")
        if not self.snr > 0:
            raise ValueError("snr must be positive (linear scale)")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if not self.t_sense >= 0:
            raise ValueError("t_sense must be nonnegative")
        if not self.busy_rate > 0:
            raise ValueError("busy_rate must be positive")
        if self.p_false is not None and not 0.0 <= self.p_false < 1.0:
            raise ValueError("p_false must lie in [0, 1)")
        if self.p_false is None and self.p_detect >= 1.0:
            raise ValueError("p_detect = 1 needs an explicit p_false")

    @property
    def effective_p_false(self) -> float:
        return self.p_false if self.p_false is not None else false_alarm(self)


@dataclass(frozen=True)
class Flags:
    sensing_error: bool = False
    delayed_occupancy: bool = False
    sensing_duration: bool = False


@dataclass(frozen=True)
class TrialMetrics:
    n_sense: int
    interference: float
    missed_opportunity: float
    transmit_time: float
    total_cost: float
    idle: float


@dataclass(frozen=True)
class AggregateMetrics:
    mean_n: float
    se_n: float
    mean_interference: float
    se_interference: float
    mean_cost: float
    se_cost: float
    normalized_throughput: float
    se_throughput: float
    trial_count: int

    def as_dict(self) -> dict:
        return asdict(self)


def false_alarm(sm: SensingModel) -> float:
    """False-alarm probability of an energy detector held at ``p_detect``:
    ``Q(sqrt(2 snr + 1) Q^-1(p_detect) + sqrt(t_sense f_s) snr)``."""
    arg = math.sqrt(2.0 * sm.snr + 1.0) * q_inverse(sm.p_detect)
    arg += math.sqrt(sm.t_sense * sm.sample_rate) * sm.snr
    return q_function(arg)


@lru_cache(maxsize=64)
def delayed_phase_update(d: HyperExp, busy_rate: float, n: int = 20_000, mass_tol: float = 1e-10) -> np.ndarray:
    """Phase vector of the idle time left after a delayed occupancy.

    Averages the residual posterior ``p_i e^{-lam_i m} / sum_k p_k e^{-lam_k m}``
    against the exponential overshoot density ``busy_rate e^{-busy_rate m}``.
    The integral is cut where the overshoot mass left is below ``mass_tol``
    and the panel count is raised until panels resolve both the overshoot
    and the fastest phase.
    """
    if not busy_rate > 0:
        raise ValueError("busy_rate must be positive")
    if d.K == 1:
        return d.p
    upper = math.log(1.0 / mass_tol) / busy_rate
    scale = min(1.0 / busy_rate, 1.0 / d.max_rate)
    panels = int(min(max(n, math.ceil(upper / (0.02 * scale))), 2_000_000))
    logp = np.log(np.where(d.p > 0, d.p, 1.0)) + np.where(d.p > 0, 0.0, -np.inf)

    def integrand(m: np.ndarray) -> np.ndarray:
        logw = logp - np.multiply.outer(m, d.lam)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        post = w / w.sum(axis=1, keepdims=True)
        return post * (busy_rate * np.exp(-busy_rate * m))[:, None]

    pd = integrate(integrand, 0.0, upper, panels)
    total = float(pd.sum())
    if abs(total - 1.0) > 1e-7:
        raise QuadratureError(f"delayed phase weights sum to {total}, expected 1")
    out = pd / total
    out.flags.writeable = False
    return out


def _acquire(rng: np.random.Generator, idle: float, busy_rate: float, p_false: float) -> float:
    # busy-period probing from the instant the channel frees
    t = 0.0
    while True:
        t += rng.exponential(1.0 / busy_rate)
        if t >= idle:
            return t
        if p_false > 0.0 and rng.random() < p_false:
            continue
        return t


def run_idle_trial(
    d: HyperExp,
    params: PolicyParams,
    cm: CostModel,
    rng: np.random.Generator,
    idle: float | None = None,
) -> TrialMetrics:
    """One idle period with perfect, instantaneous sensing and immediate
    occupancy. ``idle`` injects the idle length instead of sampling it."""
    x = sample(d, rng) if idle is None else float(idle)
    state = SensingState(d.p)
    intervals: list[float] = []
    elapsed = 0.0
    transmit = 0.0
    while True:
        interval = next_interval(params, state, rng)
        intervals.append(interval)
        if elapsed + interval > x:
            break
        elapsed += interval
        transmit += interval
        if len(intervals) > MAX_SENSINGS:
            raise RunawayTrialError(f"trial exceeded {MAX_SENSINGS} sensings")
        state = state.advance(d, interval)
    cost, n, interf = realized_total_cost(cm, intervals, x)
    return TrialMetrics(n, interf, 0.0, transmit, cost, x)


def run_full_trial(
    ch: ChannelModel,
    sm: SensingModel,
    params: PolicyParams,
    cm: CostModel,
    flags: Flags,
    rng: np.random.Generator,
    idle: float | None = None,
    start_pv: np.ndarray | None = None,
    trace: list | None = None,
) -> TrialMetrics:
    """One idle period with the optional sensing errors, sensing duration and
    delayed occupancy.

    With every flag off the random stream is consumed exactly as in
    :func:`run_idle_trial`, and so is it when ``p_false == 0`` and
    ``p_detect == 1``. ``trace`` collects the :class:`SensingState` after
    every policy sensing.
    """
    d = ch.off_dist
    x = sample(d, rng) if idle is None else float(idle)
    p_false = sm.effective_p_false if flags.sensing_error else 0.0
    p_detect = sm.p_detect if flags.sensing_error else 1.0
    t_sense = sm.t_sense if flags.sensing_duration else 0.0
    if start_pv is None:
        start_pv = delayed_phase_update(d, sm.busy_rate) if flags.delayed_occupancy else d.p

    t = 0.0
    missed = 0.0
    if flags.delayed_occupancy:
        t = _acquire(rng, x, sm.busy_rate, p_false)
        if t >= x:
            return TrialMetrics(0, 0.0, x, 0.0, 0.0, x)
        missed = t

    def detected() -> bool:
        return p_detect >= 1.0 or rng.random() < p_detect

    n = 0
    interf = 0.0
    transmit = 0.0
    state = SensingState(start_pv)
    while True:
        interval = next_interval(params, state, rng)
        seg_start = t
        t += interval
        if t <= x:
            transmit += interval
        else:
            interf += t - max(seg_start, x)
        n += 1
        state = state.advance(d, interval)
        if trace is not None:
            trace.append(state)
        if n > MAX_SENSINGS:
            raise RunawayTrialError(f"trial exceeded {MAX_SENSINGS} sensings")
        present = t > x
        t += t_sense
        if present:
            if detected():
                break
            continue
        if not (p_false > 0.0 and rng.random() < p_false):
            continue
        # false alarm: probe until the channel reads idle again
        finished = False
        while True:
            t += rng.exponential(1.0 / sm.busy_rate)
            n += 1
            present = t > x
            t += t_sense
            if present:
                finished = detected()
                break
            if not rng.random() < p_false:
                break
        if finished:
            break
        state = SensingState(start_pv)
    return TrialMetrics(n, interf, missed, transmit, cm.combine(n, interf), x)


@dataclass
class TrialArrays:
    n_sense: np.ndarray
    interference: np.ndarray
    missed_opportunity: np.ndarray
    transmit_time: np.ndarray
    total_cost: np.ndarray
    idle: np.ndarray

    @classmethod
    def concat(cls, parts: Sequence["TrialArrays"]) -> "TrialArrays":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls.__dataclass_fields__))

    def __len__(self) -> int:
        return self.idle.size


def _simulate_block(
    d: HyperExp,
    sm: SensingModel,
    params: PolicyParams,
    cm: CostModel,
    flags: Flags,
    rng: np.random.Generator,
    size: int,
    idle: np.ndarray | None,
) -> TrialArrays:
    x = sample(d, rng, size) if idle is None else np.asarray(idle, dtype=float).copy()
    size = x.size
    p_false = sm.effective_p_false if flags.sensing_error else 0.0
    p_detect = sm.p_detect if flags.sensing_error else 1.0
    t_sense = sm.t_sense if flags.sensing_duration else 0.0
    probe_scale = 1.0 / sm.busy_rate

    out_n = np.zeros(size, dtype=np.int64)
    out_interf = np.zeros(size)
    out_tx = np.zeros(size)
    missed = np.zeros(size)
    t0 = np.zeros(size)

    if flags.delayed_occupancy:
        pending = np.arange(size)
        while pending.size:
            t0[pending] += rng.exponential(probe_scale, pending.size)
            # a probe while idle ends the search unless it raises a false alarm
            pending = pending[t0[pending] < x[pending]]
            if p_false > 0.0:
                pending = pending[rng.random(pending.size) < p_false]
            else:
                pending = pending[:0]
        missed = np.minimum(t0, x)

    # working set holds only unfinished trials; idx maps back to output slots
    idx = np.flatnonzero(t0 < x) if flags.delayed_occupancy else np.arange(size)
    wx = x[idx]
    t = t0[idx]
    n = np.zeros(idx.size, dtype=np.int64)
    k = np.zeros(idx.size, dtype=np.int64)
    interf = np.zeros(idx.size)
    tx = np.zeros(idx.size)
    outage = np.zeros(idx.size, dtype=bool)

    while idx.size:
        done = np.zeros(idx.size, dtype=bool)
        pol = np.flatnonzero(~outage)
        out = np.flatnonzero(outage)

        if pol.size:
            interval = interval_batch(params, k[pol], rng)
            seg_start = t[pol]
            t_end = seg_start + interval
            within = t_end <= wx[pol]
            tx[pol] += np.where(within, interval, 0.0)
            interf[pol] += np.where(within, 0.0, t_end - np.maximum(seg_start, wx[pol]))
            t[pol] = t_end + t_sense
            n[pol] += 1
            k[pol] += 1
            present = ~within
            if p_detect < 1.0:
                hit = present.copy()
                hit[present] = rng.random(int(present.sum())) < p_detect
            else:
                hit = present
            done[pol] = hit
            if p_false > 0.0:
                idle_now = pol[~present]
                alarm = rng.random(idle_now.size) < p_false
                outage[idle_now[alarm]] = True

        if out.size:
            t_probe = t[out] + rng.exponential(probe_scale, out.size)
            n[out] += 1
            t[out] = t_probe + t_sense
            present = t_probe > wx[out]
            if p_detect < 1.0:
                hit = present.copy()
                hit[present] = rng.random(int(present.sum())) < p_detect
            else:
                hit = present
            done[out] = hit
            quiet = out[~present]
            still = rng.random(quiet.size) < p_false
            reacquire = np.concatenate([out[present & ~hit], quiet[~still]])
            outage[reacquire] = False
            k[reacquire] = 0

        if n.size and n.max() > MAX_SENSINGS:
            raise RunawayTrialError(f"trial exceeded {MAX_SENSINGS} sensings")
        if done.any():
            fin = idx[done]
            out_n[fin] = n[done]
            out_interf[fin] = interf[done]
            out_tx[fin] = tx[done]
            live = ~done
            idx, wx, t, n, k = idx[live], wx[live], t[live], n[live], k[live]
            interf, tx, outage = interf[live], tx[live], outage[live]

    cost = cm.combine(out_n, out_interf)
    return TrialArrays(out_n, out_interf, missed, out_tx, cost, x)


def _block_sizes(n_trials: int, block: int) -> list[int]:
    full, rest = divmod(n_trials, block)
    return [block] * full + ([rest] if rest else [])


def _run_block(args) -> TrialArrays:
    d, sm, params, cm, flags, seed_seq, size, idle = args
    return _simulate_block(d, sm, params, cm, flags, np.random.default_rng(seed_seq), size, idle)


def simulate_arrays(
    ch: ChannelModel,
    params: PolicyParams,
    cm: CostModel,
    n_trials: int,
    seed: int,
    sm: SensingModel | None = None,
    flags: Flags = Flags(),
    idle: Sequence[float] | None = None,
    block: int = BLOCK_SIZE,
    workers: int = 1,
) -> TrialArrays:
    """Per-trial metrics for ``n_trials`` trials.

    Trials are cut into fixed-size blocks, each with its own child of
    ``SeedSequence(seed)``; results are concatenated in block order, so the
    output does not depend on ``workers``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    sm = sm or SensingModel(p_false=0.0)
    if idle is not None:
        idle = np.asarray(idle, dtype=float)
        if idle.size != n_trials:
            raise ValueError("injected idle sequence must have one entry per trial")
    sizes = _block_sizes(n_trials, block)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = []
    start = 0
    for size, ss in zip(sizes, seeds):
        chunk = None if idle is None else idle[start:start + size]
        jobs.append((ch.off_dist, sm, params, cm, flags, ss, size, chunk))
        start += size
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, jobs))
    else:
        parts = [_run_block(j) for j in jobs]
    return TrialArrays.concat(parts)


def simulate(
    ch: ChannelModel,
    params: PolicyParams,
    cm: CostModel,
    n_trials: int,
    seed: int,
    sm: SensingModel | None = None,
    flags: Flags = Flags(),
    idle: Sequence[float] | None = None,
    block: int = BLOCK_SIZE,
    workers: int = 1,
) -> AggregateMetrics:
    arrays = simulate_arrays(ch, params, cm, n_trials, seed, sm, flags, idle, block, workers)
    return aggregate_arrays(arrays)


def _mean_se(a: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(a))
    if a.size < 2:
        return m, 0.0
    return m, float(np.std(a, ddof=1) / math.sqrt(a.size))


def aggregate_arrays(arrays: TrialArrays) -> AggregateMetrics:
    """Sample means and standard errors.

    Throughput is total transmit time over total idle time; its standard
    error is the delta-method error of that ratio.
    """
    n = len(arrays)
    if n == 0:
        raise ValueError("cannot aggregate zero trials")
    mean_n, se_n = _mean_se(arrays.n_sense.astype(float))
    mean_i, se_i = _mean_se(arrays.interference)
    mean_c, se_c = _mean_se(arrays.total_cost)
    idle_total = float(np.sum(arrays.idle))
    if idle_total > 0:
        thr = float(np.sum(arrays.transmit_time)) / idle_total
        if n > 1:
            resid = arrays.transmit_time - thr * arrays.idle
            se_thr = math.sqrt(float(np.sum(resid * resid)) / (n * (n - 1))) / (idle_total / n)
        else:
            se_thr = 0.0
    else:
        thr, se_thr = 0.0, 0.0
    return AggregateMetrics(mean_n, se_n, mean_i, se_i, mean_c, se_c, thr, se_thr, n)


def aggregate(trials: Sequence[TrialMetrics]) -> AggregateMetrics:
    if not trials:
        raise ValueError("cannot aggregate zero trials")
    cols = {f: np.array([getattr(tr, f) for tr in trials]) for f in TrialArrays.__dataclass_fields__}
    return aggregate_arrays(TrialArrays(**cols))
