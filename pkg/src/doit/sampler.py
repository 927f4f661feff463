"""Backward-chain samplers: vanilla, corrected, and the exhaustive variant.

All samplers share one loop: initialise X at N(0, I) (the chain's reference
law at the horizon), then step l = L, ..., 1 through the chosen kernel. The
corrected sampler adds gamma * grad_log_h_hat to the score before forming
the transition mean at every step l with 1 < l <= l_star; step 1 is always
uncorrected because no lookahead transition exists below it.

Randomness is keyed per purpose and step (see streams): trajectory noise
never depends on whether corrections run, so a corrected run with gamma = 0
reproduces the vanilla run byte for byte, estimator and all. Lookahead
noise is additionally keyed by the chunk start row, so memory-bounded
chunking does not change results for a fixed chunk policy.

NFE accounting counts rows passed to the score model: the vanilla and
surrogate-corrected samplers both cost n * L evaluations, the rollout
(prototypical) sampler n * (L + sum_{l=2}^{L} m (l - 1)).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import streams
from .doob import DoobConfig, rollout_estimate_arrays, surrogate_estimate_arrays
from .errors import ConfigError, DegenerateKernelError
from .kernels import KernelKind, transition_coeffs
from .reward import HSpec, RewardSpec, eval_reward
from .schedule import NoiseSchedule
from .score import ScoreModel, eval_score

_LOOKAHEAD_CHUNK_ELEMS = 1 << 22  # ~32 MB of float64 lookahead state per chunk


@dataclass(frozen=True)
class SampleBatch:
    """Terminal samples plus the bookkeeping needed to reproduce them.

    truncation_rate is the fraction of (sample, step) estimates whose
    denominator floor was active; 0.0 when no corrections ran.
    """

    data: np.ndarray
    seed: int
    config_digest: str = ""
    nfe_total: int = 0
    truncation_rate: float = 0.0


def _resolve_l_star(cfg: DoobConfig, L: int) -> int:
    l_star = L if cfg.l_star is None else int(cfg.l_star)
    if not 1 <= l_star <= L:
        raise ConfigError(f"l_star must lie in [1, {L}], got {l_star}")
    return l_star


def _run_chain(
    model: ScoreModel,
    schedule: NoiseSchedule,
    kind: KernelKind,
    n: int,
    seed: int,
    steer: tuple[RewardSpec, HSpec, DoobConfig] | None,
) -> SampleBatch:
    if int(n) != n or n < 1:
        raise ConfigError(f"sample count n must be a positive integer, got {n}")
    n = int(n)
    seed = int(seed)
    d = model.dim
    L = schedule.L

    want_jac = False
    l_star = 0
    if steer is not None:
        rspec, hspec, cfg = steer
        l_star = _resolve_l_star(cfg, L)
        want_jac = cfg.jacobian == "exact"
        for l in range(2, l_star + 1):
            if transition_coeffs(schedule, l, kind)[2] <= 0.0:
                raise DegenerateKernelError(
                    f"corrected step {l} has sigma = 0 under this kernel; "
                    "corrections need stochastic transitions"
                )

    x = streams.stream(seed, streams.INIT_NOISE).standard_normal((n, d))
    nfe = 0
    truncated = 0
    estimates = 0

    for l in range(L, 0, -1):
        correct_here = steer is not None and 2 <= l <= l_star
        score = eval_score(
            model, x, schedule.t[l], with_jacobian=want_jac and correct_here
        )
        nfe += n
        direction = score.value
        if correct_here:
            grad_log_h, trunc, nfe_rows = _estimate_chunked(
                x, l, score, model, schedule, kind, rspec, hspec, cfg, seed
            )
            nfe += nfe_rows
            truncated += int(np.sum(trunc))
            estimates += n
            if cfg.gamma > 0.0:
                direction = score.value + cfg.gamma * grad_log_h
        lin, sc, sigma = transition_coeffs(schedule, l, kind)
        x = lin * x + sc * direction
        noise = streams.stream(seed, streams.STEP_NOISE, l).standard_normal((n, d))
        if sigma > 0.0:
            x = x + sigma * noise
    return SampleBatch(
        data=x,
        seed=seed,
        nfe_total=nfe,
        truncation_rate=truncated / estimates if estimates else 0.0,
    )


def _estimate_chunked(
    x: np.ndarray,
    l: int,
    score,
    model: ScoreModel,
    schedule: NoiseSchedule,
    kind: KernelKind,
    rspec: RewardSpec,
    hspec: HSpec,
    cfg: DoobConfig,
    seed: int,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Run the estimator over x in memory-bounded chunks.

    Each chunk draws from its own stream keyed by (seed, LOOKAHEAD, l,
    start row), making results independent of how many chunks the batch
    was split into for a fixed chunk size.
    """
    n, d = x.shape
    chunk = max(1, _LOOKAHEAD_CHUNK_ELEMS // max(cfg.m * d, 1))
    grad = np.empty_like(x)
    trunc = np.empty(n, dtype=bool)
    nfe_rows = 0
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        sc_chunk = type(score)(
            value=score.value[sl],
            mode=score.mode,
            jacobian=None if score.jacobian is None else score.jacobian[sl],
        )
        rng = streams.stream(seed, streams.LOOKAHEAD, l, start)
        if cfg.estimator == "surrogate":
            arrays = surrogate_estimate_arrays(
                x[sl], l, sc_chunk, schedule, kind, hspec, rspec, cfg, rng
            )
        else:
            arrays = rollout_estimate_arrays(
                x[sl], l, sc_chunk, model, schedule, kind, hspec, rspec, cfg, rng
            )
        grad[sl] = arrays["grad_log_h_hat"]
        trunc[sl] = arrays["truncation_active"]
        nfe_rows += arrays["nfe_rows"]
    return grad, trunc, nfe_rows


def sample_vanilla(
    model: ScoreModel, schedule: NoiseSchedule, kind: KernelKind, n: int, seed: int
) -> SampleBatch:
    """Uncorrected backward chain; n terminal samples."""
    return _run_chain(model, schedule, kind, n, seed, steer=None)


def sample_doit(
    model: ScoreModel,
    schedule: NoiseSchedule,
    kind: KernelKind,
    rspec: RewardSpec,
    hspec: HSpec,
    cfg: DoobConfig,
    n: int,
    seed: int,
) -> SampleBatch:
    """Corrected backward chain steered toward the event defined by hspec.

    With gamma = 0 the correction is skipped arithmetically (the estimator
    still runs, so truncation statistics are reported) and the output is
    byte-identical to sample_vanilla at the same seed.
    """
    return _run_chain(model, schedule, kind, n, seed, steer=(rspec, hspec, cfg))


def sample_doit_prototypical(
    model: ScoreModel,
    schedule: NoiseSchedule,
    kind: KernelKind,
    rspec: RewardSpec,
    hspec: HSpec,
    cfg: DoobConfig,
    n: int,
    seed: int,
) -> SampleBatch:
    """Reference corrected sampler: full rollouts at every eligible step.

    Forces gamma = 1, l_star = L, and the rollout estimator; only m, the
    jacobian mode, and eta_rule are taken from cfg. Costs
    n * (L + sum_{l=2}^{L} m (l - 1)) score evaluations, so keep n and L
    small. Step 1 is uncorrected as always, which is also why the sum
    starts at l = 2.
    """
    forced = replace(cfg, gamma=1.0, l_star=None, estimator="rollout")
    return _run_chain(model, schedule, kind, n, seed, steer=(rspec, hspec, forced))


def best_of_k(sample_fn, k: int, rspec: RewardSpec, seed: int):
    """Draw k terminal samples and keep the reward argmax.

    sample_fn(seed, count) must return a (count, d) array of independent
    terminal samples. The inner draw is seeded by a child derived from
    (seed, BEST_OF_K), so repeated calls with distinct seeds give
    independent repeats. Ties keep the lowest index. Returns
    (best sample, its reward).
    """
    if int(k) != k or k < 1:
        raise ConfigError(f"k must be a positive integer, got {k}")
    child = streams.derive_seed(seed, streams.BEST_OF_K)
    batch = np.asarray(sample_fn(child, int(k)), dtype=float)
    if batch.ndim != 2 or batch.shape[0] != k:
        raise ConfigError(
            f"sample_fn returned shape {batch.shape}, expected ({k}, d)"
        )
    rewards = eval_reward(rspec, batch)
    i = int(np.argmax(rewards))
    return batch[i], float(rewards[i])
