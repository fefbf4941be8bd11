"""Multi-stage sampling: uniform first pass, then re-optimized allocations.

Stage 1 samples every block at the same rate.  Each later stage t
predicts a measurement bound per block from the measurements gathered so
far, turns the predictions into a target ratio p, and solves the
KL-divergence program to choose how the stage's budget should tilt the
*cumulative* allocation toward p, given that earlier stages' counts are
already fixed.  Stage rates follow the catch-up rule

    s_r^t = t * s_r / N - (measurements so far) / (padded pixels),

so rounding debt from earlier stages is repaid automatically and the
N-stage total lands on the single-pass budget.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .allocation import apportion, round_half_up
from .analysis import (
    CurveParams,
    DEFAULT_CURVE,
    block_sparsity,
    bounds_profile,
    measurement_bounds,
    solve_threshold,
    target_sparsity_ratio,
)
from .imaging import Image, dct2_blocks, partition, vectorize
from .kl_solver import KlAllocProblem, KlAllocSolution, solve
from .sensing import MeasurementMatrix, MeasurementRecord, Segment, sample_rows

PREDICTION_FLOOR = 1e-9


def stage_rate(t: int, stages: int, s_r: float, allocated_so_far: int, pixels: int) -> float:
    """Expected rate for stage t given what earlier stages actually spent."""
    if not (1 <= t <= stages):
        raise ValueError("stage index out of range")
    if t == 1:
        return s_r / stages
    return max(t * s_r / stages - allocated_so_far / pixels, 0.0)


def mixing_coeffs(t: int, stages: int, s_r: float, allocated_so_far: int, pixels: int):
    """Adjustable/fixed fractions (alpha, beta) of the cumulative stage-t budget.

    alpha = 0 means the budget is already exhausted and the stage should
    be skipped with zero measurements.
    """
    if t < 2:
        raise ValueError("mixing fractions are defined for stages t >= 2")
    rate = stage_rate(t, stages, s_r, allocated_so_far, pixels)
    alpha = rate / (t * s_r / stages)
    alpha = min(max(alpha, 0.0), 1.0)
    return alpha, 1.0 - alpha


def fixed_ratio(cumulative_M) -> np.ndarray:
    """Normalized share of the measurements each block already holds."""
    cumulative = np.asarray(cumulative_M, dtype=np.float64)
    total = cumulative.sum()
    if total <= 0:
        raise ValueError("no measurements allocated yet")
    return cumulative / total


def upper_bounds(cumulative_M, s_r_t: float, pixels: int, block_size: int) -> np.ndarray:
    """Per-block caps a_i on the stage's allocation ratio.

    A block can absorb at most B^2 - (already taken) more measurements,
    and the stage hands out about q_i * s_r^t * pixels, hence
    a_i = (B^2 - sum_j M_i^j) / (s_r^t * pixels).  Summing gives
    sum(a) = (pixels - allocated) / (s_r^t * pixels), and the catch-up
    rate satisfies s_r^t <= 1 - allocated / pixels whenever the overall
    target rate is <= 1, so sum(a) >= 1 and the program stays feasible.
    """
    if s_r_t <= 0:
        raise ValueError("stage rate must be positive")
    cumulative = np.asarray(cumulative_M, dtype=np.float64)
    return (block_size * block_size - cumulative) / (s_r_t * pixels)


def predict_bounds_oracle(original_block_coeffs: np.ndarray, threshold: float) -> float:
    """True measurement bound of a block: the protocol's information ceiling."""
    coeffs = np.asarray(original_block_coeffs)
    return measurement_bounds(block_sparsity(coeffs, threshold), coeffs.size)


def predict_bounds_energy(padded_measurements: np.ndarray, stage_M_so_far: int) -> float:
    """Measurement-only heuristic: spread of the AC-like measured values.

    Standard deviation of entries 2..M of the zero-padded measurement
    vector (the first entry acts as a DC stand-in), floored at a small
    epsilon so downstream ratios and logs stay defined.
    """
    values = np.asarray(padded_measurements, dtype=np.float64)[1:stage_M_so_far]
    spread = float(np.std(values)) if values.size else 0.0
    return max(spread, PREDICTION_FLOOR)


@dataclass(frozen=True)
class PredictionContext:
    block_index: int
    measured_count: int
    stage: int


class BoundsPredictor:
    """Per-block measurement-bound predictor fed zero-padded measurements."""

    name = "base"

    def begin_run(self, coeff_blocks: np.ndarray, threshold: float) -> None:
        """Hook called once per simulation before any prediction."""

    def predict(self, padded_measurements: np.ndarray, context: PredictionContext) -> float:
        raise NotImplementedError


class OracleBoundsPredictor(BoundsPredictor):
    """Returns the true bounds; an upper bound on any predictor's skill."""

    name = "oracle"

    def __init__(self):
        self._bounds = None

    def begin_run(self, coeff_blocks, threshold):
        self._bounds = [predict_bounds_oracle(c, threshold) for c in coeff_blocks]

    def predict(self, padded_measurements, context):
        return self._bounds[context.block_index]


class EnergyBoundsPredictor(BoundsPredictor):
    """Measurement-only heuristic predictor."""

    name = "energy"

    def predict(self, padded_measurements, context):
        return predict_bounds_energy(padded_measurements, context.measured_count)


PREDICTORS = {"oracle": OracleBoundsPredictor, "energy": EnergyBoundsPredictor}


def kl_diagnostic(true_m, predicted_m):
    """(cross_entropy, kl) between the normalized bound ratios.

    Predicted entries are floored at a small epsilon before normalizing;
    kl >= 0 with equality iff the ratios coincide.
    """
    true_m = np.asarray(true_m, dtype=np.float64)
    total = true_m.sum()
    if total <= 0:
        raise ValueError("true bounds must have positive total")
    rho = true_m / total
    predicted = np.maximum(np.asarray(predicted_m, dtype=np.float64), PREDICTION_FLOOR)
    rho_hat = predicted / predicted.sum()
    pos = rho > 0
    cross_entropy = float(-(rho[pos] * np.log(rho_hat[pos])).sum())
    entropy = float(-(rho[pos] * np.log(rho[pos])).sum())
    return cross_entropy, cross_entropy - entropy


@dataclass(frozen=True)
class StageState:
    """Everything decided at one sampling stage."""

    stage_index: int
    stage_rate: float
    budget: int
    alpha: float
    beta: float
    stage_M: np.ndarray
    cumulative_M: np.ndarray
    predicted_bounds: Optional[np.ndarray]
    problem: Optional[KlAllocProblem]
    solution: Optional[KlAllocSolution]

    def __post_init__(self):
        for name in ("stage_M", "cumulative_M"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class MultiStagePlan:
    """Outcome of an N-stage run: per-stage states plus final bookkeeping."""

    block_size: int
    grid_rows: int
    grid_cols: int
    target_rate: float
    stages: tuple  # of StageState
    final_M: np.ndarray
    diagnostics: tuple  # per stage: (cross_entropy, kl) or None
    records: tuple  # of MeasurementRecord
    threshold: float

    def __post_init__(self):
        final = np.asarray(self.final_M, dtype=np.int64)
        final.setflags(write=False)
        object.__setattr__(self, "final_M", final)

    @property
    def total_measurements(self) -> int:
        return int(self.final_M.sum())


def run_simulation(
    image: Image,
    block_size: int,
    s_r: float,
    stages: int,
    predictor: BoundsPredictor,
    matrix: MeasurementMatrix,
    curve: CurveParams = DEFAULT_CURVE,
) -> MultiStagePlan:
    """Run the N-stage protocol end to end and record every measurement.

    N = 1 degenerates to plain uniform sampling at the full rate.
    """
    if stages < 1:
        raise ValueError("at least one stage required")
    if not (0 < s_r <= 1):
        raise ValueError("sampling rate must lie in (0, 1]")
    grid = partition(image, block_size)
    n = grid.block_count
    dim = block_size * block_size
    pixels = grid.padded_pixel_count
    if matrix.dim != dim:
        raise ValueError("operator size does not match the block size")

    coeffs = dct2_blocks(grid.blocks)
    threshold = solve_threshold(coeffs, target_sparsity_ratio(s_r, curve))
    true_bounds = bounds_profile(coeffs, threshold).per_block_m
    predictor.begin_run(coeffs, threshold)
    vectors = [vectorize(b) for b in grid.blocks]

    cumulative = np.zeros(n, dtype=np.int64)
    segments = [[] for _ in range(n)]
    stage_states = []
    diagnostics = []

    def run_stage(t, counts, rate, budget, alpha, beta, predicted, problem, solution):
        nonlocal cumulative
        for i in range(n):
            start = int(cumulative[i]) + 1
            end = int(cumulative[i]) + int(counts[i])
            values = sample_rows(matrix, start, end, vectors[i])
            segments[i].append(Segment(stage=t, row_start=start, row_end=end, values=values))
        cumulative = cumulative + counts
        stage_states.append(
            StageState(
                stage_index=t,
                stage_rate=rate,
                budget=budget,
                alpha=alpha,
                beta=beta,
                stage_M=counts,
                cumulative_M=cumulative,
                predicted_bounds=predicted,
                problem=problem,
                solution=solution,
            )
        )

    # stage 1: uniform; per-block baseline floor(s_r^1 * B^2), topped up by
    # apportionment so the stage budget is hit exactly
    rate1 = stage_rate(1, stages, s_r, 0, pixels)
    budget1 = round_half_up(rate1 * pixels)
    if stages > 1 and budget1 < n:
        raise ValueError(
            f"stage-1 budget {budget1} is below the block count {n}; "
            "raise the rate or use fewer stages"
        )
    counts1 = apportion(np.full(n, budget1 / n), budget1, dim)
    run_stage(1, counts1, rate1, budget1, 1.0, 0.0, None, None, None)
    diagnostics.append(None)

    for t in range(2, stages + 1):
        allocated = int(cumulative.sum())
        rate_t = stage_rate(t, stages, s_r, allocated, pixels)
        budget_t = max(round_half_up(rate_t * pixels), 0)
        if rate_t <= 0 or budget_t == 0:
            # budget already spent (rounding overshoot): zero-measurement stage
            run_stage(t, np.zeros(n, dtype=np.int64), max(rate_t, 0.0), 0, 0.0, 1.0, None, None, None)
            diagnostics.append(None)
            continue

        predicted = np.empty(n)
        for i in range(n):
            padded = np.zeros(dim)
            taken = np.concatenate([seg.values for seg in segments[i]]) if segments[i] else np.empty(0)
            padded[: taken.size] = taken
            context = PredictionContext(block_index=i, measured_count=int(cumulative[i]), stage=t)
            predicted[i] = predictor.predict(padded, context)
        if true_bounds.sum() > 0:
            diagnostics.append(kl_diagnostic(true_bounds, predicted))
        else:
            diagnostics.append(None)

        alpha, beta = mixing_coeffs(t, stages, s_r, allocated, pixels)
        problem = KlAllocProblem(
            p=np.maximum(predicted, PREDICTION_FLOOR),
            r=fixed_ratio(cumulative),
            alpha=alpha,
            a=upper_bounds(cumulative, rate_t, pixels, block_size),
        )
        solution = solve(problem)
        counts_t = apportion(budget_t * solution.q, budget_t, dim - cumulative)
        run_stage(t, counts_t, rate_t, budget_t, alpha, beta, predicted, problem, solution)

    records = tuple(
        MeasurementRecord(block_index=i, segments=tuple(segments[i])) for i in range(n)
    )
    return MultiStagePlan(
        block_size=block_size,
        grid_rows=grid.rows,
        grid_cols=grid.cols,
        target_rate=s_r,
        stages=tuple(stage_states),
        final_M=cumulative,
        diagnostics=tuple(diagnostics),
        records=records,
        threshold=threshold,
    )
