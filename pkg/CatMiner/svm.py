"""
nu-SVM with an RBF kernel, trained from scratch.

The dual

    minimize    1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
    subject to  0 <= a_i <= 1/l,  sum_i a_i y_i = 0,  sum_i a_i = nu

is solved by pairwise working-set decomposition: each step picks a maximal
violating pair inside one class (second-order selection) and moves it
analytically. Internally the problem is scaled by l (box [0, 1], per-class
sums nu*l/2) so the KKT tolerance does not shrink with the training size.

Grid search, feature-combination search and the model file live here too.
"""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from .errors import ConvergenceError, DataError, InfeasibleNuError, SchemaError, UsageError
from .models import FULL_MASK, FeatureVector, Label, Sample, SampleSet, mask_from_string, mask_slots, mask_to_string

logger = logging.getLogger(__name__)

MODEL_FORMAT = "catminer-nu-svm"
MODEL_VERSION = 1
TAU = 1e-12
DEFAULT_TOL = 1e-5
DEFAULT_MAX_ITER = 10_000_000
DEFAULT_CACHE_ROWS = 1024
DEFAULT_NU_VALUES: Tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 16))
DEFAULT_GAMMA_VALUES: Tuple[float, ...] = tuple(10.0 ** e for e in range(-5, 3))
LABEL_MAP = {1: Label.INTERESTING, -1: Label.NON_INTERESTING}


@dataclass(frozen=True)
class SolverOptions:
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    cache_rows: int = DEFAULT_CACHE_ROWS


@dataclass(frozen=True)
class GridSpec:
    nu_values: Tuple[float, ...] = DEFAULT_NU_VALUES
    gamma_values: Tuple[float, ...] = DEFAULT_GAMMA_VALUES
    folds: int = 5
    refine: bool = False

    def __post_init__(self) -> None:
        if not self.nu_values or not self.gamma_values:
            raise UsageError("empty grid")
        if any(not 0.0 < nu <= 1.0 for nu in self.nu_values):
            raise UsageError(f"nu values must lie in (0, 1]: {self.nu_values}")
        if any(gamma <= 0.0 for gamma in self.gamma_values):
            raise UsageError(f"gamma values must be positive: {self.gamma_values}")
        if self.folds < 2:
            raise UsageError(f"at least 2 folds are needed: {self.folds}")


@dataclass(frozen=True)
class SvmModel:
    support_vectors: Tuple[Tuple[float, ...], ...]
    dual_coeffs: Tuple[float, ...]
    bias: float
    gamma: float
    nu: float
    feature_mask: int = FULL_MASK
    margin: float = 0.0
    n_train: int = 0

    @property
    def label_map(self) -> Dict[int, Label]:
        return dict(LABEL_MAP)

    @property
    def dimension(self) -> int:
        return len(mask_slots(self.feature_mask))

    def decision_values(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sv = np.asarray(self.support_vectors, dtype=float)
        if x.shape[1] != sv.shape[1]:
            raise DataError(f"dimension mismatch: {x.shape[1]} != {sv.shape[1]}")
        distances = np.sum((x[:, None, :] - sv[None, :, :]) ** 2, axis=2)
        return np.exp(-self.gamma * distances) @ np.asarray(self.dual_coeffs, dtype=float) + self.bias


# ----------------------------------------------------------------------------
# Kernel
# ----------------------------------------------------------------------------


def rbf_kernel(a: Sequence[float], b: Sequence[float], gamma: float) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} != {b.shape}")
    diff = a - b
    return float(math.exp(-gamma * float(diff @ diff)))


class KernelCache:
    """Least-recently-used rows K(x_i, .) of the training kernel matrix."""

    def __init__(self, x: np.ndarray, gamma: float, capacity: int = DEFAULT_CACHE_ROWS):
        self._x = x
        self._gamma = gamma
        self.capacity = max(2, capacity)
        self._rows: "OrderedDict[int, np.ndarray]" = OrderedDict()
        self.hits = 0
        self.misses = 0

    def row(self, i: int) -> np.ndarray:
        cached = self._rows.get(i)
        if cached is not None:
            self._rows.move_to_end(i)
            self.hits += 1
            return cached
        self.misses += 1
        diff = self._x - self._x[i]
        row = np.exp(-self._gamma * np.einsum("ij,ij->i", diff, diff))
        self._rows[i] = row
        if len(self._rows) > self.capacity:
            self._rows.popitem(last=False)
        return row


# ----------------------------------------------------------------------------
# Solver
# ----------------------------------------------------------------------------


def nu_upper_bound(y: np.ndarray) -> float:
    positives = int(np.sum(y > 0))
    return 2.0 * min(positives, len(y) - positives) / len(y)


class NuSolver:
    def __init__(self, x: np.ndarray, y: np.ndarray, nu: float, gamma: float, options: SolverOptions):
        self.y = y
        self.nu = nu
        self.options = options
        self.cache = KernelCache(x, gamma, options.cache_rows)
        self.positive = y > 0
        self.negative = ~self.positive
        size = len(y)

        alpha = np.zeros(size)
        remaining = {1: nu * size / 2.0, -1: nu * size / 2.0}
        for i in range(size):
            sign = 1 if self.positive[i] else -1
            alpha[i] = min(1.0, remaining[sign])
            remaining[sign] -= alpha[i]
        self.alpha = alpha

        self.G = np.zeros(size)
        for i in np.flatnonzero(alpha > 0):
            self.G += alpha[i] * self._q_row(i)
        self.iterations = 0

    def _q_row(self, i: int) -> np.ndarray:
        return self.y[i] * self.y * self.cache.row(i)

    @staticmethod
    def _arg_max(values: np.ndarray, allowed: np.ndarray) -> Tuple[Optional[int], float]:
        if not allowed.any():
            return None, -math.inf
        masked = np.where(allowed, values, -np.inf)
        index = int(np.argmax(masked))
        return index, float(masked[index])

    def violation(self) -> float:
        upper = self.alpha >= 1.0
        lower = self.alpha <= 0.0
        g = self.G
        _, gmaxp = self._arg_max(-g, self.positive & ~upper)
        _, gmaxp2 = self._arg_max(g, self.positive & ~lower)
        _, gmaxn = self._arg_max(g, self.negative & ~lower)
        _, gmaxn2 = self._arg_max(-g, self.negative & ~upper)
        return max(gmaxp + gmaxp2, gmaxn + gmaxn2)

    def _select_working_set(self) -> Optional[Tuple[int, int]]:
        upper = self.alpha >= 1.0
        lower = self.alpha <= 0.0
        g = self.G
        ip, gmaxp = self._arg_max(-g, self.positive & ~upper)
        _, gmaxp2 = self._arg_max(g, self.positive & ~lower)
        in_, gmaxn = self._arg_max(g, self.negative & ~lower)
        _, gmaxn2 = self._arg_max(-g, self.negative & ~upper)
        if max(gmaxp + gmaxp2, gmaxn + gmaxn2) < self.options.tol:
            return None

        objective = np.full(len(g), np.inf)
        if ip is not None:
            k_ip = self.cache.row(ip)
            grad_diff = gmaxp + g
            quad = 2.0 - 2.0 * k_ip
            quad = np.where(quad > 0, quad, TAU)
            allowed = self.positive & ~lower & (grad_diff > 0)
            objective = np.where(allowed, -(grad_diff * grad_diff) / quad, objective)
        if in_ is not None:
            k_in = self.cache.row(in_)
            grad_diff = gmaxn - g
            quad = 2.0 - 2.0 * k_in
            quad = np.where(quad > 0, quad, TAU)
            allowed = self.negative & ~upper & (grad_diff > 0)
            objective = np.where(allowed, -(grad_diff * grad_diff) / quad, objective)

        j = int(np.argmin(objective))
        if not np.isfinite(objective[j]):
            return None
        return (ip if self.positive[j] else in_), j

    def _update(self, i: int, j: int) -> None:
        alpha, g = self.alpha, self.G
        k_i = self.cache.row(i)
        quad = 2.0 - 2.0 * k_i[j]
        if quad <= 0:
            quad = TAU
        delta = (g[i] - g[j]) / quad
        old_i, old_j = alpha[i], alpha[j]
        total = old_i + old_j
        new_i, new_j = old_i - delta, old_j + delta
        if total > 1.0:
            if new_i > 1.0:
                new_i, new_j = 1.0, total - 1.0
        elif new_j < 0.0:
            new_j, new_i = 0.0, total
        if total > 1.0:
            if new_j > 1.0:
                new_j, new_i = 1.0, total - 1.0
        elif new_i < 0.0:
            new_i, new_j = 0.0, total
        alpha[i], alpha[j] = new_i, new_j
        g += self._q_row(i) * (new_i - old_i) + self._q_row(j) * (new_j - old_j)

    def solve(self) -> None:
        while True:
            pair = self._select_working_set()
            if pair is None:
                return
            if self.iterations >= self.options.max_iter:
                residual = self.violation()
                raise ConvergenceError(
                    f"no convergence after {self.iterations} pair updates (KKT residual {residual:.3g})",
                    residual=residual,
                )
            self._update(*pair)
            self.iterations += 1

    def _class_offset(self, members: np.ndarray) -> float:
        upper = self.alpha >= 1.0
        lower = self.alpha <= 0.0
        free = members & ~upper & ~lower
        if free.any():
            return float(np.mean(self.G[free]))
        ub = float(np.min(self.G[members & lower])) if (members & lower).any() else math.inf
        lb = float(np.max(self.G[members & upper])) if (members & upper).any() else -math.inf
        if math.isinf(ub) and math.isinf(lb):
            return 0.0
        if math.isinf(ub):
            return lb
        if math.isinf(lb):
            return ub
        return (ub + lb) / 2.0

    def offsets(self) -> Tuple[float, float]:
        """(rho, r) in the scaled problem."""
        r_pos = self._class_offset(self.positive)
        r_neg = self._class_offset(self.negative)
        return (r_pos - r_neg) / 2.0, (r_pos + r_neg) / 2.0


def _validate_training_data(x: np.ndarray, y: np.ndarray, nu: float, gamma: float) -> None:
    if x.ndim != 2 or len(x) != len(y):
        raise DataError(f"expected an (l, d) matrix with l labels, got {x.shape} and {len(y)} labels")
    if len(y) < 2:
        raise DataError("at least 2 training samples are required")
    if set(np.unique(y)) - {1.0, -1.0}:
        raise DataError("labels must be +1 or -1")
    if not ((y > 0).any() and (y < 0).any()):
        raise DataError("both classes must be present in the training data")
    if gamma <= 0:
        raise UsageError(f"gamma must be positive: {gamma}")
    bound = nu_upper_bound(y)
    if not 0.0 < nu <= bound + 1e-12:
        raise InfeasibleNuError(f"nu exceeds class-balance bound: nu={nu:g} > {bound:.4g}")


@dataclass(frozen=True)
class NuSolution:
    """Dual solution in the original scale: 0 <= alpha <= 1/l, sum(alpha) = nu."""

    alpha: np.ndarray
    rho: float
    margin: float
    iterations: int


def solve_nu_dual(
    x: Sequence[Sequence[float]],
    y: Sequence[float],
    nu: float,
    gamma: float,
    options: Optional[SolverOptions] = None,
) -> NuSolution:
    options = options or SolverOptions()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _validate_training_data(x, y, nu, gamma)
    size = len(y)

    solver = NuSolver(x, y, nu, gamma, options)
    solver.solve()
    rho, r = solver.offsets()
    logger.debug(
        "nu=%g gamma=%g: converged after %d updates (cache hits %d, misses %d)",
        nu,
        gamma,
        solver.iterations,
        solver.cache.hits,
        solver.cache.misses,
    )
    return NuSolution(alpha=solver.alpha / size, rho=rho / size, margin=r / size, iterations=solver.iterations)


def train_nu_svm(
    x: Sequence[Sequence[float]],
    y: Sequence[float],
    nu: float,
    gamma: float,
    mask: int = FULL_MASK,
    options: Optional[SolverOptions] = None,
) -> SvmModel:
    """Train on rows `x` (already restricted to the masked slots) with labels +1/-1."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    solution = solve_nu_dual(x, y, nu, gamma, options)

    support = np.flatnonzero(solution.alpha > 0)
    model = SvmModel(
        support_vectors=tuple(tuple(float(v) for v in x[i]) for i in support),
        dual_coeffs=tuple(float(solution.alpha[i] * y[i]) for i in support),
        bias=float(-solution.rho),
        gamma=float(gamma),
        nu=float(nu),
        feature_mask=mask,
        margin=float(solution.margin),
        n_train=len(y),
    )
    check_dual_feasibility(model)
    return model


def check_dual_feasibility(model: SvmModel, tol: float = 1e-8) -> None:
    coeffs = np.asarray(model.dual_coeffs)
    alpha = np.abs(coeffs)
    box = 1.0 / model.n_train if model.n_train else math.inf
    problems = []
    if abs(coeffs.sum()) > tol:
        problems.append(f"sum(a*y)={coeffs.sum():.3g}")
    if (alpha > box + 1e-12).any():
        problems.append("a_i above 1/l")
    if alpha.sum() < model.nu - tol:
        problems.append(f"sum(a)={alpha.sum():.6g} < nu={model.nu:g}")
    if problems:
        raise ConvergenceError("dual infeasible: " + ", ".join(problems))


def dual_objective(x: np.ndarray, y: np.ndarray, alpha: np.ndarray, gamma: float) -> float:
    """1/2 a^T Q a for the full training set."""
    x = np.asarray(x, dtype=float)
    diff = x[:, None, :] - x[None, :, :]
    kernel = np.exp(-gamma * np.sum(diff * diff, axis=2))
    q = np.outer(y, y) * kernel
    return float(0.5 * alpha @ q @ alpha)


# ----------------------------------------------------------------------------
# Prediction
# ----------------------------------------------------------------------------


def _vector_for(model: SvmModel, x: Union[FeatureVector, Sequence[Optional[float]]]) -> Tuple[float, ...]:
    if isinstance(x, FeatureVector):
        return x.masked(model.feature_mask)
    values = tuple(x)
    if len(values) == model.dimension:
        picked = values
    else:
        picked = FeatureVector(values=values).masked(model.feature_mask)
    if any(v is None or (isinstance(v, float) and math.isnan(v)) for v in picked):
        raise DataError("missing masked slot")
    return picked


def predict(model: SvmModel, x: Union[FeatureVector, Sequence[Optional[float]]]) -> Tuple[Label, float]:
    value = float(model.decision_values(np.asarray([_vector_for(model, x)], dtype=float))[0])
    return Label.from_sign(value), value


def samples_to_arrays(samples: Iterable[Sample], mask: int = FULL_MASK) -> Tuple[np.ndarray, np.ndarray]:
    samples = list(samples)
    x = np.asarray([s.features.masked(mask) for s in samples], dtype=float).reshape(len(samples), -1)
    y = np.asarray([s.label.sign for s in samples], dtype=float)
    return x, y


@dataclass(frozen=True)
class ModelErrors:
    error_pos: float
    error_neg: float

    @property
    def accuracy_pos(self) -> float:
        return 1.0 - self.error_pos

    @property
    def accuracy_neg(self) -> float:
        return 1.0 - self.error_neg


def evaluate_model(model: SvmModel, test_pos: Sequence[Sample], test_neg: Sequence[Sample]) -> ModelErrors:
    """Fraction of held-out positives predicted negative, and vice versa."""
    if not test_pos or not test_neg:
        raise DataError("both held-out classes must be non-empty")
    pos_x, _ = samples_to_arrays(test_pos, model.feature_mask)
    neg_x, _ = samples_to_arrays(test_neg, model.feature_mask)
    return ModelErrors(
        error_pos=float(np.mean(model.decision_values(pos_x) <= 0)),
        error_neg=float(np.mean(model.decision_values(neg_x) > 0)),
    )


# ----------------------------------------------------------------------------
# Grid search
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CvRow:
    nu: float
    gamma: float
    status: str
    fold_scores: Tuple[float, ...] = ()
    accuracy_pos: float = math.nan
    accuracy_neg: float = math.nan
    mask: int = FULL_MASK
    subfile: int = 0

    @property
    def score(self) -> float:
        """Balanced accuracy pooled over folds."""
        if self.status != "ok":
            return math.nan
        return (self.accuracy_pos + self.accuracy_neg) / 2.0


@dataclass(frozen=True)
class GridResult:
    best_nu: float
    best_gamma: float
    best_score: float
    rows: Tuple[CvRow, ...]


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> List[np.ndarray]:
    """Test-index arrays of a seeded stratified k-fold partition."""
    y = np.asarray(y)
    smallest = min(int(np.sum(y > 0)), int(np.sum(y < 0)))
    if folds > smallest:
        raise DataError(f"{folds} folds need at least {folds} samples per class, smallest class has {smallest}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(y), dtype=int)
    for members in (np.flatnonzero(y > 0), np.flatnonzero(y < 0)):
        shuffled = members[rng.permutation(len(members))]
        for fold, chunk in enumerate(np.array_split(shuffled, folds)):
            assignment[chunk] = fold
    return [np.flatnonzero(assignment == fold) for fold in range(folds)]


def _evaluate_cell(
    x: np.ndarray,
    y: np.ndarray,
    fold_tests: Sequence[np.ndarray],
    nu: float,
    gamma: float,
    mask: int,
    options: SolverOptions,
) -> CvRow:
    correct = {1: 0, -1: 0}
    total = {1: 0, -1: 0}
    fold_scores = []
    for test in fold_tests:
        train = np.setdiff1d(np.arange(len(y)), test, assume_unique=True)
        try:
            model = train_nu_svm(x[train], y[train], nu, gamma, mask, options)
        except InfeasibleNuError:
            return CvRow(nu=nu, gamma=gamma, status="infeasible", mask=mask)
        except ConvergenceError as e:
            logger.warning("nu=%g gamma=%g failed to converge: %s", nu, gamma, e)
            return CvRow(nu=nu, gamma=gamma, status="failed", mask=mask)
        predicted = np.where(model.decision_values(x[test]) > 0, 1.0, -1.0)
        per_class = []
        for sign in (1, -1):
            members = y[test] == sign
            hits = int(np.sum(predicted[members] == sign))
            correct[sign] += hits
            total[sign] += int(members.sum())
            per_class.append(hits / members.sum() if members.any() else 1.0)
        fold_scores.append(sum(per_class) / 2.0)
    return CvRow(
        nu=nu,
        gamma=gamma,
        status="ok",
        fold_scores=tuple(fold_scores),
        accuracy_pos=correct[1] / total[1],
        accuracy_neg=correct[-1] / total[-1],
        mask=mask,
    )


def _evaluate_cell_job(args: tuple) -> CvRow:
    return _evaluate_cell(*args)


def _evaluate_cells(
    x: np.ndarray,
    y: np.ndarray,
    fold_tests: Sequence[np.ndarray],
    cells: Sequence[Tuple[float, float]],
    mask: int,
    options: SolverOptions,
    jobs: int,
) -> List[CvRow]:
    tasks = [(x, y, fold_tests, nu, gamma, mask, options) for nu, gamma in cells]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_evaluate_cell_job, tasks))
    return [_evaluate_cell_job(task) for task in tasks]


def _best_row(rows: Iterable[CvRow]) -> Optional[CvRow]:
    usable = [row for row in rows if row.status == "ok"]
    if not usable:
        return None
    return min(usable, key=lambda row: (-row.score, row.nu, row.gamma))


def _refined_cells(best: CvRow, grid: GridSpec, bound: float) -> List[Tuple[float, float]]:
    ordered = sorted(set(grid.nu_values))
    steps = [b - a for a, b in zip(ordered, ordered[1:])]
    half = (min(steps) if steps else 0.05) / 2.0
    nus = [round(v, 10) for v in (best.nu - half, best.nu, best.nu + half) if 0.0 < v <= bound + 1e-12]
    gammas = [best.gamma / math.sqrt(10.0), best.gamma, best.gamma * math.sqrt(10.0)]
    return [(nu, gamma) for nu in nus for gamma in gammas]


def grid_search_cv(
    x: Sequence[Sequence[float]],
    y: Sequence[float],
    grid: GridSpec,
    seed: int,
    mask: int = FULL_MASK,
    options: Optional[SolverOptions] = None,
    jobs: int = 1,
) -> GridResult:
    """Stratified k-fold CV over every (nu, gamma) cell; best balanced accuracy wins."""
    options = options or SolverOptions()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fold_tests = stratified_folds(y, grid.folds, seed)
    cells = [(nu, gamma) for nu in grid.nu_values for gamma in grid.gamma_values]
    rows = _evaluate_cells(x, y, fold_tests, cells, mask, options, jobs)

    best = _best_row(rows)
    if best is None:
        raise DataError("no feasible grid cell: every nu exceeds the class-balance bound or failed")
    if grid.refine:
        seen = set(cells)
        extra = [cell for cell in _refined_cells(best, grid, nu_upper_bound(y)) if cell not in seen]
        rows += _evaluate_cells(x, y, fold_tests, extra, mask, options, jobs)
        best = _best_row(rows)

    logger.info(
        "Grid search (%d cells, mask %s): nu=%g gamma=%g balanced accuracy %.4f",
        len(rows),
        mask_to_string(mask),
        best.nu,
        best.gamma,
        best.score,
    )
    return GridResult(best_nu=best.nu, best_gamma=best.gamma, best_score=best.score, rows=tuple(rows))


# ----------------------------------------------------------------------------
# Feature-combination search
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CombinationResult:
    mask: int
    subfile: int
    nu: float
    gamma: float
    cv_score: float
    errors: ModelErrors
    model: SvmModel

    @property
    def feature_count(self) -> int:
        return len(mask_slots(self.mask))


@dataclass
class FeatureSearchResult:
    best_by_mask: Dict[int, CombinationResult]
    final: CombinationResult
    cv_rows: List[CvRow] = field(default_factory=list)
    rule: str = "max"


def selection_key(errors: ModelErrors, rule: str = "max") -> Tuple[float, float]:
    worst = max(errors.error_pos, errors.error_neg)
    total = errors.error_pos + errors.error_neg
    if rule == "max":
        return (worst, total)
    if rule == "sum":
        return (total, worst)
    raise UsageError(f"unknown selection rule {rule!r}; expected max or sum")


def search_feature_combinations(
    subfiles: Sequence[SampleSet],
    test_pos: Sequence[Sample],
    test_neg: Sequence[Sample],
    grid: GridSpec,
    seed: int,
    masks: Optional[Sequence[int]] = None,
    rule: str = "max",
    options: Optional[SolverOptions] = None,
    jobs: int = 1,
) -> FeatureSearchResult:
    """Best model per feature mask across subfiles, then the final model across masks."""
    if not subfiles:
        raise DataError("at least one training subfile is required")
    selection_key(ModelErrors(0.0, 0.0), rule)
    masks = tuple(masks) if masks else tuple(range(1, FULL_MASK + 1))
    best_by_mask: Dict[int, CombinationResult] = {}
    cv_rows: List[CvRow] = []

    for mask in masks:
        candidates = []
        for index, subfile in enumerate(subfiles):
            x, y = samples_to_arrays(subfile.samples, mask)
            result = grid_search_cv(x, y, grid, seed, mask, options, jobs)
            cv_rows.extend(replace(row, subfile=index) for row in result.rows)
            model = train_nu_svm(x, y, result.best_nu, result.best_gamma, mask, options)
            candidates.append(
                CombinationResult(
                    mask=mask,
                    subfile=index,
                    nu=result.best_nu,
                    gamma=result.best_gamma,
                    cv_score=result.best_score,
                    errors=evaluate_model(model, test_pos, test_neg),
                    model=model,
                )
            )
        best = min(candidates, key=lambda c: (selection_key(c.errors, rule), c.subfile))
        best_by_mask[mask] = best
        logger.info(
            "Mask %s: subfile %d, error pos %.4f neg %.4f",
            mask_to_string(mask),
            best.subfile,
            best.errors.error_pos,
            best.errors.error_neg,
        )

    final = min(
        best_by_mask.values(),
        key=lambda c: (selection_key(c.errors, rule), c.feature_count, c.mask),
    )
    logger.info("Final model uses mask %s (%d features)", mask_to_string(final.mask), final.feature_count)
    return FeatureSearchResult(best_by_mask=best_by_mask, final=final, cv_rows=cv_rows, rule=rule)


def best_per_feature_count(
    results: Iterable[CombinationResult], rule: str = "max"
) -> Dict[int, CombinationResult]:
    grouped: Dict[int, CombinationResult] = {}
    for result in sorted(results, key=lambda c: c.mask):
        current = grouped.get(result.feature_count)
        if current is None or selection_key(result.errors, rule) < selection_key(current.errors, rule):
            grouped[result.feature_count] = result
    return dict(sorted(grouped.items()))


def write_cv_report(rows: Iterable[CvRow], path: Union[str, Path]) -> None:
    lines = ["mask,subfile,nu,gamma,status,fold_scores,accuracy_pos,accuracy_neg,balanced_accuracy"]
    for row in rows:
        folds = " ".join(f"{score:.6f}" for score in row.fold_scores)
        lines.append(
            f"{mask_to_string(row.mask)},{row.subfile},{row.nu!r},{row.gamma!r},{row.status},"
            f"{folds},{row.accuracy_pos:.6f},{row.accuracy_neg:.6f},{row.score:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ----------------------------------------------------------------------------
# Model files
# ----------------------------------------------------------------------------


class ModelDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format: Literal["catminer-nu-svm"]
    version: int
    kernel: Literal["rbf"]
    gamma: float
    nu: float
    bias: float
    margin: float
    n_train: int
    feature_mask: str
    label_map: Dict[str, Label]
    support_vectors: List[List[float]]
    dual_coeffs: List[float]


def model_to_dict(model: SvmModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kernel": "rbf",
        "gamma": model.gamma,
        "nu": model.nu,
        "bias": model.bias,
        "margin": model.margin,
        "n_train": model.n_train,
        "feature_mask": mask_to_string(model.feature_mask),
        "label_map": {str(sign): label.value for sign, label in LABEL_MAP.items()},
        "support_vectors": [list(sv) for sv in model.support_vectors],
        "dual_coeffs": list(model.dual_coeffs),
    }


def model_from_dict(payload: dict, source: str = "<model>") -> SvmModel:
    if isinstance(payload, dict) and payload.get("version") not in (None, MODEL_VERSION):
        raise SchemaError(f"{source}: unsupported model version {payload.get('version')!r}")
    try:
        doc = ModelDocument.model_validate(payload)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise SchemaError(f"{source}: [{location}] {first['msg']}") from e
    try:
        mask = mask_from_string(doc.feature_mask)
    except UsageError as e:
        raise SchemaError(f"{source}: {e}") from e
    dimension = len(mask_slots(mask))
    if not doc.support_vectors:
        raise SchemaError(f"{source}: model has no support vectors")
    if len(doc.support_vectors) != len(doc.dual_coeffs):
        raise SchemaError(f"{source}: {len(doc.support_vectors)} support vectors but {len(doc.dual_coeffs)} coefficients")
    if any(len(sv) != dimension for sv in doc.support_vectors):
        raise SchemaError(f"{source}: support vectors must have {dimension} values for mask {doc.feature_mask}")
    if doc.gamma <= 0 or not 0.0 < doc.nu <= 1.0:
        raise SchemaError(f"{source}: gamma must be positive and nu in (0, 1]")
    return SvmModel(
        support_vectors=tuple(tuple(sv) for sv in doc.support_vectors),
        dual_coeffs=tuple(doc.dual_coeffs),
        bias=doc.bias,
        gamma=doc.gamma,
        nu=doc.nu,
        feature_mask=mask,
        margin=doc.margin,
        n_train=doc.n_train,
    )


def save_model(model: SvmModel, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n", encoding="utf-8")


def load_model(path: Union[str, Path]) -> SvmModel:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise SchemaError(f"{path}: cannot read model: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}:{e.lineno}:{e.colno}: truncated or invalid model file: {e.msg}") from e
    return model_from_dict(payload, str(path))
