"""Model-agnostic Shapley attribution with a deterministic depth-bounded approximation.

A prediction ``f(q)`` is explained against a background dataset ``X``.
A coalition is a binary vector ``z`` over the ``m`` features: selected
coordinates (``z[i] = 1``) keep the query's value, the rest fall back to
a background row, and the coalition's worth is the mean prediction over
all substituted background rows.  Exact Shapley values average each
feature's marginal contribution over all ``2**m`` coalitions; the
depth-bounded approximation enumerates only coalitions of size
``<= chi`` or ``>= m - chi`` and rescales the combinatorial kernel so
that the retained coalition sizes still carry unit total weight.  At
``chi = ceil(m / 2)`` the size ranges cover every coalition and the
approximation coincides with the exact values.

Everything in this module is sequential and order-fixed (selection rows
ascend by coalition size, then lexicographically by the binary vector;
background rows are visited in ascending index order), so identical
inputs produce bit-identical attributions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence, Union

import numpy as np

from .errors import CapacityError, DimensionError, ParameterError, PredictorError

#: Predictor contract: maps a (k, m) batch to a length-k vector of finite reals.
Predictor = Callable[[np.ndarray], np.ndarray]

ArrayLike = Union[np.ndarray, Sequence]

DEFAULT_BACKGROUND_CAP = 256
DEFAULT_EVAL_BUDGET = 10_000_000
EXACT_MAX_FEATURES = 20

# Composite rows handed to the predictor per call; keeps peak memory flat
# while allowing large vectorized batches.
_EVAL_BLOCK = 65_536


@dataclass(frozen=True)
class Dataset:
    """Background observations, one row per reference sample."""

    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise DimensionError(f"dataset must be a 2-D matrix, got shape {rows.shape}")
        if rows.shape[0] < 1 or rows.shape[1] < 1:
            raise DimensionError("dataset needs at least one row and one column")
        if not np.all(np.isfinite(rows)):
            raise ParameterError("dataset contains non-finite entries")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def m(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class Query:
    """The single instance whose prediction is being explained."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] < 1:
            raise DimensionError(f"query must be a non-empty vector, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ParameterError("query contains non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SelectionMatrix:
    """Binary coalition matrix; each row selects the query-valued features."""

    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise DimensionError(f"selection matrix must be a non-empty 2-D matrix, got shape {rows.shape}")
        if not np.isin(rows, (0, 1)).all():
            raise ParameterError("selection matrix entries must be 0 or 1")
        rows = rows.astype(np.uint8)
        if np.unique(rows, axis=0).shape[0] != rows.shape[0]:
            raise ParameterError("selection matrix rows must be pairwise distinct")
        object.__setattr__(self, "rows", rows)

    @property
    def c(self) -> int:
        return self.rows.shape[0]

    @property
    def m(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class Attribution:
    """Per-feature attributions plus the baseline term.

    ``phi0 + phis.sum()`` reproduces ``prediction`` by construction (the
    baseline is defined as the residual), so the efficiency identity
    holds to machine precision.
    """

    phi0: float
    phis: np.ndarray
    prediction: float

    def __post_init__(self) -> None:
        phis = np.asarray(self.phis, dtype=np.float64)
        if phis.ndim != 1 or phis.shape[0] < 1:
            raise DimensionError(f"phis must be a non-empty vector, got shape {phis.shape}")
        if not np.all(np.isfinite(phis)) or not math.isfinite(self.phi0):
            raise ParameterError("attribution contains non-finite values")
        object.__setattr__(self, "phis", phis)
        residual = abs(self.phi0 + float(np.add.reduce(phis)) - self.prediction)
        if residual > 1e-9 * max(1.0, abs(self.prediction)):
            raise ParameterError(
                f"efficiency identity violated: residual {residual:.3e} for prediction {self.prediction!r}"
            )

    @property
    def m(self) -> int:
        return self.phis.shape[0]


def _as_dataset(X) -> Dataset:
    return X if isinstance(X, Dataset) else Dataset(X)


def _as_query(q, m: int) -> np.ndarray:
    query = q if isinstance(q, Query) else Query(q)
    if query.m != m:
        raise DimensionError(f"query has {query.m} features, dataset has {m}")
    return query.values


def _as_selection(Z, m: int) -> SelectionMatrix:
    sel = Z if isinstance(Z, SelectionMatrix) else SelectionMatrix(Z)
    if sel.m != m:
        raise DimensionError(f"selection matrix has {sel.m} columns, dataset has {m} features")
    return sel


def _check_chi(m: int, chi: int) -> int:
    chi = int(chi)
    if not 1 <= chi <= m:
        raise ParameterError(f"approximation depth must satisfy 1 <= chi <= {m}, got {chi}")
    return chi


def tau(q: ArrayLike, x: ArrayLike, z: ArrayLike) -> np.ndarray:
    """Substitute query values into a background row where the coalition selects them.

    Returns an m-vector equal to ``q`` at coordinates with ``z[i] = 1``
    and to ``x`` elsewhere.
    """
    q = np.asarray(q, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z)
    if not (q.shape == x.shape == z.shape) or q.ndim != 1:
        raise DimensionError(
            f"tau needs three vectors of equal length, got shapes {q.shape}, {x.shape}, {z.shape}"
        )
    return np.where(z != 0, q, x)


def coalition_count(m: int, chi: int) -> int:
    """Number of distinct coalitions with size in {0..chi} or {m-chi..m}."""
    chi = _check_chi(m, chi)
    sizes = set(range(0, chi + 1)) | set(range(m - chi, m + 1))
    return sum(math.comb(m, k) for k in sizes)


def build_selection_matrix(m: int, chi: int) -> SelectionMatrix:
    """Enumerate the coalitions retained at depth ``chi``.

    Rows are the binary vectors with popcount in {0..chi} union
    {m-chi..m}; overlapping size ranges are deduplicated so each
    coalition appears exactly once.  Row order is ascending by coalition
    size, then lexicographic on the binary vector.
    """
    if m < 1:
        raise ParameterError(f"feature count must be >= 1, got {m}")
    chi = _check_chi(m, chi)
    sizes = sorted(set(range(0, chi + 1)) | set(range(m - chi, m + 1)))
    blocks = []
    for k in sizes:
        combos = list(itertools.combinations(range(m), k))
        block = np.zeros((len(combos), m), dtype=np.uint8)
        for r, combo in enumerate(combos):
            block[r, list(combo)] = 1
        # combinations() yields index tuples in lexicographic order, which is
        # reverse lexicographic on the bit vectors; flip to get ascending order.
        blocks.append(block[::-1])
    return SelectionMatrix(np.concatenate(blocks, axis=0))


def shapley_weight(m: int, chi: int, b: int) -> float:
    """Kernel weight for a coalition of size ``b`` not containing the feature.

    Inside the allowed band (``b <= chi - 1`` or ``b >= m - chi``) the
    weight is ``b!(m-b-1)!/m!``, rescaled by ``m / (2*chi)`` when
    ``chi < ceil(m/2)`` so the retained sizes sum to unit weight;
    outside the band it is zero.  Computed as ``1 / (m * C(m-1, b))``,
    which never forms a factorial and cannot overflow.
    """
    chi = _check_chi(m, chi)
    b = int(b)
    if not 0 <= b <= m - 1:
        raise ParameterError(f"coalition size must satisfy 0 <= b <= {m - 1}, got {b}")
    if chi - 1 < b < m - chi:
        return 0.0
    weight = 1.0 / (m * math.comb(m - 1, b))
    if chi < (m + 1) // 2:
        weight *= m / (2.0 * chi)
    return weight


def subsample_background(X, cap: int = DEFAULT_BACKGROUND_CAP) -> Dataset:
    """Deterministic stride subsample of the background rows.

    Returns ``X`` unchanged when it has at most ``cap`` rows; otherwise
    keeps the ``cap`` rows at indices ``floor(i * n / cap)``.  No
    randomness is involved, so repeated runs agree bit-for-bit.
    """
    X = _as_dataset(X)
    if cap is None or X.n <= cap:
        return X
    if cap < 1:
        raise ParameterError(f"background cap must be >= 1, got {cap}")
    idx = (np.arange(cap, dtype=np.int64) * X.n) // cap
    return Dataset(X.rows[idx])


def _predict_batch(f: Predictor, batch: np.ndarray) -> np.ndarray:
    out = np.asarray(f(batch), dtype=np.float64)
    if out.shape != (batch.shape[0],):
        raise PredictorError(
            f"predictor returned shape {out.shape} for a batch of {batch.shape[0]} rows"
        )
    return out


def _localize_failure(f, X: Dataset, q: np.ndarray, z_rows: np.ndarray, base: int, original):
    """Re-evaluate one selection row at a time to name the failing row."""
    for j, z in enumerate(z_rows):
        composites = np.where(z != 0, q, X.rows)
        try:
            out = np.asarray(f(composites), dtype=np.float64)
        except Exception as exc:
            raise PredictorError(f"predictor failed on selection row {base + j}") from exc
        if out.shape != (X.n,) or not np.all(np.isfinite(out)):
            raise PredictorError(
                f"predictor returned invalid output on selection row {base + j}"
            ) from original
    raise PredictorError("predictor failed during batch evaluation") from original


def expected_values(X, q, f: Predictor, Z) -> np.ndarray:
    """Mean prediction per coalition over the substituted background rows.

    Entry ``j`` is ``mean_i f(tau(q, X[i], Z[j]))`` with the background
    index ``i`` ascending, matching the fixed evaluation order used
    everywhere in this module.
    """
    X = _as_dataset(X)
    q = _as_query(q, X.m)
    Z = _as_selection(Z, X.m)
    n = X.n
    mu = np.empty(Z.c, dtype=np.float64)
    block = max(1, _EVAL_BLOCK // n)
    for start in range(0, Z.c, block):
        zs = Z.rows[start:start + block]
        composites = np.where(zs[:, None, :] != 0, q[None, None, :], X.rows[None, :, :])
        flat = composites.reshape(-1, X.m)
        try:
            preds = _predict_batch(f, flat)
        except Exception as exc:
            _localize_failure(f, X, q, zs, start, exc)
        if not np.all(np.isfinite(preds)):
            _localize_failure(f, X, q, zs, start, None)
        mu[start:start + zs.shape[0]] = preds.reshape(zs.shape[0], n).mean(axis=1)
    return mu


def _check_budget(c: int, n: int, budget: int, hint: str) -> None:
    if budget is not None and c * n > budget:
        raise CapacityError(
            f"evaluation budget exceeded: {c} coalitions x {n} background rows "
            f"= {c * n} model calls > {budget}; {hint}"
        )


def hypershap(
    X,
    q,
    f: Predictor,
    chi: int,
    *,
    background_cap: int = DEFAULT_BACKGROUND_CAP,
    eval_budget: int = DEFAULT_EVAL_BUDGET,
) -> Attribution:
    """Depth-bounded Shapley attribution.

    Enumerates the coalitions of size ``<= chi`` or ``>= m - chi``,
    computes their expected predictions, and combines them with the
    banded kernel from :func:`shapley_weight`.  The baseline ``phi0`` is
    the residual ``f(q) - sum(phis)``.  Exact for additive models at any
    depth and for all models once ``chi >= ceil(m / 2)``.
    """
    X = _as_dataset(X)
    q = _as_query(q, X.m)
    m = X.m
    chi = _check_chi(m, chi)
    X = subsample_background(X, background_cap)
    _check_budget(coalition_count(m, chi), X.n, eval_budget,
                  "reduce chi, the feature count, or the background size")
    Z = build_selection_matrix(m, chi)
    mu = expected_values(X, q, f, Z)
    prediction = float(_predict_batch(f, q[None, :])[0])
    row_sums = Z.rows.sum(axis=1, dtype=np.int64)
    wtable = np.array([shapley_weight(m, chi, b) for b in range(m)])
    phis = np.empty(m, dtype=np.float64)
    for i in range(m):
        a = Z.rows[:, i].astype(np.float64)
        b = row_sums - Z.rows[:, i]
        v = (2.0 * a - 1.0) * wtable[b]
        phis[i] = float(np.add.reduce(v * mu))
    phi0 = prediction - float(np.add.reduce(phis))
    return Attribution(phi0=phi0, phis=phis, prediction=prediction)


def exact_shapley(
    X,
    q,
    f: Predictor,
    *,
    background_cap: int = DEFAULT_BACKGROUND_CAP,
    eval_budget: int = DEFAULT_EVAL_BUDGET,
) -> Attribution:
    """Exact Shapley attribution by full enumeration of all ``2**m`` coalitions.

    Evaluates the definition directly: for each feature, the
    factorial-weighted marginal contribution is summed over every
    coalition that excludes it, with expectations taken over the
    background rows.  Kernel weights come from exact rational
    arithmetic.  Refuses ``m > 20``; use :func:`hypershap` there.
    """
    X = _as_dataset(X)
    q = _as_query(q, X.m)
    m = X.m
    if m > EXACT_MAX_FEATURES:
        raise CapacityError(
            f"exact enumeration needs 2**{m} coalitions; limited to m <= "
            f"{EXACT_MAX_FEATURES}, use hypershap instead"
        )
    X = subsample_background(X, background_cap)
    _check_budget(1 << m, X.n, eval_budget, "reduce the background size or use hypershap")

    masks = np.arange(1 << m, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(m)) & 1).astype(np.uint8)
    pops = bits.sum(axis=1, dtype=np.int64)
    # Primary key: coalition size; then the bit vector, leftmost coordinate first.
    keys = tuple(bits[:, j] for j in reversed(range(m))) + (pops,)
    order = np.lexsort(keys)
    sorted_masks = masks[order]
    sorted_pops = pops[order]
    Z = SelectionMatrix(bits[order])
    position = np.empty(1 << m, dtype=np.int64)
    position[sorted_masks] = np.arange(1 << m)

    mu = expected_values(X, q, f, Z)
    w_by_size = np.array([
        float(Fraction(math.factorial(s) * math.factorial(m - s - 1), math.factorial(m)))
        for s in range(m)
    ])
    phis = np.empty(m, dtype=np.float64)
    for i in range(m):
        without = ((sorted_masks >> i) & 1) == 0
        sub = sorted_masks[without]
        sizes = sorted_pops[without]
        gains = mu[position[sub | (1 << i)]] - mu[position[sub]]
        phis[i] = float(np.add.reduce(w_by_size[sizes] * gains))
    prediction = float(_predict_batch(f, q[None, :])[0])
    phi0 = prediction - float(np.add.reduce(phis))
    return Attribution(phi0=phi0, phis=phis, prediction=prediction)
