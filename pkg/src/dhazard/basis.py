"""Design matrices and quadratic penalties for additive model terms.

Univariate smooths are P-splines: a clamped, equidistant B-spline basis
combined with a difference penalty on adjacent coefficients.  Bivariate
smooths are row-wise tensor products of two marginal bases with one
penalty component per margin (anisotropic smoothing).  Linear and
categorical terms carry no penalty.

Smooth terms are made identifiable by absorbing a sum-to-zero constraint
over the augmented training rows into the basis, so every fitted term
averages to zero; the single global intercept lives in the baseline
(time) term.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import BSpline

from .errors import ConfigError, ValidationError

__all__ = [
    "TermSpec",
    "DesignBlock",
    "bspline_knots",
    "bspline_design",
    "bspline_basis",
    "difference_penalty",
    "row_kronecker",
    "tensor_product",
    "center_block",
    "build_block",
    "build_blocks",
]

SMOOTH_KINDS = ("baseline_smooth", "univariate_smooth", "bivariate_smooth")
KINDS = SMOOTH_KINDS + ("linear", "categorical")

_CENTER_RTOL = 1e-12


@dataclass(frozen=True)
class TermSpec:
    """Declaration of one additive model term.

    ``basis_dim`` counts basis functions before the identifiability
    constraint (per margin for bivariate smooths).  ``None`` picks the
    default: 10 for univariate smooths and the baseline, 5 per margin for
    bivariate smooths.
    """

    name: str
    kind: str
    columns: tuple = ()
    basis_dim: int | None = None
    degree: int = 3
    penalty_order: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(
                f"term {self.name!r}: unknown kind {self.kind!r}; "
                f"expected one of {KINDS}"
            )
        object.__setattr__(self, "columns", tuple(self.columns))
        expected = {
            "baseline_smooth": 0,
            "univariate_smooth": 1,
            "bivariate_smooth": 2,
            "linear": 1,
            "categorical": 1,
        }[self.kind]
        if len(self.columns) != expected:
            raise ConfigError(
                f"term {self.name!r} ({self.kind}) needs {expected} input "
                f"column(s), got {self.columns}"
            )
        if self.kind in SMOOTH_KINDS:
            d = self.dim
            if self.degree < 1:
                raise ConfigError(f"term {self.name!r}: degree must be >= 1")
            if self.penalty_order < 1:
                raise ConfigError(
                    f"term {self.name!r}: penalty order must be >= 1"
                )
            if d < self.penalty_order + self.degree:
                raise ConfigError(
                    f"term {self.name!r}: basis_dim {d} must be at least "
                    f"penalty_order + degree = "
                    f"{self.penalty_order + self.degree}"
                )

    @property
    def dim(self):
        if self.basis_dim is not None:
            return self.basis_dim
        return 5 if self.kind == "bivariate_smooth" else 10

    @property
    def penalized(self):
        return self.kind in SMOOTH_KINDS


def bspline_knots(x, d, degree=3):
    """Clamped knot vector for ``d`` basis functions over the range of ``x``.

    Interior knots are equidistant over ``[min(x), max(x)]``; each
    boundary knot is repeated ``degree`` extra times so the basis clamps
    at the range endpoints.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    xmin, xmax = float(x.min()), float(x.max())
    if xmin == xmax:
        raise ValueError("need at least 2 distinct x values to place knots")
    if d < degree + 1:
        raise ValueError(f"basis dimension {d} must be at least degree + 1")
    inner = np.linspace(xmin, xmax, d - degree + 1)
    return np.concatenate([[xmin] * degree, inner, [xmax] * degree])


def bspline_design(x, knots, degree=3):
    """Dense B-spline design matrix for ``x`` on a stored knot vector.

    Values outside the knot range are clamped to the range boundary, so
    prediction beyond the training range extends the boundary value.
    """
    x = np.asarray(x, dtype=np.float64)
    lo, hi = knots[degree], knots[-degree - 1]
    xc = np.clip(x, lo, hi)
    return BSpline.design_matrix(xc, knots, degree, extrapolate=False).toarray()


def bspline_basis(x, d, degree=3):
    """Evaluate a ``d``-function clamped equidistant B-spline basis on ``x``.

    Each row sums to one (partition of unity on the observed range).
    """
    return bspline_design(x, bspline_knots(x, d, degree), degree)


def difference_penalty(d, order=2):
    """Penalty matrix ``K = D'D`` with ``D`` the ``order``-th difference matrix.

    ``K`` is symmetric positive semi-definite with null space spanned by
    the polynomials of degree below ``order`` in the coefficient index.
    """
    if d <= order:
        raise ValueError(
            f"coefficient count {d} must exceed the penalty order {order}"
        )
    D = np.diff(np.eye(d), n=order, axis=0)
    return D.T @ D


def row_kronecker(Bx, By):
    """Row-wise Kronecker product: row i is ``kron(Bx[i], By[i])``."""
    Bx = np.asarray(Bx, dtype=np.float64)
    By = np.asarray(By, dtype=np.float64)
    if Bx.shape[0] != By.shape[0]:
        raise ValueError(
            f"row counts differ: {Bx.shape[0]} vs {By.shape[0]}"
        )
    n, dx = Bx.shape
    dy = By.shape[1]
    return (Bx[:, :, None] * By[:, None, :]).reshape(n, dx * dy)


def tensor_product(Bx, By, Kx, Ky):
    """Tensor-product design and its two anisotropic penalty components.

    Returns ``(design, (Kx ⊗ I, I ⊗ Ky))``; the two components are
    weighted by a two-component smoothing parameter when the penalty is
    assembled.
    """
    design = row_kronecker(Bx, By)
    dx, dy = Kx.shape[0], Ky.shape[0]
    P1 = np.kron(Kx, np.eye(dy))
    P2 = np.kron(np.eye(dx), Ky)
    return design, (P1, P2)


@dataclass(frozen=True)
class CenteringTransform:
    """Affine reparameterization recorded by :func:`center_block`.

    Either a null-space basis ``Z`` (smooths, categorical: new design is
    ``raw @ Z``) or a column ``shift`` (linear terms: new design is
    ``raw - shift``).
    """

    basis_map: np.ndarray | None = None
    shift: np.ndarray | None = None

    def apply(self, raw):
        out = raw
        if self.basis_map is not None:
            out = out @ self.basis_map
        if self.shift is not None:
            out = out - self.shift
        return out


@dataclass(frozen=True)
class DesignBlock:
    """Design values and penalty structure for one model term.

    ``values`` holds the design evaluated once per *unit*: per individual
    for covariate terms, per time point for the baseline term.  Row-level
    design matrices are index gathers (:meth:`rows`), so the augmented
    table is never materialised.  ``unit_counts`` gives each unit's
    augmented-row multiplicity, which is what weighted column sums and
    centering are computed against.

    ``penalties`` holds zero components for unpenalized terms, one for
    univariate smooths, and two (one per margin) for tensor products.
    """

    term: TermSpec
    values: np.ndarray | None
    source: str
    unit_counts: np.ndarray | None
    penalties: tuple = ()
    knots: tuple = ()
    levels: tuple = ()
    transform: CenteringTransform | None = None
    has_intercept: bool = False

    @property
    def ncoef(self):
        if self.values is not None:
            return self.values.shape[1]
        return self._raw_dim_after_transform()

    def _raw_dim_after_transform(self):
        d = {
            "baseline_smooth": self.term.dim if self.knots else 0,
            "univariate_smooth": self.term.dim,
            "bivariate_smooth": self.term.dim ** 2,
            "linear": 1,
            "categorical": len(self.levels),
        }[self.term.kind]
        if self.transform is not None and self.transform.basis_map is not None:
            d = self.transform.basis_map.shape[1]
        return d + (1 if self.has_intercept else 0)

    def rows(self, dataset, row_indices=None):
        """Design matrix for the given augmented rows (all rows if None)."""
        if self.values is None:
            raise ValueError("block has no training design values")
        if self.source == "time":
            idx = dataset.row_t if row_indices is None else dataset.row_t[row_indices]
            return self.values[idx - 1]
        idx = (
            dataset.row_individual
            if row_indices is None
            else dataset.row_individual[row_indices]
        )
        return self.values[idx]

    def _raw_design(self, inputs):
        kind = self.term.kind
        if kind == "baseline_smooth":
            t = np.asarray(inputs["__time__"], dtype=np.float64)
            if not self.knots:  # intercept-only baseline (single interval)
                return np.zeros((t.size, 0))
            return bspline_design(t, self.knots[0], self.term.degree)
        if kind == "univariate_smooth":
            x = np.asarray(inputs[self.term.columns[0]], dtype=np.float64)
            return bspline_design(x, self.knots[0], self.term.degree)
        if kind == "bivariate_smooth":
            c1, c2 = self.term.columns
            B1 = bspline_design(
                np.asarray(inputs[c1], dtype=np.float64),
                self.knots[0],
                self.term.degree,
            )
            B2 = bspline_design(
                np.asarray(inputs[c2], dtype=np.float64),
                self.knots[1],
                self.term.degree,
            )
            return row_kronecker(B1, B2)
        if kind == "linear":
            x = np.asarray(inputs[self.term.columns[0]], dtype=np.float64)
            return x.reshape(-1, 1)
        # categorical
        col = self.term.columns[0]
        raw = inputs[col]
        index = {v: c for c, v in enumerate(self.levels)}
        codes = np.empty(len(raw), dtype=np.int64)
        for i, v in enumerate(np.asarray(raw, dtype=object)):
            key = str(v)
            if key not in index:
                raise ValidationError(
                    f"term {self.term.name!r}: unknown level {key!r} for "
                    f"column {col!r}; known levels: {list(self.levels)}"
                )
            codes[i] = index[key]
        return np.eye(len(self.levels))[codes]

    def design_for(self, inputs):
        """Design matrix for new inputs, in the fitted parameterization.

        ``inputs`` maps column names to value arrays; the baseline term
        reads interval indices from the ``"__time__"`` key.
        """
        out = self._raw_design(inputs)
        if self.transform is not None:
            out = self.transform.apply(out)
        if self.has_intercept:
            out = np.column_stack([np.ones(out.shape[0]), out])
        return out

    def effect(self, beta, inputs):
        """Fitted term values for new inputs."""
        return self.design_for(inputs) @ np.asarray(beta, dtype=np.float64)


def _null_space_transform(constraint):
    """Orthonormal basis of the null space of ``constraint @ beta = 0``."""
    c = np.asarray(constraint, dtype=np.float64).reshape(-1, 1)
    q, _ = np.linalg.qr(c, mode="complete")
    return q[:, 1:]


def center_block(block):
    """Absorb a sum-to-zero-over-training-rows constraint into a block.

    After centering, the fitted term has exactly zero mean over the
    augmented training rows for every coefficient vector.  Smooth and
    categorical blocks are reparameterized onto the constraint's null
    space (penalties transformed consistently); linear terms are shifted
    by their weighted column mean.  Centering an already-centered block
    returns it unchanged.
    """
    if block.values is None or block.unit_counts is None:
        raise ValueError("cannot center a block without training values")
    if block.has_intercept:
        raise ValueError("cannot center a block that carries the intercept")
    w = block.unit_counts.astype(np.float64)
    colsums = w @ block.values
    scale = float(w.sum()) * max(1.0, float(np.abs(block.values).max()))
    if np.all(np.abs(colsums) <= _CENTER_RTOL * scale):
        return block

    if block.term.kind == "linear":
        shift = colsums / w.sum()
        prev = block.transform.shift if block.transform else 0.0
        return replace(
            block,
            values=block.values - shift,
            transform=CenteringTransform(shift=shift + prev),
        )

    if block.transform is not None:
        raise ValueError("block was already reparameterized")
    Z = _null_space_transform(colsums)
    return replace(
        block,
        values=block.values @ Z,
        penalties=tuple(Z.T @ K @ Z for K in block.penalties),
        transform=CenteringTransform(basis_map=Z),
    )


def _with_intercept(block):
    """Prepend an unpenalized intercept column (baseline term only)."""
    values = np.column_stack([np.ones(block.values.shape[0]), block.values])
    penalties = []
    for K in block.penalties:
        p = K.shape[0] + 1
        P = np.zeros((p, p))
        P[1:, 1:] = K
        penalties.append(P)
    return replace(
        block, values=values, penalties=tuple(penalties), has_intercept=True
    )


def _risk_counts(dataset):
    """Number of individuals still at risk in each interval 1..max_time."""
    return np.bincount(dataset.row_t, minlength=dataset.max_time + 1)[1:]


def build_block(term, dataset, center=True):
    """Construct one term's :class:`DesignBlock` from an augmented dataset."""
    kind = term.kind
    if kind == "baseline_smooth":
        if dataset.max_time < 2:
            # single observed interval: the baseline reduces to an intercept
            return DesignBlock(
                term=term,
                values=np.ones((1, 1)),
                source="time",
                unit_counts=_risk_counts(dataset),
                has_intercept=True,
            )
        t_grid = np.arange(1, dataset.max_time + 1, dtype=np.float64)
        knots = bspline_knots(t_grid, term.dim, term.degree)
        raw = bspline_design(t_grid, knots, term.degree)
        K = difference_penalty(term.dim, term.penalty_order)
        block = DesignBlock(
            term=term,
            values=raw,
            source="time",
            unit_counts=_risk_counts(dataset),
            penalties=(K,),
            knots=(knots,),
        )
        if center:
            block = _with_intercept(center_block(block))
        return block

    counts = dataset.times
    if kind == "univariate_smooth":
        x = dataset.covariates[term.columns[0]]
        knots = bspline_knots(x, term.dim, term.degree)
        raw = bspline_design(x, knots, term.degree)
        K = difference_penalty(term.dim, term.penalty_order)
        block = DesignBlock(
            term=term,
            values=raw,
            source="individual",
            unit_counts=counts,
            penalties=(K,),
            knots=(knots,),
        )
    elif kind == "bivariate_smooth":
        x1 = dataset.covariates[term.columns[0]]
        x2 = dataset.covariates[term.columns[1]]
        k1 = bspline_knots(x1, term.dim, term.degree)
        k2 = bspline_knots(x2, term.dim, term.degree)
        B1 = bspline_design(x1, k1, term.degree)
        B2 = bspline_design(x2, k2, term.degree)
        K = difference_penalty(term.dim, term.penalty_order)
        raw, penalties = tensor_product(B1, B2, K, K)
        block = DesignBlock(
            term=term,
            values=raw,
            source="individual",
            unit_counts=counts,
            penalties=penalties,
            knots=(k1, k2),
        )
    elif kind == "linear":
        x = dataset.covariates[term.columns[0]].astype(np.float64)
        block = DesignBlock(
            term=term,
            values=x.reshape(-1, 1),
            source="individual",
            unit_counts=counts,
        )
    elif kind == "categorical":
        col = term.columns[0]
        if col not in dataset.levels:
            raise ConfigError(
                f"term {term.name!r}: column {col!r} was not ingested as "
                "categorical"
            )
        codes = dataset.covariates[col]
        levels = dataset.levels[col]
        block = DesignBlock(
            term=term,
            values=np.eye(len(levels))[codes],
            source="individual",
            unit_counts=counts,
            levels=tuple(levels),
        )
    else:  # pragma: no cover - guarded by TermSpec
        raise ConfigError(f"unknown term kind {kind!r}")

    return center_block(block) if center else block


def build_blocks(terms, dataset, center=True):
    """Build all design blocks, enforcing exactly one baseline term."""
    terms = list(terms)
    names = [t.name for t in terms]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate term names: {names}")
    n_baseline = sum(t.kind == "baseline_smooth" for t in terms)
    if n_baseline != 1:
        raise ConfigError(
            f"a model needs exactly one baseline_smooth term, got {n_baseline}"
        )
    for t in terms:
        for col in t.columns:
            if col not in dataset.covariate_names:
                raise ConfigError(
                    f"term {t.name!r} references unknown column {col!r}"
                )
    return [build_block(t, dataset, center=center) for t in terms]
