from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class RegressionData:
    """Design matrix and response for linear regression.

    ``X`` is stored column-major since every solver walks it column by column.
    When ``centered`` is true, ``x_means`` and ``y_mean`` hold the means that
    were subtracted, so fitted models can be mapped back to raw inputs.
    """

    X: np.ndarray
    y: np.ndarray
    centered: bool = False
    x_means: np.ndarray | None = None
    y_mean: float = 0.0
    column_norms_sq: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.asfortranarray(np.asarray(self.X, dtype=float))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=float))
        if X.ndim != 2 or y.ndim != 1:
            raise InvalidInputError("X must be 2-d and y 1-d")
        n, p = X.shape
        if n < 1 or p < 1:
            raise InvalidInputError("X must have at least one row and one column")
        if y.shape[0] != n:
            raise InvalidInputError(f"y has {y.shape[0]} entries but X has {n} rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidInputError("X and y must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "column_norms_sq", np.einsum("ij,ij->j", X, X))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def center(self) -> "RegressionData":
        """Mean-center ``y`` and every column of ``X``."""
        if self.centered:
            return self
        xm = self.X.mean(axis=0)
        ym = float(self.y.mean())
        return RegressionData(self.X - xm, self.y - ym, centered=True, x_means=xm, y_mean=ym)

    def subset(self, rows) -> "RegressionData":
        return RegressionData(self.X[rows], self.y[rows])
