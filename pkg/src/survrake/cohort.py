"""Two-phase cohort container shared by every estimator.

Phase one observes an error-prone follow-up time, event indicator, and
covariates for all n subjects. Phase two validates a subsample, revealing
the true time, indicator, and covariates there. The container keeps both
layers plus the sampling metadata (selection flags and probabilities), and
the estimators read only what their method is allowed to see.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError, InvalidConfigError, NonFiniteInputError

__all__ = ["CohortData"]


def _as_matrix(values, n, name):
    if values is None:
        return np.zeros((n, 0))
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] != n:
        raise InputError(f"{name} has {arr.shape[0]} rows, expected {n}")
    return np.ascontiguousarray(arr)


class CohortData:
    """Immutable-by-convention column store for a two-phase cohort.

    Args:
        time_star: error-prone follow-up times, nonnegative.
        delta_star: error-prone event indicators.
        x_star: error-prone covariates, one row per subject.
        z: error-free covariates, possibly zero columns.
        selected: phase-two membership flags; defaults to none selected.
        pi: sampling probabilities in (0, 1], recorded for every subject.
        time: true follow-up times; NaN allowed where not selected.
        delta: true event indicators as 0/1 floats; NaN where not selected.
        x: true covariates matching ``x_star``'s shape; NaN where not
            selected.
        ids: subject identifiers; defaults to 0..n-1.
    """

    def __init__(
        self,
        time_star,
        delta_star,
        x_star,
        z=None,
        *,
        selected=None,
        pi=None,
        time=None,
        delta=None,
        x=None,
        ids=None,
    ):
        time_star = np.asarray(time_star, dtype=float)
        n = time_star.shape[0]
        delta_star = np.asarray(delta_star, dtype=bool)
        x_star = _as_matrix(x_star, n, "x_star")
        z = _as_matrix(z, n, "z")
        if delta_star.shape != (n,):
            raise InputError(f"delta_star has shape {delta_star.shape}, expected ({n},)")
        if not np.isfinite(time_star).all() or not np.isfinite(x_star).all() or not np.isfinite(z).all():
            raise NonFiniteInputError("phase-one columns must be finite for every subject")
        if (time_star < 0).any():
            raise InputError("negative error-prone follow-up time")

        if selected is None:
            selected = np.zeros(n, dtype=bool)
        else:
            selected = np.asarray(selected, dtype=bool)
            if selected.shape != (n,):
                raise InputError(f"selected has shape {selected.shape}, expected ({n},)")
        if pi is not None:
            pi = np.asarray(pi, dtype=float)
            if pi.shape != (n,):
                raise InputError(f"pi has shape {pi.shape}, expected ({n},)")
            if not np.isfinite(pi).all() or (pi <= 0).any() or (pi > 1).any():
                raise InputError("sampling probabilities must lie in (0, 1]")

        time = None if time is None else np.asarray(time, dtype=float)
        delta = None if delta is None else np.asarray(delta, dtype=float)
        x = None if x is None else _as_matrix(x, n, "x")
        for name, arr, shape in (("time", time, (n,)), ("delta", delta, (n,))):
            if arr is not None and arr.shape != shape:
                raise InputError(f"{name} has shape {arr.shape}, expected {shape}")
        if x is not None and x.shape != x_star.shape:
            raise InputError(f"x has shape {x.shape}, expected {x_star.shape}")

        if selected.any():
            missing = [
                name
                for name, arr in (("time", time), ("delta", delta), ("x", x))
                if arr is None
            ]
            if missing:
                raise InvalidConfigError(
                    f"subjects are selected but validated column(s) {missing} are absent"
                )
            sel = selected
            if not np.isfinite(time[sel]).all() or not np.isfinite(delta[sel]).all() or not np.isfinite(x[sel]).all():
                raise InputError("validated columns must be finite on selected subjects")
            if (time[sel] < 0).any():
                raise InputError("negative validated follow-up time")
            finite_delta = delta[sel]
            if not np.isin(finite_delta, (0.0, 1.0)).all():
                raise InputError("validated event indicator must be 0 or 1")

        if ids is None:
            ids = np.arange(n)
        else:
            ids = np.asarray(ids)
            if ids.shape != (n,):
                raise InputError(f"ids has shape {ids.shape}, expected ({n},)")

        self.time_star = time_star
        self.delta_star = delta_star
        self.x_star = x_star
        self.z = z
        self.selected = selected
        self.pi = pi
        self.time = time
        self.delta = delta
        self.x = x
        self.ids = ids

    @property
    def n(self) -> int:
        return self.time_star.shape[0]

    @property
    def p(self) -> int:
        return self.x_star.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]

    @property
    def n_selected(self) -> int:
        return int(self.selected.sum())

    def omega(self) -> np.ndarray:
        """Observed time error U* - U; NaN where the truth is unknown."""
        if self.time is None:
            return np.full(self.n, np.nan)
        return self.time_star - self.time

    def phase_one_covariates(self) -> np.ndarray:
        """Error-prone covariates next to the error-free ones, all subjects."""
        return np.column_stack([self.x_star, self.z]) if self.q else self.x_star.copy()

    def validated_covariates(self) -> np.ndarray:
        """True covariates next to the error-free ones, selected subjects."""
        sel = self.selected
        cols = [self.x[sel]]
        if self.q:
            cols.append(self.z[sel])
        return np.column_stack(cols)

    def with_design(self, selected, pi=None) -> "CohortData":
        """Copy of the cohort with new sampling metadata attached."""
        return CohortData(
            self.time_star,
            self.delta_star,
            self.x_star,
            self.z,
            selected=selected,
            pi=pi,
            time=self.time,
            delta=self.delta,
            x=self.x,
            ids=self.ids,
        )

    def take(self, indices) -> "CohortData":
        """Row subset/resample; all columns and metadata follow the indices."""
        indices = np.asarray(indices, dtype=np.intp)
        return CohortData(
            self.time_star[indices],
            self.delta_star[indices],
            self.x_star[indices],
            self.z[indices],
            selected=self.selected[indices],
            pi=None if self.pi is None else self.pi[indices],
            time=None if self.time is None else self.time[indices],
            delta=None if self.delta is None else self.delta[indices],
            x=None if self.x is None else self.x[indices],
            ids=self.ids[indices],
        )
