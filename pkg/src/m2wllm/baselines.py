"""Sanity baselines: persistence and ridge regression on flattened inputs."""

from __future__ import annotations

import numpy as np

from .data import WindDataset


def persistence(ds: WindDataset) -> np.ndarray:
    """Repeat the last observed power over the whole horizon: (N, C, tau_f)."""
    return np.repeat(ds.x[..., -1:], ds.tau_f, axis=-1)


def _features(ds: WindDataset, use_nwp: bool) -> np.ndarray:
    n = len(ds)
    parts = [ds.x.reshape(n, -1)]
    if use_nwp:
        parts.append(ds.z.reshape(n, -1))
    return np.concatenate(parts, axis=1)


class Ridge:
    """Multi-output ridge regression with an unpenalized intercept.

    Solved in closed form on centered data; features are flattened X (and Z)
    over all stations, targets are the flattened Y.
    """

    def __init__(self, lam: float = 1.0, use_nwp: bool = True):
        self.lam = lam
        self.use_nwp = use_nwp

    def fit(self, ds: WindDataset) -> "Ridge":
        F = _features(ds, self.use_nwp)
        Y = ds.y.reshape(len(ds), -1)
        self.f_mean = F.mean(axis=0)
        self.y_mean = Y.mean(axis=0)
        Fc = F - self.f_mean
        Yc = Y - self.y_mean
        if np.isinf(self.lam):
            self.coef = np.zeros((F.shape[1], Y.shape[1]))
        else:
            gram = Fc.T @ Fc + self.lam * np.eye(F.shape[1])
            self.coef = np.linalg.solve(gram, Fc.T @ Yc)
        self.out_shape = ds.y.shape[1:]
        return self

    def predict(self, ds: WindDataset) -> np.ndarray:
        F = _features(ds, self.use_nwp)
        y = (F - self.f_mean) @ self.coef + self.y_mean
        y = y.reshape((len(ds),) + self.out_shape)
        return np.clip(y, 0.0, ds.capacities[:, None])


def ridge(train: WindDataset, test: WindDataset, lam: float = 1.0) -> np.ndarray:
    return Ridge(lam).fit(train).predict(test)
