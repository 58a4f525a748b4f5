"""Finite-sum objectives ``f(x) = (1/m) sum_i f_i(x)``.

Two concrete problem classes are provided: the tridiagonal quadratic race
problem and binary logistic regression read from CSV.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

__all__ = [
    "SmoothnessHints",
    "FiniteSumObjective",
    "QuadraticProblem",
    "LogisticProblem",
    "generate_quadratic",
    "quadratic_component_gradient",
    "full_gradient_reference",
    "load_csv_dataset",
    "standard_normals",
    "tridiag_eigenvalues",
    "save_quadratic",
    "load_quadratic",
]


@dataclass
class SmoothnessHints:
    L_minus: float | None = None
    L_plus: float | None = None
    L_pm: float | None = None
    L_i: np.ndarray | None = None

    @property
    def L_bar(self):
        return None if self.L_i is None else float(np.mean(self.L_i))

    @property
    def L_max(self):
        return None if self.L_i is None else float(np.max(self.L_i))


class FiniteSumObjective:
    """Base class.  Subclasses implement ``component_gradient`` and ``component_value``.

    ``gradient_sum`` and ``full_gradient`` have vectorized overrides in the
    concrete problems; the defaults here loop over components.
    """

    m: int
    d: int
    hints: SmoothnessHints

    def component_gradient(self, i, x):
        raise NotImplementedError

    def component_value(self, i, x):
        raise NotImplementedError

    def _check_index(self, i):
        if not 0 <= i < self.m:
            raise IndexError(f"component index {i} out of range [0, {self.m})")

    def gradient_sum(self, indices, x, weights=None):
        """Return ``sum_k w_k grad f_{indices[k]}(x)`` (weights default to 1)."""
        out = np.zeros(self.d)
        for k, i in enumerate(indices):
            g = self.component_gradient(int(i), x)
            out += g if weights is None else weights[k] * g
        return out

    def full_gradient(self, x):
        return self.gradient_sum(range(self.m), x) / self.m

    def value(self, x):
        return sum(self.component_value(i, x) for i in range(self.m)) / self.m

    def optimum_value(self):
        """Exact minimum of f when known in closed form, else None."""
        return None


def full_gradient_reference(problem, x):
    """Sequential ``(1/m) sum_i grad f_i(x)``; the verification oracle for the collectors."""
    x = np.asarray(x, dtype=float)
    total = np.zeros(problem.d)
    for i in range(problem.m):
        total += problem.component_gradient(i, x)
    return total / problem.m


# -- quadratics ---------------------------------------------------------------

def standard_normals(rng, size):
    """Box-Muller (cosine branch) normals from the generator's uniform doubles.

    Only ``Generator.random`` is used so the stream depends on the bit
    generator alone, not on numpy's normal sampler.
    """
    u = rng.random((size, 2))
    return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])


def tridiag_eigenvalues(d):
    """Eigenvalues of tridiag(-1, 2, -1) of size d, ascending."""
    k = np.arange(1, d + 1)
    return 2.0 - 2.0 * np.cos(k * np.pi / (d + 1))


def _tridiag_matvec(x):
    y = 2.0 * x
    y[1:] -= x[:-1]
    y[:-1] -= x[1:]
    return y


@dataclass
class QuadraticProblem(FiniteSumObjective):
    """``f_i(x) = 1/2 x^T A_i x - b_i^T x`` with ``A_i = scale_i * T + shift * I``.

    ``T = tridiag(-1, 2, -1)`` and ``b_i = b1_i * e_1``.
    """

    scales: np.ndarray
    b1: np.ndarray
    shift: float
    d: int
    params: dict = field(default_factory=dict)
    hints: SmoothnessHints = field(default_factory=SmoothnessHints)

    def __post_init__(self):
        self.scales = np.asarray(self.scales, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        self.m = self.scales.size
        self._mu = tridiag_eigenvalues(self.d)
        if self.hints.L_minus is None:
            self.hints = self._derive_hints()

    @property
    def x0(self):
        x = np.zeros(self.d)
        x[0] = math.sqrt(self.d)
        return x

    def _extreme_abs_eig(self, c):
        lo, hi = self._mu[0], self._mu[-1]
        return np.maximum(np.abs(c * lo + self.shift), np.abs(c * hi + self.shift))

    def _derive_hints(self):
        c_bar = self.scales.mean()
        L_i = self._extreme_abs_eig(self.scales)
        L_minus = float(self._extreme_abs_eig(c_bar))
        L_plus = float(np.sqrt(np.mean(L_i ** 2)))
        # grad f_i(x) - grad f_i(y) - (grad f(x) - grad f(y)) = (c_i - c_bar) T (x - y)
        L_pm = float(np.sqrt(np.mean((self.scales - c_bar) ** 2)) * self._mu[-1])
        return SmoothnessHints(L_minus=L_minus, L_plus=L_plus, L_pm=L_pm, L_i=L_i)

    def dense_matrix(self, i=None):
        """Dense A_i (or the mean matrix when ``i`` is None); for tests and small d."""
        c = self.scales.mean() if i is None else self.scales[i]
        T = 2.0 * np.eye(self.d) - np.eye(self.d, k=1) - np.eye(self.d, k=-1)
        return c * T + self.shift * np.eye(self.d)

    def dense_b(self, i=None):
        b = np.zeros(self.d)
        b[0] = self.b1.mean() if i is None else self.b1[i]
        return b

    def component_gradient(self, i, x):
        self._check_index(i)
        x = np.asarray(x, dtype=float)
        g = self.scales[i] * _tridiag_matvec(x) + self.shift * x
        g[0] -= self.b1[i]
        return g

    def component_value(self, i, x):
        self._check_index(i)
        x = np.asarray(x, dtype=float)
        return 0.5 * (self.scales[i] * x @ _tridiag_matvec(x) + self.shift * x @ x) - self.b1[i] * x[0]

    def gradient_sum(self, indices, x, weights=None):
        idx = np.asarray(indices, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= self.m):
            raise IndexError("component index out of range")
        if weights is None:
            c, b, k = self.scales[idx].sum(), self.b1[idx].sum(), float(idx.size)
        else:
            w = np.asarray(weights, dtype=float)
            c, b, k = w @ self.scales[idx], w @ self.b1[idx], w.sum()
        g = c * _tridiag_matvec(x) + (k * self.shift) * x
        g[0] -= b
        return g

    def full_gradient(self, x):
        g = self.scales.mean() * _tridiag_matvec(x) + self.shift * x
        g[0] -= self.b1.mean()
        return g

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * (self.scales.mean() * x @ _tridiag_matvec(x) + self.shift * x @ x) - self.b1.mean() * x[0]

    def minimizer(self):
        """Solve the mean system; only meaningful when the mean matrix is positive definite."""
        c = self.scales.mean()
        ab = np.zeros((3, self.d))
        ab[0, 1:] = -c
        ab[1, :] = 2.0 * c + self.shift
        ab[2, :-1] = -c
        return solve_banded((1, 1), ab, self.dense_b())

    def optimum_value(self):
        lam_min = min(self.scales.mean() * self._mu[0], self.scales.mean() * self._mu[-1]) + self.shift
        if lam_min <= 0:
            return None
        return float(self.value(self.minimizer()))


def generate_quadratic(m, d, lam, s, seed):
    """Random tridiagonal quadratic whose mean matrix has smallest eigenvalue ``lam``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if d < 2:
        raise ValueError("d must be >= 2 for a tridiagonal matrix")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    xi = standard_normals(rng, 2 * m)
    nu_s = 1.0 + s * xi[0::2]
    nu_b = s * xi[1::2]
    scales = nu_s / 4.0
    b1 = scales * (-1.0 + nu_b)
    mu = tridiag_eigenvalues(d)
    c_bar = scales.mean()
    lam_min = min(c_bar * mu[0], c_bar * mu[-1])
    problem = QuadraticProblem(scales=scales, b1=b1, shift=lam - lam_min, d=d,
                               params=dict(m=m, d=d, lam=lam, s=s, seed=seed))
    return problem


def quadratic_component_gradient(problem, i, x):
    return problem.component_gradient(i, x)


def _checksum(problem):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(problem.scales).tobytes())
    h.update(np.ascontiguousarray(problem.b1).tobytes())
    return h.hexdigest()


def save_quadratic(problem, path):
    doc = {"format": "freya-quadratic", "version": 1, **problem.params,
           "sha256": _checksum(problem)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def load_quadratic(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "freya-quadratic":
        raise ValueError(f"{path}: not a quadratic problem file")
    problem = generate_quadratic(doc["m"], doc["d"], doc["lam"], doc["s"], doc["seed"])
    if "sha256" in doc and doc["sha256"] != _checksum(problem):
        raise ValueError(f"{path}: regenerated problem does not match stored checksum")
    return problem


# -- logistic regression ------------------------------------------------------

def _log1pexp_neg(z):
    # log(1 + exp(-z)), stable for both signs
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(-z, 0.0)


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LogisticProblem(FiniteSumObjective):
    """Binary logistic loss ``log(1 + exp(-yhat_i a_i^T x)) + mu/2 |x|^2``, ``yhat = 2y - 1``."""

    features: np.ndarray
    labels: np.ndarray
    mu: float = 0.0
    hints: SmoothnessHints = field(default_factory=SmoothnessHints)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError("need a non-empty 2-d feature matrix")
        if not np.all(np.isin(self.labels, (0.0, 1.0))):
            raise ValueError("labels must be 0 or 1")
        self.m, self.d = self.features.shape
        self._signs = 2.0 * self.labels - 1.0
        if self.hints.L_minus is None:
            L_i = np.einsum("ij,ij->i", self.features, self.features) / 4.0 + self.mu
            L_minus = float(np.linalg.norm(self.features, 2) ** 2 / (4.0 * self.m) + self.mu)
            L_plus = float(np.sqrt(np.mean(L_i ** 2)))
            self.hints = SmoothnessHints(L_minus=L_minus, L_plus=L_plus, L_pm=L_plus, L_i=L_i)

    @property
    def x0(self):
        return np.zeros(self.d)

    def component_value(self, i, x):
        self._check_index(i)
        z = self._signs[i] * (self.features[i] @ x)
        return float(_log1pexp_neg(np.array([z]))[0] + 0.5 * self.mu * (x @ x))

    def component_gradient(self, i, x):
        self._check_index(i)
        z = self._signs[i] * (self.features[i] @ x)
        coef = -self._signs[i] * _sigmoid(np.array([-z]))[0]
        return coef * self.features[i] + self.mu * np.asarray(x, dtype=float)

    def gradient_sum(self, indices, x, weights=None):
        idx = np.asarray(indices, dtype=np.intp)
        A = self.features[idx]
        coef = -self._signs[idx] * _sigmoid(-self._signs[idx] * (A @ x))
        w = np.ones(idx.size) if weights is None else np.asarray(weights, dtype=float)
        return (w * coef) @ A + (w.sum() * self.mu) * np.asarray(x, dtype=float)

    def full_gradient(self, x):
        return self.gradient_sum(np.arange(self.m), x) / self.m

    def value(self, x):
        z = self._signs * (self.features @ x)
        return float(np.mean(_log1pexp_neg(z)) + 0.5 * self.mu * (x @ x))


def load_csv_dataset(path, label_column=-1, header=False, mu=0.0):
    """Read a comma-separated numeric file; each row becomes one component."""
    rows, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        width = None
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise ValueError(f"{path}:{lineno}: need at least one feature and a label")
            if len(row) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            label = values.pop(label_column)
            if label not in (0.0, 1.0):
                raise ValueError(f"{path}:{lineno}: label {label!r} is not 0 or 1")
            rows.append(values)
            labels.append(label)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return LogisticProblem(np.array(rows), np.array(labels), mu=mu)
