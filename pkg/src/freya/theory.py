"""Closed-form complexity calculus: equilibrium time, parameter choices,
stepsizes, iteration counts and predicted wall-clock bounds.

Every function here is pure.  Times are seconds, ``taus`` are per-gradient
compute-time bounds of the workers (``inf`` allowed, ``0`` allowed).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "inv_rate",
    "equilibrium_time",
    "equilibrium_profile",
    "equilibrium_times",
    "large_scale_params",
    "ratio_params",
    "optimal_params",
    "page_stepsize",
    "nice_stepsize",
    "importance_stepsize",
    "page_iterations",
    "nice_iterations",
    "importance_iterations",
    "predicted_time",
    "large_scale_time",
    "lower_bound_time",
    "soviet_page_time",
    "compute_gradient_time_bound",
    "batch_difference_time_bound",
    "batch_time_bound",
    "any_sampling_time_bound",
    "any_sampling_difference_time_bound",
    "sgd_stepsize",
    "sgd_iterations",
    "sgd_params",
    "sgd_time",
    "simple_upper_bounds_check",
    "lemma_sandwich",
    "needs_log_term",
    "TheoryReport",
    "theory_report",
]


def inv_rate(tau):
    """Rate ``1/tau`` with ``1/0 = inf`` and ``1/inf = 0``."""
    tau = float(tau)
    if tau == 0.0:
        return math.inf
    if math.isinf(tau):
        return 0.0
    return 1.0 / tau


def _ratio(numer, harmonic_sum):
    # (sum 1/tau)^{-1} * numer with 1/inf = 0 and 1/0 = inf conventions.
    if math.isinf(harmonic_sum):
        return 0.0
    if harmonic_sum == 0.0:
        return math.inf
    return numer / harmonic_sum


def _sorted_taus(taus):
    arr = np.sort(np.asarray(taus, dtype=float).ravel())
    if arr.size == 0:
        raise ValueError("taus must be non-empty")
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise ValueError("taus must be non-negative")
    return arr


def _prefix_rates(taus):
    rates = np.array([inv_rate(t) for t in taus])
    return np.cumsum(rates)


def equilibrium_profile(S, taus):
    """Return the candidate values ``(S + j) / sum_{i<=j} 1/tau_i`` for every prefix j."""
    arr = _sorted_taus(taus)
    prefix = _prefix_rates(arr)
    return np.array([_ratio(S + j, h) for j, h in enumerate(prefix, start=1)])


def equilibrium_time(S, taus):
    """Equilibrium time ``t*(S, taus)`` and the smallest minimizing prefix size j (1-based).

    ``taus`` is sorted internally.  ``inf`` entries contribute zero rate and a
    zero entry makes the value 0.
    """
    if S < 0:
        raise ValueError("S must be non-negative")
    values = equilibrium_profile(S, taus)
    j = int(np.argmin(values))
    return float(values[j]), j + 1


def equilibrium_times(S_values, taus):
    """Vectorized ``t*`` over an array of batch sizes (same arithmetic as the scalar path)."""
    arr = _sorted_taus(taus)
    prefix = _prefix_rates(arr)
    S_values = np.asarray(S_values, dtype=float)
    out = np.full(S_values.shape, math.inf)
    j = np.arange(1, arr.size + 1, dtype=float)
    if np.isinf(prefix[0]):
        return np.zeros(S_values.shape)
    finite = prefix > 0
    if not finite.any():
        return out
    h = prefix[finite]
    jj = j[finite]
    for start in range(0, S_values.size, 256):
        chunk = S_values.ravel()[start:start + 256]
        vals = (chunk[:, None] + jj[None, :]) / h[None, :]
        out.ravel()[start:start + 256] = vals.min(axis=1)
    return out


def needs_log_term(m, n):
    """True when m < n log n, i.e. the log-free form of the bounds is not justified."""
    return m < n * math.log(n) if n > 1 else False


def _coupon_extra(size, n):
    c = min(size, n)
    return c * math.log(c) if c >= 1 else 0.0


def compute_gradient_time_bound(m, taus):
    """Expected-time bound of the asynchronous full-gradient collector."""
    n = len(taus)
    return 12.0 * equilibrium_time(m + _coupon_extra(m, n), taus)[0]


def any_sampling_time_bound(size, taus):
    """Expected-time bound for collecting an arbitrary multiset of ``size`` gradients."""
    return compute_gradient_time_bound(size, taus)


def any_sampling_difference_time_bound(size, taus):
    n = len(taus)
    return 24.0 * equilibrium_time(size + _coupon_extra(size, n), taus)[0]


def batch_difference_time_bound(S, taus):
    """Deterministic worst-case time for S gradient differences."""
    return 4.0 * equilibrium_time(S, taus)[0]


def batch_time_bound(S, taus):
    """Deterministic worst-case time for a minibatch of S gradients."""
    return 2.0 * equilibrium_time(S, taus)[0]


def large_scale_params(m):
    """Minibatch size and full-gradient probability for the regime sqrt(m) >= n."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return math.ceil(math.sqrt(m)), 1.0 / math.sqrt(m)


def ratio_params(m, L_minus, L_pm):
    if L_minus <= 0:
        raise ValueError("L_minus must be positive")
    S = min(max(math.ceil(L_pm / L_minus * math.sqrt(m)), 1), m)
    return S, S / m


def _F(L_minus, L_pm, t_m, t_S, S):
    return L_minus * t_S + L_pm * math.sqrt(t_m * t_S) / math.sqrt(S)


def optimal_params(m, taus, L_minus, L_pm, method="auto"):
    """Minimize F(S) over integer S in [1, m] and derive the matching p.

    ``method`` is ``"exhaustive"``, ``"bisect"`` or ``"auto"`` (exhaustive
    for m <= 2000).  Returns ``(S_star, p_star, F(S_star))``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if method == "auto":
        method = "exhaustive" if m <= 2000 else "bisect"
    t_m = equilibrium_time(m, taus)[0]

    def F_of(S):
        return _F(L_minus, L_pm, t_m, equilibrium_time(S, taus)[0], S)

    if method == "exhaustive":
        best_S, best_F = 1, F_of(1)
        for S in range(2, m + 1):
            val = F_of(S)
            if val < best_F:
                best_S, best_F = S, val
    elif method == "bisect":
        # G is nondecreasing: first term grows with S, second shrinks.
        def G(S):
            t_S = equilibrium_time(S, taus)[0]
            return L_minus * t_S - L_pm * math.sqrt(t_m * t_S / S)

        lo, hi = 1, m
        if G(lo) >= 0:
            cross = lo
        elif G(hi) <= 0:
            cross = hi
        else:
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if G(mid) <= 0:
                    lo = mid
                else:
                    hi = mid
            cross = lo
        best_S, best_F = None, math.inf
        for S in range(max(1, cross - 2), min(m, cross + 2) + 1):
            val = F_of(S)
            if val < best_F:
                best_S, best_F = S, val
    else:
        raise ValueError(f"unknown method {method!r}")

    if L_minus * t_m <= best_F:
        p = 1.0
    else:
        p = equilibrium_time(best_S, taus)[0] / t_m
    return best_S, p, best_F


def page_stepsize(p, S, L_minus, L_pm):
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    if S < 1:
        raise ValueError("S must be >= 1")
    return 1.0 / (L_minus + L_pm * math.sqrt((1 - p) / (p * S)))


def nice_stepsize(p, S, m, L_minus, L_pm):
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    if S > m or S < 1:
        raise ValueError("S must lie in [1, m]")
    if S == m:
        return 1.0 / L_minus
    return 1.0 / (L_minus + L_pm * math.sqrt((1 - p) * (m - S) / (p * (m - 1) * S)))


def importance_stepsize(p, S, L_minus, L_bar):
    return page_stepsize(p, S, L_minus, L_bar)


def page_iterations(delta0, eps, p, S, L_minus, L_pm):
    if eps <= 0:
        raise ValueError("eps must be positive")
    return 2.0 * delta0 / eps / page_stepsize(p, S, L_minus, L_pm)


def nice_iterations(delta0, eps, p, S, m, L_minus, L_pm):
    if eps <= 0:
        raise ValueError("eps must be positive")
    return 2.0 * delta0 / eps / nice_stepsize(p, S, m, L_minus, L_pm)


def importance_iterations(delta0, eps, p, S, L_minus, L_bar):
    return page_iterations(delta0, eps, p, S, L_minus, L_bar)


def predicted_time(p, S, taus, m, delta0, eps, L_minus, L_pm, log_term=None):
    """Expected-time upper bound of Freya PAGE with free (p, S).

    With ``log_term`` (default: when m < n log n) the full-gradient terms use
    ``t*(m + min(m,n) log min(m,n))`` instead of ``t*(m)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = len(taus)
    if log_term is None:
        log_term = needs_log_term(m, n)
    full = m + _coupon_extra(m, n) if log_term else m
    t_full = equilibrium_time(full, taus)[0]
    t_S = equilibrium_time(S, taus)[0]
    factor = L_minus + L_pm * math.sqrt((1 - p) / (p * S))
    tail = p * t_full + (1 - p) * t_S
    if t_full == 0.0:
        return 0.0
    return 12.0 * t_full + 48.0 * delta0 / eps * factor * tail


def large_scale_time(taus, m, delta0, eps, L_minus, L_pm):
    """Upper bound with S = sqrt(m), p = 1/sqrt(m)."""
    t_m = equilibrium_time(m, taus)[0]
    if t_m == 0.0:
        return 0.0
    return 12.0 * t_m + 192.0 * delta0 * max(L_minus, L_pm) / eps * equilibrium_time(math.sqrt(m), taus)[0]


def lower_bound_time(taus, m, delta0, eps, L_plus):
    """Lower bound (up to constants) for uniform-with-replacement methods."""
    t_m = equilibrium_time(m, taus)[0]
    if t_m == 0.0:
        return 0.0
    return t_m + delta0 * L_plus / (math.sqrt(m) * eps) * t_m


def soviet_page_time(taus, m, delta0, eps, L_minus, L_pm):
    """Equal-allocation PAGE time scale (up to constants)."""
    tau_n = float(np.max(taus))
    n = len(taus)
    return tau_n * max(m / n, 1) + tau_n * delta0 * max(L_minus, L_pm) / eps * max(math.sqrt(m) / n, 1)


def sgd_iterations(delta0, eps, S, L, L_max, delta_star):
    return 12.0 * delta0 * L / eps * max(1 - 1 / S, 12 * L_max * delta0 / (S * eps),
                                         4 * L_max * delta_star / (S * eps))


def sgd_stepsize(delta0, eps, S, L, L_max, delta_star):
    K = sgd_iterations(delta0, eps, S, L, L_max, delta_star)
    terms = [math.sqrt(S) / math.sqrt(L * L_max * K)]
    if S > 1:
        terms.append(1.0 / (L * (1 - 1 / S)))
    if delta_star > 0:
        terms.append(S * eps / (4 * L * L_max * delta_star))
    return min(terms)


def sgd_params(delta0, eps, L_max, delta_star):
    if eps <= 0:
        raise ValueError("eps must be positive")
    return max(1, math.ceil(L_max / eps * (delta0 + delta_star)))


def sgd_time(S, taus, delta0, eps, L_minus, L_max, delta_star):
    return (delta0 * L_minus / eps * (1 - 1 / S + L_max / (eps * S) * (delta0 + delta_star))
            * equilibrium_time(S, taus)[0])


def simple_upper_bounds_check(S, taus):
    arr = _sorted_taus(taus)
    n = arr.size
    t, _ = equilibrium_time(S, arr)
    bound_n = 2.0 * arr[-1] * max(S / n, 1.0)
    bound_1 = 2.0 * arr[0] * max(S, 1.0)
    return float(bound_n), float(bound_1), bool(t <= bound_n and t <= bound_1)


def lemma_sandwich(S, taus):
    """Check tau_{j*} <= t* <= tau_{j*+1} for the smallest and largest minimizers.

    Returns ``(j_min, j_max, holds)`` with 1-based indices.
    """
    arr = _sorted_taus(taus)
    if arr[0] <= 0 or not np.all(np.isfinite(arr)):
        raise ValueError("the sandwich check needs strictly positive finite taus")
    values = equilibrium_profile(S, arr)
    t = values.min()
    minimizers = np.flatnonzero(values == t) + 1
    j_min, j_max = int(minimizers[0]), int(minimizers[-1])
    n = arr.size
    holds = True
    for j in (j_min, j_max):
        holds &= bool(arr[j - 1] <= t)
        if j < n:
            holds &= bool(t <= arr[j])
    holds &= bool(arr[j_min - 1] < t)
    if j_max < n:
        holds &= bool(t < arr[j_max])
    return j_min, j_max, holds


@dataclass
class TheoryReport:
    m: int
    n: int
    t_star_m: float
    t_star_sqrt_m: float
    j_star_m: int
    j_star_sqrt_m: int
    S_large_scale: int
    p_large_scale: float
    S_star: int
    p_star: float
    F_star: float
    gamma: float
    K_page: float
    predicted_time: float
    large_scale_time: float
    lower_bound_time: float
    soviet_page_time: float
    constants: dict = field(default_factory=dict)

    def to_json(self, **kwargs):
        return json.dumps(asdict(self), **kwargs)

    def rows(self):
        return [(k, v) for k, v in asdict(self).items() if k != "constants"]


def theory_report(m, taus, L_minus, L_pm, delta0, eps, L_plus=None):
    """Advice table for Freya PAGE given the problem and worker constants."""
    t_m, j_m = equilibrium_time(m, taus)
    t_sm, j_sm = equilibrium_time(math.sqrt(m), taus)
    S_ls, p_ls = large_scale_params(m)
    S_star, p_star, F_star = optimal_params(m, taus, L_minus, L_pm)
    gamma = page_stepsize(p_ls, S_ls, L_minus, L_pm)
    K = page_iterations(delta0, eps, p_ls, S_ls, L_minus, L_pm)
    L_plus = L_pm if L_plus is None else L_plus
    return TheoryReport(
        m=m, n=len(taus), t_star_m=t_m, t_star_sqrt_m=t_sm, j_star_m=j_m, j_star_sqrt_m=j_sm,
        S_large_scale=S_ls, p_large_scale=p_ls, S_star=S_star, p_star=p_star, F_star=F_star,
        gamma=gamma, K_page=K,
        predicted_time=predicted_time(p_ls, S_ls, taus, m, delta0, eps, L_minus, L_pm),
        large_scale_time=large_scale_time(taus, m, delta0, eps, L_minus, L_pm),
        lower_bound_time=lower_bound_time(taus, m, delta0, eps, L_plus),
        soviet_page_time=soviet_page_time(taus, m, delta0, eps, L_minus, L_pm),
        constants=dict(L_minus=L_minus, L_pm=L_pm, L_plus=L_plus, delta0=delta0, eps=eps),
    )
