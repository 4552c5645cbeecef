"""Procedures applied to measured data: g2 fitting, zero-power lifetime
extrapolation and the two-sample Kolmogorov-Smirnov test."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class FitError(RuntimeError):
    pass


# -- damped Gauss-Newton --------------------------------------------------------

@dataclass
class LSQResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool


def levenberg_marquardt(fun, x0, lower=None, upper=None, rel_step=1e-6, max_iter=200,
                        xtol=1e-13, ftol=1e-15) -> LSQResult:
    """Minimize 0.5*|fun(x)|^2 by damped Gauss-Newton with central-difference Jacobians.

    Bounds are enforced by projecting each trial point onto the box.
    """
    x = np.asarray(x0, float).copy()
    lo = np.full_like(x, -np.inf) if lower is None else np.asarray(lower, float)
    hi = np.full_like(x, np.inf) if upper is None else np.asarray(upper, float)
    x = np.clip(x, lo, hi)
    r = np.asarray(fun(x), float)
    cost = 0.5 * float(r @ r)
    lam = 1e-3
    for it in range(1, max_iter + 1):
        J = np.empty((r.size, x.size))
        for k in range(x.size):
            h = rel_step * max(abs(x[k]), 1e-3)
            xp, xm = x.copy(), x.copy()
            xp[k] = min(x[k] + h, hi[k])
            xm[k] = max(x[k] - h, lo[k])
            J[:, k] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (xp[k] - xm[k])
        g = J.T @ r
        A = J.T @ J
        if cost == 0.0 or np.max(np.abs(g)) < 1e-30:
            return LSQResult(x, cost, it, True)
        improved = False
        for _ in range(40):
            step = np.linalg.solve(A + lam * np.diag(np.maximum(np.diag(A), 1e-30)), -g)
            xn = np.clip(x + step, lo, hi)
            rn = np.asarray(fun(xn), float)
            cn = 0.5 * float(rn @ rn)
            if np.isfinite(cn) and cn <= cost:
                improved = True
                break
            lam *= 10.0
        if not improved:
            return LSQResult(x, cost, it, True)
        dx = np.max(np.abs(xn - x) / np.maximum(np.abs(xn), 1e-12))
        df = cost - cn
        x, r, cost = xn, rn, cn
        lam = max(lam / 10.0, 1e-12)
        if dx < xtol or df <= ftol * max(cost, 1e-300):
            return LSQResult(x, cost, it, True)
    return LSQResult(x, cost, max_iter, False)


# -- g2 ------------------------------------------------------------------------

@dataclass(frozen=True)
class G2Params:
    a: float          # bunching amplitude
    tau1: float       # antibunching time, ns
    tau2: float       # bunching time, ns
    c: float = 0.0    # background contrast: value of g2 at zero delay

    def __post_init__(self):
        if self.a < 0:
            raise ValueError("bunching amplitude must be >= 0")
        if not (self.tau1 > 0 and self.tau2 > 0):
            raise ValueError("time constants must be positive")
        if not 0 <= self.c <= 1:
            raise ValueError("contrast must lie in [0, 1]")

    def as_array(self):
        return np.array([self.a, self.tau1, self.tau2, self.c])


def g2_model(tau, p: G2Params):
    """Three-level emitter correlation: 1 - (1-c)[(1+a) e^{-|t|/tau1} - a e^{-|t|/tau2}]."""
    t = np.abs(np.asarray(tau, float))
    return 1.0 - (1.0 - p.c) * ((1.0 + p.a) * np.exp(-t / p.tau1) - p.a * np.exp(-t / p.tau2))


@dataclass
class G2Fit:
    params: G2Params
    rms: float
    iterations: int
    g2_zero: float
    single_emitter: bool    # fitted dip below 0.5
    flagged: bool


def fit_g2(tau, g2, p0: G2Params | None = None, max_iter: int = 200) -> G2Fit:
    """Least-squares fit of :func:`g2_model` to a measured trace."""
    tau = np.asarray(tau, float)
    g2 = np.asarray(g2, float)
    if tau.shape != g2.shape or tau.size < 8:
        raise ValueError("need at least 8 (tau, g2) points")
    if np.all(tau > 0) or np.all(tau < 0):
        raise ValueError("trace must span the zero-delay dip")

    def resid(x):
        a, t1, t2, c = x
        return 1.0 - (1.0 - c) * ((1 + a) * np.exp(-np.abs(tau) / t1) - a * np.exp(-np.abs(tau) / t2)) - g2

    span = float(np.max(np.abs(tau)))
    lower = [0.0, 1e-6 * span, 1e-6 * span, 0.0]
    upper = [1e3, 1e3 * span, 1e3 * span, 1.0]
    if p0 is not None:
        starts = [p0.as_array()]
    else:
        c0 = float(np.clip(g2[np.argmin(np.abs(tau))], 0.0, 0.99))
        starts = [np.array([a, t1 * span, t2 * span, c0])
                  for a in (0.0, 0.5, 2.0) for t1 in (0.02, 0.1) for t2 in (0.3, 1.0)]
    best = None
    for x0 in starts:
        res = levenberg_marquardt(resid, x0, lower, upper, max_iter=max_iter)
        if best is None or res.cost < best.cost:
            best = res
    if not best.converged:
        raise FitError(f"g2 fit did not converge in {max_iter} iterations")
    a, t1, t2, c = best.x
    params = G2Params(float(a), float(t1), float(t2), float(c))
    rms = math.sqrt(2 * best.cost / tau.size)
    gz = float(g2_model(0.0, params))
    single = gz < 0.5
    return G2Fit(params, rms, best.iterations, gz, single, not single)


# -- zero-power extrapolation ----------------------------------------------------

@dataclass(frozen=True)
class PowerSeries:
    power: tuple
    decay: tuple          # ns
    sigma: tuple | None = None

    def __post_init__(self):
        p = np.asarray(self.power, float)
        if p.size < 2:
            raise ValueError("need at least two power points to extrapolate")
        if len(self.decay) != p.size or (self.sigma is not None and len(self.sigma) != p.size):
            raise ValueError("power, decay and sigma must have equal length")
        if np.any(p <= 0):
            raise ValueError("powers must be strictly positive")
        if np.unique(p).size != p.size:
            raise ValueError("powers must be distinct")
        if self.sigma is not None and np.any(np.asarray(self.sigma, float) <= 0):
            raise ValueError("uncertainties must be positive")


def extrapolate_zero_power(s: PowerSeries, model: str = "linear") -> tuple[float, float]:
    """Decay time at vanishing excitation power and its standard error.

    ``linear``: weighted straight line tau = tau0 + b P.
    ``saturating``: tau = tau0 - A P / (P + P_sat).
    """
    P = np.asarray(s.power, float)
    y = np.asarray(s.decay, float)
    w = np.ones_like(P) if s.sigma is None else 1.0 / np.asarray(s.sigma, float) ** 2
    if model == "linear":
        X = np.column_stack([np.ones_like(P), P])
        A = X.T @ (w[:, None] * X)
        if abs(np.linalg.det(A)) < 1e-300:
            raise ValueError("singular design: powers are not distinct")
        cov = np.linalg.inv(A)
        beta = cov @ (X.T @ (w * y))
        if s.sigma is None:
            dof = P.size - 2
            res = y - X @ beta
            cov = cov * (float(res @ res) / dof if dof > 0 else 0.0)
        return float(beta[0]), float(math.sqrt(max(cov[0, 0], 0.0)))
    if model == "saturating":
        if P.size < 3:
            raise ValueError("the saturating model needs at least three points")
        sw = np.sqrt(w)

        def resid(x):
            t0, A, ps = x
            return sw * (t0 - A * P / (P + ps) - y)

        x0 = [float(y[np.argmin(P)]), float(y.max() - y.min()) * 2 + 1e-9, float(np.median(P))]
        r = levenberg_marquardt(resid, x0, [-np.inf, -np.inf, 1e-12 * P.max()], None)
        J = np.empty((P.size, 3))
        for k in range(3):
            h = 1e-6 * max(abs(r.x[k]), 1e-6)
            xp, xm = r.x.copy(), r.x.copy()
            xp[k] += h
            xm[k] -= h
            J[:, k] = (resid(xp) - resid(xm)) / (2 * h)
        cov = np.linalg.pinv(J.T @ J)
        if s.sigma is None:
            dof = P.size - 3
            cov = cov * (2 * r.cost / dof if dof > 0 else 0.0)
        return float(r.x[0]), float(math.sqrt(max(cov[0, 0], 0.0)))
    raise ValueError(f"unknown power model {model!r}")


# -- Kolmogorov-Smirnov ----------------------------------------------------------

def ks_statistic(x, y) -> float:
    x = np.sort(np.asarray(x, float))
    y = np.sort(np.asarray(y, float))
    if x.size == 0 or y.size == 0:
        raise ValueError("empty sample")
    pts = np.concatenate([x, y])
    fx = np.searchsorted(x, pts, side="right") / x.size
    fy = np.searchsorted(y, pts, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def kolmogorov_q(lam: float, terms: int = 100) -> float:
    """Survival function of the Kolmogorov distribution."""
    if lam < 1e-3:
        return 1.0
    j = np.arange(1, terms + 1)
    s = 2.0 * np.sum((-1.0) ** (j - 1) * np.exp(-2.0 * j * j * lam * lam))
    return float(min(max(s, 0.0), 1.0))


def ks_exact_pvalue(x, y, d: float | None = None) -> float:
    """Permutation p-value P(D >= d) over all relabellings of the pooled sample.

    Counted by dynamic programming over the pooled order; ties are handled by
    testing the CDF gap only at the end of each run of equal values.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n, m = x.size, y.size
    if d is None:
        d = ks_statistic(x, y)
    pooled = np.sort(np.concatenate([x, y]))
    N = n + m
    ends = np.ones(N, dtype=bool)
    ends[:-1] = pooled[1:] != pooled[:-1]
    # gap test in integers: |i m - j n| < d n m
    limit = d * n * m - 1e-7 * n * m
    ways = np.zeros(n + 1, dtype=object)
    ways[0] = 1
    for pos in range(N):
        new = np.zeros(n + 1, dtype=object)
        for i in range(min(pos, n) + 1):
            if ways[i] == 0:
                continue
            j = pos - i
            if j < m:
                new[i] += ways[i]
            if i < n:
                new[i + 1] += ways[i]
        if ends[pos]:
            for i in range(n + 1):
                j = pos + 1 - i
                if 0 <= j <= m and abs(i * m - j * n) >= limit:
                    new[i] = 0
        ways = new
    below = int(ways[n])
    return float(1 - below / math.comb(N, n))


def ks_two_sample(x, y, method: str = "asymptotic") -> tuple[float, float]:
    """Two-sample KS statistic D and p-value.

    ``asymptotic`` uses the Kolmogorov series at (sqrt(ne) + 0.12 + 0.11/sqrt(ne)) D
    with ne = n m / (n + m); ``exact`` uses :func:`ks_exact_pvalue`.
    """
    d = ks_statistic(x, y)
    if method == "exact":
        return d, ks_exact_pvalue(x, y, d)
    if method != "asymptotic":
        raise ValueError(f"unknown method {method!r}")
    n, m = len(x), len(y)
    en = math.sqrt(n * m / (n + m))
    return d, kolmogorov_q((en + 0.12 + 0.11 / en) * d)
