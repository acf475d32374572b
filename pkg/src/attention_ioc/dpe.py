"""Direct policy estimation baseline.

A time-invariant policy ``N(u_p | L1 mu + l2, SigmaB)`` times a logistic
switching rule in ``[d, x_s, 1 - x_s]``, both fitted by L1-penalized maximum
likelihood with the penalty chosen by k-fold cross-validated deviance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .simulator import Dataset

N_LAMBDA = 20
LAMBDA_DECADES = 8.0


def soft_threshold(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def lambda_grid(lam_max: float, n: int = N_LAMBDA, decades: float = LAMBDA_DECADES) -> np.ndarray:
    lam_max = max(float(lam_max), 1e-12)
    return lam_max * np.logspace(0.0, -decades, n)


def _active_set_solve(G, c, lam, beta):
    """Exact solution for the active set and signs of ``beta``, if it is optimal."""
    active = beta != 0
    cand = np.zeros_like(beta)
    if np.any(active):
        rhs = c[active] - lam * np.sign(beta[active])
        cand[active] = np.linalg.lstsq(G[np.ix_(active, active)], rhs, rcond=None)[0]
        if np.any(np.sign(cand[active]) != np.sign(beta[active])):
            return None
    slack = np.abs(c - G @ cand)[~active]
    if np.any(slack > lam * (1 + 1e-9) + 1e-15):
        return None
    return cand


def _lasso_gram(G, c, lam, beta, tol=1e-14, max_sweeps=100_000):
    """Coordinate descent on ``0.5 b'Gb - c'b + lam |b|_1``.

    Every few sweeps the KKT system of the current active set is solved
    exactly; correlated columns otherwise make plain sweeps crawl.
    """
    p = len(c)
    diag = np.diag(G)
    for sweep in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            if diag[j] <= 0:
                continue
            r = c[j] - G[j] @ beta + diag[j] * beta[j]
            new = soft_threshold(r, lam) / diag[j]
            delta = max(delta, abs(new - beta[j]))
            beta[j] = new
        if delta < tol:
            break
        if sweep % 5 == 4:
            exact = _active_set_solve(G, c, lam, beta)
            if exact is not None:
                return exact
    return beta


def lasso_path(X, y, lambdas=None):
    """Gaussian lasso with unpenalized intercept on standardized columns.

    Returns ``(lambdas, coefs, intercepts)`` with coefficients on the original
    scale of ``X``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    xm, ym = X.mean(axis=0), y.mean()
    sd = X.std(axis=0)
    ok = sd > 1e-12 * max(1.0, float(np.abs(X).max(initial=0.0)))
    Xs = np.zeros_like(X)
    Xs[:, ok] = (X[:, ok] - xm[ok]) / sd[ok]
    G = Xs.T @ Xs / n
    c = Xs.T @ (y - ym) / n
    if lambdas is None:
        lambdas = lambda_grid(np.max(np.abs(c), initial=0.0))
    beta = np.zeros(p)
    coefs = np.zeros((len(lambdas), p))
    icpt = np.zeros(len(lambdas))
    for i, lam in enumerate(lambdas):
        beta = _lasso_gram(G, c, lam, beta)
        b = np.where(ok, beta / np.where(ok, sd, 1.0), 0.0)
        coefs[i] = b
        icpt[i] = ym - xm @ b
    return np.asarray(lambdas), coefs, icpt


def _logistic_loss(X, y, beta):
    eta = X @ beta
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def _logistic_l1(X, y, lam, beta, tol=1e-10, max_iter=500):
    """Proximal Newton for the L1-penalized logistic loss (no intercept)."""
    n, p = X.shape
    obj = _logistic_loss(X, y, beta) + lam * np.abs(beta).sum()
    for _ in range(max_iter):
        pr = expit(X @ beta)
        g = X.T @ (pr - y) / n
        w = np.maximum(pr * (1 - pr), 1e-12)
        Hs = (X * w[:, None]).T @ X / n + 1e-12 * np.eye(p)
        # subproblem in the new point b: 0.5 b'Hb - (H beta - g)'b + lam|b|
        target = _lasso_gram(Hs, Hs @ beta - g, lam, beta.copy(), tol=1e-13, max_sweeps=10_000)
        step = target - beta
        if np.max(np.abs(step)) < tol:
            break
        decrease = g @ step + lam * (np.abs(target).sum() - np.abs(beta).sum())
        t = 1.0
        while t > 1e-10:
            cand = beta + t * step
            new_obj = _logistic_loss(X, y, cand) + lam * np.abs(cand).sum()
            if new_obj <= obj + 1e-4 * t * decrease:
                break
            t *= 0.5
        else:
            break
        done = obj - new_obj <= 1e-15 * max(1.0, abs(obj))
        beta, obj = cand, new_obj
        if done:
            break
    return beta


def logistic_path(X, y, lambdas=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    scale = np.sqrt(np.mean(X**2, axis=0))
    scale = np.where(scale > 0, scale, 1.0)
    Xs = X / scale
    if lambdas is None:
        lambdas = lambda_grid(np.max(np.abs(Xs.T @ (y - 0.5))) / n)
    beta = np.zeros(p)
    coefs = np.zeros((len(lambdas), p))
    for i, lam in enumerate(lambdas):
        beta = _logistic_l1(Xs, y, lam, beta)
        coefs[i] = beta / scale
    return np.asarray(lambdas), coefs


def _folds(n_groups: int, n_items: int, group_of_item, k: int, seed: int):
    """Fold id per item; groups (trajectories) stay together when possible."""
    rng = np.random.default_rng(seed)
    if n_groups >= k:
        perm = rng.permutation(n_groups)
        gfold = np.empty(n_groups, dtype=int)
        gfold[perm] = np.arange(n_groups) % k
        return gfold[group_of_item]
    perm = rng.permutation(n_items)
    fold = np.empty(n_items, dtype=int)
    fold[perm] = np.arange(n_items) % k
    return fold


def switch_covariates(d, x_s) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    x_s = np.asarray(x_s, dtype=float)
    return np.stack([d, x_s, 1.0 - x_s], axis=-1)


@dataclass(frozen=True)
class DpePolicy:
    Lambda1: np.ndarray
    lambda2: np.ndarray
    SigmaB: np.ndarray
    lambda_switch: np.ndarray  # [lambda3, lambda4, lambda5]
    cv_trace: dict = field(default_factory=dict)
    saturated: bool = False

    def control_distribution(self, t, mu, d, x_s, n_secondary_controls: int = 1):
        mu = np.asarray(mu, dtype=float)
        mean = mu @ self.Lambda1.T + self.lambda2
        p1 = expit(switch_covariates(d, x_s) @ self.lambda_switch)
        probs = np.zeros(np.shape(p1) + (2, n_secondary_controls))
        probs[..., 0, 0] = 1.0 - p1
        probs[..., 1, 0] = p1
        return mean, self.SigmaB, probs


def dpe_action_dist(policy: DpePolicy, mu, d, x_s):
    """``(mean, cov)`` of the control Gaussian and ``P(u_o = 1)``."""
    mean, cov, probs = policy.control_distribution(0, mu, d, x_s)
    return mean, cov, probs[..., 1, 0]


def fit_dpe(data: Dataset, folds: int = 5, lambda_grid_cont: Optional[np.ndarray] = None,
            lambda_grid_switch: Optional[np.ndarray] = None, seed: int = 0) -> DpePolicy:
    n_traj, L, n_x = data.mu.shape
    n_u = data.u_p.shape[2]
    X = data.mu.reshape(-1, n_x)
    U = data.u_p.reshape(-1, n_u)
    Z = switch_covariates(data.d.ravel(), data.x_s.ravel())
    yo = data.u_o.ravel().astype(float)
    group = np.repeat(np.arange(n_traj), L)
    fold = _folds(n_traj, X.shape[0], group, folds, seed)

    Lambda1 = np.zeros((n_u, n_x))
    lambda2 = np.zeros(n_u)
    trace = {"folds": folds, "seed": seed, "continuous": [], "switch": {}}
    for j in range(n_u):
        lams, _, _ = lasso_path(X, U[:, j], lambda_grid_cont)
        dev = np.zeros((folds, len(lams)))
        for k in range(folds):
            tr, te = fold != k, fold == k
            _, cf, ic = lasso_path(X[tr], U[tr, j], lams)
            pred = X[te] @ cf.T + ic
            dev[k] = np.mean((U[te, j][:, None] - pred) ** 2, axis=0)
        best = int(np.argmin(dev.mean(axis=0)))
        _, cf, ic = lasso_path(X, U[:, j], lams[: best + 1])
        Lambda1[j], lambda2[j] = cf[-1], ic[-1]
        trace["continuous"].append({"lambdas": lams.tolist(), "cv_deviance": dev.mean(axis=0).tolist(),
                                    "chosen": float(lams[best])})
    resid = U - X @ Lambda1.T - lambda2
    SigmaB = resid.T @ resid / len(resid)
    w, V = np.linalg.eigh(0.5 * (SigmaB + SigmaB.T))
    SigmaB = (V * np.maximum(w, 1e-12)) @ V.T

    saturated = bool(np.all(yo == yo[0]))
    lams, _ = logistic_path(Z, yo, lambda_grid_switch)
    dev = np.zeros((folds, len(lams)))
    for k in range(folds):
        tr, te = fold != k, fold == k
        _, cf = logistic_path(Z[tr], yo[tr], lams)
        eta = Z[te] @ cf.T
        dev[k] = 2.0 * np.mean(np.logaddexp(0.0, eta) - yo[te][:, None] * eta, axis=0)
    best = int(np.argmin(dev.mean(axis=0)))
    _, cf = logistic_path(Z, yo, lams[: best + 1])
    trace["switch"] = {"lambdas": lams.tolist(), "cv_deviance": dev.mean(axis=0).tolist(),
                       "chosen": float(lams[best])}
    return DpePolicy(Lambda1, lambda2, SigmaB, cf[-1], trace, saturated)
