"""Survey-weighted Bernoulli-logit fitting.

The pseudo-log-likelihood is ``sum_i w*_i [y_i log theta_i + (1 - y_i) log(1 - theta_i)]``
with ``theta_i = expit(x_i' beta)`` and weights normalized to sum to the sample
size. Point estimates come from Newton's method; the pseudo-posterior (pseudo-
likelihood times an independent normal prior) is sampled by adaptive
random-walk Metropolis.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .rng import stream
from .synthpop import expit

COEF_NAMES = ("beta0", "beta_x1")


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace or []


class SeparationError(ConvergenceError):
    """Coefficients diverge: the outcome is (quasi-)separated by the covariates."""


def normalize_weights(raw) -> np.ndarray:
    """Rescale positive weights so they sum to their count."""
    raw = np.asarray(raw, dtype=float)
    if np.any(~np.isfinite(raw)) or np.any(raw <= 0):
        raise ValueError("weights must be positive and finite")
    if raw.size == 0:
        return raw.copy()
    return raw * (len(raw) / raw.sum())


@dataclass(frozen=True, eq=False)
class WeightedDataset:
    y: np.ndarray
    X: np.ndarray
    w_star: np.ndarray

    def __post_init__(self):
        n = len(self.y)
        if self.X.shape[0] != n or len(self.w_star) != n:
            raise ValueError("y, X and weights must have the same length")
        if n and abs(self.w_star.sum() - n) > 1e-10 * max(n, 1):
            raise ValueError("weights must be normalized to sum to n")

    @classmethod
    def from_arrays(cls, y, x1, raw_weights=None) -> "WeightedDataset":
        y = np.asarray(y, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        X = np.column_stack([np.ones(len(x1)), x1])
        raw = np.ones(len(y)) if raw_weights is None else raw_weights
        return cls(y=y, X=X, w_star=normalize_weights(raw))

    @classmethod
    def from_sample(cls, pop, sample, equal_weights: bool = False) -> "WeightedDataset":
        idx = sample.index
        return cls.from_arrays(pop.y[idx], pop.x1[idx], None if equal_weights else sample.weights)

    @property
    def n(self) -> int:
        return len(self.y)


def _log1pexp(eta):
    return np.logaddexp(0.0, eta)


def pseudo_log_likelihood(data: WeightedDataset, beta) -> float:
    eta = data.X @ np.asarray(beta, dtype=float)
    return float(data.w_star @ (data.y * eta - _log1pexp(eta)))


def pseudo_score(data: WeightedDataset, beta) -> np.ndarray:
    eta = data.X @ np.asarray(beta, dtype=float)
    return data.X.T @ (data.w_star * (data.y - expit(eta)))


def pseudo_information(data: WeightedDataset, beta) -> np.ndarray:
    """Weighted observed information (negative Hessian)."""
    theta = expit(data.X @ np.asarray(beta, dtype=float))
    return (data.X * (data.w_star * theta * (1 - theta))[:, None]).T @ data.X


@dataclass(frozen=True)
class MLEResult:
    beta: np.ndarray
    se: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    trace: list = field(default_factory=list, repr=False)


def weighted_mle(data: WeightedDataset, max_iter: int = 100, tol: float = 1e-8,
                 separation_bound: float = 15.0) -> MLEResult:
    """Maximize the pseudo-log-likelihood by Newton's method with step halving.

    Stops when the score norm falls below ``tol``. Raises
    :class:`SeparationError` once a coefficient exceeds ``separation_bound``
    in absolute value while the score keeps shrinking, and
    :class:`ConvergenceError` after ``max_iter`` iterations.
    """
    p = data.X.shape[1]
    if data.n < p:
        raise ValueError(f"need at least {p} observations, got {data.n}")
    beta = np.zeros(p)
    ll = pseudo_log_likelihood(data, beta)
    trace = []
    for it in range(1, max_iter + 1):
        g = pseudo_score(data, beta)
        gn = float(np.linalg.norm(g))
        trace.append((it - 1, beta.copy(), ll, gn))
        if gn < tol:
            info = pseudo_information(data, beta)
            se = np.sqrt(np.diag(np.linalg.inv(info)))
            return MLEResult(beta, se, True, it - 1, gn, trace)
        info = pseudo_information(data, beta)
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            raise SeparationError("singular information matrix", trace) from None
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = pseudo_log_likelihood(data, cand)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, ll_new
        if np.max(np.abs(beta)) > separation_bound:
            if np.linalg.norm(pseudo_score(data, beta)) < gn:
                raise SeparationError(
                    f"coefficients exceed {separation_bound} with a shrinking score; "
                    "outcome appears separated", trace)
    raise ConvergenceError(f"no convergence in {max_iter} Newton iterations", trace)


# --- sampling -----------------------------------------------------------------


@dataclass(frozen=True)
class PriorSpec:
    """Independent normal(0, sd^2) prior on every coefficient."""

    sd: float = 5.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("prior sd must be positive")

    def logpdf(self, B: np.ndarray) -> np.ndarray:
        return -0.5 * np.sum(B * B, axis=-1) / self.sd ** 2


@dataclass(frozen=True)
class MCMCConfig:
    chains: int = 4
    warmup: int = 1000
    iters: int = 2000
    seed: int = 0
    adapt_start: int = 100
    adapt_every: int = 50


def adaptive_metropolis(logp: Callable[[np.ndarray], np.ndarray], init: np.ndarray, init_cov: np.ndarray,
                        warmup: int, iters: int, rng: np.random.Generator,
                        adapt_start: int = 100, adapt_every: int = 50):
    """Random-walk Metropolis for several chains at once.

    ``logp`` maps a ``(chains, d)`` array to ``(chains,)`` log densities. The
    multivariate normal proposal starts at ``2.38**2/d * init_cov``; during
    warmup each chain's covariance is reset every ``adapt_every`` iterations
    (after ``adapt_start``) to the same scaling of its own warmup draw
    covariance, then frozen. Returns kept draws ``(chains, iters, d)`` and
    per-chain acceptance rates over the kept iterations.
    """
    x = np.array(init, dtype=float, copy=True)
    C, d = x.shape
    scale = 2.38 ** 2 / d
    chol = np.repeat(np.linalg.cholesky(scale * np.atleast_2d(init_cov))[None], C, axis=0)
    lp = logp(x)
    s1 = np.zeros((C, d))
    s2 = np.zeros((C, d, d))
    kept = np.empty((C, iters, d))
    accepted = np.zeros(C)
    for t in range(warmup + iters):
        z = rng.standard_normal((C, d))
        prop = x + np.einsum("cij,cj->ci", chol, z)
        lp_prop = logp(prop)
        log_u = np.log(rng.random(C))
        acc = log_u < lp_prop - lp
        x[acc] = prop[acc]
        lp[acc] = lp_prop[acc]
        if t < warmup:
            s1 += x
            s2 += x[:, :, None] * x[:, None, :]
            m = t + 1
            if m >= adapt_start and m % adapt_every == 0:
                mean = s1 / m
                cov = s2 / m - mean[:, :, None] * mean[:, None, :]
                cov = cov * (m / (m - 1)) + 1e-10 * np.eye(d)
                try:
                    chol = np.linalg.cholesky(scale * cov)
                except np.linalg.LinAlgError:
                    pass
        else:
            kept[:, t - warmup] = x
            accepted += acc
    return kept, accepted / max(iters, 1)


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction for ``(chains, iters, d)`` draws."""
    C, L, d = chains.shape
    h = L // 2
    parts = np.concatenate([chains[:, :h], chains[:, h:2 * h]], axis=0)
    n = parts.shape[1]
    means = parts.mean(axis=1)
    W = parts.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    return np.where(W > 0, r, np.nan)


def effective_sample_size(chains: np.ndarray) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial monotone sequence truncation."""
    C, L, d = chains.shape
    out = np.empty(d)
    for k in range(d):
        x = chains[:, :, k]
        xc = x - x.mean(axis=1, keepdims=True)
        nfft = 1 << (2 * L - 1).bit_length()
        f = np.fft.rfft(xc, nfft, axis=1)
        acov = np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :L] / L
        W = x.var(axis=1, ddof=1).mean()
        var_plus = W * (L - 1) / L + (x.mean(axis=1).var(ddof=1) if C > 1 else 0.0)
        if var_plus <= 0:
            out[k] = np.nan
            continue
        rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        tau, prev = -1.0, np.inf
        for t in range(0, L - 1, 2):
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            pair = min(pair, prev)
            tau += 2 * pair
            prev = pair
        out[k] = C * L / max(tau, 1e-12)
    return out


@dataclass(frozen=True, eq=False)
class PosteriorFit:
    chain_draws: np.ndarray
    mle: MLEResult | None
    acceptance: np.ndarray
    rhat: np.ndarray
    ess: np.ndarray
    prior: PriorSpec
    mcmc: MCMCConfig

    @property
    def draws(self) -> np.ndarray:
        return self.chain_draws.reshape(-1, self.chain_draws.shape[-1])

    @property
    def point(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    @property
    def sd(self) -> np.ndarray:
        return self.draws.std(axis=0, ddof=1)

    @property
    def warning(self) -> bool:
        return bool(np.any(~(self.rhat <= 1.05)))

    def draws_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("chain", "iter") + COEF_NAMES)
        for c, chain in enumerate(self.chain_draws):
            for t, row in enumerate(chain):
                w.writerow([c, t] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary(self) -> str:
        lines = [f"chains: {self.mcmc.chains}  warmup: {self.mcmc.warmup}  iters: {self.mcmc.iters}"
                 f"  prior_sd: {self.prior.sd}"]
        lines.append(f"acceptance: {' '.join(f'{a:.3f}' for a in self.acceptance)}")
        lines.append(f"{'coef':<10}{'mean':>12}{'sd':>12}{'mle':>12}{'mle_se':>12}{'rhat':>8}{'ess':>9}")
        for k, name in enumerate(COEF_NAMES):
            mle = f"{self.mle.beta[k]:12.5f}{self.mle.se[k]:12.5f}" if self.mle else f"{'-':>12}{'-':>12}"
            lines.append(f"{name:<10}{self.point[k]:12.5f}{self.sd[k]:12.5f}{mle}"
                         f"{self.rhat[k]:8.4f}{self.ess[k]:9.1f}")
        if self.warning:
            lines.append("WARNING: potential scale reduction above 1.05")
        return "\n".join(lines) + "\n"


def fit_pseudo_posterior(data: WeightedDataset, prior: PriorSpec = PriorSpec(),
                         mcmc: MCMCConfig = MCMCConfig()) -> PosteriorFit:
    """Sample the weighted pseudo-posterior; chains start near the weighted MLE.

    With no observations the target is the prior alone and chains start at 0.
    """
    d = data.X.shape[1]
    rng = stream(mcmc.seed, "mcmc")
    if data.n >= d:
        mle = weighted_mle(data)
        center = mle.beta
        post_prec = pseudo_information(data, mle.beta) + np.eye(d) / prior.sd ** 2
        cov = np.linalg.inv(post_prec)
    else:
        mle = None
        center = np.zeros(d)
        cov = prior.sd ** 2 * np.eye(d)
    # spread starts by about one posterior sd so split-R-hat can detect stuck chains
    init = center + rng.standard_normal((mcmc.chains, d)) @ np.linalg.cholesky(cov).T
    X, y, w = data.X, data.y, data.w_star

    def logp(B):
        eta = X @ B.T
        ll = w @ (y[:, None] * eta - _log1pexp(eta)) if len(y) else 0.0
        return ll + prior.logpdf(B)

    kept, acc = adaptive_metropolis(logp, init, cov, mcmc.warmup, mcmc.iters, rng,
                                    mcmc.adapt_start, mcmc.adapt_every)
    return PosteriorFit(kept, mle, acc, split_rhat(kept), effective_sample_size(kept), prior, mcmc)


# --- curves -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Curve:
    x1: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("x1", "mean", "lo", "hi"))
        for row in zip(self.x1, self.mean, self.lo, self.hi):
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def curve_from_draws(draws: np.ndarray, grid: Sequence[float]) -> Curve:
    grid = np.asarray(grid, dtype=float)
    theta = expit(draws[:, :1] + draws[:, 1:2] * grid[None, :])
    lo, hi = np.quantile(theta, [0.025, 0.975], axis=0)
    return Curve(grid, theta.mean(axis=0), lo, hi)


def curve_from_fit(fit: PosteriorFit, grid: Sequence[float]) -> Curve:
    """Posterior mean and central 95% interval of ``expit(beta0 + beta_x1 * x1)`` per grid point."""
    return curve_from_draws(fit.draws, grid)


def curve_from_beta(beta, grid: Sequence[float]) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    return expit(beta[0] + beta[1] * grid)
