"""Conjugate Normal x Inverse-Wishart model.

Sufficient-statistic bookkeeping for Gaussian clusters, the conjugate
posterior update, and the multivariate Student-t predictive / marginal
densities that every inference engine in this package evaluates.

Inverse-Wishart convention (normative for the whole package)::

    p(Sigma) \propto |Sigma0|^{m/2} |Sigma|^{-(m+d+1)/2}
              exp(-tr(Sigma0 Sigma^{-1}) / 2)

i.e. scale matrix ``Sigma0`` with ``m`` degrees of freedom, prior mean
``Sigma0 / (m - d - 1)`` for ``m > d + 1``.  This matches
``scipy.stats.invwishart(df=m, scale=Sigma0)``.

All densities are computed and exchanged in log space; the quadratic
forms go through Cholesky factors, never through explicit inverses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, multigammaln
from scipy.stats import invwishart

__all__ = [
    "GaussSuffStats",
    "NiwParams",
    "StudentTParams",
    "suffstats_add",
    "suffstats_remove",
    "suffstats_merge",
    "posterior_params",
    "predictive_params",
    "log_predictive",
    "studentt_logpdf",
    "log_mvgamma",
    "sample_niw",
    "cholesky_with_jitter",
]


def cholesky_with_jitter(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``a``, retrying once with diagonal jitter.

    The retry adds ``1e-9 * trace(a) / d`` to the diagonal; a second
    failure raises ``np.linalg.LinAlgError`` (upstream corruption, not
    something to paper over).
    """
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        d = a.shape[0]
        jitter = 1e-9 * np.trace(a) / d
        return np.linalg.cholesky(a + jitter * np.eye(d))


class GaussSuffStats:
    """Count, mean and scatter matrix of an observed sample multiset.

    ``scatter`` is the centered sum of squares ``sum_i (x_i - mean)(x_i -
    mean)^T`` (i.e. ``(n - 1) S`` for sample covariance ``S``), stored in
    scatter form so the single-sample case needs no ``n - 1`` division.

    Instances are treated as immutable values: every update returns a new
    object and callers must not mutate the arrays afterwards.
    """

    __slots__ = ("n", "mean", "scatter")

    def __init__(self, n: int, mean: np.ndarray, scatter: np.ndarray):
        self.n = int(n)
        self.mean = mean
        self.scatter = scatter

    @classmethod
    def empty(cls, d: int) -> "GaussSuffStats":
        return cls(0, np.zeros(d), np.zeros((d, d)))

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "GaussSuffStats":
        """Two-pass batch statistics of the rows of ``x`` (shape (n, d))."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        if n == 0:
            return cls.empty(d)
        mean = x.mean(axis=0)
        dev = x - mean
        return cls(n, mean, dev.T @ dev)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def __repr__(self) -> str:
        return f"GaussSuffStats(n={self.n}, d={self.dim})"

    def validate(self, rtol: float = 1e-10) -> None:
        """Raise ValueError if the type invariants are violated."""
        if self.n < 0:
            raise ValueError("negative sample count")
        if self.scatter.shape != (self.dim, self.dim):
            raise ValueError("scatter shape does not match mean dimension")
        if self.n == 0:
            if np.any(self.mean != 0.0) or np.any(self.scatter != 0.0):
                raise ValueError("empty stats must have zero mean and scatter")
            return
        fro = np.linalg.norm(self.scatter)
        asym = np.linalg.norm(self.scatter - self.scatter.T)
        if fro > 0 and asym > rtol * fro:
            raise ValueError(f"scatter not symmetric (rel asym {asym / fro:.3e})")
        eigmin = np.linalg.eigvalsh(self.scatter)[0]
        if eigmin < -rtol * max(np.trace(self.scatter), 1.0):
            raise ValueError(f"scatter not PSD (min eigenvalue {eigmin:.3e})")


def suffstats_add(s: GaussSuffStats, x: np.ndarray) -> GaussSuffStats:
    """Fold one sample into the statistics (stable mean-shift update)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (s.dim,):
        raise ValueError(f"sample has shape {x.shape}, expected ({s.dim},)")
    n_new = s.n + 1
    delta = x - s.mean
    mean = s.mean + delta / n_new
    scatter = s.scatter + (s.n / n_new) * np.outer(delta, delta)
    return GaussSuffStats(n_new, mean, scatter)


def suffstats_remove(s: GaussSuffStats, x: np.ndarray) -> GaussSuffStats:
    """Inverse of :func:`suffstats_add` (caller guarantees x was added)."""
    x = np.asarray(x, dtype=float)
    if s.n < 1:
        raise ValueError("cannot remove a sample from empty statistics")
    if x.shape != (s.dim,):
        raise ValueError(f"sample has shape {x.shape}, expected ({s.dim},)")
    n_new = s.n - 1
    if n_new == 0:
        return GaussSuffStats.empty(s.dim)
    mean = s.mean + (s.mean - x) / n_new
    delta = x - mean
    scatter = s.scatter - (n_new / s.n) * np.outer(delta, delta)
    return GaussSuffStats(n_new, mean, scatter)


def suffstats_merge(a: GaussSuffStats, b: GaussSuffStats) -> GaussSuffStats:
    """Statistics of the concatenated sample multisets (parallel combine)."""
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    n = a.n + b.n
    if n == 0:
        return GaussSuffStats.empty(a.dim)
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.n / n)
    scatter = a.scatter + b.scatter + np.outer(delta, delta) * (a.n * b.n / n)
    return GaussSuffStats(n, mean, scatter)


@dataclass(frozen=True)
class NiwParams:
    """Base-distribution hyperparameters (mu0, kappa, Sigma0, m)."""

    mu0: np.ndarray
    kappa: float
    sigma0: np.ndarray
    m: float

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float)
        sigma0 = np.asarray(self.sigma0, dtype=float)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "sigma0", sigma0)
        d = mu0.shape[0]
        if sigma0.shape != (d, d):
            raise ValueError("sigma0 shape does not match mu0 dimension")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.m > d + 1:
            raise ValueError(f"m must exceed d + 1 = {d + 1}, got {self.m}")
        try:
            np.linalg.cholesky(sigma0)
        except np.linalg.LinAlgError as exc:
            raise ValueError("sigma0 is not positive definite") from exc

    @property
    def dim(self) -> int:
        return self.mu0.shape[0]


@dataclass(frozen=True)
class StudentTParams:
    """Degrees of freedom, location and scale of a multivariate Student-t."""

    dof: float
    location: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "location", np.asarray(self.location, dtype=float))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))
        if not self.dof > 0:
            raise ValueError(f"dof must be positive, got {self.dof}")

    @property
    def dim(self) -> int:
        return self.location.shape[0]


def posterior_params(prior: NiwParams, s: GaussSuffStats) -> NiwParams:
    """Conjugate posterior hyperparameters given observed statistics.

    kappa_n = kappa + n
    mu_n    = (kappa mu0 + n mean) / kappa_n
    m_n     = m + n
    Sigma0_n = Sigma0 + scatter
               + (kappa n / kappa_n) (mean - mu0)(mean - mu0)^T
    """
    if s.dim != prior.dim:
        raise ValueError("statistics dimension does not match prior")
    if s.n == 0:
        return prior
    kappa_n = prior.kappa + s.n
    mu_n = (prior.kappa * prior.mu0 + s.n * s.mean) / kappa_n
    dev = s.mean - prior.mu0
    sigma_n = prior.sigma0 + s.scatter + (prior.kappa * s.n / kappa_n) * np.outer(dev, dev)
    return NiwParams(mu_n, kappa_n, sigma_n, prior.m + s.n)


def predictive_params(prior: NiwParams, s: GaussSuffStats) -> StudentTParams:
    """Student-t parameters of the posterior predictive density.

    With posterior hyperparameters (mu_n, kappa_n, Sigma0_n, m_n):
    dof = m_n - d + 1, location = mu_n,
    scale = Sigma0_n (kappa_n + 1) / (kappa_n dof).

    With empty statistics this is the marginal density of a single draw
    from a brand-new class.
    """
    post = posterior_params(prior, s)
    d = post.dim
    dof = post.m - d + 1
    if dof <= 0:
        raise ValueError(f"nonpositive predictive dof {dof}")
    scale = post.sigma0 * ((post.kappa + 1.0) / (post.kappa * dof))
    return StudentTParams(dof, post.mu0, scale)


def studentt_logpdf(t: StudentTParams, x: np.ndarray) -> float:
    """Multivariate Student-t log-density via the Cholesky of the scale."""
    x = np.asarray(x, dtype=float)
    d = t.dim
    chol = cholesky_with_jitter(t.scale)
    z = np.linalg.solve_triangular if False else None  # placeholder, see below
    from scipy.linalg import solve_triangular

    u = solve_triangular(chol, x - t.location, lower=True)
    quad = float(u @ u)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    half = 0.5 * (t.dof + d)
    return float(
        gammaln(half)
        - gammaln(0.5 * t.dof)
        - 0.5 * d * np.log(t.dof * np.pi)
        - 0.5 * logdet
        - half * np.log1p(quad / t.dof)
    )


def log_predictive(prior: NiwParams, s: GaussSuffStats, x: np.ndarray) -> float:
    """Log posterior-predictive density of ``x`` given the cluster stats."""
    return studentt_logpdf(predictive_params(prior, s), x)


def log_mvgamma(d: int, a: float) -> float:
    """Log multivariate gamma Gamma_d(a), a > (d - 1) / 2."""
    if d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d}")
    if not a > 0.5 * (d - 1):
        raise ValueError(f"log_mvgamma requires a > (d-1)/2 = {0.5 * (d - 1)}, got {a}")
    return float(multigammaln(a, d))


def sample_niw(prior: NiwParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw (mean, covariance) from the prior.

    cov ~ IW(Sigma0, m) under the package convention, mean ~ N(mu0, cov/kappa).
    """
    cov = invwishart.rvs(df=prior.m, scale=prior.sigma0, random_state=rng)
    cov = np.atleast_2d(cov)
    chol = cholesky_with_jitter(cov / prior.kappa)
    mean = prior.mu0 + chol @ rng.standard_normal(prior.dim)
    return mean, cov
