"""Synthetic nested-data generators for the benchmark protocols.

The default scenario draws K_true group atoms and L_true observation atoms
from normal-Wishart priors, mixes groups with Dirichlet(alpha/K_true)
weights and observations (per group cluster) with Dirichlet(beta/L_true)
weights, and emits Gaussian (or heavy-tailed Student-t) component draws.
Ground truth labels and the drawn component parameters ride along for
evaluation.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .core import NestedDataset
from .errors import ConfigError, NumericalFault
from .special import chol_spd

_KERNELS = ("gaussian", "student-t")
_NW_RETRY_CAP = 100


@dataclass
class SimScenario:
    """Settings of one synthetic dataset.

    alpha_sim / beta_sim: fixed concentration values, or None to draw each
    from Gamma(25, 1). kernel "student-t" swaps the component emission for a
    multivariate t with `df` degrees of freedom and the same location/scale.
    omit_r drops that many uniformly chosen group-level coordinates after
    generation (omitted-covariate robustness); omit_r = q removes the
    group-level block entirely.
    """

    J: int = 100
    n: int = 100
    p: int = 2
    q: int = 2
    K_true: int = 4
    L_true: int = 3
    alpha_sim: float | None = None
    beta_sim: float | None = None
    kernel: str = "gaussian"
    df: float = 3.0
    omit_r: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.J < 1 or self.n < 1:
            raise ConfigError("need at least one group and one observation")
        if self.p < 1 or self.q < 1:
            raise ConfigError("dimensions must be positive")
        if self.K_true < 1 or self.L_true < 1:
            raise ConfigError("true cluster counts must be at least 1")
        if self.kernel not in _KERNELS:
            raise ConfigError(f"kernel must be one of {_KERNELS}")
        if not self.df > 0:
            raise ConfigError("student-t df must be positive")
        if not 0 <= self.omit_r <= self.q:
            raise ConfigError("omit_r must lie in [0, q]")
        for name in ("alpha_sim", "beta_sim"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(f"{name} must be positive when fixed")


@dataclass
class GroundTruth:
    """True labels (1-based) and the component parameters that generated
    the data."""

    S_true: np.ndarray
    M_true: list
    params: dict = field(repr=False)


def sample_normal_wishart(mu0, lambda0, nu0, psi0, rng):
    """One draw (mean, precision) from a normal-Wishart.

    The precision comes from the Bartlett construction: with psi0 = A A^T
    and B lower-triangular holding sqrt(chi2) diagonals and standard-normal
    subdiagonals, Lambda = (A B)(A B)^T is Wishart(psi0, nu0). The mean is
    Gaussian around mu0 with covariance (lambda0 * Lambda)^{-1}. Degenerate
    draws (a zero chi2 variate collapsing the factor) are redrawn up to a
    retry cap.
    """
    mu0 = np.asarray(mu0, dtype=np.float64)
    dim = mu0.shape[0]
    a = chol_spd(np.asarray(psi0, dtype=np.float64))
    for _ in range(_NW_RETRY_CAP):
        b = np.zeros((dim, dim))
        chi_df = nu0 - np.arange(dim)
        diag = np.sqrt(rng.chisquare(chi_df))
        b[np.diag_indices(dim)] = diag
        lower = np.tril_indices(dim, k=-1)
        b[lower] = rng.standard_normal(len(lower[0]))
        if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
            continue
        factor = a @ b
        precision = factor @ factor.T
        # mu = mu0 + (factor^T)^{-1} z / sqrt(lambda0) has covariance
        # (lambda0 * precision)^{-1}
        z = rng.standard_normal(dim)
        mean = mu0 + solve_triangular(
            factor.T, z, lower=False
        ) / np.sqrt(lambda0)
        if np.all(np.isfinite(mean)) and np.all(np.isfinite(precision)):
            return mean, precision
    raise NumericalFault("normal-Wishart sampling failed repeatedly")


def _component_noise(precision_chol, size, rng, kernel, df):
    """size draws of centered noise: N(0, Lambda^{-1}) or the matched
    multivariate t with df degrees of freedom (same location/scale)."""
    dim = precision_chol.shape[0]
    z = rng.standard_normal((size, dim))
    gauss = solve_triangular(precision_chol.T, z.T, lower=False).T
    if kernel == "gaussian":
        return gauss
    g = rng.chisquare(df, size=size)
    return gauss / np.sqrt(g / df)[:, None]


def simulate(scenario):
    """Generate one dataset per the scenario; returns (NestedDataset,
    GroundTruth)."""
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(scenario.seed))
    )
    q, p = scenario.q, scenario.p
    kt, lt = scenario.K_true, scenario.L_true

    alpha = (
        scenario.alpha_sim
        if scenario.alpha_sim is not None
        else float(rng.gamma(25.0, 1.0))
    )
    mu_x = np.empty((kt, q))
    prec_x = np.empty((kt, q, q))
    for k in range(kt):
        mu_x[k], prec_x[k] = sample_normal_wishart(
            np.zeros(q), 0.05, q + 5.0, np.eye(q), rng
        )
    pi = rng.dirichlet(np.full(kt, alpha / kt))
    s_true = _categorical(pi, scenario.J, rng)

    x = np.empty((scenario.J, q))
    chol_x = [chol_spd(prec_x[k]) for k in range(kt)]
    for k in range(kt):
        members = np.flatnonzero(s_true == k)
        if members.size:
            x[members] = mu_x[k] + _component_noise(
                chol_x[k], members.size, rng, scenario.kernel, scenario.df
            )

    beta = (
        scenario.beta_sim
        if scenario.beta_sim is not None
        else float(rng.gamma(25.0, 1.0))
    )
    mu_y = np.empty((lt, p))
    prec_y = np.empty((lt, p, p))
    for l in range(lt):
        mu_y[l], prec_y[l] = sample_normal_wishart(
            np.zeros(p), 0.05, 5.0 + p, np.eye(p), rng
        )
    omegas = np.vstack(
        [rng.dirichlet(np.full(lt, beta / lt)) for _ in range(kt)]
    )

    m_true = [
        _categorical(omegas[s_true[j]], scenario.n, rng)
        for j in range(scenario.J)
    ]
    chol_y = [chol_spd(prec_y[l]) for l in range(lt)]
    y_blocks = []
    for j in range(scenario.J):
        block = np.empty((scenario.n, p))
        labels = m_true[j]
        for l in range(lt):
            members = np.flatnonzero(labels == l)
            if members.size:
                block[members] = mu_y[l] + _component_noise(
                    chol_y[l], members.size, rng, scenario.kernel, scenario.df
                )
        y_blocks.append(block)

    kept = np.arange(q)
    if scenario.omit_r > 0:
        dropped = rng.choice(q, size=scenario.omit_r, replace=False)
        kept = np.setdiff1d(np.arange(q), dropped)
    x_out = x[:, kept] if kept.size else None

    data = NestedDataset(y=y_blocks, x=x_out)
    truth = GroundTruth(
        S_true=s_true + 1,
        M_true=[labels + 1 for labels in m_true],
        params={
            "alpha": alpha,
            "beta": beta,
            "pi": pi,
            "omegas": omegas,
            "mu_x": mu_x,
            "precision_x": prec_x,
            "mu_y": mu_y,
            "precision_y": prec_y,
            "kept_x_coords": kept,
        },
    )
    return data, truth


def _categorical(weights, size, rng):
    u = rng.random(size)
    return np.searchsorted(np.cumsum(weights), u).clip(0, weights.size - 1)
