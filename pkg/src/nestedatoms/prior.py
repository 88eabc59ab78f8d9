"""Prior summaries of the nested random-measure model.

Closed forms for the mean, variance, co-clustering probabilities, and
between-group correlation of the random measure evaluated on a product set
A, together with the truncation error bound and a Monte-Carlo sampler that
verifies all of them. The set A enters only through the two base-measure
probabilities hx = Hx(A) and hy = Hy(A), so the sampler abstracts atom
locations to Bernoulli membership indicators.

Throughout, q1 = 1/(1+alpha), q2 = 1/(1+beta), q3 = 1/(1+2*beta).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_STICK_EPS = 1e-15


@dataclass
class PriorSpec:
    """Concentrations plus the base-measure probabilities of the query set."""

    alpha: float
    beta: float
    hx: float
    hy: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError("concentration parameters must be positive")
        if not (0.0 <= self.hx <= 1.0 and 0.0 <= self.hy <= 1.0):
            raise ConfigError("hx and hy must lie in [0, 1]")

    @property
    def q1(self):
        return 1.0 / (1.0 + self.alpha)

    @property
    def q2(self):
        return 1.0 / (1.0 + self.beta)

    @property
    def q3(self):
        return 1.0 / (1.0 + 2.0 * self.beta)


@dataclass
class TruncationSpec:
    """Inputs of the truncation error bound."""

    alpha: float
    beta: float
    K: int
    L: int
    J: int
    N: int

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError("concentration parameters must be positive")
        if self.K < 2 or self.L < 2:
            raise ConfigError("truncation levels must be at least 2")
        if self.J < 1 or self.N < self.J:
            raise ConfigError("need J >= 1 groups and N >= J observations")


def prior_mean(spec):
    """E[G_j(A)] = hx * hy."""
    return spec.hx * spec.hy


def prior_variance(spec):
    """Var[G_j(A)] = hx*hy*(q2 + hy - q2*hy - hx*hy)."""
    hx, hy, q2 = spec.hx, spec.hy, spec.q2
    return hx * hy * (q2 + hy - q2 * hy - hx * hy)


def coclustering_probs(alpha, beta):
    """Prior probabilities that two groups share a group cluster and that
    two observations from different groups share an observation cluster.

    Returns (group, observation) = (q1, q1*q2 + (1-q1)*q3).
    """
    if not (alpha > 0 and beta > 0):
        raise ConfigError("concentration parameters must be positive")
    q1 = 1.0 / (1.0 + alpha)
    q2 = 1.0 / (1.0 + beta)
    q3 = 1.0 / (1.0 + 2.0 * beta)
    return q1, q1 * q2 + (1.0 - q1) * q3


def prior_correlation(spec):
    """Corr(G_j(A), G_j'(A)) for two distinct groups.

    General form: q1 + q3*(1-q1)*hx / (q2 + (hy/(1-hy))*(1-hx)). Two edges
    need care: at hx = 1 the expression reduces (independently of hy) to
    1 - alpha*beta/((1+2*beta)*(1+alpha)), the degenerate-x special case;
    at hy = 1 with hx < 1 the denominator diverges and the value is q1.
    """
    q1, q2, q3 = spec.q1, spec.q2, spec.q3
    if spec.hx == 1.0:
        return 1.0 - (
            spec.alpha * spec.beta
            / ((1.0 + 2.0 * spec.beta) * (1.0 + spec.alpha))
        )
    if spec.hy == 1.0:
        return q1
    denom = q2 + (spec.hy / (1.0 - spec.hy)) * (1.0 - spec.hx)
    return q1 + q3 * (1.0 - q1) * spec.hx / denom


def truncation_bound(spec):
    """Total-variation truncation error bound for the (K, L)-truncated
    variational family on J groups and N total observations:

        4 * [1 - (1 - ra^(K-1))^J * (1 - rb^(L-1))^N]

    with ra = alpha/(1+alpha), rb = beta/(1+beta), evaluated through
    log1p/expm1 so tiny bounds keep full relative precision.
    """
    log_ra = (spec.K - 1) * (np.log(spec.alpha) - np.log1p(spec.alpha))
    log_rb = (spec.L - 1) * (np.log(spec.beta) - np.log1p(spec.beta))
    inner = spec.J * np.log1p(-np.exp(log_ra)) + spec.N * np.log1p(
        -np.exp(log_rb)
    )
    return float(-4.0 * np.expm1(inner))


# ---------------------------------------------------------------------------
# Monte-Carlo verification sampler


def _stick_weights_clipped(raw):
    v = np.clip(raw, _STICK_EPS, 1.0 - _STICK_EPS)
    rest = np.cumprod(1.0 - v, axis=-1)
    out = np.empty(v.shape[:-1] + (v.shape[-1] + 1,))
    out[..., 0] = v[..., 0]
    out[..., 1:-1] = v[..., 1:] * rest[..., :-1]
    out[..., -1] = rest[..., -1]
    return out


def _categorical_rows(weights, rng):
    u = rng.random(weights.shape[0])
    return (np.cumsum(weights, axis=1) > u[:, None]).argmax(axis=1)


def _sample_pair_batch(alpha, beta, hx, hy, size, rng, trunc_k, trunc_l):
    """One batch of paired draws (two groups sharing one mixing measure).

    Returns the pair of measure evaluations G(A), the group labels, and the
    observation labels, each of length `size`.
    """
    pi = _stick_weights_clipped(rng.beta(1.0, alpha, (size, trunc_k - 1)))
    s1 = _categorical_rows(pi, rng)
    s2 = _categorical_rows(pi, rng)
    same_group = s1 == s2

    omega_a = _stick_weights_clipped(rng.beta(1.0, beta, (size, trunc_l - 1)))
    omega_b = _stick_weights_clipped(rng.beta(1.0, beta, (size, trunc_l - 1)))
    # groups in the same cluster share one weight vector
    omega_b = np.where(same_group[:, None], omega_a, omega_b)

    # common observation atoms: one shared membership vector per draw
    in_a_y = rng.random((size, trunc_l)) < hy
    g1_y = np.einsum("nl,nl->n", omega_a, in_a_y)
    g2_y = np.einsum("nl,nl->n", omega_b, in_a_y)

    # group atoms: shared only when the groups co-cluster
    in_a_x1 = rng.random(size) < hx
    in_a_x2 = np.where(same_group, in_a_x1, rng.random(size) < hx)

    m1 = _categorical_rows(omega_a, rng)
    m2 = _categorical_rows(omega_b, rng)
    return {
        "g1": in_a_x1 * g1_y,
        "g2": in_a_x2 * g2_y,
        "s1": s1,
        "s2": s2,
        "m1": m1,
        "m2": m2,
    }


def sample_nam_measure(alpha, beta, hx, hy, trunc_k=1000, trunc_l=1000,
                       rng=None):
    """One joint draw of two groups from a shared mixing measure.

    Returns a dict holding the paired measure evaluations g1/g2 on the query
    set, the group cluster labels s1/s2, and one observation label from each
    group m1/m2 (atom identities shared across groups). This is the
    brute-force oracle behind the closed-form prior summaries.
    """
    rng = rng if rng is not None else np.random.default_rng()
    batch = _sample_pair_batch(alpha, beta, hx, hy, 1, rng, trunc_k, trunc_l)
    return {key: value[0] for key, value in batch.items()}


def mc_prior_estimates(alpha, beta, hx, hy, n_draws=100_000, rng=None,
                       trunc=1000, chunk=2500):
    """Monte-Carlo estimates (with standard errors) of the five closed-form
    prior summaries, from n_draws paired measure draws."""
    rng = rng if rng is not None else np.random.default_rng()
    g1_parts, g2_parts, group_parts, obs_parts = [], [], [], []
    remaining = int(n_draws)
    while remaining > 0:
        size = min(chunk, remaining)
        batch = _sample_pair_batch(alpha, beta, hx, hy, size, rng, trunc,
                                   trunc)
        g1_parts.append(batch["g1"])
        g2_parts.append(batch["g2"])
        group_parts.append(batch["s1"] == batch["s2"])
        obs_parts.append(batch["m1"] == batch["m2"])
        remaining -= size
    g1 = np.concatenate(g1_parts)
    g2 = np.concatenate(g2_parts)
    group_co = np.concatenate(group_parts).astype(np.float64)
    obs_co = np.concatenate(obs_parts).astype(np.float64)
    n = g1.size

    mean_est = float(g1.mean())
    mean_se = float(g1.std(ddof=1) / np.sqrt(n))
    centered = g1 - mean_est
    m2 = float(np.mean(centered**2))
    m4 = float(np.mean(centered**4))
    var_se = float(np.sqrt(max(m4 - m2 * m2, 0.0) / n))

    def _binomial(arr):
        p = float(arr.mean())
        return p, float(np.sqrt(max(p * (1.0 - p), 0.0) / n))

    group_est, group_se = _binomial(group_co)
    obs_est, obs_se = _binomial(obs_co)

    # Pearson correlation with an influence-function (delta-method) SE
    sd1, sd2 = g1.std(), g2.std()
    if sd1 == 0.0 or sd2 == 0.0:
        corr, corr_se = float("nan"), float("nan")
    else:
        u = (g1 - g1.mean()) / sd1
        v = (g2 - g2.mean()) / sd2
        corr = float(np.mean(u * v))
        infl = u * v - 0.5 * corr * (u * u + v * v)
        corr_se = float(np.sqrt(np.mean(infl**2) / n))

    return {
        "n_draws": n,
        "mean": (mean_est, mean_se),
        "variance": (m2, var_se),
        "group_coclustering": (group_est, group_se),
        "obs_coclustering": (obs_est, obs_se),
        "correlation": (corr, corr_se),
    }
