"""Low-level numerical kernels: digamma, SPD matrix helpers, Wishart terms.

Everything here is dimension-generic and, where it makes sense, batched over
a leading axis so the inference engine can process all mixture components in
one call. Matrix inputs are symmetrized as (M + M^T)/2 before factorization
so that tiny asymmetries accumulated by repeated rank-one updates never reach
the Cholesky routine.
"""

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import gammaln

from .errors import NotSpdError, NumericalFault

LOG2 = np.log(2.0)
LOGPI = np.log(np.pi)
LOG2PI = np.log(2.0 * np.pi)

# Probabilities are floored at this value before any log is taken, so a hard
# zero contributes exactly 0 * log(floor) = 0 to entropy-style sums.
PROB_FLOOR = 1e-300

# Asymptotic tail of psi(y) ~ log y - 1/(2y) - sum_n B_{2n} / (2n y^{2n}),
# written with z = 1/y^2 so the tail is z * poly(z). Coefficients are
# B_{2n}/(2n) for n = 1..7.
_PSI_TAIL = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_PSI_SHIFT = 8


def digamma(x):
    """Digamma function for positive arguments, elementwise.

    Uses the recurrence psi(x) = psi(x + 1) - 1/x to shift the argument up by
    a fixed 8 steps, then evaluates the asymptotic series. The shift terms are
    accumulated with compensated summation so the result stays within 1e-12
    absolute of the true value even for arguments as small as 1e-3.

    Parameters
    ----------
    x : array_like, positive
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size and np.any(x <= 0.0):
        raise ValueError("digamma requires strictly positive arguments")
    scalar = x.ndim == 0
    x = np.atleast_1d(x)

    # Kahan-compensated sum of 1/(x+i), smallest terms first.
    acc = np.zeros_like(x)
    comp = np.zeros_like(x)
    for i in range(_PSI_SHIFT - 1, -1, -1):
        term = 1.0 / (x + i) - comp
        total = acc + term
        comp = (total - acc) - term
        acc = total

    y = x + _PSI_SHIFT
    z = 1.0 / (y * y)
    tail = _PSI_TAIL[-1]
    for c in _PSI_TAIL[-2::-1]:
        tail = c + z * tail
    psi = np.log(y) - 0.5 / y - z * tail - acc
    return psi[0] if scalar else psi


def floored_log(p):
    """log(max(p, 1e-300)); with p >= 0 this makes p*log(p) land on 0 at p=0."""
    return np.log(np.maximum(p, PROB_FLOOR))


def normalized_exp_rows(logits, out=None):
    """Rowwise softmax of a 2-d logits array, shifted by the row maximum.

    Every row of the result sums to 1 exactly as floating point allows. Rows
    of the input must be finite (use -inf only if some other entry is finite).
    """
    shift = logits.max(axis=1, keepdims=True)
    p = np.exp(logits - shift, out=out)
    p /= p.sum(axis=1, keepdims=True)
    return p


def _symmetrize(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def chol_spd(m):
    """Cholesky factor (lower) of an SPD matrix or batch, symmetrizing first.

    Raises NotSpdError if any matrix in the batch fails to factor.
    """
    try:
        return np.linalg.cholesky(_symmetrize(m))
    except np.linalg.LinAlgError as err:
        raise NotSpdError(f"matrix is not positive definite: {err}") from err


def logdet_spd(m):
    """log-determinant of an SPD matrix or batch via Cholesky."""
    factor = chol_spd(m)
    diag = np.diagonal(factor, axis1=-2, axis2=-1)
    return 2.0 * np.sum(np.log(diag), axis=-1)


def spd_inverse(m):
    """Inverse of an SPD matrix (single, not batched), symmetrized on output."""
    m = np.asarray(m, dtype=np.float64)
    factor = chol_spd(m)
    inv = cho_solve((factor, True), np.eye(m.shape[-1]))
    return _symmetrize(inv)


def log_multigamma(a, dim):
    """log of the multivariate gamma function Gamma_d(a), elementwise in a."""
    a = np.asarray(a, dtype=np.float64)
    out = (dim * (dim - 1) / 4.0) * LOGPI
    out = out + sum(gammaln(a + (1.0 - i) / 2.0) for i in range(1, dim + 1))
    return out


def wishart_log_norm(scale, df):
    """log normalizing constant of a Wishart with scale matrix and df degrees.

    Density convention: p(L) = B * |L|^{(df-d-1)/2} exp(-tr(scale^{-1} L)/2),
    and this returns log B. Batched over a leading axis of `scale`/`df`.
    """
    scale = np.asarray(scale, dtype=np.float64)
    dim = scale.shape[-1]
    df = np.asarray(df, dtype=np.float64)
    if np.any(df <= dim - 1):
        raise NumericalFault(f"Wishart df must exceed dim-1 = {dim - 1}")
    return (
        -0.5 * df * logdet_spd(scale)
        - 0.5 * df * dim * LOG2
        - log_multigamma(0.5 * df, dim)
    )


def wishart_expected_logdet(scale, df):
    """E[log |L|] under a Wishart(scale, df); batched over a leading axis."""
    scale = np.asarray(scale, dtype=np.float64)
    dim = scale.shape[-1]
    df = np.asarray(df, dtype=np.float64)
    out = logdet_spd(scale) + dim * LOG2
    out = out + sum(digamma(0.5 * (df + 1.0 - i)) for i in range(1, dim + 1))
    return out


def wishart_entropy(scale, df, expected_logdet=None):
    """Entropy of a Wishart(scale, df); batched over a leading axis."""
    scale = np.asarray(scale, dtype=np.float64)
    dim = scale.shape[-1]
    df = np.asarray(df, dtype=np.float64)
    if expected_logdet is None:
        expected_logdet = wishart_expected_logdet(scale, df)
    return (
        -wishart_log_norm(scale, df)
        - 0.5 * (df - dim - 1.0) * expected_logdet
        + 0.5 * df * dim
    )


def assert_all_finite(arr, what):
    """Raise NumericalFault if `arr` contains NaN or infinity."""
    if not np.all(np.isfinite(arr)):
        raise NumericalFault(f"non-finite values encountered in {what}")
