"""Domain types for nested data, hyperparameters, and the variational state.

"Nested data" here means each group j carries one group-level vector x_j of
dimension q plus a block of n_j observation-level vectors y_ji of dimension p.
The model clusters groups (GCs) and observations (OCs) simultaneously; the
variational state holds assignment probabilities for both levels, stick-
breaking Beta parameters at both levels, normal-Wishart blocks for the
component atoms, and Gamma parameters for the two concentration parameters.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NotSpdError
from .special import chol_spd, digamma

NAM = "nam"
CAM = "cam"


def _as_float_matrix(arr, name):
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2:
        raise ConfigError(f"{name} must be a 2-d array, got ndim={out.ndim}")
    if not np.all(np.isfinite(out)):
        raise ConfigError(f"{name} contains non-finite values")
    return out


@dataclass
class NestedDataset:
    """Grouped data: per-group vectors x (J×q) and ragged observation blocks.

    Parameters
    ----------
    y : list of ndarray
        Block j has shape (n_j, p); all blocks share p.
    x : ndarray or None
        Group-level matrix of shape (J, q). None when the model variant
        ignores group-level variables entirely.
    group_ids : sequence of str, optional
        Stable labels per group; defaults to "1".."J".
    """

    y: list
    x: np.ndarray | None = None
    group_ids: list = None

    # derived
    y_stacked: np.ndarray = field(init=False, repr=False)
    group_sizes: np.ndarray = field(init=False, repr=False)
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.y) < 1:
            raise ConfigError("dataset needs at least one group")
        blocks = [_as_float_matrix(b, f"y block {j}") for j, b in enumerate(self.y)]
        p = blocks[0].shape[1]
        for j, b in enumerate(blocks):
            if b.shape[0] < 1:
                raise ConfigError(f"y block {j} is empty")
            if b.shape[1] != p:
                raise ConfigError(
                    f"y block {j} has dimension {b.shape[1]}, expected {p}"
                )
        self.y = blocks
        self.group_sizes = np.array([b.shape[0] for b in blocks], dtype=np.int64)
        self.offsets = np.concatenate(([0], np.cumsum(self.group_sizes)))
        self.y_stacked = np.concatenate(blocks, axis=0)

        if self.x is not None:
            self.x = _as_float_matrix(self.x, "x")
            if self.x.shape[0] != len(blocks):
                raise ConfigError(
                    f"x has {self.x.shape[0]} rows for {len(blocks)} groups"
                )

        if self.group_ids is None:
            self.group_ids = [str(j + 1) for j in range(len(blocks))]
        elif len(self.group_ids) != len(blocks):
            raise ConfigError("group_ids length does not match group count")
        else:
            self.group_ids = [str(g) for g in self.group_ids]

    @property
    def n_groups(self):
        return len(self.y)

    @property
    def total_obs(self):
        return int(self.group_sizes.sum())

    @property
    def p(self):
        return self.y_stacked.shape[1]

    @property
    def q(self):
        return None if self.x is None else self.x.shape[1]


def _check_nw_params(mu0, lambda0, nu0, psi0, dim, tag):
    mu0 = np.asarray(mu0, dtype=np.float64).reshape(-1)
    psi0 = np.asarray(psi0, dtype=np.float64)
    if mu0.shape != (dim,):
        raise ConfigError(f"{tag}: prior mean must have length {dim}")
    if psi0.shape != (dim, dim):
        raise ConfigError(f"{tag}: prior scale must be {dim}x{dim}")
    if not lambda0 > 0:
        raise ConfigError(f"{tag}: prior precision scale must be positive")
    if not nu0 > dim - 1:
        raise ConfigError(f"{tag}: prior df must exceed dim-1 = {dim - 1}")
    try:
        chol_spd(psi0)
    except NotSpdError as err:
        raise ConfigError(f"{tag}: prior scale matrix is not SPD") from err
    return mu0, float(lambda0), float(nu0), psi0


@dataclass
class Hyperparameters:
    """Model hyperparameters: NW priors at both levels, Gamma hyperpriors on
    the two concentration parameters, truncations K (groups) and L
    (observations), and the model variant switch.

    variant "nam" uses group-level variables; "cam" ignores them entirely
    (the x-side NW fields may then be None).
    """

    K: int
    L: int
    mu0_y: np.ndarray
    lambda0_y: float
    nu0_y: float
    psi0_y: np.ndarray
    mu0_x: np.ndarray | None = None
    lambda0_x: float | None = None
    nu0_x: float | None = None
    psi0_x: np.ndarray | None = None
    a_alpha: float = 1.0
    b_alpha: float = 1.0
    a_beta: float = 1.0
    b_beta: float = 1.0
    variant: str = NAM

    def __post_init__(self):
        self.variant = str(self.variant).lower()
        if self.variant not in (NAM, CAM):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if int(self.K) < 2 or int(self.L) < 2:
            raise ConfigError("truncation levels K and L must be at least 2")
        self.K = int(self.K)
        self.L = int(self.L)
        p = np.asarray(self.mu0_y).size
        self.mu0_y, self.lambda0_y, self.nu0_y, self.psi0_y = _check_nw_params(
            self.mu0_y, self.lambda0_y, self.nu0_y, self.psi0_y, p, "y prior"
        )
        if self.variant == NAM:
            if self.mu0_x is None:
                raise ConfigError("variant nam requires group-level NW prior")
            q = np.asarray(self.mu0_x).size
            self.mu0_x, self.lambda0_x, self.nu0_x, self.psi0_x = _check_nw_params(
                self.mu0_x, self.lambda0_x, self.nu0_x, self.psi0_x, q, "x prior"
            )
        for name in ("a_alpha", "b_alpha", "a_beta", "b_beta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def defaults(cls, p, q=None, K=30, L=30, variant=NAM):
        """Standard weakly-informative setup: NW(0, 0.05, dim+5, I) at each
        level and Gamma(1,1) on both concentration parameters."""
        kw = dict(
            K=K,
            L=L,
            mu0_y=np.zeros(p),
            lambda0_y=0.05,
            nu0_y=p + 5.0,
            psi0_y=np.eye(p),
            variant=variant,
        )
        if variant == NAM:
            if q is None:
                raise ConfigError("variant nam needs the group-level dimension q")
            kw.update(
                mu0_x=np.zeros(q),
                lambda0_x=0.05,
                nu0_x=q + 5.0,
                psi0_x=np.eye(q),
            )
        return cls(**kw)


@dataclass
class NormalWishartBlock:
    """Batched variational normal-Wishart parameters for one level.

    m: (C, d) posterior means; t: (C,) mean-precision scales; c: (C,) Wishart
    degrees of freedom; scale: (C, d, d) Wishart scale matrices.
    """

    m: np.ndarray
    t: np.ndarray
    c: np.ndarray
    scale: np.ndarray

    def copy(self):
        return NormalWishartBlock(
            self.m.copy(), self.t.copy(), self.c.copy(), self.scale.copy()
        )


@dataclass
class VariationalState:
    """Full variational parameter set.

    rho: (J, K) group responsibilities; xi: (N, L) observation
    responsibilities stacked in group order with group_sizes giving the block
    boundaries; v_a/v_b: (K-1,) group-level stick Betas; u_a/u_b: (K, L-1)
    observation-level stick Betas, row k belonging to group component k;
    nw_x: batched NW over K group atoms (None for the variant without
    group-level data); nw_y: batched NW over L observation atoms;
    alpha_gamma / beta_gamma: Gamma(shape, rate) pairs for the concentrations.
    """

    rho: np.ndarray
    xi: np.ndarray
    group_sizes: np.ndarray
    v_a: np.ndarray
    v_b: np.ndarray
    u_a: np.ndarray
    u_b: np.ndarray
    nw_x: NormalWishartBlock | None
    nw_y: NormalWishartBlock
    alpha_gamma: tuple
    beta_gamma: tuple

    @property
    def K(self):
        return self.rho.shape[1]

    @property
    def L(self):
        return self.xi.shape[1]

    @property
    def offsets(self):
        return np.concatenate(([0], np.cumsum(self.group_sizes)))

    def xi_blocks(self):
        """The per-group (n_j, L) views of the stacked xi matrix."""
        off = self.offsets
        return [self.xi[off[j]:off[j + 1]] for j in range(len(self.group_sizes))]

    def copy(self):
        return VariationalState(
            rho=self.rho.copy(),
            xi=self.xi.copy(),
            group_sizes=self.group_sizes.copy(),
            v_a=self.v_a.copy(),
            v_b=self.v_b.copy(),
            u_a=self.u_a.copy(),
            u_b=self.u_b.copy(),
            nw_x=None if self.nw_x is None else self.nw_x.copy(),
            nw_y=self.nw_y.copy(),
            alpha_gamma=tuple(self.alpha_gamma),
            beta_gamma=tuple(self.beta_gamma),
        )


def assert_valid_state(state, data=None, hyper=None, atol=1e-9):
    """Validate the structural invariants of a VariationalState.

    Checks row-stochasticity of both responsibility matrices (within atol),
    strict positivity of all Beta/Gamma parameters, SPD scale matrices, and
    df constraints. Raises ConfigError on the first violation.
    """
    rho, xi = state.rho, state.xi
    for name, mat in (("rho", rho), ("xi", xi)):
        if np.any(mat < 0):
            raise ConfigError(f"{name} has negative entries")
        err = np.abs(mat.sum(axis=1) - 1.0).max()
        if err > atol:
            raise ConfigError(f"{name} rows deviate from simplex by {err:.3e}")
    if int(xi.shape[0]) != int(np.sum(state.group_sizes)):
        raise ConfigError("xi row count does not match group sizes")
    for name, arr in (
        ("v_a", state.v_a),
        ("v_b", state.v_b),
        ("u_a", state.u_a),
        ("u_b", state.u_b),
    ):
        if np.any(np.asarray(arr) <= 0):
            raise ConfigError(f"stick parameter {name} must be positive")
    if state.u_a.shape != (state.K, state.L - 1):
        raise ConfigError("u stick parameters must have shape (K, L-1)")
    if state.v_a.shape != (state.K - 1,):
        raise ConfigError("v stick parameters must have shape (K-1,)")
    for pair_name, pair in (("alpha_gamma", state.alpha_gamma),
                            ("beta_gamma", state.beta_gamma)):
        if not (pair[0] > 0 and pair[1] > 0):
            raise ConfigError(f"{pair_name} must be strictly positive")
    for tag, nw in (("x", state.nw_x), ("y", state.nw_y)):
        if nw is None:
            continue
        dim = nw.m.shape[1]
        if np.any(nw.t <= 0):
            raise ConfigError(f"nw_{tag}.t must be positive")
        if np.any(nw.c <= dim - 1):
            raise ConfigError(f"nw_{tag}.c must exceed dim-1")
        try:
            chol_spd(nw.scale)
        except NotSpdError as err:
            raise ConfigError(f"nw_{tag} scale matrices not SPD") from err
    if data is not None:
        if rho.shape[0] != data.n_groups:
            raise ConfigError("rho row count does not match dataset")
        if xi.shape[0] != data.total_obs:
            raise ConfigError("xi row count does not match dataset")
    if hyper is not None:
        if state.K != hyper.K or state.L != hyper.L:
            raise ConfigError("state truncation does not match hyperparameters")


@dataclass
class FitResult:
    """Outcome of one optimization run."""

    elbo_trace: np.ndarray
    converged: bool
    iterations: int
    S_hat: np.ndarray          # (J,) hard group labels in 1..K
    M_hat: list                # J arrays of hard observation labels in 1..L
    n_gc: int
    n_oc: int
    final_state: VariationalState
    max_gc_index: int          # largest occupied group index over iterations
    max_oc_index: int
    step_elbo_trace: list = None   # per-update ELBOs when debug mode is on

    @property
    def elbo(self):
        return float(self.elbo_trace[-1])


def expected_log_stick(a, b):
    """E[log v] for v ~ Beta(a, b): digamma(a) - digamma(a + b).

    Accepts arrays; the companion expectation E[log(1 - v)] is obtained by
    swapping the arguments.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("Beta parameters must be positive")
    return digamma(a) - digamma(a + b)


def expected_log_weights(a, b):
    """Expected log mixture weights of a truncated stick-breaking measure.

    a, b hold the Beta parameters of the first C-1 sticks along the last
    axis; the final stick is pinned at 1, so its own log-stick expectation is
    0 and the last weight absorbs the leftover products:

        E[log w_c] = E[log v_c] + sum_{r<c} E[log(1-v_r)]   (c < C)
        E[log w_C] =              sum_{r<C} E[log(1-v_r)]

    Returns an array with last-axis length C = a.shape[-1] + 1. Works on 1-d
    (group-level sticks) and 2-d (per-component observation sticks) inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    log_v = expected_log_stick(a, b)
    log_1mv = expected_log_stick(b, a)
    out = np.zeros(a.shape[:-1] + (a.shape[-1] + 1,))
    out[..., :-1] = log_v
    out[..., 1:] += np.cumsum(log_1mv, axis=-1)
    return out


def sticks_to_weights(v):
    """Map stick fractions v in (0,1)^{C-1} to a length-C weight vector.

    The last weight is the residual product prod(1 - v), so the output sums
    to 1 up to rounding. Batched over leading axes.
    """
    v = np.asarray(v, dtype=np.float64)
    if np.any(v <= 0) or np.any(v >= 1):
        raise ValueError("stick fractions must lie strictly inside (0, 1)")
    rest = np.cumprod(1.0 - v, axis=-1)
    out = np.empty(v.shape[:-1] + (v.shape[-1] + 1,))
    out[..., 0] = v[..., 0]
    out[..., 1:-1] = v[..., 1:] * rest[..., :-1]
    out[..., -1] = rest[..., -1]
    return out


def extract_assignments(state):
    """Hard assignments from the responsibilities, 1-based.

    Returns (S_hat, M_hat): S_hat is a (J,) int array with values in 1..K,
    M_hat a list of per-group int arrays with values in 1..L. Ties break
    toward the lowest index.
    """
    s_hat = np.argmax(state.rho, axis=1).astype(np.int64) + 1
    off = state.offsets
    m_flat = np.argmax(state.xi, axis=1).astype(np.int64) + 1
    m_hat = [m_flat[off[j]:off[j + 1]] for j in range(len(state.group_sizes))]
    return s_hat, m_hat
