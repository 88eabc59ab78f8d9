"""Coordinate-ascent variational inference for the nested atoms model.

One iteration applies eight closed-form block updates in a fixed order:

  1. group assignment probabilities rho
  2. observation assignment probabilities xi
  3. observation-level stick Betas u (one stick set per group component)
  4. group-level stick Betas v
  5. group-atom normal-Wishart blocks (skipped for the no-x variant)
  6. observation-atom normal-Wishart blocks
  7. Gamma factor for the group concentration alpha
  8. Gamma factor for the observation concentration beta

then evaluates the evidence lower bound once. The bound is nondecreasing
across every individual update; the optimizer stops when the sweep-to-sweep
change drops below tol.

The public update_* functions mirror the eight steps one-to-one and can be
applied to any valid state, which is how the monotonicity and oracle tests
drive them. fit() runs the loop; fit_restarts() runs R independently seeded
fits and keeps the best final bound.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import (
    CAM,
    NAM,
    FitResult,
    NormalWishartBlock,
    VariationalState,
    expected_log_stick,
    expected_log_weights,
    extract_assignments,
)
from .errors import ConfigError, NumericalFault
from .special import (
    LOG2PI,
    assert_all_finite,
    digamma,
    floored_log,
    spd_inverse,
    wishart_entropy,
    wishart_expected_logdet,
    wishart_log_norm,
)

_INIT_MODES = ("perturbed-prior", "random-responsibility")


@dataclass
class CaviConfig:
    """Optimizer settings.

    tol: absolute ELBO-difference convergence threshold. rel_tol: optional
    relative-difference criterion, disabled by default. init selects the
    starting-point recipe; init_jitter scales the random offset applied to
    the initial atom means. per_step_elbo turns on the (slow) debug trace
    that evaluates the bound after every individual update.
    """

    tol: float = 1e-5
    max_iter: int = 10000
    seed: int = 0
    init: str = "perturbed-prior"
    rel_tol: float | None = None
    init_jitter: float = 1.0
    per_step_elbo: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if int(self.max_iter) < 1:
            raise ConfigError("max_iter must be at least 1")
        self.max_iter = int(self.max_iter)
        if self.init not in _INIT_MODES:
            raise ConfigError(
                f"init must be one of {_INIT_MODES}, got {self.init!r}"
            )
        if self.rel_tol is not None and not self.rel_tol > 0:
            raise ConfigError("rel_tol must be positive when given")


class _Workspace:
    """Per-dataset precomputation shared by all updates of one fit.

    Quadratic forms (z - m)^T D (z - m) against every component are needed
    for both responsibility updates and the likelihood part of the bound.
    They are evaluated as a single matrix product F @ w(component), where F
    holds [vec(z z^T), z, 1] per row and z is the data point expressed
    relative to the global data mean. The global centering keeps the
    uncentered-moment identity used for the scatter matrices well
    conditioned regardless of where the data sit.
    """

    def __init__(self, data, hyper):
        self.data = data
        J = data.n_groups
        self.rep_idx = np.repeat(np.arange(J), data.group_sizes)
        self.offsets = data.offsets
        self.y_center = data.y_stacked.mean(axis=0)
        self.Fy = _quad_features(data.y_stacked - self.y_center)
        self.psi0_y_inv = spd_inverse(hyper.psi0_y)
        if hyper.variant == NAM:
            self.x_center = data.x.mean(axis=0)
            self.Fx = _quad_features(data.x - self.x_center)
            self.psi0_x_inv = spd_inverse(hyper.psi0_x)
        else:
            self.x_center = None
            self.Fx = None
            self.psi0_x_inv = None


def _quad_features(z):
    n, d = z.shape
    outer = (z[:, :, None] * z[:, None, :]).reshape(n, d * d)
    return np.concatenate([outer, z, np.ones((n, 1))], axis=1)


def _component_quads(features, center, nw):
    """(z_i - m_c)^T D_c (z_i - m_c) for all rows i and components c."""
    mc = nw.m - center[None, :]
    dim = mc.shape[1]
    dm = np.einsum("cij,cj->ci", nw.scale, mc)
    w = np.concatenate(
        [nw.scale.reshape(-1, dim * dim), -2.0 * dm,
         np.sum(mc * dm, axis=1, keepdims=True)],
        axis=1,
    )
    return features @ w.T


def _gauss_row_terms(nw, dim):
    """elogdet and the observation-independent part of the expected log
    Gaussian density for each component: elogdet - dim*log(2pi) - dim/t."""
    elogdet = wishart_expected_logdet(nw.scale, nw.c)
    return elogdet, elogdet - dim * LOG2PI - dim / nw.t


def _check_inputs(data, hyper):
    if hyper.mu0_y.shape[0] != data.p:
        raise ConfigError(
            f"observation prior dimension {hyper.mu0_y.shape[0]} "
            f"does not match data dimension {data.p}"
        )
    if hyper.variant == NAM:
        if data.x is None:
            raise ConfigError("variant nam requires group-level data x")
        if hyper.mu0_x.shape[0] != data.q:
            raise ConfigError(
                f"group prior dimension {hyper.mu0_x.shape[0]} "
                f"does not match data dimension {data.q}"
            )


def _xi_group_sums(xi, offsets):
    return np.add.reduceat(xi, offsets[:-1], axis=0)


def _assignments_from_logits(logits):
    """Row-normalize exp(logits) with a per-row max shift.

    Returns (P, entropy) where entropy = sum P log P computed from the
    shifted logits (so hard zeros contribute exactly 0).
    """
    shift = logits.max(axis=1, keepdims=True)
    logits = logits - shift
    p = np.exp(logits)
    rowsum = p.sum(axis=1, keepdims=True)
    p /= rowsum
    ent = float(np.einsum("il,il->", p, logits)) - float(np.log(rowsum).sum())
    return p, ent


# ---------------------------------------------------------------------------
# the eight block updates


def _group_logits(state, data, hyper, ws, xisums=None):
    elog_pi = expected_log_weights(state.v_a, state.v_b)        # (K,)
    elog_omega = expected_log_weights(state.u_a, state.u_b)     # (K, L)
    if xisums is None:
        xisums = _xi_group_sums(state.xi, ws.offsets)           # (J, L)
    logits = elog_pi[None, :] + xisums @ elog_omega.T
    if hyper.variant == NAM:
        _, row = _gauss_row_terms(state.nw_x, data.q)
        quad = _component_quads(ws.Fx, ws.x_center, state.nw_x)
        logits = logits + 0.5 * (row[None, :] - state.nw_x.c[None, :] * quad)
        # note: row folds in a -q*log(2pi) constant, which cancels in the
        # normalization; kept for parity with the bound evaluation
    assert_all_finite(logits, "group assignment logits")
    return logits


def update_group_assignments(state, data, hyper, ws=None):
    """Step 1: refresh the (J, K) group responsibilities."""
    ws = ws if ws is not None else _Workspace(data, hyper)
    p, _ = _assignments_from_logits(_group_logits(state, data, hyper, ws))
    return p


def _obs_logits(state, data, hyper, ws):
    elog_omega = expected_log_weights(state.u_a, state.u_b)     # (K, L)
    group_term = state.rho @ elog_omega                         # (J, L)
    elogdet, row = _gauss_row_terms(state.nw_y, data.p)
    logits = _component_quads(ws.Fy, ws.y_center, state.nw_y)
    logits *= -0.5 * state.nw_y.c[None, :]
    logits += 0.5 * row[None, :]
    logits += group_term[ws.rep_idx]
    assert_all_finite(logits, "observation assignment logits")
    return logits


def update_obs_assignments(state, data, hyper, ws=None):
    """Step 2: refresh the stacked (N, L) observation responsibilities."""
    ws = ws if ws is not None else _Workspace(data, hyper)
    p, _ = _assignments_from_logits(_obs_logits(state, data, hyper, ws))
    return p


def _obs_sticks_core(rho, xisums, beta_gamma):
    mass = rho.T @ xisums                                # (K, L)
    tail = np.cumsum(mass[:, ::-1], axis=1)[:, ::-1]     # inclusive suffix sums
    r1, r2 = beta_gamma
    u_a = 1.0 + mass[:, :-1]
    u_b = (r1 / r2) + tail[:, 1:]
    return u_a, u_b


def update_obs_sticks(state, hyper):
    """Step 3: Beta parameters of the per-component observation sticks.

    Stick (l, k) gains the rho-weighted xi mass of component l as its
    first parameter and the rho-weighted mass of all later components plus
    the current mean of beta as its second.
    """
    xisums = _xi_group_sums(state.xi, state.offsets)
    return _obs_sticks_core(state.rho, xisums, state.beta_gamma)


def update_group_sticks(state, hyper):
    """Step 4: Beta parameters of the group-level sticks."""
    nk = state.rho.sum(axis=0)
    tail = np.cumsum(nk[::-1])[::-1]
    s1, s2 = state.alpha_gamma
    return 1.0 + nk[:-1], (s1 / s2) + tail[1:]


def _weighted_stats(weights, features, center, dim):
    """Weighted counts, means (absolute coordinates), and scatter matrices.

    weights is (n, C); features is the [vec(z z^T), z, 1] matrix of the
    centered data, so one product gives all three moment blocks at once.
    """
    mom = weights.T @ features                           # (C, d*d + d + 1)
    counts = mom[:, -1]
    denom = np.maximum(counts, 1e-300)
    mean_c = mom[:, dim * dim:dim * dim + dim] / denom[:, None]
    scatter = mom[:, :dim * dim].reshape(-1, dim, dim)
    scatter = scatter - counts[:, None, None] * (
        mean_c[:, :, None] * mean_c[:, None, :]
    )
    scatter = 0.5 * (scatter + np.swapaxes(scatter, 1, 2))
    return counts, mean_c + center, scatter


def _nw_from_stats(counts, means, scatters, mu0, lam0, nu0, psi0, psi0_inv):
    dim = mu0.shape[0]
    t = lam0 + counts
    c = nu0 + counts
    m = (lam0 * mu0[None, :] + counts[:, None] * means) / t[:, None]
    scale = np.empty_like(scatters)
    for k in range(counts.shape[0]):
        if counts[k] == 0.0:
            # empty component: the formulas collapse to the prior exactly
            scale[k] = psi0
            m[k] = mu0
            continue
        diff = means[k] - mu0
        pull = (lam0 * counts[k] / (lam0 + counts[k])) * np.outer(diff, diff)
        scale[k] = spd_inverse(psi0_inv + scatters[k] + pull)
    return NormalWishartBlock(m=m, t=t, c=c, scale=scale)


def _update_nw_x_with_stats(state, data, hyper, ws):
    counts, means, scatters = _weighted_stats(
        state.rho, ws.Fx, ws.x_center, data.q
    )
    block = _nw_from_stats(
        counts, means, scatters,
        hyper.mu0_x, hyper.lambda0_x, hyper.nu0_x, hyper.psi0_x,
        ws.psi0_x_inv,
    )
    return block, (counts, means, scatters)


def update_nw_x(state, data, hyper, ws=None):
    """Step 5: group-atom normal-Wishart blocks. No-op for variant cam."""
    if hyper.variant == CAM:
        return state.nw_x
    ws = ws if ws is not None else _Workspace(data, hyper)
    block, _ = _update_nw_x_with_stats(state, data, hyper, ws)
    return block


def _update_nw_y_with_stats(state, data, hyper, ws):
    counts, means, scatters = _weighted_stats(
        state.xi, ws.Fy, ws.y_center, data.p
    )
    block = _nw_from_stats(
        counts, means, scatters,
        hyper.mu0_y, hyper.lambda0_y, hyper.nu0_y, hyper.psi0_y,
        ws.psi0_y_inv,
    )
    return block, (counts, means, scatters)


def update_nw_y(state, data, hyper, ws=None):
    """Step 6: observation-atom normal-Wishart blocks."""
    ws = ws if ws is not None else _Workspace(data, hyper)
    block, _ = _update_nw_y_with_stats(state, data, hyper, ws)
    return block


def update_alpha(state, hyper):
    """Step 7: Gamma factor of the group-level concentration."""
    s1 = hyper.a_alpha + (state.K - 1)
    s2 = hyper.b_alpha - np.sum(expected_log_stick(state.v_b, state.v_a))
    return (float(s1), float(s2))


def update_beta(state, hyper):
    """Step 8: Gamma factor of the observation-level concentration."""
    r1 = hyper.a_beta + state.K * (state.L - 1)
    r2 = hyper.b_beta - np.sum(expected_log_stick(state.u_b, state.u_a))
    return (float(r1), float(r2))


# ---------------------------------------------------------------------------
# evidence lower bound


def _gamma_cross_term(a0, b0, shape, rate):
    """E[log p(z)] for z ~ variational Gamma(shape, rate) under a
    Gamma(a0, b0) prior."""
    elog = digamma(shape) - np.log(rate)
    return a0 * np.log(b0) - gammaln(a0) + (a0 - 1.0) * elog - b0 * shape / rate


def _gamma_entropy_neg(shape, rate):
    """E[log q(z)] for the variational Gamma(shape, rate) factor."""
    elog = digamma(shape) - np.log(rate)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * elog - shape


def _beta_entropy_neg(a, b):
    """Sum of E[log q(v)] over an array of Beta(a, b) factors."""
    log_norm = gammaln(a + b) - gammaln(a) - gammaln(b)
    return float(np.sum(
        log_norm
        + (a - 1.0) * expected_log_stick(a, b)
        + (b - 1.0) * expected_log_stick(b, a)
    ))


def _nw_cross_term(nw, elogdet, mu0, lam0, nu0, psi0, psi0_inv, dim):
    """Sum over components of E[log p(mu, Lambda)] under the NW prior."""
    log_b0 = wishart_log_norm(psi0, nu0)
    tr = np.einsum("ij,cji->c", psi0_inv, nw.scale)
    diff = nw.m - mu0[None, :]
    quad = np.einsum("ci,cij,cj->c", diff, nw.scale, diff)
    n_comp = nw.m.shape[0]
    wish = (
        n_comp * log_b0
        + 0.5 * (nu0 - dim - 1.0) * float(elogdet.sum())
        - 0.5 * float(np.dot(nw.c, tr))
    )
    gauss = 0.5 * float(np.sum(
        dim * (np.log(lam0) - LOG2PI)
        + elogdet
        - dim * lam0 / nw.t
        - lam0 * nw.c * quad
    ))
    return wish + gauss


def _nw_entropy_neg(nw, elogdet, dim):
    """Sum over components of E[log q(mu, Lambda)]."""
    gauss = 0.5 * float(np.sum(dim * (np.log(nw.t) - LOG2PI) + elogdet - dim))
    wish = float(np.sum(wishart_entropy(nw.scale, nw.c, elogdet)))
    return gauss - wish


def _likelihood_term_direct(resp, features, center, nw, row_terms):
    quad = _component_quads(features, center, nw)
    weighted = float(np.einsum("il,il,l->", resp, quad, nw.c))
    return 0.5 * (float(resp.sum(axis=0) @ row_terms) - weighted)


def _likelihood_term_from_stats(nw, row_terms, stats):
    counts, means, scatters = stats
    diff = means - nw.m
    quad = np.einsum("ci,cij,cj->c", diff, nw.scale, diff)
    tr = np.einsum("cij,cij->c", nw.scale, scatters)
    return 0.5 * float(
        np.dot(counts, row_terms) - np.dot(nw.c, tr + counts * quad)
    )


def compute_elbo(state, data, hyper, ws=None, *, return_terms=False,
                 _stats=None):
    """Evidence lower bound of the current state.

    The bound decomposes into expected log-joint terms minus expected
    log-variational-density terms; with return_terms=True the individual
    named contributions come back in a dict (for diagnostics and the
    transcription tests). _stats is an internal fast path used by fit():
    when the weighted moments of the current responsibilities are already
    known, the two likelihood terms and both assignment entropies reuse
    them instead of re-contracting the full responsibility matrices.
    """
    _check_inputs(data, hyper)
    ws = ws if ws is not None else _Workspace(data, hyper)
    terms = {}

    elog_pi = expected_log_weights(state.v_a, state.v_b)
    elog_omega = expected_log_weights(state.u_a, state.u_b)
    s1, s2 = state.alpha_gamma
    r1, r2 = state.beta_gamma
    elog_alpha = digamma(s1) - np.log(s2)
    elog_beta = digamma(r1) - np.log(r2)
    K, L = state.K, state.L

    elogdet_y, row_y = _gauss_row_terms(state.nw_y, data.p)
    if _stats is not None:
        terms["lik_y"] = _likelihood_term_from_stats(
            state.nw_y, row_y, _stats["y"]
        )
        xisums = _stats["xisums"]
    else:
        terms["lik_y"] = _likelihood_term_direct(
            state.xi, ws.Fy, ws.y_center, state.nw_y, row_y
        )
        xisums = _xi_group_sums(state.xi, ws.offsets)

    if hyper.variant == NAM:
        elogdet_x, row_x = _gauss_row_terms(state.nw_x, data.q)
        if _stats is not None:
            terms["lik_x"] = _likelihood_term_from_stats(
                state.nw_x, row_x, _stats["x"]
            )
        else:
            terms["lik_x"] = _likelihood_term_direct(
                state.rho, ws.Fx, ws.x_center, state.nw_x, row_x
            )

    terms["assign_obs"] = float(
        np.einsum("jk,jk->", state.rho, xisums @ elog_omega.T)
    )
    nk = state.rho.sum(axis=0)
    terms["assign_group"] = float(nk @ elog_pi)

    elog_1mv = expected_log_stick(state.v_b, state.v_a)
    elog_1mu = expected_log_stick(state.u_b, state.u_a)
    terms["sticks_group"] = float(
        (K - 1) * elog_alpha + (s1 / s2 - 1.0) * elog_1mv.sum()
    )
    terms["sticks_obs"] = float(
        K * (L - 1) * elog_beta + (r1 / r2 - 1.0) * elog_1mu.sum()
    )
    terms["conc_alpha"] = float(
        _gamma_cross_term(hyper.a_alpha, hyper.b_alpha, s1, s2)
    )
    terms["conc_beta"] = float(
        _gamma_cross_term(hyper.a_beta, hyper.b_beta, r1, r2)
    )
    terms["nw_prior_y"] = _nw_cross_term(
        state.nw_y, elogdet_y, hyper.mu0_y, hyper.lambda0_y, hyper.nu0_y,
        hyper.psi0_y, ws.psi0_y_inv, data.p,
    )
    if hyper.variant == NAM:
        terms["nw_prior_x"] = _nw_cross_term(
            state.nw_x, elogdet_x, hyper.mu0_x, hyper.lambda0_x, hyper.nu0_x,
            hyper.psi0_x, ws.psi0_x_inv, data.q,
        )

    if _stats is not None:
        terms["ent_group"] = _stats["ent_rho"]
        terms["ent_obs"] = _stats["ent_xi"]
    else:
        terms["ent_group"] = float(
            np.sum(state.rho * floored_log(state.rho))
        )
        terms["ent_obs"] = float(np.sum(state.xi * floored_log(state.xi)))
    terms["ent_sticks_group"] = _beta_entropy_neg(state.v_a, state.v_b)
    terms["ent_sticks_obs"] = _beta_entropy_neg(state.u_a, state.u_b)
    if hyper.variant == NAM:
        terms["ent_nw_x"] = _nw_entropy_neg(state.nw_x, elogdet_x, data.q)
    terms["ent_nw_y"] = _nw_entropy_neg(state.nw_y, elogdet_y, data.p)
    terms["ent_alpha"] = float(_gamma_entropy_neg(s1, s2))
    terms["ent_beta"] = float(_gamma_entropy_neg(r1, r2))

    entropy_keys = [k for k in terms if k.startswith("ent_")]
    elbo = sum(v for k, v in terms.items() if not k.startswith("ent_"))
    elbo -= sum(terms[k] for k in entropy_keys)
    if return_terms:
        terms["elbo"] = elbo
        return terms
    return float(elbo)


# ---------------------------------------------------------------------------
# initialization and the main loop


def initial_state(data, hyper, config, rng):
    """Starting point for one run.

    Both recipes draw every responsibility row from a flat Dirichlet and
    set the stick Betas to (1, prior concentration mean). "perturbed-prior"
    keeps the atom blocks at the prior with a random offset on each mean;
    "random-responsibility" instead derives sticks, atoms, and concentration
    factors from the random responsibilities via one pass of Steps 3-8.
    """
    J, N = data.n_groups, data.total_obs
    K, L = hyper.K, hyper.L
    rho = rng.dirichlet(np.ones(K), size=J)
    xi = rng.dirichlet(np.ones(L), size=N)
    v_a = np.ones(K - 1)
    v_b = np.full(K - 1, hyper.a_alpha / hyper.b_alpha)
    u_a = np.ones((K, L - 1))
    u_b = np.full((K, L - 1), hyper.a_beta / hyper.b_beta)

    def perturbed_block(mu0, lam0, nu0, psi0, n_comp):
        dim = mu0.shape[0]
        # jitter scaled like the prior spread of the mean: (lam0 nu0 psi0)^-1
        spread = np.linalg.cholesky(spd_inverse(psi0) / (lam0 * nu0))
        offsets = rng.standard_normal((n_comp, dim)) @ spread.T
        return NormalWishartBlock(
            m=mu0[None, :] + config.init_jitter * offsets,
            t=np.full(n_comp, lam0),
            c=np.full(n_comp, nu0),
            scale=np.repeat(psi0[None, :, :], n_comp, axis=0),
        )

    nw_x = None
    if hyper.variant == NAM:
        nw_x = perturbed_block(
            hyper.mu0_x, hyper.lambda0_x, hyper.nu0_x, hyper.psi0_x, K
        )
    nw_y = perturbed_block(
        hyper.mu0_y, hyper.lambda0_y, hyper.nu0_y, hyper.psi0_y, L
    )
    state = VariationalState(
        rho=rho,
        xi=xi,
        group_sizes=data.group_sizes.copy(),
        v_a=v_a,
        v_b=v_b,
        u_a=u_a,
        u_b=u_b,
        nw_x=nw_x,
        nw_y=nw_y,
        alpha_gamma=(hyper.a_alpha, hyper.b_alpha),
        beta_gamma=(hyper.a_beta, hyper.b_beta),
    )
    if config.init == "random-responsibility":
        ws = _Workspace(data, hyper)
        state.u_a, state.u_b = update_obs_sticks(state, hyper)
        state.v_a, state.v_b = update_group_sticks(state, hyper)
        if hyper.variant == NAM:
            state.nw_x = update_nw_x(state, data, hyper, ws)
        state.nw_y = update_nw_y(state, data, hyper, ws)
        state.alpha_gamma = update_alpha(state, hyper)
        state.beta_gamma = update_beta(state, hyper)
    return state


def fit(data, hyper, config=None, _seed_seq=None):
    """Run coordinate ascent to convergence from one random start.

    Returns a FitResult. Non-convergence within max_iter is reported via
    converged=False; numerical breakdown raises NumericalFault.
    """
    config = config if config is not None else CaviConfig()
    _check_inputs(data, hyper)
    ws = _Workspace(data, hyper)
    seed_seq = (
        _seed_seq
        if _seed_seq is not None
        else np.random.SeedSequence(config.seed)
    )
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    state = initial_state(data, hyper, config, rng)

    xisums = _xi_group_sums(state.xi, ws.offsets)
    trace = []
    step_trace = [] if config.per_step_elbo else None
    max_gc = int(state.rho.argmax(axis=1).max()) + 1
    max_oc = int(state.xi.argmax(axis=1).max()) + 1
    elbo_prev = None
    converged = False
    iterations = 0

    def debug_elbo(label):
        if step_trace is not None:
            step_trace.append((label, compute_elbo(state, data, hyper, ws)))

    for iterations in range(1, config.max_iter + 1):
        # Step 1 uses the xi sums of the current xi (kept across iterations)
        logits = _group_logits(state, data, hyper, ws, xisums=xisums)
        state.rho, ent_rho = _assignments_from_logits(logits)
        debug_elbo("group_assignments")

        logits = _obs_logits(state, data, hyper, ws)
        state.xi, ent_xi = _assignments_from_logits(logits)
        xisums = _xi_group_sums(state.xi, ws.offsets)
        debug_elbo("obs_assignments")

        state.u_a, state.u_b = _obs_sticks_core(
            state.rho, xisums, state.beta_gamma
        )
        debug_elbo("obs_sticks")
        state.v_a, state.v_b = update_group_sticks(state, hyper)
        debug_elbo("group_sticks")

        stats = {"xisums": xisums, "ent_rho": ent_rho, "ent_xi": ent_xi}
        if hyper.variant == NAM:
            state.nw_x, stats["x"] = _update_nw_x_with_stats(
                state, data, hyper, ws
            )
            debug_elbo("nw_x")
        state.nw_y, stats["y"] = _update_nw_y_with_stats(
            state, data, hyper, ws
        )
        debug_elbo("nw_y")

        state.alpha_gamma = update_alpha(state, hyper)
        debug_elbo("alpha")
        state.beta_gamma = update_beta(state, hyper)
        debug_elbo("beta")

        elbo = compute_elbo(state, data, hyper, ws, _stats=stats)
        if not np.isfinite(elbo):
            raise NumericalFault(
                f"ELBO became non-finite at iteration {iterations}"
            )
        trace.append(elbo)
        max_gc = max(max_gc, int(state.rho.argmax(axis=1).max()) + 1)
        max_oc = max(max_oc, int(state.xi.argmax(axis=1).max()) + 1)

        if elbo_prev is not None:
            delta = abs(elbo - elbo_prev)
            if delta < config.tol:
                converged = True
            elif config.rel_tol is not None and delta < config.rel_tol * abs(
                elbo
            ):
                converged = True
        elbo_prev = elbo
        if converged:
            break

    s_hat, m_hat = extract_assignments(state)
    return FitResult(
        elbo_trace=np.asarray(trace),
        converged=converged,
        iterations=iterations,
        S_hat=s_hat,
        M_hat=m_hat,
        n_gc=int(np.unique(s_hat).size),
        n_oc=int(np.unique(np.concatenate(m_hat)).size),
        final_state=state,
        max_gc_index=max_gc,
        max_oc_index=max_oc,
        step_elbo_trace=step_trace,
    )


@dataclass
class RestartSummary:
    """Outcome of a multi-restart run: the winning fit plus per-restart
    bookkeeping (final ELBOs, convergence flags, iteration counts, wall
    times, error strings for restarts that failed numerically)."""

    best: FitResult
    best_index: int
    final_elbos: list
    converged: list
    iterations: list
    wall_times: list
    errors: list
    n_restarts: int


def _restart_task(args):
    data, hyper, config, index = args
    seq = np.random.SeedSequence(config.seed, spawn_key=(index,))
    start = time.perf_counter()
    try:
        result = fit(data, hyper, config, _seed_seq=seq)
        return index, result, time.perf_counter() - start, None
    except NumericalFault as err:
        return index, None, time.perf_counter() - start, str(err)


def fit_restarts(data, hyper, config=None, n_restarts=50, n_workers=1):
    """Run n_restarts independently seeded fits and keep the best bound.

    Restart r always uses the seed stream derived from (config.seed, r), so
    results are identical whether restarts run serially or in a process
    pool. Ties in the final ELBO break toward the lowest restart index.
    """
    config = config if config is not None else CaviConfig()
    if n_restarts < 1:
        raise ConfigError("need at least one restart")
    tasks = [(data, hyper, config, r) for r in range(n_restarts)]
    outcomes = [None] * n_restarts
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for index, result, wall, err in pool.map(_restart_task, tasks):
                outcomes[index] = (result, wall, err)
    else:
        for task in tasks:
            index, result, wall, err = _restart_task(task)
            outcomes[index] = (result, wall, err)

    final_elbos = [
        (res.elbo if res is not None else -np.inf) for res, _, _ in outcomes
    ]
    errors = [err for _, _, err in outcomes]
    if all(res is None for res, _, _ in outcomes):
        raise NumericalFault(
            "every restart failed numerically: " + "; ".join(
                e for e in errors if e
            )
        )
    best_index = int(np.argmax(final_elbos))
    best = outcomes[best_index][0]
    return RestartSummary(
        best=best,
        best_index=best_index,
        final_elbos=final_elbos,
        converged=[
            (res.converged if res is not None else False)
            for res, _, _ in outcomes
        ],
        iterations=[
            (res.iterations if res is not None else 0)
            for res, _, _ in outcomes
        ],
        wall_times=[wall for _, wall, _ in outcomes],
        errors=errors,
        n_restarts=n_restarts,
    )
