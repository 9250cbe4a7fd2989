"""Learnable Gaussian mixture prior over the shared network weights.

The prior is factorized: log p(w) = sum_i log sum_j pi_j N(w_i | mu_j, var_j),
with component 0 acting as the zero spike. Its mean is pinned at exactly 0,
and weights whose posterior mass lands on it are pruned later. Component
count is written J+1 in comments below: J free components plus the spike.

Parameterization keeps everything unconstrained for gradient training:
variances as log_vars (rho = log var) and mixing proportions through
softmax logits. Two mixing modes exist:

* fixed zero mass (default): pi_0 is a constant; the J free components
  share the remaining mass through a softmax over logits[1:]. logits[0]
  is ignored and receives zero gradient.
* trainable zero mass: one softmax over all J+1 logits; a Beta hyper-prior
  on the resulting pi_0 can keep it near a target mode.

Gamma hyper-priors act on component precisions lambda = 1/var = exp(-rho);
they discourage variance collapse during retraining (a hard clamp in the
trainer is the backstop).

Gradient conventions (ascent direction, i.e. gradients of the log density):
    d log p / d w_i    = sum_j r_ij (mu_j - w_i) / var_j
    d log p / d mu_j   = sum_i r_ij (w_i - mu_j) / var_j
    d log p / d rho_j  = sum_i r_ij ((w_i - mu_j)^2 / var_j - 1) / 2
    d log p / d l_k    = sum_i (r_ik - pi-term), see _mixture_grads
where r_ij is the responsibility of component j for weight i.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, NumericError

LOG_2PI = math.log(2.0 * math.pi)

# Widening applied to a degenerate (min == max) pre-trained weight range.
DEGENERATE_RANGE_PAD = 1e-2


@dataclass
class MixtureModel:
    """J+1 Gaussian components; index 0 is the zero spike (mean fixed at 0)."""

    means: np.ndarray      # (J+1,), means[0] == 0.0 always
    log_vars: np.ndarray   # (J+1,)
    logits: np.ndarray     # (J+1,); slot 0 participates only when pi0_trainable
    pi0: float             # zero-spike mass when fixed; informational otherwise
    pi0_trainable: bool = False
    tau: float = 5e-3      # complexity-loss weight used during retraining

    def __post_init__(self):
        self.means = np.ascontiguousarray(self.means, dtype=np.float64)
        self.log_vars = np.ascontiguousarray(self.log_vars, dtype=np.float64)
        self.logits = np.ascontiguousarray(self.logits, dtype=np.float64)
        self.validate()

    def validate(self):
        k = self.means.shape[0]
        if k < 2:
            raise ConfigurationError("mixture needs the zero spike plus >= 1 component")
        if self.log_vars.shape != (k,) or self.logits.shape != (k,):
            raise ConfigurationError("mixture parameter arrays disagree on length")
        if self.means[0] != 0.0:
            raise ConfigurationError("zero-spike mean must be exactly 0")
        if not self.pi0_trainable and not 0.0 < self.pi0 < 1.0:
            raise ConfigurationError(f"pi0 must lie in (0, 1), got {self.pi0}")

    @property
    def n_components(self) -> int:
        """Total component count including the zero spike (J+1)."""
        return self.means.shape[0]

    @property
    def n_free(self) -> int:
        """J, the number of components besides the zero spike."""
        return self.means.shape[0] - 1

    def variances(self) -> np.ndarray:
        return np.exp(self.log_vars)

    def mixing_proportions(self) -> np.ndarray:
        """Mixing vector (pi_0, pi_1, ..., pi_J); sums to 1."""
        if self.pi0_trainable:
            return _softmax(self.logits)
        pi = np.empty_like(self.logits)
        pi[0] = self.pi0
        pi[1:] = (1.0 - self.pi0) * _softmax(self.logits[1:])
        return pi

    def copy(self) -> "MixtureModel":
        return MixtureModel(
            self.means.copy(), self.log_vars.copy(), self.logits.copy(),
            self.pi0, self.pi0_trainable, self.tau,
        )


@dataclass
class HyperPriorConfig:
    """Hyper-prior settings; a None entry disables that hyper-prior.

    gamma_zero / gamma_rest: (alpha, beta) of a Gamma density on the
    precision of the zero spike / of every free component.
    beta_pi0: (alpha, beta) of a Beta density on pi_0 (only meaningful when
    pi_0 is trainable; with fixed pi_0 it contributes a constant).
    """

    gamma_zero: Optional[tuple[float, float]] = None
    gamma_rest: Optional[tuple[float, float]] = None
    beta_pi0: Optional[tuple[float, float]] = None

    def __post_init__(self):
        for name in ("gamma_zero", "gamma_rest", "beta_pi0"):
            ab = getattr(self, name)
            if ab is None:
                continue
            alpha, beta = float(ab[0]), float(ab[1])
            if alpha <= 1.0 or beta <= 0.0:
                # alpha > 1 so the density has an interior mode.
                raise ConfigurationError(
                    f"{name} needs alpha > 1 and beta > 0, got ({alpha}, {beta})"
                )
            setattr(self, name, (alpha, beta))

    @property
    def any_enabled(self) -> bool:
        return any(x is not None for x in (self.gamma_zero, self.gamma_rest, self.beta_pi0))


@dataclass
class PriorGrads:
    """Gradients of the log joint density (mixture plus enabled hyper-priors).

    Slot 0 of the component arrays belongs to the zero spike: d_means[0] is
    always 0, and d_logits[0] is the zero-mass logit gradient (0 when pi_0
    is fixed).
    """

    d_weights: np.ndarray   # (I,)
    d_means: np.ndarray     # (J+1,)
    d_log_vars: np.ndarray  # (J+1,)
    d_logits: np.ndarray    # (J+1,)


def gamma_params_from_mode_var(mode: float, var: float) -> tuple[float, float]:
    """Gamma (alpha, beta) with the given mode (alpha-1)/beta and variance alpha/beta^2."""
    if mode <= 0 or var <= 0:
        raise ConfigurationError("gamma mode and variance must be positive")
    beta = (mode + math.sqrt(mode * mode + 4.0 * var)) / (2.0 * var)
    return 1.0 + mode * beta, beta


def beta_params_from_mode_pseudocount(mode: float, pseudocount: float) -> tuple[float, float]:
    """Beta (alpha, beta) with mode (alpha-1)/(alpha+beta-2) and alpha+beta = pseudocount."""
    if not 0.0 < mode < 1.0 or pseudocount <= 2.0:
        raise ConfigurationError("beta mode must be in (0,1) and pseudocount > 2")
    alpha = mode * (pseudocount - 2.0) + 1.0
    return alpha, pseudocount - alpha


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def init_mixture(weights, n_free: int, pi0: float, weight_decay: float,
                 tau: float = 5e-3, pi0_trainable: bool = False) -> MixtureModel:
    """Mixture spanning the pre-trained weight range.

    Free means are evenly spaced over [min(w), max(w)] endpoints included
    (a single free component sits at the range start). Free components
    share the non-spike mass equally. The common initial variance follows
    the neighbor-overlap rule (range/J)^2 / 4, floored by the pre-training
    weight-decay rate so it never starts absurdly tight.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ConfigurationError("cannot initialize a mixture from zero weights")
    if n_free < 1:
        raise ConfigurationError("need at least one free component")
    if not 0.0 < pi0 < 1.0:
        raise ConfigurationError(f"pi0 must lie in (0, 1), got {pi0}")
    lo, hi = float(w.min()), float(w.max())
    if lo == hi:
        warnings.warn(
            "degenerate weight range; widening symmetrically by "
            f"{DEGENERATE_RANGE_PAD}", stacklevel=2,
        )
        lo -= DEGENERATE_RANGE_PAD
        hi += DEGENERATE_RANGE_PAD

    means = np.zeros(n_free + 1)
    means[1:] = np.linspace(lo, hi, n_free)

    var0 = max(((hi - lo) / n_free) ** 2 / 4.0, float(weight_decay))
    log_vars = np.full(n_free + 1, math.log(var0))

    logits = np.zeros(n_free + 1)
    if pi0_trainable:
        logits[0] = math.log(pi0)
        logits[1:] = math.log((1.0 - pi0) / n_free)
    return MixtureModel(means, log_vars, logits, pi0, pi0_trainable, tau)


def _log_joint_matrix(w: np.ndarray, m: MixtureModel) -> np.ndarray:
    """(I, J+1) matrix of log(pi_j N(w_i | mu_j, var_j))."""
    log_pi = np.log(m.mixing_proportions())
    inv_var = np.exp(-m.log_vars)
    d = w[:, None] - m.means[None, :]
    return (log_pi - 0.5 * (m.log_vars + LOG_2PI))[None, :] - 0.5 * (d * d) * inv_var[None, :]


def log_prior(w, m: MixtureModel) -> float:
    """log p(w) = sum_i log sum_j pi_j N(w_i | mu_j, var_j), via log-sum-exp."""
    w = np.asarray(w, dtype=np.float64).ravel()
    ll = _log_joint_matrix(w, m)
    mx = ll.max(axis=1)
    per_weight = mx + np.log(np.exp(ll - mx[:, None]).sum(axis=1))
    if not np.all(np.isfinite(per_weight)):
        bad = int(np.flatnonzero(~np.isfinite(per_weight))[0])
        raise NumericError(f"non-finite log prior at weight index {bad}")
    return float(per_weight.sum())


def responsibilities(w, m: MixtureModel) -> np.ndarray:
    """(I, J+1) posterior component probabilities per weight, rows sum to 1."""
    w = np.asarray(w, dtype=np.float64).ravel()
    ll = _log_joint_matrix(w, m)
    ll -= ll.max(axis=1, keepdims=True)
    np.exp(ll, out=ll)
    ll /= ll.sum(axis=1, keepdims=True)
    return ll


def hyper_log_density(m: MixtureModel, h: HyperPriorConfig) -> float:
    """Sum of the enabled hyper-prior log densities at the current mixture state."""
    total = 0.0
    lam = np.exp(-m.log_vars)
    if h.gamma_zero is not None:
        total += _gamma_logpdf(lam[0], *h.gamma_zero)
    if h.gamma_rest is not None:
        total += sum(_gamma_logpdf(l, *h.gamma_rest) for l in lam[1:])
    if h.beta_pi0 is not None:
        pi0 = float(m.mixing_proportions()[0])
        if not 0.0 < pi0 < 1.0:
            raise NumericError(f"pi0 = {pi0} outside the Beta domain (0, 1)")
        total += _beta_logpdf(pi0, *h.beta_pi0)
    return float(total)


def _gamma_logpdf(lam: float, alpha: float, beta: float) -> float:
    if lam <= 0.0:
        raise NumericError(f"precision {lam} outside the Gamma domain")
    return alpha * math.log(beta) - math.lgamma(alpha) \
        + (alpha - 1.0) * math.log(lam) - beta * lam


def _beta_logpdf(x: float, alpha: float, beta: float) -> float:
    return math.lgamma(alpha + beta) - math.lgamma(alpha) - math.lgamma(beta) \
        + (alpha - 1.0) * math.log(x) + (beta - 1.0) * math.log1p(-x)


def hyper_grads(m: MixtureModel, h: HyperPriorConfig):
    """Gradients of the enabled hyper-prior log densities.

    Returns (d_log_vars, d_logits), both (J+1,). Gamma densities act through
    rho = log var (precision exp(-rho)); the Beta density acts through the
    mixing logits, and only when pi_0 is trainable.
    """
    k = m.n_components
    d_log_vars = np.zeros(k)
    d_logits = np.zeros(k)
    lam = np.exp(-m.log_vars)
    # d/d rho of (alpha-1) log lam - beta lam with lam = exp(-rho)
    if h.gamma_zero is not None:
        a, b = h.gamma_zero
        d_log_vars[0] = -(a - 1.0) + b * lam[0]
    if h.gamma_rest is not None:
        a, b = h.gamma_rest
        d_log_vars[1:] = -(a - 1.0) + b * lam[1:]
    if h.beta_pi0 is not None and m.pi0_trainable:
        pi = m.mixing_proportions()
        pi0 = float(pi[0])
        if not 0.0 < pi0 < 1.0:
            raise NumericError(f"pi0 = {pi0} outside the Beta domain (0, 1)")
        a, b = h.beta_pi0
        dlog_dpi0 = (a - 1.0) / pi0 - (b - 1.0) / (1.0 - pi0)
        # d pi0 / d logit_k = pi0 (delta_0k - pi_k)
        d_logits[:] = dlog_dpi0 * pi0 * (-pi)
        d_logits[0] += dlog_dpi0 * pi0
    return d_log_vars, d_logits


class PriorWorkspace:
    """Reusable scratch buffers for repeated gradient evaluations.

    Training calls prior_grads once per step with identical shapes; reusing
    the (I, J+1) temporaries keeps the allocator out of the hot loop.
    """

    def __init__(self):
        self._bufs = {}

    def get(self, name, shape):
        buf = self._bufs.get(name)
        if buf is None or buf.shape != shape:
            buf = np.empty(shape)
            self._bufs[name] = buf
        return buf


def _mixture_grads(w: np.ndarray, m: MixtureModel, work: PriorWorkspace):
    """Gradients of log p(w) w.r.t. weights and mixture parameters (no hyper terms)."""
    i, k = w.shape[0], m.n_components
    pi = m.mixing_proportions()
    inv_var = np.exp(-m.log_vars)
    const = np.log(pi) - 0.5 * (m.log_vars + LOG_2PI)

    d = work.get("d", (i, k))
    np.subtract(w[:, None], m.means[None, :], out=d)
    q = work.get("q", (i, k))
    np.multiply(d, d, out=q)
    q *= inv_var[None, :]
    # r starts as the log joint, becomes the responsibility matrix in place
    r = work.get("r", (i, k))
    np.multiply(q, -0.5, out=r)
    r += const[None, :]
    mx = r.max(axis=1)
    r -= mx[:, None]
    np.exp(r, out=r)
    rowsum = r.sum(axis=1)
    if not (np.all(np.isfinite(rowsum)) and np.all(rowsum > 0.0)):
        bad = int(np.flatnonzero(~(np.isfinite(rowsum) & (rowsum > 0.0)))[0])
        raise NumericError(f"non-finite prior density at weight index {bad}")
    r /= rowsum[:, None]

    log_prior_value = float(mx.sum() + np.log(rowsum).sum())

    col_r = r.sum(axis=0)
    # t = r * d * inv_var, folded into d
    d *= r
    d *= inv_var[None, :]
    d_weights = -d.sum(axis=1)
    d_means = d.sum(axis=0)
    d_means[0] = 0.0

    q *= r
    d_log_vars = 0.5 * (q.sum(axis=0) - col_r)

    d_logits = np.zeros(k)
    if m.pi0_trainable:
        d_logits[:] = col_r - i * pi
    else:
        s = _softmax(m.logits[1:])
        d_logits[1:] = col_r[1:] - s * (i - col_r[0])
    return PriorGrads(d_weights, d_means, d_log_vars, d_logits), log_prior_value


def prior_grads(w, m: MixtureModel, h: Optional[HyperPriorConfig] = None,
                work: Optional[PriorWorkspace] = None) -> PriorGrads:
    """Exact gradients of log p(w) plus any enabled hyper-prior densities.

    Fixed quantities get zero gradient: d_means[0] always, d_logits[0]
    when pi_0 is fixed.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    g, _ = _mixture_grads(w, m, work or PriorWorkspace())
    if h is not None and h.any_enabled:
        d_lv, d_lg = hyper_grads(m, h)
        g.d_log_vars += d_lv
        g.d_logits += d_lg
    return g


def subsampled_prior_grads(w, m: MixtureModel, h: Optional[HyperPriorConfig],
                           k: int, rng: np.random.Generator,
                           work: Optional[PriorWorkspace] = None) -> PriorGrads:
    """Unbiased estimate of prior_grads from k weights sampled without replacement.

    The sampled contribution is scaled by I/k; hyper-prior terms do not
    depend on the weights and enter exactly.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    total = w.shape[0]
    if not 1 <= k <= total:
        raise ConfigurationError(f"subsample size {k} outside [1, {total}]")
    if k == total:
        return prior_grads(w, m, h, work)
    idx = rng.choice(total, size=k, replace=False)
    g, _ = _mixture_grads(w[idx], m, work or PriorWorkspace())
    scale = total / k
    d_weights = np.zeros(total)
    d_weights[idx] = g.d_weights * scale
    g.d_weights = d_weights
    g.d_means = g.d_means * scale
    g.d_log_vars = g.d_log_vars * scale
    g.d_logits = g.d_logits * scale
    if h is not None and h.any_enabled:
        d_lv, d_lg = hyper_grads(m, h)
        g.d_log_vars += d_lv
        g.d_logits += d_lg
    return g
