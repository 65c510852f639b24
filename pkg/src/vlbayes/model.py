"""Generative-model data types, observation mappings, and validation.

A :class:`GenerativeModel` bundles an observation mapping ``g``, a Gaussian
prior on the parameters, a likelihood family (Gaussian, Bernoulli, binomial,
or multinomial), and optional Gamma hyperpriors on the noise and
parameter-prior precisions.  All types are immutable values: they can be
shared read-only across concurrent fit sessions, and every operation in this
module is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import EvaluationError
from .linalg import is_spd

FD_STEP = 1e-5  # base central-difference step, scaled per coordinate


def _as_vector(x, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {v.shape}")
    return v


def _as_matrix(x, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(x, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {m.shape}")
    return m


# --------------------------------------------------------------------------- #
# Observation mappings
# --------------------------------------------------------------------------- #


class ObservationMapping:
    """Deterministic mapping from parameters to predicted data moments.

    Subclasses implement :meth:`evaluate`; :meth:`jacobian` defaults to
    central finite differences.  Implementations must be re-entrant: the
    same instance may be evaluated concurrently from several fit sessions.

    Attributes:
        n_theta: parameter dimension.
        n_out: output dimension (one entry per predicted moment).
    """

    n_theta: int
    n_out: int

    def evaluate(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        return finite_difference_jacobian(self, theta)

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        return self.evaluate(theta)

    def _check_output(self, g: np.ndarray) -> np.ndarray:
        g = np.atleast_1d(np.asarray(g, dtype=float))
        if g.shape != (self.n_out,):
            raise EvaluationError(
                f"mapping returned shape {g.shape}, expected ({self.n_out},)"
            )
        bad = np.flatnonzero(~np.isfinite(g))
        if bad.size:
            raise EvaluationError(
                f"mapping returned a non-finite value at output index {bad[0]}",
                index=int(bad[0]),
            )
        return g


class CallableMapping(ObservationMapping):
    """Wrap plain callables as an observation mapping.

    ``jac`` is optional; when omitted the finite-difference fallback is used.
    """

    def __init__(
        self,
        fn: Callable[[np.ndarray], np.ndarray],
        n_theta: int,
        n_out: int,
        jac: Callable[[np.ndarray], np.ndarray] | None = None,
    ):
        self.fn = fn
        self.n_theta = int(n_theta)
        self.n_out = int(n_out)
        self.jac = jac

    def evaluate(self, theta):
        return self._check_output(self.fn(np.asarray(theta, dtype=float)))

    def jacobian(self, theta):
        if self.jac is None:
            return finite_difference_jacobian(self, theta)
        j = np.asarray(self.jac(np.asarray(theta, dtype=float)), dtype=float)
        if j.shape != (self.n_out, self.n_theta):
            raise EvaluationError(
                f"jacobian returned shape {j.shape}, expected "
                f"({self.n_out}, {self.n_theta})"
            )
        return j


class LinearMapping(ObservationMapping):
    """g(theta) = X theta for a fixed design matrix X."""

    def __init__(self, design: np.ndarray):
        self.design = _as_matrix(design, "design")
        self.n_out, self.n_theta = self.design.shape

    def evaluate(self, theta):
        return self._check_output(self.design @ np.asarray(theta, dtype=float))

    def jacobian(self, theta):
        return self.design.copy()


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class SigmoidLinearMapping(ObservationMapping):
    """g_i(theta) = 1 / (1 + exp(-A_i' theta + b_i)).

    The rows of ``weights`` are the vectors A_i; ``offsets`` holds the
    scalars b_i.  This is the logistic-regression mapping, for which the
    energy Hessian is available exactly (no first-order truncation).
    """

    def __init__(self, weights: np.ndarray, offsets: np.ndarray | float = 0.0):
        self.weights = _as_matrix(weights, "weights")
        self.n_out, self.n_theta = self.weights.shape
        off = np.asarray(offsets, dtype=float)
        if off.ndim == 0:
            off = np.full(self.n_out, float(off))
        self.offsets = _as_vector(off, "offsets")
        if self.offsets.shape != (self.n_out,):
            raise ValueError("offsets length must match the number of rows of weights")

    def linear_predictor(self, theta: np.ndarray) -> np.ndarray:
        return self.weights @ np.asarray(theta, dtype=float) - self.offsets

    def evaluate(self, theta):
        return self._check_output(sigmoid(self.linear_predictor(theta)))

    def jacobian(self, theta):
        g = self.evaluate(theta)
        return (g * (1.0 - g))[:, None] * self.weights


class SoftmaxLinearMapping(ObservationMapping):
    """Row-blocked softmax of linear scores, for multinomial observations.

    Scores are ``s = weights @ theta + offsets`` with one row per
    (observation, outcome) pair, laid out row-major: the block
    ``s[i*m:(i+1)*m]`` holds the m outcome scores of observation i.  Each
    block is mapped through a softmax, so the per-observation outcome
    frequencies sum to one by construction.
    """

    def __init__(self, weights: np.ndarray, n_outcomes: int,
                 offsets: np.ndarray | float = 0.0):
        self.weights = _as_matrix(weights, "weights")
        self.n_out, self.n_theta = self.weights.shape
        self.n_outcomes = int(n_outcomes)
        if self.n_outcomes < 2:
            raise ValueError("softmax mapping needs at least 2 outcomes")
        if self.n_out % self.n_outcomes != 0:
            raise ValueError(
                "number of rows of weights must be a multiple of n_outcomes"
            )
        off = np.asarray(offsets, dtype=float)
        if off.ndim == 0:
            off = np.full(self.n_out, float(off))
        self.offsets = _as_vector(off, "offsets")
        if self.offsets.shape != (self.n_out,):
            raise ValueError("offsets length must match the number of rows of weights")

    @property
    def n_observations(self) -> int:
        return self.n_out // self.n_outcomes

    def evaluate(self, theta):
        s = self.weights @ np.asarray(theta, dtype=float) + self.offsets
        blocks = s.reshape(self.n_observations, self.n_outcomes)
        blocks = blocks - blocks.max(axis=1, keepdims=True)
        e = np.exp(blocks)
        g = e / e.sum(axis=1, keepdims=True)
        return self._check_output(g.reshape(-1))

    def jacobian(self, theta):
        g = self.evaluate(theta).reshape(self.n_observations, self.n_outcomes)
        a = self.weights.reshape(self.n_observations, self.n_outcomes, self.n_theta)
        # d g_ij / d theta = g_ij (a_ij - sum_l g_il a_il)
        mean_a = np.einsum("il,ilk->ik", g, a)
        jac = g[:, :, None] * (a - mean_a[:, None, :])
        return jac.reshape(self.n_out, self.n_theta)


def finite_difference_jacobian(
    mapping: ObservationMapping,
    theta: np.ndarray,
    step: float | None = None,
) -> np.ndarray:
    """Central-difference Jacobian of an observation mapping.

    Column j is ``(g(theta + h e_j) - g(theta - h e_j)) / (2 h)``.  When
    ``step`` is omitted, ``h = 1e-5 * (1 + |theta_j|)`` per coordinate, which
    balances truncation against rounding in double precision.  Non-finite
    mapping output raises :class:`EvaluationError` with the offending index.
    """
    theta = _as_vector(theta, "theta")
    if theta.shape != (mapping.n_theta,):
        raise ValueError(
            f"theta has length {theta.size}, mapping expects {mapping.n_theta}"
        )
    jac = np.empty((mapping.n_out, mapping.n_theta))
    for j in range(mapping.n_theta):
        h = step if step is not None else FD_STEP * (1.0 + abs(theta[j]))
        if h <= 0.0:
            raise ValueError("finite-difference step must be positive")
        plus = theta.copy()
        minus = theta.copy()
        plus[j] += h
        minus[j] -= h
        jac[:, j] = (mapping.evaluate(plus) - mapping.evaluate(minus)) / (2.0 * h)
    return jac


# --------------------------------------------------------------------------- #
# Priors, hyperpriors, likelihood families
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class GaussianPrior:
    """Gaussian prior N(mean, cov) on model parameters.

    The covariance must be symmetric positive definite; this is checked by
    :func:`validate_model` rather than at construction so that invalid specs
    can be reported instead of raising.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _as_vector(self.mean, "prior mean"))
        object.__setattr__(self, "cov", _as_matrix(self.cov, "prior cov"))
        n = self.mean.size
        if self.cov.shape != (n, n):
            raise ValueError(
                f"prior cov shape {self.cov.shape} does not match mean length {n}"
            )

    @property
    def n_theta(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class GammaHyperprior:
    """Gamma(shape0, rate0) prior on a scalar precision multiplier.

    The pair (0, 0) is admitted and denotes the noninformative Jeffreys
    scale prior p(lambda) ~ 1/lambda.  Posterior updates remain proper for
    any nonnegative pair once data are present, but Kullback-Leibler terms
    against an improper prior are undefined (see the free-energy correction).
    """

    shape0: float
    rate0: float

    def __post_init__(self):
        if self.shape0 < 0 or self.rate0 < 0:
            raise ValueError("Gamma hyperprior parameters must be nonnegative")

    @property
    def is_jeffreys(self) -> bool:
        return self.shape0 == 0.0 and self.rate0 == 0.0

    @property
    def is_proper(self) -> bool:
        return self.shape0 > 0.0 and self.rate0 > 0.0

    @property
    def mean(self) -> float:
        """Prior precision mean a0/b0; 1.0 for improper priors."""
        if not self.is_proper:
            return 1.0
        return self.shape0 / self.rate0


@dataclass(frozen=True)
class GaussianFamily:
    """Continuous observations y = g(theta) + noise.

    ``noise_precision_basis`` is the fixed SPD precision component Phi_y.
    With ``fixed_precision=True`` the noise precision is Phi_y itself;
    otherwise it is lambda_y * Phi_y with lambda_y inferred through a noise
    hyperprior.
    """

    noise_precision_basis: np.ndarray
    fixed_precision: bool = True

    def __post_init__(self):
        object.__setattr__(
            self,
            "noise_precision_basis",
            _as_matrix(self.noise_precision_basis, "noise precision basis"),
        )

    @property
    def n_y(self) -> int:
        return self.noise_precision_basis.shape[0]


@dataclass(frozen=True)
class BernoulliFamily:
    """Binary observations with success probabilities g_i(theta).

    Carries no parameters of its own; the number of observations is the
    output length of the observation mapping.
    """


@dataclass(frozen=True)
class BinomialFamily:
    """Counts of successes out of ``trials[i]`` repetitions per observation."""

    trials: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.trials))
        object.__setattr__(self, "trials", t)

    @property
    def n_y(self) -> int:
        return self.trials.size


@dataclass(frozen=True)
class MultinomialFamily:
    """Per-observation outcome counts over ``n_outcomes`` categories.

    Data rows must sum to the trial count: sum_j y_ij = trials[i].
    """

    trials: np.ndarray
    n_outcomes: int

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.trials))
        object.__setattr__(self, "trials", t)

    @property
    def n_y(self) -> int:
        return self.trials.size


LikelihoodFamily = Union[GaussianFamily, BernoulliFamily, BinomialFamily,
                         MultinomialFamily]


@dataclass(frozen=True)
class GenerativeModel:
    """Likelihood family + observation mapping + Gaussian parameter prior.

    Optional Gamma hyperpriors place the model in the hierarchical regime:
    ``noise_hyperprior`` scales the noise precision (Gaussian family only),
    ``param_precision_hyperprior`` scales the parameter-prior precision for
    any family.  ``param_precision_basis`` is the fixed SPD component
    Phi_theta; when omitted it defaults to the inverse prior covariance.

    Exactly one precision basis per variable set is supported; multi-basis
    covariance expansions are out of scope and rejected at validation.
    """

    mapping: ObservationMapping
    prior: GaussianPrior
    family: LikelihoodFamily
    noise_hyperprior: GammaHyperprior | None = None
    param_precision_hyperprior: GammaHyperprior | None = None
    param_precision_basis: np.ndarray | None = None

    def __post_init__(self):
        if self.param_precision_basis is not None:
            object.__setattr__(
                self,
                "param_precision_basis",
                _as_matrix(self.param_precision_basis, "param precision basis"),
            )

    @property
    def n_theta(self) -> int:
        return self.prior.n_theta

    @property
    def n_y(self) -> int:
        if isinstance(self.family, BernoulliFamily):
            return self.mapping.n_out
        return self.family.n_y

    @property
    def expected_n_out(self) -> int:
        if isinstance(self.family, MultinomialFamily):
            return self.family.n_y * self.family.n_outcomes
        return self.n_y

    @property
    def has_hyperpriors(self) -> bool:
        return (self.noise_hyperprior is not None
                or self.param_precision_hyperprior is not None)


# --------------------------------------------------------------------------- #
# Validation
# --------------------------------------------------------------------------- #

PROB_SUM_TOL = 1e-10  # multinomial mapping rows must sum to 1 at the prior mean


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate_model`: a list of violated invariants."""

    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __iter__(self):
        return iter(self.violations)

    def __bool__(self) -> bool:
        return self.ok


def _coerce_data(model: GenerativeModel, data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if isinstance(model.family, MultinomialFamily):
        return np.atleast_2d(data)
    return np.atleast_1d(np.squeeze(data))


def validate_model(model: GenerativeModel, data) -> ValidationReport:
    """Check every model/data invariant and report the violations.

    Pure and report-style: identical inputs give identical reports, and
    callers decide whether a non-empty report is fatal.
    """
    v: list[str] = []
    prior = model.prior
    mapping = model.mapping
    family = model.family

    if mapping.n_theta != prior.n_theta:
        v.append(
            f"mapping expects {mapping.n_theta} parameters but the prior "
            f"has {prior.n_theta}"
        )
    if not is_spd(prior.cov):
        v.append("prior covariance not PD")

    if mapping.n_out != model.expected_n_out:
        v.append(
            f"mapping output length {mapping.n_out} does not match the "
            f"family requirement {model.expected_n_out}"
        )

    data = _coerce_data(model, data)
    if not np.all(np.isfinite(data)):
        v.append("data contains non-finite values")

    if isinstance(family, GaussianFamily):
        phi = family.noise_precision_basis
        if not is_spd(phi):
            v.append("noise precision basis not symmetric positive definite")
        if data.ndim != 1 or data.size != family.n_y:
            v.append(
                f"Gaussian data must be a length-{family.n_y} vector, "
                f"got shape {data.shape}"
            )
        if family.fixed_precision and model.noise_hyperprior is not None:
            v.append(
                "fixed-precision Gaussian family cannot carry a noise hyperprior"
            )
        if not family.fixed_precision and model.noise_hyperprior is None:
            v.append(
                "non-fixed noise precision requires a noise hyperprior"
            )
    elif isinstance(family, BernoulliFamily):
        if data.ndim != 1 or data.size != mapping.n_out:
            v.append(
                f"Bernoulli data must be a length-{mapping.n_out} vector, "
                f"got shape {data.shape}"
            )
        elif not np.all(np.isin(data, (0.0, 1.0))):
            v.append("Bernoulli data must lie in {0, 1}")
    elif isinstance(family, BinomialFamily):
        k = family.trials
        if np.any(k < 1) or np.any(k != np.round(k)):
            v.append("binomial trial counts must be integers >= 1")
        if data.ndim != 1 or data.size != family.n_y:
            v.append(
                f"binomial data must be a length-{family.n_y} vector, "
                f"got shape {data.shape}"
            )
        else:
            if np.any(data != np.round(data)):
                v.append("binomial data must be integer counts")
            if np.any(data < 0) or np.any(data > k):
                v.append("binomial data must satisfy 0 <= y_i <= trials_i")
    elif isinstance(family, MultinomialFamily):
        k = family.trials
        m = family.n_outcomes
        if m < 2:
            v.append("multinomial outcome count must be at least 2")
        if np.any(k < 1) or np.any(k != np.round(k)):
            v.append("multinomial trial counts must be integers >= 1")
        if data.shape != (family.n_y, m):
            v.append(
                f"multinomial data must have shape ({family.n_y}, {m}), "
                f"got {data.shape}"
            )
        else:
            if np.any(data != np.round(data)) or np.any(data < 0):
                v.append("multinomial data must be nonnegative integer counts")
            sums = data.sum(axis=1)
            bad = np.flatnonzero(sums != k)
            for i in bad[:5]:
                v.append(
                    f"multinomial support violated at row {i}: counts sum to "
                    f"{sums[i]:g}, expected the trial count {k[i]:g} "
                    "(the likelihood is zero otherwise)"
                )
        # Outcome frequencies must be a probability vector per observation.
        if mapping.n_out == model.expected_n_out and mapping.n_theta == prior.n_theta:
            try:
                g = mapping.evaluate(prior.mean).reshape(family.n_y, m)
            except EvaluationError as exc:
                v.append(f"mapping failed at the prior mean: {exc}")
            else:
                worst = float(np.max(np.abs(g.sum(axis=1) - 1.0))) if g.size else 0.0
                if worst > PROB_SUM_TOL:
                    v.append(
                        "multinomial outcome frequencies must sum to 1 per "
                        f"observation at the prior mean (max deviation {worst:.2e})"
                    )
    else:
        v.append(f"unknown likelihood family {type(family).__name__}")

    if model.noise_hyperprior is not None and not isinstance(family, GaussianFamily):
        v.append("noise hyperprior is only admitted for the Gaussian family")
    if model.param_precision_basis is not None:
        basis = model.param_precision_basis
        if basis.shape != (prior.n_theta, prior.n_theta):
            v.append(
                f"param precision basis must be {prior.n_theta} x "
                f"{prior.n_theta}, got {basis.shape}"
            )
        elif not is_spd(basis):
            v.append("param precision basis not symmetric positive definite")
        if model.param_precision_hyperprior is None:
            v.append(
                "param precision basis given without a parameter hyperprior"
            )

    return ValidationReport(v)
