"""Variational-Laplace fitting: energy maximization and free energy.

The posterior mean is obtained by maximizing the variational energy with
regularized Gauss-Newton steps (Levenberg-style damping, backtracking on the
energy value), the posterior covariance is the inverse negative Hessian at
the mode, and the Laplace free energy is

    F = I(mu) + 0.5 * log|Sigma| + (n_theta / 2) * log(2 pi).

Mid-trajectory free energies use the same expression with the covariance
formed from the current Hessian, which coincides with the quadratic
expansion of the expected energy around the current iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .energy import LOG_2PI, EnergyEvaluation, EnergyFunction, energy_function
from .errors import DataDomainError, NumericalError
from .linalg import spd_inverse, spd_logdet
from .model import GaussianFamily, GenerativeModel, validate_model

# Levenberg damping schedule: tau starts at zero (pure Gauss-Newton); each
# rejected step sets tau <- max(TAU_MIN, 10 tau), each accepted step relaxes
# tau <- tau / 10.  A step is rejected when the energy decreases or turns
# non-finite.
TAU_MIN = 1e-6
MAX_STEP_RETRIES = 12

DEFAULT_GRAD_TOL = 1e-6
DEFAULT_FE_TOL = 1e-6
DEFAULT_MAX_ITER = 256
DEFAULT_MAX_SWEEPS = 128


@dataclass(frozen=True)
class GaussianPosterior:
    """First two moments of the Gaussian approximate posterior."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class FitOptions:
    """Tuning knobs for :func:`fit` (all exposed on the command line).

    ``init`` is the starting point of the energy maximization; ``None``
    means the prior mean.  ``fe_tol`` doubles as the free-energy plateau
    tolerance of the hierarchical sweep loop.
    """

    max_iter: int = DEFAULT_MAX_ITER
    grad_tol: float = DEFAULT_GRAD_TOL
    fe_tol: float = DEFAULT_FE_TOL
    init: np.ndarray | None = None
    max_sweeps: int = DEFAULT_MAX_SWEEPS


@dataclass
class FitReport:
    """Outcome of a fit: posterior, free energy, and diagnostics.

    ``free_energy_trajectory`` holds one value per outer iteration (per
    accepted Gauss-Newton step, or per hierarchical sweep) and is
    non-decreasing up to rounding.  ``corrected_free_energy`` is populated
    by hierarchical fits only.
    """

    posterior: GaussianPosterior
    free_energy: float
    free_energy_trajectory: list[float]
    corrected_free_energy: float | None
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)


@dataclass
class OptimizeResult:
    """Internal record of an energy maximization run."""

    theta: np.ndarray
    energy: EnergyEvaluation
    free_energy_trajectory: list[float]
    iterations: int
    converged: bool
    clamp_count: int
    rejected_steps: int


def _max_abs(v: np.ndarray) -> float:
    return float(np.max(np.abs(v), initial=0.0))


def _free_energy_from_factor(value: float, neg_hess_chol: np.ndarray,
                             n_theta: int) -> float:
    # 0.5 log|Sigma| = -0.5 log|-H| = -sum(log diag L)
    if neg_hess_chol.size == 0:
        return value
    return (value - float(np.sum(np.log(np.diag(neg_hess_chol))))
            + 0.5 * n_theta * LOG_2PI)


def maximize_variational_energy(
    energy: EnergyFunction,
    theta_init: np.ndarray,
    grad_tol: float = DEFAULT_GRAD_TOL,
    fe_tol: float = DEFAULT_FE_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> OptimizeResult:
    """Maximize the variational energy with damped Gauss-Newton steps.

    Convergence requires the scaled gradient norm
    ``max|grad| <= grad_tol * (1 + |I|)`` together with a free-energy
    plateau: either the last accepted step changed F by at most ``fe_tol``
    or the quadratic model predicts at most ``fe_tol`` further improvement
    (so a single exact Newton step on a quadratic energy converges
    immediately).

    Raises :class:`DataDomainError` if the initial energy is non-finite and
    :class:`NumericalError` if the damped curvature matrix stays
    non-positive-definite at the top of the damping ladder.
    """
    theta = np.atleast_1d(np.asarray(theta_init, dtype=float))
    ev = energy(theta)
    if not np.isfinite(ev.value):
        raise DataDomainError("variational energy is non-finite at the "
                              "initial parameters")
    n_theta = theta.size
    clamp_count = ev.clamp_count
    rejected = 0
    tau = 0.0
    chol = np.linalg.cholesky(-ev.hessian) if n_theta else np.zeros((0, 0))
    free_energy = _free_energy_from_factor(ev.value, chol, n_theta)
    trajectory = [free_energy]
    last_df: float | None = None
    iterations = 0
    converged = False

    for _ in range(max_iter):
        grad_ok = _max_abs(ev.gradient) <= grad_tol * (1.0 + abs(ev.value))
        if n_theta == 0:
            converged = True
            break
        half = np.linalg.solve(chol, ev.gradient)
        predicted_gain = 0.5 * float(half @ half)
        if grad_ok and (predicted_gain <= fe_tol
                        or (last_df is not None and abs(last_df) <= fe_tol)):
            converged = True
            break

        accepted = False
        for attempt in range(MAX_STEP_RETRIES + 1):
            damped = -ev.hessian + tau * np.eye(n_theta)
            try:
                step_chol = np.linalg.cholesky(damped)
            except np.linalg.LinAlgError:
                if attempt == MAX_STEP_RETRIES:
                    raise NumericalError(
                        "damped negative Hessian is not positive definite "
                        "at the top of the regularization ladder"
                    ) from None
                tau = max(TAU_MIN, 10.0 * tau)
                rejected += 1
                continue
            delta = np.linalg.solve(
                step_chol.T, np.linalg.solve(step_chol, ev.gradient))
            candidate = theta + delta
            try:
                ev_new = energy(candidate)
            except Exception:
                ev_new = None
            if (ev_new is not None and np.isfinite(ev_new.value)
                    and ev_new.value >= ev.value):
                accepted = True
                break
            if ev_new is not None:
                clamp_count += ev_new.clamp_count
            rejected += 1
            tau = max(TAU_MIN, 10.0 * tau)
        if not accepted:
            # The energy cannot be improved at machine precision; settle for
            # the gradient criterion.
            converged = grad_ok
            break

        tau /= 10.0
        theta = candidate
        ev = ev_new
        clamp_count += ev.clamp_count
        iterations += 1
        chol = np.linalg.cholesky(-ev.hessian)
        new_f = _free_energy_from_factor(ev.value, chol, n_theta)
        last_df = new_f - free_energy
        free_energy = new_f
        trajectory.append(free_energy)

    return OptimizeResult(
        theta=theta,
        energy=ev,
        free_energy_trajectory=trajectory,
        iterations=iterations,
        converged=converged,
        clamp_count=clamp_count,
        rejected_steps=rejected,
    )


def posterior_covariance(hessian: np.ndarray) -> np.ndarray:
    """Posterior covariance: symmetrized inverse of the negative Hessian.

    Inverted through Cholesky; rounding-induced near-singularity is repaired
    with escalating jitter, beyond which :class:`NumericalError` is raised.
    """
    return spd_inverse(-np.asarray(hessian, dtype=float), jitter=True)


def laplace_free_energy(value_at_mode: float, cov: np.ndarray,
                        n_theta: int) -> float:
    """Free energy of the Gaussian approximation at convergence.

    ``value_at_mode`` must be the energy at the converged mode; the
    expression is exact only there.
    """
    return (float(value_at_mode) + 0.5 * spd_logdet(cov, jitter=True)
            + 0.5 * n_theta * LOG_2PI)


def gaussian_free_energy_decomposition(
    model: GenerativeModel,
    data: np.ndarray,
    mu: np.ndarray,
    cov: np.ndarray,
    noise_precision: np.ndarray | None = None,
    prior_precision: np.ndarray | None = None,
) -> tuple[float, float]:
    """Split the Gaussian-family free energy into misfit and complexity.

    Returns the pair ``(data_misfit, complexity)`` of nonnegative-penalty
    terms with ``F = -data_misfit - complexity``:

        data_misfit = 0.5 (n_y log 2 pi + log|Q| + r' Qinv r)
        complexity  = 0.5 (e' S0inv e + log|S0| - log|Sigma|)

    with ``r = y - g(mu)`` and ``e = mu0 - mu``.
    """
    if not isinstance(model.family, GaussianFamily):
        raise DataDomainError("the free-energy decomposition applies to the "
                              "Gaussian family")
    y = np.atleast_1d(np.asarray(data, dtype=float))
    qinv = (np.asarray(noise_precision, dtype=float)
            if noise_precision is not None
            else model.family.noise_precision_basis)
    resid = y - model.mapping.evaluate(mu)
    misfit = 0.5 * (y.size * LOG_2PI - spd_logdet(qinv)
                    + float(resid @ qinv @ resid))
    eps = model.prior.mean - np.asarray(mu, dtype=float)
    if prior_precision is None:
        lam = spd_inverse(model.prior.cov)
        lam_logdet = -spd_logdet(model.prior.cov)
    else:
        lam = np.asarray(prior_precision, dtype=float)
        lam_logdet = spd_logdet(lam)
    complexity = 0.5 * (float(eps @ lam @ eps) - lam_logdet
                        - spd_logdet(cov, jitter=True))
    return misfit, complexity


def fit(model: GenerativeModel, data, options: FitOptions | None = None) -> FitReport:
    """Fit a generative model: validate, maximize the energy, score it.

    Deterministic given (model, data, options).  Models with hyperpriors are
    routed through the hierarchical sweep scheme, which also fills in the
    corrected free energy.  Non-convergence is reported in the result, not
    raised.
    """
    options = options or FitOptions()
    report = validate_model(model, data)
    if not report.ok:
        raise DataDomainError("; ".join(report.violations))

    if model.has_hyperpriors:
        from .hyperparams import vb_fit

        return vb_fit(model, data, options).report

    theta0 = (np.asarray(options.init, dtype=float)
              if options.init is not None else model.prior.mean)
    energy = energy_function(model, data)
    result = maximize_variational_energy(
        energy, theta0,
        grad_tol=options.grad_tol,
        fe_tol=options.fe_tol,
        max_iter=options.max_iter,
    )
    cov = posterior_covariance(result.energy.hessian)
    free_energy = laplace_free_energy(result.energy.value, cov, model.n_theta)

    if isinstance(model.family, GaussianFamily):
        misfit, complexity = gaussian_free_energy_decomposition(
            model, data, result.theta, cov)
        assert abs(free_energy + misfit + complexity) <= 1e-8 * (
            1.0 + abs(free_energy)), "free-energy decomposition mismatch"

    return FitReport(
        posterior=GaussianPosterior(mean=result.theta, cov=cov),
        free_energy=free_energy,
        free_energy_trajectory=result.free_energy_trajectory,
        corrected_free_energy=None,
        iterations=result.iterations,
        converged=result.converged,
        diagnostics={
            "clamp_count": result.clamp_count,
            "rejected_steps": result.rejected_steps,
        },
    )
