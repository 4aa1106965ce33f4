"""Downlink precoder design from feedback indices.

Two designers are provided. Regularized channel inversion (RCI) turns one
channel representative per user into a jointly regularized inverse, scaled
by a single common factor to meet the power budget. The stochastic WMMSE
designer never sees a representative: it redraws one channel sample per user
and iteration from the reported mixture component and averages the weighted
MMSE statistics over iterations, so the precoders optimize the expected
sum-rate under the component distributions.

Rates everywhere use the bilinear pairing ``h^T v``; designers therefore
consume conjugated representatives internally so that a representative equal
to the true channel direction yields the maximal beamforming gain.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .gmm import _component_sqrt

logger = logging.getLogger(__name__)

_POWER_SLACK = 1e-6
_EIGEN_GAP_TIE = 1e-10
_WEIGHT_CLAMP = 1e6


@dataclass
class SwmmseOptions:
    """Stochastic WMMSE knobs; the step size is gamma_t = t^-step_exponent."""

    max_iters: int = 300
    step_exponent: float = 1.0
    power_tol: float = 1e-9
    seed: int = 0
    averaging_window: int | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0.5 < self.step_exponent <= 1.0:
            raise ValueError("step_exponent should lie in (0.5, 1]")
        if self.power_tol <= 0:
            raise ValueError("power_tol must be > 0")


class PrecoderSet:
    """J precoding vectors under a total power budget, plus designer metadata."""

    def __init__(self, vectors, rho, designer, metadata=None):
        vectors = np.asarray(vectors, dtype=np.complex128)
        if vectors.ndim != 2:
            raise ValueError("precoders must form a (J, N) matrix")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("precoders must be finite")
        power = float(np.sum(np.abs(vectors) ** 2))
        if power > rho + _POWER_SLACK:
            raise ValueError(f"power constraint violated: {power} > {rho}")
        self.vectors = vectors
        self.rho = float(rho)
        self.designer = designer
        self.metadata = metadata or {}

    @property
    def n_users(self):
        return self.vectors.shape[0]

    @property
    def power(self):
        return float(np.sum(np.abs(self.vectors) ** 2))


def directional_representative(model, k):
    """Unit dominant eigenvector of the component correlation matrix.

    The correlation matrix of component k (1-based) is ``C_k + mu_k mu_k^H``.
    The global phase is fixed by making the largest-magnitude entry real
    positive. Near-degenerate top eigenvalues are logged; any maximizer is
    returned in that case. Representatives for all components can be
    precomputed offline, see :func:`directional_representatives`.
    """
    if not 1 <= k <= model.n_components:
        raise ValueError(f"component index {k} outside 1..{model.n_components}")
    mean = model.means[k - 1]
    corr = model.covariances[k - 1] + np.outer(mean, mean.conj())
    eigvals, eigvecs = np.linalg.eigh(corr)
    if model.dim > 1 and eigvals[-1] - eigvals[-2] < _EIGEN_GAP_TIE:
        logger.warning("component %d has a near-degenerate dominant eigenvalue", k)
    vec = eigvecs[:, -1]
    pivot = np.argmax(np.abs(vec))
    phase = vec[pivot] / abs(vec[pivot])
    vec = vec * phase.conj()
    return vec / np.linalg.norm(vec)


def directional_representatives(model):
    """(K, N) matrix of all directional representatives (offline phase)."""
    return np.vstack([directional_representative(model, k + 1)
                      for k in range(model.n_components)])


def rci_precoders(representatives, sigma_n2, rho):
    """Regularized channel inversion from per-user channel representatives.

    Solves ``(sum_m conj(h~_m) h~_m^T + (J sigma_n2 / rho) I) u_j = conj(h~_j)``
    and scales all columns by one common factor so the total power equals
    rho exactly (per-user rescaling would destroy the RCI directions).
    Representatives are normalized to unit norm first; both feedback routes
    hand over unit-norm vectors, and a fixed regularizer is only meaningful
    on that scale.
    """
    reps = np.asarray(representatives, dtype=np.complex128)
    if reps.ndim != 2 or reps.shape[0] < 1:
        raise ValueError("need a (J, N) matrix of representatives")
    norms = np.linalg.norm(reps, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("representatives must be nonzero")
    reps = reps / norms[:, None]
    n_users = reps.shape[0]
    regularizer = n_users * sigma_n2 / rho
    gram = reps.conj().T @ reps + regularizer * np.eye(reps.shape[1])
    rhs = reps.conj().T
    flagged = False
    try:
        unnormalized = np.linalg.solve(gram, rhs)
        residual = np.linalg.norm(gram @ unnormalized - rhs)
        if not np.all(np.isfinite(unnormalized)) or residual > 1e-8 * n_users:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        flagged = True
        logger.warning("singular RCI system; adding diagonal ridge")
        gram = gram + 1e-12 * n_users * np.eye(reps.shape[1])
        unnormalized = np.linalg.solve(gram, rhs)
    total = np.sum(np.abs(unnormalized) ** 2)
    beta = np.sqrt(rho / total)
    vectors = (beta * unnormalized).T
    return PrecoderSet(vectors, rho, "rci",
                       metadata={"regularizer": regularizer, "beta": beta,
                                 "ridged": flagged})


def _power_profile(eigvals, coeffs_sq, lam, active):
    """Total precoder power at ridge ``lam`` given eigen-coordinates."""
    shifted = eigvals + lam
    if lam == 0.0:
        power = np.sum(coeffs_sq[:, active] / np.maximum(shifted[active], 1e-300) ** 2)
        if np.any(coeffs_sq[:, ~active] > 1e-24 * max(coeffs_sq.sum(), 1e-300)):
            return np.inf
        return power
    return float(np.sum(coeffs_sq / shifted ** 2))


def swmmse_precoders(model, reports, sigma_n2, rho, options=None):
    """Stochastic WMMSE precoders driven by mixture component samples.

    Per iteration t: draw one sample per user from its reported component,
    compute scalar MMSE receivers and clamped MSE weights on the samples,
    fold the weighted statistics into running averages with step size 1/t,
    and re-solve the regularized system, bisecting the ridge whenever the
    unconstrained solution exceeds the power budget. The trajectory metadata
    records the per-iteration power, the sampled-channel objective, and the
    precoder snapshots (used to evaluate sum-rate over iterations without
    re-running).
    """
    options = options or SwmmseOptions()
    if sigma_n2 <= 0:
        raise ValueError("sigma_n2 must be positive")
    n_users = len(reports)
    if n_users < 1:
        raise ValueError("need at least one feedback report")
    dim = model.dim
    comps = []
    for report in reports:
        if not 1 <= report.index <= model.n_components:
            raise ValueError(f"report index {report.index} out of range")
        comps.append(report.index - 1)
    roots = {k: _component_sqrt(model.covariances[k]) for k in set(comps)}
    means = np.vstack([model.means[k] for k in comps])
    rng = np.random.default_rng(options.seed)

    def draw():
        white = (rng.standard_normal((n_users, dim))
                 + 1j * rng.standard_normal((n_users, dim))) / np.sqrt(2.0)
        samples = np.empty((n_users, dim), dtype=np.complex128)
        for j, k in enumerate(comps):
            samples[j] = means[j] + roots[k] @ white[j]
        return samples

    init = draw()
    init_norms = np.linalg.norm(init, axis=1)
    vectors = np.sqrt(rho / n_users) * init.conj() / init_norms[:, None]

    avg_cov = np.zeros((dim, dim), dtype=np.complex128)
    avg_rhs = np.zeros((n_users, dim), dtype=np.complex128)
    power_track = np.empty(options.max_iters)
    objective_track = np.empty(options.max_iters)
    lambda_track = np.empty(options.max_iters)
    snapshots = np.empty((options.max_iters, n_users, dim), dtype=np.complex128)

    for t in range(1, options.max_iters + 1):
        samples = draw()
        gains = samples @ vectors.T  # gains[j, m] = h_j^T v_m
        denom = np.sum(np.abs(gains) ** 2, axis=1) + sigma_n2
        direct = np.diagonal(gains)
        receivers = direct.conj() / denom
        mse = 1.0 - (receivers * direct).real
        weights = np.clip(1.0 / np.maximum(mse, 1e-300), 1.0, _WEIGHT_CLAMP)

        gamma = t ** (-options.step_exponent)
        coef = weights * np.abs(receivers) ** 2
        avg_cov = (1.0 - gamma) * avg_cov + gamma * (samples.conj().T * coef) @ samples
        avg_rhs = ((1.0 - gamma) * avg_rhs
                   + gamma * (weights * receivers.conj())[:, None] * samples.conj())

        eigvals, eigvecs = np.linalg.eigh(avg_cov)
        eigvals = np.maximum(eigvals, 0.0)
        coeffs = avg_rhs @ eigvecs.conj()  # rows: b_j in the eigenbasis
        coeffs_sq = np.abs(coeffs) ** 2
        active = eigvals > max(eigvals[-1], 1e-300) * 1e-13

        lam = 0.0
        if _power_profile(eigvals, coeffs_sq, 0.0, active) > rho:
            hi = np.sqrt(coeffs_sq.sum() / rho)
            expansions = 0
            while _power_profile(eigvals, coeffs_sq, hi, active) > rho:
                hi *= 4.0
                expansions += 1
                if expansions > 200:
                    raise RuntimeError("power bisection failed to bracket")
            lo = 0.0
            tol = options.power_tol * rho
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                power_mid = _power_profile(eigvals, coeffs_sq, mid, active)
                if power_mid > rho:
                    lo = mid
                else:
                    hi = mid
                    if rho - power_mid <= tol:
                        break
            lam = hi

        shifted = eigvals + lam
        if lam == 0.0:
            inv = np.where(active, 1.0 / np.maximum(shifted, 1e-300), 0.0)
        else:
            inv = 1.0 / shifted
        vectors = (coeffs * inv) @ eigvecs.T
        if not np.all(np.isfinite(vectors)):
            raise RuntimeError(
                f"stochastic WMMSE diverged at iteration {t} "
                f"(lambda={lam}, power={np.sum(np.abs(vectors) ** 2)})")

        gains = samples @ vectors.T
        signal = np.abs(np.diagonal(gains)) ** 2
        interference = np.sum(np.abs(gains) ** 2, axis=1) - signal
        objective_track[t - 1] = np.sum(np.log2(1.0 + signal
                                                / (interference + sigma_n2)))
        power_track[t - 1] = np.sum(np.abs(vectors) ** 2)
        lambda_track[t - 1] = lam
        snapshots[t - 1] = vectors

    metadata = {
        "power": power_track,
        "objective": objective_track,
        "ridge": lambda_track,
        "precoders": snapshots,
        "components": [c + 1 for c in comps],
    }
    if options.averaging_window:
        window = int(options.averaging_window)
        kernel = np.ones(window) / window
        metadata["objective_smoothed"] = np.convolve(objective_track, kernel,
                                                     mode="valid")
    return PrecoderSet(vectors, rho, "swmmse", metadata=metadata)
