"""Circularly-symmetric complex Gaussian mixture models.

Covers density evaluation, EM fitting with full or block-Toeplitz structured
covariances, responsibilities, projection of a channel-domain mixture into
the pilot observation domain, per-component sampling, parameter counting,
and binary model serialization (magic ``LFBM``).

All density arithmetic is done in the log domain with log-sum-exp
normalization; mixtures with hundreds of components at realistic channel
dimensions underflow otherwise.
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from .formats import DimensionError, FileFormatError, expect_magic, read_exact
from .toeplitz import realize_spectral, toeplitz_mstep

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"LFBM"
MODEL_VERSION = 1

_CONSTRAINTS = ("full", "toeplitz")
_COLLAPSE_WEIGHT = 1e-8


@dataclass
class EmOptions:
    """Knobs of the EM fit.

    ``floor_scale`` sets the covariance regularization floor as a fraction of
    the average eigenvalue of the global sample covariance; the floor is
    applied to eigenvalues (full constraint) or spectral entries (toeplitz).
    """

    max_iters: int = 100
    rel_loglik_tol: float = 1e-6
    floor_scale: float = 1e-6
    init: str = "kmeans++"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_loglik_tol < 0:
            raise ValueError("rel_loglik_tol must be >= 0")
        if self.floor_scale <= 0:
            raise ValueError("floor_scale must be > 0")
        if self.init not in ("kmeans++", "random"):
            raise ValueError(f"unknown init strategy {self.init!r}")


def _chol_logdet(cov):
    """Lower Cholesky factor and real log-determinant of a Hermitian PD matrix."""
    try:
        factor = cholesky(cov, lower=True)
    except np.linalg.LinAlgError:
        raise
    except Exception as exc:  # scipy raises its own LinAlgError subclass
        raise np.linalg.LinAlgError(
            f"covariance not positive definite: {exc}") from exc
    logdet = 2.0 * np.sum(np.log(np.diag(factor).real))
    return factor, logdet


def _log_gaussian_batch(x, mean, chol, logdet):
    """Log complex-Gaussian density for rows of ``x`` under one component."""
    diff = x - mean
    white = solve_triangular(chol, diff.T, lower=True)
    quad = np.sum(np.abs(white) ** 2, axis=0)
    dim = x.shape[1]
    return -dim * np.log(np.pi) - logdet - quad


def log_density(x, mean, cov):
    """Log density of the circularly-symmetric complex Gaussian.

    ``log[ pi^-N det(C)^-1 exp(-(x-mu)^H C^-1 (x-mu)) ]`` for a vector x,
    mean mu, and Hermitian positive definite covariance C (scalars are
    promoted to one-dimensional instances).
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.complex128))
    mean = np.atleast_1d(np.asarray(mean, dtype=np.complex128))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.complex128))
    if x.shape != mean.shape or cov.shape != (x.size, x.size):
        raise ValueError("dimension mismatch between x, mean, and cov")
    chol, logdet = _chol_logdet(cov)
    return float(_log_gaussian_batch(x[None, :], mean, chol, logdet)[0])


class GmmModel:
    """K-component complex Gaussian mixture with realized covariances.

    ``constraint`` records how the covariances were produced; for
    ``"toeplitz"`` the defining nonnegative spectral vectors are kept in
    ``spectral`` (shape (K, 4N)) alongside the realized dense matrices.
    Instances are immutable after construction; density factorizations are
    cached on first use.
    """

    def __init__(self, weights, means, covariances, constraint="full",
                 spectral=None, geometry=None):
        weights = np.asarray(weights, dtype=float)
        means = np.asarray(means, dtype=np.complex128)
        covariances = np.asarray(covariances, dtype=np.complex128)
        if weights.ndim != 1:
            raise ValueError("weights must be a vector")
        n_comp = weights.shape[0]
        if means.shape[0] != n_comp or covariances.shape[0] != n_comp:
            raise ValueError("component count mismatch")
        dim = means.shape[1]
        if covariances.shape[1:] != (dim, dim):
            raise ValueError("covariance shape mismatch")
        if np.any(weights <= 0):
            raise ValueError("all mixture weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to one")
        if constraint not in _CONSTRAINTS:
            raise ValueError(f"unknown constraint {constraint!r}")
        if constraint == "toeplitz":
            if spectral is None:
                raise ValueError("toeplitz models require spectral vectors")
            spectral = np.asarray(spectral, dtype=float)
            if spectral.shape != (n_comp, 4 * dim):
                raise ValueError("spectral vectors must have shape (K, 4N)")
        self.weights = weights
        self.means = means
        self.covariances = covariances
        self.constraint = constraint
        self.spectral = spectral
        self.geometry = geometry
        # populated by fit_em
        self.fit_log_likelihoods = None
        self.converged = None
        self._chols = None
        self._logdets = None

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def _ensure_factors(self):
        if self._chols is None:
            chols = []
            logdets = np.empty(self.n_components)
            for k in range(self.n_components):
                chol, logdets[k] = _chol_logdet(self.covariances[k])
                chols.append(chol)
            self._chols = chols
            self._logdets = logdets

    def component_log_densities(self, x):
        """Vector of per-component log densities at ``x`` (length K)."""
        self._ensure_factors()
        x = np.atleast_1d(np.asarray(x, dtype=np.complex128))
        if x.shape != (self.dim,):
            raise ValueError(f"expected a vector of dimension {self.dim}")
        out = np.empty(self.n_components)
        for k in range(self.n_components):
            out[k] = _log_gaussian_batch(x[None, :], self.means[k],
                                         self._chols[k], self._logdets[k])[0]
        return out

    def log_responsibilities(self, x):
        scores = np.log(self.weights) + self.component_log_densities(x)
        return scores - logsumexp(scores)

    def responsibilities(self, x):
        return np.exp(self.log_responsibilities(x))


class ObservationGmm:
    """Mixture of the pilot observations induced by a channel-domain mixture.

    Component k has mean ``P mu_k`` and covariance ``P C_k P^H + sigma_n^2 I``;
    the covariance factorizations are computed once here so that every later
    responsibility evaluation costs O(n_p^2) per component and is independent
    of the channel dimension.
    """

    def __init__(self, weights, means, covariances):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=np.complex128)
        self.covariances = np.asarray(covariances, dtype=np.complex128)
        self._chols = []
        self._logdets = np.empty(len(self.weights))
        for k in range(len(self.weights)):
            try:
                chol, logdet = _chol_logdet(self.covariances[k])
            except np.linalg.LinAlgError as exc:
                raise ValueError(
                    "observation covariance is not positive definite; "
                    "use sigma_n2 > 0") from exc
            self._chols.append(chol)
            self._logdets[k] = logdet

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def component_log_densities(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=np.complex128))
        if y.shape != (self.dim,):
            raise ValueError(f"expected a vector of dimension {self.dim}")
        out = np.empty(self.n_components)
        for k in range(self.n_components):
            out[k] = _log_gaussian_batch(y[None, :], self.means[k],
                                         self._chols[k], self._logdets[k])[0]
        return out

    def log_responsibilities(self, y):
        scores = np.log(self.weights) + self.component_log_densities(y)
        return scores - logsumexp(scores)

    def responsibilities(self, y):
        return np.exp(self.log_responsibilities(y))

    def solve_innovation(self, k, innovation):
        """Apply the inverse observation covariance of component k (0-based)."""
        white = solve_triangular(self._chols[k], innovation, lower=True)
        return solve_triangular(self._chols[k].conj().T, white, lower=False)


def responsibilities(model, x):
    """Posterior component probabilities of ``x`` under a (observation) mixture."""
    return model.responsibilities(x)


def project_to_observation(model, setup):
    """Observation-domain mixture for a pilot setup (see ObservationGmm)."""
    sigma_n2 = setup.sigma_n2
    if sigma_n2 is None:
        raise ValueError("pilot setup has no noise variance set")
    if sigma_n2 < 0:
        raise ValueError("sigma_n2 must be >= 0")
    pilot = setup.pilot_matrix
    if pilot.shape[1] != model.dim:
        raise ValueError("pilot matrix width does not match the model dimension")
    means = model.means @ pilot.T
    n_pilots = pilot.shape[0]
    covs = np.empty((model.n_components, n_pilots, n_pilots), dtype=np.complex128)
    eye = np.eye(n_pilots)
    for k in range(model.n_components):
        covs[k] = pilot @ model.covariances[k] @ pilot.conj().T + sigma_n2 * eye
    return ObservationGmm(model.weights, means, covs)


def _component_sqrt(cov):
    """Matrix square root for sampling; eigenvalue fallback when not PD."""
    try:
        return cholesky(cov, lower=True)
    except Exception:
        logger.warning("covariance Cholesky failed; using clipped eigen square root")
        eigvals, eigvecs = np.linalg.eigh(cov)
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def sample_component(model, k, count, seed):
    """Draw ``count`` i.i.d. vectors from component ``k`` (1-based index)."""
    if not 1 <= k <= model.n_components:
        raise ValueError(f"component index {k} outside 1..{model.n_components}")
    if count < 0:
        raise ValueError("count must be >= 0")
    rng = np.random.default_rng(seed)
    root = _component_sqrt(model.covariances[k - 1])
    white = (rng.standard_normal((count, model.dim))
             + 1j * rng.standard_normal((count, model.dim))) / np.sqrt(2.0)
    return model.means[k - 1] + white @ root.T


def param_count(n_components, dim, constraint):
    """Number of covariance parameters a model transfer must carry.

    Full Hermitian covariances need K*N*(N+1)/2 entries (upper triangles);
    the block-Toeplitz parameterization needs the 4N-long spectral vector per
    component, i.e. 4*K*N.
    """
    if n_components < 1 or dim < 1:
        raise ValueError("n_components and dim must be >= 1")
    if constraint == "full":
        return n_components * dim * (dim + 1) // 2
    if constraint == "toeplitz":
        return 4 * n_components * dim
    raise ValueError(f"unknown constraint {constraint!r}")


def _floor_eigenvalues(matrix, floor):
    """Hermitian matrix with eigenvalues clipped from below at ``floor``."""
    matrix = 0.5 * (matrix + matrix.conj().T)
    eigvals = np.linalg.eigvalsh(matrix)
    if eigvals[0] >= floor:
        return matrix
    eigvals, eigvecs = np.linalg.eigh(matrix)
    return (eigvecs * np.clip(eigvals, floor, None)) @ eigvecs.conj().T


def _kmeanspp_indices(x, n_components, rng):
    """k-means++ style seeding: squared-distance weighted sample choice."""
    n_samples = x.shape[0]
    chosen = [int(rng.integers(n_samples))]
    dist_sq = np.sum(np.abs(x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(n_components - 1):
        total = dist_sq.sum()
        if total <= 0:
            idx = int(rng.integers(n_samples))
        else:
            idx = int(rng.choice(n_samples, p=dist_sq / total))
        chosen.append(idx)
        dist_sq = np.minimum(dist_sq, np.sum(np.abs(x - x[idx]) ** 2, axis=1))
    return chosen


def fit_em(dataset, n_components, constraint="full", options=None, geometry=None):
    """Maximum-likelihood mixture fit via EM on a normalized channel dataset.

    For ``constraint="toeplitz"`` the M-step projects each weighted scatter
    matrix onto the block-Toeplitz cone (see :mod:`limfb.toeplitz`), which is
    approximate: the fit tracks the log-likelihood sequence and logs any
    decrease beyond the expected projection tolerance. The achieved
    per-iteration average log-likelihoods are stored on the returned model as
    ``fit_log_likelihoods``. Deterministic for a given ``options.seed``.
    """
    options = options or EmOptions()
    if constraint not in _CONSTRAINTS:
        raise ValueError(f"unknown constraint {constraint!r}")
    if not dataset.normalized:
        raise ValueError("fit_em expects a normalized dataset")
    x = dataset.samples.astype(np.complex128)
    n_samples, dim = x.shape
    if n_samples < n_components:
        raise ValueError("need at least as many samples as components")
    if constraint == "toeplitz":
        if geometry is None:
            geometry = dataset.scene.geometry if dataset.scene else None
        if geometry is None:
            raise ValueError("toeplitz fits need an array geometry")
        if geometry.n != dim:
            raise ValueError("geometry does not match the sample dimension")

    rng = np.random.default_rng(options.seed)
    global_mean = x.mean(axis=0)
    centered = x - global_mean
    global_cov = (centered.T @ centered.conj()) / n_samples
    floor = options.floor_scale * np.trace(global_cov).real / dim

    def structured(scatter):
        spectrum = toeplitz_mstep(scatter, geometry, floor=floor)
        return spectrum, realize_spectral(spectrum, geometry)

    if options.init == "kmeans++":
        seeds = _kmeanspp_indices(x, n_components, rng)
    else:
        seeds = rng.choice(n_samples, size=n_components, replace=False)
    means = x[np.asarray(seeds)].copy()
    weights = np.full(n_components, 1.0 / n_components)
    spectral = None
    if constraint == "toeplitz":
        init_spectrum, init_cov = structured(global_cov)
        spectral = np.tile(init_spectrum, (n_components, 1))
        covariances = np.tile(init_cov, (n_components, 1, 1))
    else:
        init_cov = _floor_eigenvalues(global_cov, floor)
        covariances = np.tile(init_cov, (n_components, 1, 1))

    chols = [None] * n_components
    logdets = np.empty(n_components)
    for k in range(n_components):
        chols[k], logdets[k] = _chol_logdet(covariances[k])

    log_likelihoods = []
    converged = False
    for iteration in range(options.max_iters):
        # E-step
        scores = np.empty((n_samples, n_components))
        for k in range(n_components):
            scores[:, k] = _log_gaussian_batch(x, means[k], chols[k], logdets[k])
        scores += np.log(weights)
        log_norm = logsumexp(scores, axis=1)
        avg_ll = float(log_norm.mean())
        log_likelihoods.append(avg_ll)
        if len(log_likelihoods) > 1:
            prev = log_likelihoods[-2]
            if avg_ll < prev - 1e-3 * abs(prev):
                logger.warning(
                    "log-likelihood decreased beyond tolerance at iteration %d "
                    "(%.6f -> %.6f)", iteration, prev, avg_ll)
            if abs(avg_ll - prev) <= options.rel_loglik_tol * abs(prev):
                converged = True
                break
        resp = np.exp(scores - log_norm[:, None])

        # M-step
        mass = resp.sum(axis=0)
        collapsed = np.flatnonzero((mass <= n_samples * 1e-12)
                                   | (mass / n_samples < _COLLAPSE_WEIGHT))
        safe_mass = np.maximum(mass, 1e-300)
        weights = mass / n_samples
        means = (resp.T @ x) / safe_mass[:, None]
        for k in range(n_components):
            if k in collapsed:
                continue
            diff = x - means[k]
            scatter = (resp[:, k] * diff.T) @ diff.conj() / safe_mass[k]
            if constraint == "toeplitz":
                spectral[k], covariances[k] = structured(scatter)
            else:
                covariances[k] = _floor_eigenvalues(scatter, floor)
        for k in collapsed:
            logger.warning("re-seeding collapsed component %d at iteration %d",
                           k, iteration)
            means[k] = x[rng.integers(n_samples)]
            if constraint == "toeplitz":
                spectral[k], covariances[k] = structured(global_cov)
            else:
                covariances[k] = _floor_eigenvalues(global_cov, floor)
            weights[k] = 1.0 / n_samples
        weights = np.maximum(weights, 1e-300)
        weights /= weights.sum()
        for k in range(n_components):
            chols[k], logdets[k] = _chol_logdet(covariances[k])

    model = GmmModel(weights, means, covariances, constraint=constraint,
                     spectral=spectral, geometry=geometry)
    model.fit_log_likelihoods = log_likelihoods
    model.converged = converged
    return model


def save_model(model, path):
    """Write a mixture to the ``LFBM`` binary container.

    The component count must be a power of two (the header stores the bit
    width B with K = 2^B). Full covariances are stored as upper triangles in
    complex f64; toeplitz models store the spectral vectors in f64 (the
    dictionary is implied by the geometry and is not persisted).
    """
    n_comp = model.n_components
    bits = int(round(np.log2(n_comp)))
    if 2 ** bits != n_comp:
        raise ValueError("can only serialize models whose K is a power of two")
    dim = model.dim
    flag = 0 if model.constraint == "full" else 1
    iu = np.triu_indices(dim)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<HBIB", MODEL_VERSION, bits, dim, flag))
        for k in range(n_comp):
            fh.write(struct.pack("<d", float(model.weights[k])))
            fh.write(np.ascontiguousarray(model.means[k], dtype="<c16").tobytes())
            if model.constraint == "full":
                tri = np.ascontiguousarray(model.covariances[k][iu], dtype="<c16")
                fh.write(tri.tobytes())
            else:
                fh.write(np.ascontiguousarray(model.spectral[k],
                                              dtype="<f8").tobytes())


def load_model(path, geometry=None):
    """Read a mixture written by :func:`save_model`.

    Toeplitz models need ``geometry`` to realize their covariance matrices
    from the stored spectral vectors (the container holds only N, not the
    vertical/horizontal split).
    """
    with open(path, "rb") as fh:
        expect_magic(fh, MODEL_MAGIC)
        header = read_exact(fh, struct.calcsize("<HBIB"), "model header")
        version, bits, dim, flag = struct.unpack("<HBIB", header)
        if version != MODEL_VERSION:
            raise FileFormatError(f"unsupported model version {version}")
        if flag not in (0, 1):
            raise FileFormatError(f"unknown constraint flag {flag}")
        if dim < 1:
            raise DimensionError(f"invalid model dimension N={dim}")
        constraint = "full" if flag == 0 else "toeplitz"
        if constraint == "toeplitz":
            if geometry is None:
                raise ValueError("loading a toeplitz model requires the geometry")
            if geometry.n != dim:
                raise DimensionError("geometry does not match the stored dimension")
        n_comp = 2 ** bits
        weights = np.empty(n_comp)
        means = np.empty((n_comp, dim), dtype=np.complex128)
        covariances = np.empty((n_comp, dim, dim), dtype=np.complex128)
        spectral = (np.empty((n_comp, 4 * dim)) if constraint == "toeplitz"
                    else None)
        iu = np.triu_indices(dim)
        for k in range(n_comp):
            weights[k] = struct.unpack(
                "<d", read_exact(fh, 8, f"weight of component {k}"))[0]
            mean_bytes = read_exact(fh, 16 * dim, f"mean of component {k}")
            means[k] = np.frombuffer(mean_bytes, dtype="<c16")
            if constraint == "full":
                n_tri = dim * (dim + 1) // 2
                tri_bytes = read_exact(fh, 16 * n_tri,
                                       f"covariance of component {k}")
                tri = np.frombuffer(tri_bytes, dtype="<c16")
                cov = np.zeros((dim, dim), dtype=np.complex128)
                cov[iu] = tri
                cov = cov + np.triu(cov, 1).conj().T
                covariances[k] = cov
            else:
                spec_bytes = read_exact(fh, 8 * 4 * dim,
                                        f"spectrum of component {k}")
                spectral[k] = np.frombuffer(spec_bytes, dtype="<f8")
                covariances[k] = realize_spectral(spectral[k], geometry)
        if fh.read(1):
            raise DimensionError("trailing bytes after declared payload")
    return GmmModel(weights, means, covariances, constraint=constraint,
                    spectral=spectral, geometry=geometry)
