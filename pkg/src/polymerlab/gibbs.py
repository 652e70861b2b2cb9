import csv
import logging
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveFloat, PositiveInt
from scipy import integrate, linalg, stats

from polymerlab.models.error import OracleError
from polymerlab.potential import ZERO_POTENTIAL, PotentialField, drift_array

logger = logging.getLogger(__name__)

MAX_ORACLE_DIMENSION = 3
MAX_DLR_VOLUME = 8
BOX_CUTOFF = 1e-8
TARGET_ACCEPTANCE = 0.574


class GibbsSpec(BaseModel):
    """
    Finite-volume polymer measure ∝ exp(-β·E_n) on x_1..x_n with x_0 = 0 and x_{n+1} fixed
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n: PositiveInt
    beta: PositiveFloat
    right_endpoint: float = 0.0
    potential: PotentialField = Field(default=ZERO_POTENTIAL, exclude=True)

    @property
    def temperature(self) -> float:
        return 1.0 / self.beta

    def bridge(self) -> "GaussianBridge":
        """The zero-potential measure with the same volume, temperature and endpoint"""
        return GaussianBridge(n=self.n, beta=self.beta, right_endpoint=self.right_endpoint)

    def describe(self) -> dict[str, Any]:
        return {
            **self.model_dump(),
            "potential": self.potential.spec.model_dump(mode="json", by_alias=True),
        }


class GaussianBridge(BaseModel):
    """
    Exact Gibbs measure at zero potential: N(m, (βA)^{-1}) with A = tridiag(-1, 2, -1)
    """

    model_config = ConfigDict(frozen=True)

    n: PositiveInt
    beta: PositiveFloat
    right_endpoint: float = 0.0

    def mean(self) -> np.ndarray:
        """m_k = k·x_{n+1}/(n+1), the solution of A·m = (0, …, 0, x_{n+1})"""
        return np.arange(1, self.n + 1, dtype=np.float64) * self.right_endpoint / (self.n + 1)

    def precision_banded(self) -> np.ndarray:
        """βA in upper banded storage"""
        banded = np.zeros((2, self.n), dtype=np.float64)
        banded[0, 1:] = -self.beta
        banded[1, :] = 2.0 * self.beta
        return banded

    def covariance(self) -> np.ndarray:
        """(1/β)·A^{-1} with (A^{-1})_{kl} = min(k,l)(n+1-max(k,l))/(n+1)"""
        k = np.arange(1, self.n + 1, dtype=np.float64)
        low = np.minimum.outer(k, k)
        high = np.maximum.outer(k, k)
        return low * (self.n + 1 - high) / (self.n + 1) / self.beta

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of A from the tridiagonal eigen-solver, ascending"""
        return linalg.eigh_tridiagonal(
            np.full(self.n, 2.0),
            np.full(self.n - 1, -1.0),
            eigvals_only=True,
        )

    def reference_eigenvalues(self) -> np.ndarray:
        """λ_m = 2 - 2cos(mπ/(n+1))"""
        m = np.arange(1, self.n + 1, dtype=np.float64)
        return 2.0 - 2.0 * np.cos(m * np.pi / (self.n + 1))

    def sample(self, count: int, seed: int) -> np.ndarray:
        return exact_gaussian_sample(self, count, seed)


def spectral_gap(n: int) -> float:
    """Smallest eigenvalue of A, 2 - 2cos(π/(n+1))"""
    return 2.0 - 2.0 * math.cos(math.pi / (n + 1))


def _profile(spec: GibbsSpec, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != spec.n:
        raise ValueError(f"expected {spec.n} coordinates, got {x.shape[-1]}")
    padded = np.zeros(x.shape[:-1] + (spec.n + 2,), dtype=np.float64)
    padded[..., 1:-1] = x
    padded[..., -1] = spec.right_endpoint
    return padded


def energy(spec: GibbsSpec, x: Any) -> Any:
    """
    E_n(x) = ½Σ_{k=0}^{n}(x_{k+1} - x_k)² + Σ_{k=1}^{n} F_k(x_k)
    :param spec: measure
    :param x: coordinates x_1..x_n, or a batch with the coordinates on the last axis
    :return: float for one configuration, array for a batch
    """
    x = np.asarray(x, dtype=np.float64)
    result = 0.5 * np.sum(np.diff(_profile(spec, x), axis=-1) ** 2, axis=-1)
    if not spec.potential.is_zero:
        k = np.arange(1, spec.n + 1)
        result = result + np.sum(spec.potential.value(k, x), axis=-1)
    if np.ndim(result) == 0:
        return float(result)
    return result


def energy_gradient(spec: GibbsSpec, x: Any) -> np.ndarray:
    """∇E_n, the negative of the SDE drift"""
    return -drift_array(spec.potential, np.asarray(x, dtype=np.float64), spec.right_endpoint)


def exact_gaussian_sample(bridge: GaussianBridge, count: int, seed: int) -> np.ndarray:
    """
    I.i.d. draws from N(m, (βA)^{-1}) via the banded Cholesky factor βA = UᵀU
    :param bridge: Gaussian measure
    :param count: number of samples
    :param seed: generator seed
    :return: array of shape (count, n)
    """
    rng = np.random.default_rng(seed)
    factor = linalg.cholesky_banded(bridge.precision_banded(), lower=False)
    white = rng.standard_normal((bridge.n, count))
    return bridge.mean() + linalg.solve_banded((0, 1), factor, white).T


class MalaResult(BaseModel):
    """
    Thinned post-burn-in MALA draws, ordered by time then chain
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    samples: np.ndarray
    acceptance_rate: float
    step: float
    chains: int
    seed: int


def mala_sample(
    spec: GibbsSpec,
    init: Any,
    step: float,
    burn_in: int,
    count: int,
    thin: int = 1,
    seed: int = 0,
    chains: int = 1,
) -> MalaResult:
    """
    Metropolis-adjusted Langevin chains targeting exp(-β·E_n)
    :param spec: target measure
    :param init: start, shape (n,) shared by all chains or (chains, n)
    :param step: proposal scale h; proposals are x + (h²/2)·β·(-∇E) + h·ξ
    :param burn_in: discarded iterations
    :param count: kept samples per chain
    :param thin: iterations between kept samples
    :param seed: generator seed
    :param chains: independent chains advanced together
    :return:
    """
    if step <= 0:
        raise ValueError(f"MALA step must be positive, got {step}")
    if thin < 1 or count < 0 or burn_in < 0:
        raise ValueError("thin must be ≥ 1 and count, burn_in non-negative")
    rng = np.random.default_rng(seed)
    x = np.array(init, dtype=np.float64)
    if x.ndim == 1:
        x = np.tile(x, (chains, 1))
    chains = x.shape[0]
    beta = spec.beta
    half = 0.5 * step**2

    def score(points: np.ndarray) -> np.ndarray:
        return beta * drift_array(spec.potential, points, spec.right_endpoint)

    log_target = -beta * np.asarray(energy(spec, x)).reshape(chains)
    gradient = score(x)
    kept = np.empty((count, chains, spec.n), dtype=np.float64)
    accepted = 0
    proposed = 0
    for iteration in range(burn_in + count * thin):
        noise = rng.standard_normal(x.shape)
        proposal = x + half * gradient + step * noise
        proposal_gradient = score(proposal)
        proposal_log_target = -beta * np.asarray(energy(spec, proposal)).reshape(chains)
        backward = x - proposal - half * proposal_gradient
        log_ratio = (
            proposal_log_target
            - log_target
            - np.sum(backward**2, axis=-1) / (2.0 * step**2)
            + 0.5 * np.sum(noise**2, axis=-1)
        )
        log_ratio = np.where(np.isfinite(log_ratio), log_ratio, -np.inf)
        accept = np.log(rng.random(chains)) < log_ratio
        x = np.where(accept[:, None], proposal, x)
        gradient = np.where(accept[:, None], proposal_gradient, gradient)
        log_target = np.where(accept, proposal_log_target, log_target)
        if iteration >= burn_in:
            accepted += int(accept.sum())
            proposed += chains
            position = iteration - burn_in + 1
            if position % thin == 0:
                kept[position // thin - 1] = x
    rate = accepted / proposed if proposed else math.nan
    if proposed and not 0.1 <= rate <= 0.9:
        suggestion = step * math.sqrt(max(rate, 1e-3) / TARGET_ACCEPTANCE)
        logger.warning(f"MALA acceptance rate {rate:.3f} outside [0.1, 0.9]; try step h≈{suggestion:.3g}")
    logger.debug(f"MALA: {chains} chain(s), {count} kept samples each, acceptance {rate:.3f}")
    return MalaResult(
        samples=kept.reshape(count * chains, spec.n),
        acceptance_rate=rate,
        step=step,
        chains=chains,
        seed=seed,
    )


def default_mala_step(spec: GibbsSpec) -> float:
    """Step scaled to the stiffest Gaussian direction, β·λ_max ≤ 4β"""
    return 1.2 / math.sqrt(4.0 * spec.beta) * spec.n ** (-1.0 / 6.0)


def pilot_box(
    spec: GibbsSpec,
    seed: int = 0,
    sd_multiplier: float = 8.0,
    count: int = 4000,
) -> list[tuple[float, float]]:
    """Quadrature box mean ± sd_multiplier·sd from a pilot MALA run"""
    pilot = mala_sample(
        spec,
        spec.bridge().mean(),
        default_mala_step(spec),
        burn_in=500,
        count=count,
        thin=2,
        seed=seed,
        chains=4,
    )
    mean = pilot.samples.mean(axis=0)
    spread = pilot.samples.std(axis=0, ddof=1)
    return [(float(m - sd_multiplier * s), float(m + sd_multiplier * s)) for m, s in zip(mean, spread, strict=True)]


class OracleMoments(BaseModel):
    """
    Quadrature moments of a Gibbs measure in at most three coordinates
    """

    model_config = ConfigDict(frozen=True)

    mean: list[float]
    second_moment: list[list[float]]
    covariance: list[list[float]]
    log_partition: float
    error_estimate: float
    boundary_ratio: float
    bounds: list[tuple[float, float]]
    resolution: int


def _grid_log_weight(spec: GibbsSpec, axes: Sequence[np.ndarray]) -> np.ndarray:
    """-β·E_n on the tensor grid, assembled from one-dimensional pieces"""
    n = spec.n
    coords = [axis.reshape([-1 if i == j else 1 for i in range(n)]) for j, axis in enumerate(axes)]
    profile = [np.zeros([1] * n), *coords, np.full([1] * n, spec.right_endpoint)]
    total = np.zeros([axis.size for axis in axes], dtype=np.float64)
    for left, right in zip(profile, profile[1:], strict=False):
        total = total + 0.5 * (right - left) ** 2
    if not spec.potential.is_zero:
        for k, coord in enumerate(coords, start=1):
            total = total + spec.potential.value(k, coord)
    return -spec.beta * total


def _integrate(values: np.ndarray, axes: Sequence[np.ndarray]) -> float:
    for axis in reversed(axes):
        values = integrate.trapezoid(values, axis, axis=-1)
    return float(values)


def _grid_moments(spec: GibbsSpec, axes: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    log_weight = _grid_log_weight(spec, axes)
    peak = float(log_weight.max())
    weight = np.exp(log_weight - peak)
    partition = _integrate(weight, axes)
    grid = np.meshgrid(*axes, indexing="ij")
    mean = np.array([_integrate(weight * grid[i], axes) / partition for i in range(spec.n)])
    second = np.array(
        [[_integrate(weight * grid[i] * grid[j], axes) / partition for j in range(spec.n)] for i in range(spec.n)],
    )
    return mean, second, math.log(partition) + peak, weight


def grid_oracle(
    spec: GibbsSpec,
    bounds: Sequence[tuple[float, float]] | None = None,
    resolution: int = 121,
) -> OracleMoments:
    """
    Trapezoidal quadrature of Z_n and of the first and second moments
    :param spec: measure with n ≤ 3
    :param bounds: box per coordinate; defaults to a pilot MALA box of ± 8 sd
    :param resolution: grid points per axis, made odd so the half-resolution grid is nested
    :return: moments with a Richardson error estimate from the half-resolution grid
    :raises OracleError: for n > 3 or when the box cuts off mass
    """
    if spec.n > MAX_ORACLE_DIMENSION:
        raise OracleError(f"grid oracle is limited to n ≤ {MAX_ORACLE_DIMENSION}, got n={spec.n}")
    if bounds is None:
        bounds = pilot_box(spec)
    if len(bounds) != spec.n:
        raise ValueError(f"expected {spec.n} coordinate bounds, got {len(bounds)}")
    resolution = max(5, resolution + (resolution + 1) % 2)
    axes = [np.linspace(low, high, resolution) for low, high in bounds]
    mean, second, log_partition, weight = _grid_moments(spec, axes)
    faces = [np.take(weight, index, axis=axis) for axis in range(spec.n) for index in (0, -1)]
    boundary_ratio = max(float(face.max()) for face in faces)
    if boundary_ratio > BOX_CUTOFF:
        raise OracleError(
            f"density on the box boundary is {boundary_ratio:.2e} of its maximum (> {BOX_CUTOFF:g}); widen the box",
        )
    coarse_mean, coarse_second, _, _ = _grid_moments(spec, [axis[::2] for axis in axes])
    error = max(float(np.max(np.abs(mean - coarse_mean))), float(np.max(np.abs(second - coarse_second)))) / 3.0
    covariance = second - np.outer(mean, mean)
    logger.debug(f"Grid oracle n={spec.n} at resolution {resolution}: Richardson error {error:.2e}")
    return OracleMoments(
        mean=mean.tolist(),
        second_moment=second.tolist(),
        covariance=covariance.tolist(),
        log_partition=log_partition,
        error_estimate=error,
        boundary_ratio=boundary_ratio,
        bounds=[(float(low), float(high)) for low, high in bounds],
        resolution=resolution,
    )


class SamplerSettings(BaseModel):
    """
    MALA parameters used by the consistency checks
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    step: PositiveFloat | None = None
    burn_in: NonNegativeInt = 2000
    count: PositiveInt = 5000
    thin: PositiveInt = 10
    chains: PositiveInt = 32
    seed: NonNegativeInt = 0


def gibbs_samples(spec: GibbsSpec, settings: SamplerSettings, seed: int) -> np.ndarray:
    """Exact draws at zero potential, pooled MALA chains otherwise"""
    total = settings.count * settings.chains
    if spec.potential.is_zero:
        return exact_gaussian_sample(spec.bridge(), total, seed)
    step = settings.step if settings.step is not None else default_mala_step(spec)
    return mala_sample(
        spec,
        spec.bridge().mean(),
        step,
        settings.burn_in,
        settings.count,
        settings.thin,
        seed,
        settings.chains,
    ).samples


class DlrReport(BaseModel):
    """
    Kolmogorov-Smirnov comparison of a binned conditional law with the finite-volume measure
    """

    model_config = ConfigDict(frozen=True)

    outer_n: int
    inner_n: int
    reference_value: float
    bin_half_width: float
    hits: int
    statistics: list[float]
    p_values: list[float]
    critical_values: list[float]
    alpha: float
    consistent: bool


def ks_critical_value(alpha: float, size: int, other: int) -> float:
    """Asymptotic two-sample Kolmogorov-Smirnov critical value"""
    return math.sqrt(-math.log(alpha / 2.0) / 2.0) * math.sqrt((size + other) / (size * other))


def dlr_check(
    outer_n: int,
    inner_n: int,
    spec: GibbsSpec,
    sampler: SamplerSettings | None = None,
    min_hits: int = 500,
    reference: float | None = None,
    alpha: float = 0.01,
    max_outer: int = MAX_DLR_VOLUME,
) -> DlrReport:
    """
    Compare the outer-volume law of x_1..x_inner conditioned on x_{inner+1} ≈ r with ρ(r; ·)
    :param outer_n: outer volume
    :param inner_n: inner volume, strictly smaller
    :param spec: measure providing β, the outer endpoint and the potential
    :param sampler: sampling parameters
    :param min_hits: conditional samples kept from the bin around r
    :param reference: conditioning value r; defaults to the median of x_{inner+1}
    :param alpha: level of the critical values
    :param max_outer: cost guard on outer_n
    :return:
    """
    if not 0 < inner_n < outer_n:
        raise ValueError(f"need 0 < inner_n < outer_n, got inner_n={inner_n}, outer_n={outer_n}")
    if outer_n > max_outer:
        raise ValueError(f"outer_n={outer_n} exceeds the cap of {max_outer}")
    settings = sampler if sampler is not None else SamplerSettings()
    outer = spec.model_copy(update={"n": outer_n})
    samples = gibbs_samples(outer, settings, settings.seed)
    conditioning = samples[:, inner_n]
    value = float(np.median(conditioning)) if reference is None else reference
    distances = np.abs(conditioning - value)
    hits = min(min_hits, samples.shape[0])
    if samples.shape[0] < min_hits:
        logger.warning(f"Only {samples.shape[0]} samples for a bin of {min_hits} hits; widen the bin or sample more")
    nearest = np.argsort(distances, kind="stable")[:hits]
    half_width = float(distances[nearest[-1]])
    selected = samples[nearest, :inner_n]
    inner = GibbsSpec(n=inner_n, beta=outer.beta, right_endpoint=value, potential=outer.potential)
    fresh = gibbs_samples(inner, settings, settings.seed + 1)
    statistics, p_values, critical = [], [], []
    for k in range(inner_n):
        result = stats.ks_2samp(selected[:, k], fresh[:, k])
        statistics.append(float(result.statistic))
        p_values.append(float(result.pvalue))
        critical.append(ks_critical_value(alpha, selected.shape[0], fresh.shape[0]))
    consistent = all(s <= c for s, c in zip(statistics, critical, strict=True))
    logger.info(
        f"DLR check {inner_n}/{outer_n} at r={value:.4g} (bin ±{half_width:.3g}, {hits} hits): "
        f"max KS {max(statistics):.4f}, {'consistent' if consistent else 'inconsistent'}",
    )
    return DlrReport(
        outer_n=outer_n,
        inner_n=inner_n,
        reference_value=value,
        bin_half_width=half_width,
        hits=hits,
        statistics=statistics,
        p_values=p_values,
        critical_values=critical,
        alpha=alpha,
        consistent=consistent,
    )


class SampleSidecar(BaseModel):
    """
    Metadata stored next to a sample CSV
    """

    spec: dict[str, Any]
    seed: int
    acceptance_rate: float | None
    step: float | None
    count: int


def write_samples(path: Path, samples: np.ndarray, sidecar: SampleSidecar) -> tuple[Path, Path]:
    """One CSV row per sample plus a JSON sidecar with the same stem"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as csvfile:
        writer = csv.writer(csvfile)
        writer.writerow([f"x_{k}" for k in range(1, samples.shape[1] + 1)])
        writer.writerows(samples.tolist())
    sidecar_path = path.with_suffix(".json")
    sidecar_path.write_text(sidecar.model_dump_json(indent=2))
    return path, sidecar_path
