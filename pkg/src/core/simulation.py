"""
Seeded data-generating processes and asymptotic experiments

Features:
- Bounded-box covariates with a propensity driven by the first covariate
- Inverse-linear, linear, constant and logistic propensities
- Group-conditional "tilted" laws meeting p^2 Sigma_t = (1-p)^2 Sigma_c (k = 1)
- Linear, heterogeneous-linear and quadratic outcome surfaces with analytic ATE
- Weight-convergence and estimator-consistency experiments over an n grid
- Quadrature oracles for group moments and the overlap-weighted contrast

Every replication draws from its own SeedSequence child keyed by
(scenario, grid point, replication), so reports do not depend on the
number of worker threads.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import integrate, optimize

from .dataset import CONTROL, TREATED, Dataset, profile
from .errors import ConfigError, DataValidationError, SimulationError
from .estimators import hajek_estimate
from .linalg import solve_scatter
from .weights import mri_weights, uri_weights

logger = logging.getLogger(__name__)

PROPENSITY_KINDS = (
    "inverse_linear",
    "inverse_linear_control",
    "linear",
    "constant",
    "logistic",
    "tilted",
    "tilted_control",
)
OUTCOME_KINDS = ("linear", "linear_heterogeneous", "nonlinear")
NONLINEAR_ARMS = ("treated", "control", "both")
TILTED_KINDS = ("tilted", "tilted_control")

DEFAULT_SEED = 20240101
DEFAULT_N_GRID = (1000, 4000, 16000)
DEFAULT_REPLICATIONS = 50
MAX_REGENERATION_ATTEMPTS = 20

TILTED_NOTE = (
    "group-conditional covariate laws are drawn directly with treatment fixed at rate p; "
    "the propensity is implied by Bayes' rule"
)


@dataclass(frozen=True)
class DGPConfig:
    """
    Data-generating process

    Covariates are independent uniforms on [low, high]^k (tilted kinds replace
    the law of the single covariate within one arm). The propensity depends on
    u = (x_1 - mid) / half in [-1, 1].

    Outcomes:
        m_0(x) = beta0 + beta^T x + curvature * a_0 * x_1^2
        m_1(x) = m_0 without its quadratic term + tau0 + delta * x_1 (heterogeneous only)
                 + curvature * a_1 * x_1^2
    with a_g = 1 when arm g carries the quadratic term of a nonlinear outcome.
    """

    k: int = 1
    p: float = 0.5
    propensity_kind: str = "constant"
    outcome_kind: str = "linear"
    nonlinear_arm: str = "treated"
    low: float = 0.0
    high: float = 2.0
    noise_sd: float = 1.0
    propensity_strength: float = 0.4
    logistic_slope: float = 2.0
    beta0: float = 1.0
    beta: Optional[Tuple[float, ...]] = None
    tau0: float = 1.0
    delta: float = 1.0
    curvature: float = 1.0
    e_min: float = 0.1
    e_max: float = 0.9
    seed: int = DEFAULT_SEED
    name: str = "custom"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")
        if not 0.0 < self.p < 1.0:
            raise ConfigError(f"p must lie in (0, 1), got {self.p}")
        if self.propensity_kind not in PROPENSITY_KINDS:
            raise ConfigError(f"Unknown propensity kind '{self.propensity_kind}'")
        if self.outcome_kind not in OUTCOME_KINDS:
            raise ConfigError(f"Unknown outcome kind '{self.outcome_kind}'")
        if self.nonlinear_arm not in NONLINEAR_ARMS:
            raise ConfigError(f"Unknown nonlinear arm '{self.nonlinear_arm}'")
        if not self.low < self.high:
            raise ConfigError(f"Covariate box needs low < high, got [{self.low}, {self.high}]")
        if self.noise_sd <= 0:
            raise ConfigError(f"noise_sd must be positive, got {self.noise_sd}")
        if not 0.0 < self.e_min < self.e_max < 1.0:
            raise ConfigError("Propensity bounds must satisfy 0 < e_min < e_max < 1")
        if self.beta is not None and len(self.beta) != self.k:
            raise ConfigError(f"beta has {len(self.beta)} entries for k={self.k}")
        if self.propensity_kind in ("inverse_linear", "inverse_linear_control", "linear"):
            if not 0.0 < self.propensity_strength < 1.0:
                raise ConfigError(f"propensity_strength must lie in (0, 1), got {self.propensity_strength}")
        if self.propensity_kind in TILTED_KINDS:
            if self.k != 1:
                raise ConfigError("Tilted covariate laws are defined for a single covariate")
            tilt_gamma(self)
        for u in (-1.0, 1.0):
            e = float(propensity_of_u(self, np.array([u]))[0])
            if not self.e_min <= e <= self.e_max:
                raise ConfigError(
                    f"Propensity {e:.4f} at the edge of the covariate box leaves [{self.e_min}, {self.e_max}]"
                )

    @property
    def mid(self) -> float:
        return 0.5 * (self.low + self.high)

    @property
    def half(self) -> float:
        return 0.5 * (self.high - self.low)

    @property
    def coefficients(self) -> np.ndarray:
        return np.ones(self.k) if self.beta is None else np.asarray(self.beta, dtype=float)

    @property
    def arm_curvature(self) -> Tuple[float, float]:
        """(a_0, a_1) quadratic loadings of the control and treated means"""
        if self.outcome_kind != "nonlinear":
            return 0.0, 0.0
        a0 = 1.0 if self.nonlinear_arm in ("control", "both") else 0.0
        a1 = 1.0 if self.nonlinear_arm in ("treated", "both") else 0.0
        return a0, a1

    @property
    def heterogeneity(self) -> float:
        return self.delta if self.outcome_kind == "linear_heterogeneous" else 0.0

    def to_dict(self) -> Dict[str, object]:
        result = asdict(self)
        result["beta"] = self.coefficients.tolist()
        return result


def tilt_gamma(config: DGPConfig) -> float:
    """
    Tilt of the linear density (1 + gamma u) / 2 that equalizes scaled covariances

    tilted: control arm tilted, gamma^2 = 3 (1 - (p / (1-p))^2), needs p in [~0.4495, 0.5)
    tilted_control: treated arm tilted, gamma^2 = 3 (1 - ((1-p) / p)^2), needs p in (0.5, ~0.5505]
    """
    ratio = config.p / (1.0 - config.p) if config.propensity_kind == "tilted" else (1.0 - config.p) / config.p
    gamma_sq = 3.0 * (1.0 - ratio * ratio)
    if not 0.0 < gamma_sq <= 1.0:
        raise ConfigError(
            f"p={config.p} cannot satisfy the equal scaled covariance condition with a valid tilt "
            f"for '{config.propensity_kind}'"
        )
    return math.sqrt(gamma_sq)


@lru_cache(maxsize=64)
def _logistic_intercept(p: float, slope: float) -> float:
    def gap(b: float) -> float:
        mean, _ = integrate.quad(lambda u: 0.5 / (1.0 + math.exp(-(b + slope * u))), -1.0, 1.0)
        return mean - p

    return float(optimize.brentq(gap, -50.0, 50.0, xtol=1e-14))


def _inverse_linear_constant(rate: float, strength: float) -> float:
    return math.log((1.0 + strength) / (1.0 - strength)) / (2.0 * strength * rate)


def propensity_of_u(config: DGPConfig, u: np.ndarray) -> np.ndarray:
    """Propensity as a function of the rescaled driver u in [-1, 1]"""
    u = np.asarray(u, dtype=float)
    kind, p, s = config.propensity_kind, config.p, config.propensity_strength
    if kind == "constant":
        return np.full(u.shape, p)
    if kind == "linear":
        return p + s * min(p, 1.0 - p) * u
    if kind == "inverse_linear":
        return 1.0 / (_inverse_linear_constant(p, s) * (1.0 + s * u))
    if kind == "inverse_linear_control":
        return 1.0 - 1.0 / (_inverse_linear_constant(1.0 - p, s) * (1.0 + s * u))
    if kind == "logistic":
        b = _logistic_intercept(p, config.logistic_slope)
        return 1.0 / (1.0 + np.exp(-(b + config.logistic_slope * u)))
    gamma = tilt_gamma(config)
    if kind == "tilted":
        return p / (p + (1.0 - p) * (1.0 + gamma * u))
    return p * (1.0 + gamma * u) / (p * (1.0 + gamma * u) + (1.0 - p))


def _driver(config: DGPConfig, x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=float) - config.mid) / config.half


def true_propensity(config: DGPConfig, covariates: np.ndarray) -> np.ndarray:
    """e(X_i) for rows of a covariate matrix (first column drives the propensity)"""
    rows = np.atleast_2d(np.asarray(covariates, dtype=float))
    return propensity_of_u(config, _driver(config, rows[:, 0]))


def _group_densities(config: DGPConfig) -> Tuple[Callable[[float], float], Callable[[float], float], float]:
    """Treated and control densities of u and the treated share"""
    if config.propensity_kind in TILTED_KINDS:
        gamma = tilt_gamma(config)

        def tilted(u: float) -> float:
            return 0.5 * (1.0 + gamma * u)

        def flat(u: float) -> float:
            return 0.5

        if config.propensity_kind == "tilted":
            return flat, tilted, config.p
        return tilted, flat, config.p

    share, _ = integrate.quad(lambda u: 0.5 * float(propensity_of_u(config, np.array([u]))[0]), -1.0, 1.0)

    def treated(u: float) -> float:
        return 0.5 * float(propensity_of_u(config, np.array([u]))[0]) / share

    def control(u: float) -> float:
        return 0.5 * (1.0 - float(propensity_of_u(config, np.array([u]))[0])) / (1.0 - share)

    return treated, control, share


@dataclass(frozen=True, eq=False)
class PopulationMoments:
    """Population treated share, means and covariances of X overall and per arm"""

    p: float
    mean: np.ndarray
    mean_treated: np.ndarray
    mean_control: np.ndarray
    cov_treated: np.ndarray
    cov_control: np.ndarray


def _moments_of(density: Callable[[float], float]) -> Tuple[float, float]:
    first, _ = integrate.quad(lambda u: u * density(u), -1.0, 1.0, epsabs=1e-13, epsrel=1e-12)
    second, _ = integrate.quad(lambda u: u * u * density(u), -1.0, 1.0, epsabs=1e-13, epsrel=1e-12)
    return first, second - first * first


def population_moments(config: DGPConfig) -> PopulationMoments:
    """
    Analytic group moments by numerical integration over the driver covariate

    The remaining covariates are independent of treatment, so their means and
    variances are those of the box.
    """
    treated, control, share = _group_densities(config)
    mean_u_t, var_u_t = _moments_of(treated)
    mean_u_c, var_u_c = _moments_of(control)
    box_var = config.half ** 2 / 3.0

    def vectors(mean_u: float, var_u: float) -> Tuple[np.ndarray, np.ndarray]:
        mean = np.full(config.k, config.mid)
        mean[0] = config.mid + config.half * mean_u
        cov = np.eye(config.k) * box_var
        cov[0, 0] = config.half ** 2 * var_u
        return mean, cov

    mu_t, sigma_t = vectors(mean_u_t, var_u_t)
    mu_c, sigma_c = vectors(mean_u_c, var_u_c)
    return PopulationMoments(
        p=share,
        mean=share * mu_t + (1.0 - share) * mu_c,
        mean_treated=mu_t,
        mean_control=mu_c,
        cov_treated=sigma_t,
        cov_control=sigma_c,
    )


def _population_density(config: DGPConfig) -> Callable[[float], float]:
    treated, control, share = _group_densities(config)
    if config.propensity_kind in TILTED_KINDS:
        return lambda u: share * treated(u) + (1.0 - share) * control(u)
    return lambda u: 0.5


def _effect_of_u(config: DGPConfig, u: float) -> float:
    x1 = config.mid + config.half * u
    a0, a1 = config.arm_curvature
    return config.tau0 + config.heterogeneity * x1 + config.curvature * (a1 - a0) * x1 * x1


def true_ate(config: DGPConfig) -> float:
    """E[m_1(X) - m_0(X)] from the first two moments of the driver covariate"""
    density = _population_density(config)
    if config.propensity_kind in TILTED_KINDS:
        mean_u, var_u = _moments_of(density)
        second_u = var_u + mean_u * mean_u
    else:
        mean_u, second_u = 0.0, 1.0 / 3.0
    mean_x = config.mid + config.half * mean_u
    second_x = config.mid ** 2 + 2.0 * config.mid * config.half * mean_u + config.half ** 2 * second_u
    a0, a1 = config.arm_curvature
    return config.tau0 + config.heterogeneity * mean_x + config.curvature * (a1 - a0) * second_x


def overlap_weighted_effect(config: DGPConfig) -> float:
    """E[e(1-e) tau(X)] / E[e(1-e)], the limit of the pooled-regression coefficient under linear e"""
    density = _population_density(config)

    def overlap(u: float) -> float:
        e = float(propensity_of_u(config, np.array([u]))[0])
        return e * (1.0 - e) * density(u)

    numerator, _ = integrate.quad(lambda u: overlap(u) * _effect_of_u(config, u), -1.0, 1.0, epsabs=1e-13, epsrel=1e-12)
    denominator, _ = integrate.quad(overlap, -1.0, 1.0, epsabs=1e-13, epsrel=1e-12)
    return numerator / denominator


def linear_propensity_coefficients(
    p: float,
    mu_t: Sequence[float],
    mu_c: Sequence[float],
    sigma_t: np.ndarray,
    sigma_c: np.ndarray,
) -> Tuple[float, np.ndarray]:
    """
    Intercept and slope of a linear propensity implied by group moments

    With A = p Sigma_t + (1-p) Sigma_c, d = mu_t - mu_c and c = d^T A^{-1} d:
    a_1 = p(1-p) / (1 + p(1-p) c) A^{-1} d and a_0 = p - a_1^T mu.

    Raises:
        SingularityError: A is singular
    """
    mu_t = np.atleast_1d(np.asarray(mu_t, dtype=float))
    mu_c = np.atleast_1d(np.asarray(mu_c, dtype=float))
    pooled = p * np.atleast_2d(sigma_t) + (1.0 - p) * np.atleast_2d(sigma_c)
    gap = mu_t - mu_c
    direction = solve_scatter(pooled, gap, "Pooled covariance p Sigma_t + (1-p) Sigma_c")
    c = float(gap @ direction)
    a1 = p * (1.0 - p) / (1.0 + p * (1.0 - p) * c) * direction
    mu = p * mu_t + (1.0 - p) * mu_c
    return p - float(a1 @ mu), a1


@dataclass(frozen=True, eq=False)
class SimulatedSample:
    dataset: Dataset
    true_ate: float
    propensity: np.ndarray
    attempts: int


def _draw(config: DGPConfig, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    x = rng.uniform(config.low, config.high, size=(n, config.k))
    if config.propensity_kind not in TILTED_KINDS:
        z = (rng.uniform(size=n) < true_propensity(config, x)).astype(np.int64)
        return x, z

    z = (rng.uniform(size=n) < config.p).astype(np.int64)
    gamma = tilt_gamma(config)
    tilted_arm = CONTROL if config.propensity_kind == "tilted" else TREATED
    mask = z == tilted_arm
    q = rng.uniform(size=int(np.count_nonzero(mask)))
    # inverse CDF of (1 + gamma u) / 2 on [-1, 1]
    u = (-1.0 + np.sqrt(1.0 - gamma * (2.0 - gamma - 4.0 * q))) / gamma
    x[mask, 0] = config.mid + config.half * u
    return x, z


def generate(config: DGPConfig, n: int, rng: Optional[np.random.Generator] = None,
             max_attempts: int = MAX_REGENERATION_ATTEMPTS) -> SimulatedSample:
    """
    Draw one sample of size n

    Samples whose smaller arm has fewer than k+2 units are redrawn up to
    max_attempts times.

    Raises:
        SimulationError: no usable sample within max_attempts draws
    """
    if n < 2 * (config.k + 2):
        raise DataValidationError(f"n={n} is too small for k={config.k}; need at least {2 * (config.k + 2)}")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    for attempt in range(1, max_attempts + 1):
        x, z = _draw(config, n, rng)
        n_t = int(z.sum())
        if min(n_t, n - n_t) >= config.k + 2:
            break
        logger.debug(f"Redrawing sample {attempt}: treated arm has {n_t} of {n} units")
    else:
        raise SimulationError(f"No sample with at least k+2 units per arm after {max_attempts} attempts (n={n})")

    a0, a1 = config.arm_curvature
    base = config.beta0 + x @ config.coefficients
    x1 = x[:, 0]
    m0 = base + config.curvature * a0 * x1 * x1
    m1 = base + config.tau0 + config.heterogeneity * x1 + config.curvature * a1 * x1 * x1
    y = np.where(z == TREATED, m1, m0) + rng.normal(0.0, config.noise_sd, size=n)

    dataset = Dataset.from_arrays(x, z, outcome=y, column_names=[f"x{j + 1}" for j in range(config.k)])
    return SimulatedSample(dataset, true_ate(config), true_propensity(config, x), attempt)


def scenario(name: str, seed: int = DEFAULT_SEED, **overrides: object) -> DGPConfig:
    """
    Named configuration from the scenario registry

    Args:
        name: registry key (see SCENARIOS)
        seed: base seed
        overrides: DGPConfig fields replacing the registry values
    """
    if name not in SCENARIOS:
        raise ConfigError(f"Unknown scenario '{name}'; available: {', '.join(scenario_names())}")
    settings = dict(SCENARIOS[name])
    settings.update(overrides)
    return DGPConfig(name=name, seed=seed, **settings)  # type: ignore[arg-type]


# Weight-convergence settings carry the arm and methods they check
CONVERGENCE_CHECKS: Dict[str, Dict[str, object]] = {
    "convergence_inverse_linear": {"arm": "treated", "methods": ("MRI",)},
    "convergence_constant_control": {"arm": "control", "methods": ("MRI",)},
    "convergence_logistic": {"arm": "treated", "methods": ("MRI",)},
    "convergence_uri_tilted": {"arm": "treated", "methods": ("MRI", "URI")},
}

SCENARIOS: Dict[str, Dict[str, object]] = {
    # MRI consistency: inverse-linear e with linear m_0
    "mri_i": {"propensity_kind": "inverse_linear", "outcome_kind": "nonlinear", "nonlinear_arm": "treated"},
    # inverse-linear 1-e with linear m_1
    "mri_ii": {"propensity_kind": "inverse_linear_control", "outcome_kind": "nonlinear", "nonlinear_arm": "control"},
    # both means linear, misspecified propensity
    "mri_iii": {"propensity_kind": "logistic", "outcome_kind": "linear_heterogeneous"},
    # constant e
    "mri_iv": {"propensity_kind": "constant", "outcome_kind": "nonlinear", "nonlinear_arm": "treated"},
    # constant effect, linear e, equal scaled covariances (p = 1/2)
    "mri_v": {"propensity_kind": "linear", "p": 0.5, "outcome_kind": "nonlinear", "nonlinear_arm": "both"},
    # URI consistency under the equal scaled covariance condition
    "uri_i": {"propensity_kind": "tilted", "p": 0.47, "outcome_kind": "nonlinear", "nonlinear_arm": "treated"},
    "uri_ii": {"propensity_kind": "tilted_control", "p": 0.53, "outcome_kind": "nonlinear", "nonlinear_arm": "control"},
    "uri_iii": {"propensity_kind": "tilted", "p": 0.47, "outcome_kind": "linear_heterogeneous"},
    "uri_iv": {"propensity_kind": "constant", "outcome_kind": "nonlinear", "nonlinear_arm": "treated"},
    "uri_v": {"propensity_kind": "logistic", "outcome_kind": "linear"},
    "uri_vi": {"propensity_kind": "linear", "p": 0.3, "outcome_kind": "nonlinear", "nonlinear_arm": "both"},
    # heterogeneous effect with linear e: URI targets the overlap-weighted contrast
    "uri_overlap": {
        "propensity_kind": "linear",
        "p": 0.3,
        "propensity_strength": 0.6,
        "outcome_kind": "linear_heterogeneous",
        "delta": 2.0,
    },
    "convergence_inverse_linear": {"propensity_kind": "inverse_linear", "outcome_kind": "linear"},
    "convergence_constant_control": {"propensity_kind": "constant", "outcome_kind": "linear"},
    "convergence_logistic": {"propensity_kind": "logistic", "outcome_kind": "linear"},
    "convergence_uri_tilted": {"propensity_kind": "tilted", "p": 0.47, "outcome_kind": "linear"},
}


@dataclass(frozen=True, eq=False)
class SimulationReport:
    """
    Per-replication records and per-n summaries of one experiment

    records: scenario, n, replication, estimator, estimate, true_ate,
        reference, bias, gap_to_reference, sup_weight_error
    summary: per (scenario, estimator, n) medians, interquartile ranges and the
        absolute error of the mean estimate against the truth and the reference
    """

    experiment: str
    configs: List[DGPConfig]
    n_grid: Tuple[int, ...]
    replications: int
    records: pd.DataFrame
    summary: pd.DataFrame
    metadata: Dict[str, str] = field(default_factory=dict)

    def summary_row(self, scenario_name: str, estimator: str, n: int) -> pd.Series:
        rows = self.summary[
            (self.summary["scenario"] == scenario_name)
            & (self.summary["estimator"] == estimator)
            & (self.summary["n"] == n)
        ]
        if rows.empty:
            raise ConfigError(f"No summary for {scenario_name}/{estimator} at n={n}")
        return rows.iloc[0]

    def to_dict(self) -> Dict[str, object]:
        return {
            "experiment": self.experiment,
            "configs": [c.to_dict() for c in self.configs],
            "n_grid": list(self.n_grid),
            "replications": self.replications,
            "metadata": dict(self.metadata),
            "summary": self.summary.to_dict(orient="records"),
        }


def _seed_for(config: DGPConfig, scenario_index: int, grid_index: int, replication: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(config.seed, spawn_key=(scenario_index, grid_index, replication))
    return np.random.default_rng(sequence)


def _sup_error(weights: np.ndarray, mask: np.ndarray, inverse_propensity: np.ndarray, n: int) -> float:
    return float(np.max(np.abs(n * weights[mask] - inverse_propensity[mask])))


def _replicate(task: Tuple[DGPConfig, int, int, int, int, str, Tuple[str, ...], float, int]) -> List[Dict[str, object]]:
    config, scenario_index, grid_index, replication, n, arm, methods, reference, max_attempts = task
    rng = _seed_for(config, scenario_index, grid_index, replication)
    sample = generate(config, n, rng, max_attempts)
    d = sample.dataset
    if arm == "treated":
        mask, inverse = d.mask(TREATED), 1.0 / sample.propensity
    else:
        mask, inverse = d.mask(CONTROL), 1.0 / (1.0 - sample.propensity)

    records = []
    for method in methods:
        w = mri_weights(d, profile(d, "full_mean")) if method == "MRI" else uri_weights(d)
        estimate = hajek_estimate(d, w).value
        records.append(
            {
                "scenario": config.name,
                "n": n,
                "replication": replication,
                "estimator": method,
                "estimate": estimate,
                "true_ate": sample.true_ate,
                "reference": reference,
                "bias": estimate - sample.true_ate,
                "gap_to_reference": estimate - reference,
                "sup_weight_error": _sup_error(w.weights, mask, inverse, n),
            }
        )
    return records


def _iqr(values: pd.Series) -> float:
    return float(values.quantile(0.75) - values.quantile(0.25))


def _summarize(records: pd.DataFrame) -> pd.DataFrame:
    rows = []
    for (name, estimator, n), group in records.groupby(["scenario", "estimator", "n"], sort=False):
        mean_estimate = float(group["estimate"].mean())
        rows.append(
            {
                "scenario": name,
                "estimator": estimator,
                "n": int(n),
                "replications": int(len(group)),
                "median_sup_weight_error": float(group["sup_weight_error"].median()),
                "iqr_sup_weight_error": _iqr(group["sup_weight_error"]),
                "mean_estimate": mean_estimate,
                "median_bias": float(group["bias"].median()),
                "iqr_bias": _iqr(group["bias"]),
                "abs_mean_bias": abs(mean_estimate - float(group["true_ate"].iloc[0])),
                "abs_mean_gap_to_reference": abs(mean_estimate - float(group["reference"].iloc[0])),
            }
        )
    return pd.DataFrame(rows)


def _run(
    experiment: str,
    plans: Sequence[Tuple[DGPConfig, str, Tuple[str, ...], float]],
    n_grid: Sequence[int],
    replications: int,
    workers: int,
    max_attempts: int,
) -> SimulationReport:
    if replications < 1:
        raise ConfigError(f"Replications must be positive, got {replications}")
    if not n_grid:
        raise ConfigError("The n grid is empty")
    grid = tuple(int(n) for n in n_grid)
    records: List[Dict[str, object]] = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for scenario_index, (config, arm, methods, reference) in enumerate(plans):
            for grid_index, n in enumerate(grid):
                tasks = [
                    (config, scenario_index, grid_index, rep, n, arm, methods, reference, max_attempts)
                    for rep in range(replications)
                ]
                results = pool.map(_replicate, tasks) if pool is not None else map(_replicate, tasks)
                for chunk in results:
                    records.extend(chunk)
                logger.info(f"{experiment}: scenario {config.name}, n={n} done ({replications} replications)")
    finally:
        if pool is not None:
            pool.shutdown()

    frame = pd.DataFrame(records)
    metadata = {}
    if any(config.propensity_kind in TILTED_KINDS for config, _, _, _ in plans):
        metadata["tilted_construction"] = TILTED_NOTE
    return SimulationReport(
        experiment=experiment,
        configs=[plan[0] for plan in plans],
        n_grid=grid,
        replications=replications,
        records=frame,
        summary=_summarize(frame),
        metadata=metadata,
    )


def weight_convergence_experiment(
    config: Union[DGPConfig, str],
    n_grid: Sequence[int] = DEFAULT_N_GRID,
    replications: int = DEFAULT_REPLICATIONS,
    arm: Optional[str] = None,
    methods: Optional[Sequence[str]] = None,
    workers: int = 1,
    max_attempts: int = MAX_REGENERATION_ATTEMPTS,
) -> SimulationReport:
    """
    Sup-norm distance between n-scaled weights and inverse propensities

    For the treated arm the distance is max |n w_i - 1/e(X_i)| over treated
    units; for the control arm it is max |n w_i - 1/(1 - e(X_i))| over controls.

    Args:
        config: DGPConfig or the name of a registered scenario
        n_grid: sample sizes
        replications: replications per sample size
        arm: treated or control (registered convergence scenarios carry a default)
        methods: subset of MRI and URI
        workers: threads running replications
        max_attempts: redraw bound for degenerate samples
    """
    if isinstance(config, str):
        config = scenario(config)
    defaults = CONVERGENCE_CHECKS.get(config.name, {"arm": "treated", "methods": ("MRI",)})
    chosen_arm = arm or str(defaults["arm"])
    if chosen_arm not in ("treated", "control"):
        raise ConfigError(f"Arm must be treated or control, got '{chosen_arm}'")
    chosen = tuple(m.upper() for m in (methods or defaults["methods"]))  # type: ignore[union-attr]
    for method in chosen:
        if method not in ("MRI", "URI"):
            raise ConfigError(f"Weight convergence checks MRI or URI, not '{method}'")
    plan = (config, chosen_arm, chosen, true_ate(config))
    return _run("weight_convergence", [plan], n_grid, replications, workers, max_attempts)


def consistency_experiment(
    scenarios: Sequence[Union[DGPConfig, str]],
    n_grid: Sequence[int] = DEFAULT_N_GRID,
    replications: int = DEFAULT_REPLICATIONS,
    workers: int = 1,
    seed: int = DEFAULT_SEED,
    max_attempts: int = MAX_REGENERATION_ATTEMPTS,
) -> SimulationReport:
    """
    Bias of the MRI and URI ATE estimators across sample sizes

    Each scenario also records a reference value: the ATE, or for linear
    propensities with heterogeneous effects the overlap-weighted contrast
    that the pooled regression converges to.
    """
    plans = []
    for item in scenarios:
        config = scenario(item, seed=seed) if isinstance(item, str) else item
        reference = true_ate(config)
        if config.propensity_kind in ("linear", "constant") and config.outcome_kind == "linear_heterogeneous":
            reference = overlap_weighted_effect(config)
        plans.append((config, "treated", ("MRI", "URI"), reference))
    if not plans:
        raise ConfigError("No scenarios selected")
    return _run("consistency", plans, n_grid, replications, workers, max_attempts)


def scenario_names(prefix: str = "") -> List[str]:
    return sorted(name for name in SCENARIOS if name.startswith(prefix))
