"""
ologit.py - ordered logit model linking a PVS count to a visual rating class.

    y* = beta * x + e,  e ~ standard logistic
    y  = j  when mu[j-1] < y* <= mu[j]   (mu[-1] = -inf, mu[m-1] = +inf)

The model is calibrated on synthetic (noisy count, rating) pairs and then
scores segmentations: the log-likelihood of the observed ratings given
the counts a segmentation produces.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
import pathlib
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

# Import external packages
import numpy as np
import pandas as pd
from scipy import optimize
from scipy.special import expit

# Import functions from local modules
from tubeness.errors import (
    CalibrationError,
    ModelFormatError,
    NonIdentifiableError,
    ParameterError,
)
from utils.utils_logger import logger

#####################################
# Constants
#####################################

PROBABILITY_FLOOR = 1e-300

MAX_ITERATIONS = 500
LOGL_TOLERANCE = 1e-8

# parameter box for the fit: slope, first threshold, log threshold increments
BETA_BOUNDS = (1e-6, 50.0)
MU0_BOUNDS = (-1e4, 1e4)
LOG_INCREMENT_BOUNDS = (-20.0, 10.0)

DEFAULT_LOGNORMAL_MU = 2.3
DEFAULT_LOGNORMAL_SIGMA = 0.9
DEFAULT_SYNTHETIC_SIZE = 1000

#####################################
# Rating scales
#####################################


@dataclass(frozen=True)
class RatingScale:
    """
    Class j covers counts in (upper_bounds[j-1], upper_bounds[j]];
    the last class is everything above upper_bounds[-1].

    count_kind says which count raters bin: "slice" (densest slice) or
    "total" (whole region).
    """

    name: str
    upper_bounds: Tuple[int, ...]
    count_kind: str

    def __post_init__(self):
        bounds = self.upper_bounds
        if len(bounds) < 1 or bounds[0] < 0 or any(lo >= hi for lo, hi in zip(bounds, bounds[1:])):
            raise ParameterError(f"scale {self.name}: upper bounds must be increasing and start >= 0, got {bounds}")
        if self.count_kind not in ("slice", "total"):
            raise ParameterError(f"scale {self.name}: count_kind must be 'slice' or 'total'")

    @property
    def m(self) -> int:
        return len(self.upper_bounds) + 1

    def classify(self, count) -> np.ndarray:
        """Rating class for each count."""
        return np.searchsorted(np.asarray(self.upper_bounds), np.asarray(count), side="left")

    def interval(self, j: int) -> Tuple[int, Optional[int]]:
        """Inclusive (low, high) count range of class j; high is None for the open top class."""
        low = 0 if j == 0 else self.upper_bounds[j - 1] + 1
        high = self.upper_bounds[j] if j < len(self.upper_bounds) else None
        return low, high


WARDLAW = RatingScale("wardlaw", (0, 10, 20, 40), "slice")
PATANKAR = RatingScale("patankar", (0, 5, 10, 15), "total")
SCALES: Dict[str, RatingScale] = {s.name: s for s in (WARDLAW, PATANKAR)}


def get_scale(name: str) -> RatingScale:
    try:
        return SCALES[name]
    except KeyError:
        raise ParameterError(f"unknown rating scale {name!r}; choose from {sorted(SCALES)}") from None


#####################################
# Model
#####################################


@dataclass(frozen=True)
class OrderedLogitModel:
    beta: float
    mu: Tuple[float, ...]
    scale: Optional[str] = None

    def __post_init__(self):
        mu = tuple(float(v) for v in self.mu)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "beta", float(self.beta))
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if len(mu) < 1 or not all(math.isfinite(v) for v in mu):
            raise ParameterError(f"mu must hold at least one finite threshold, got {mu}")
        if any(lo >= hi for lo, hi in zip(mu, mu[1:])):
            raise ParameterError(f"mu must be strictly increasing, got {mu}")

    @property
    def m(self) -> int:
        return len(self.mu) + 1

    def boundary_ratios(self) -> Tuple[float, ...]:
        """Thresholds in count units (mu_j / beta)."""
        return tuple(v / self.beta for v in self.mu)


WARDLAW_PUBLISHED = OrderedLogitModel(0.514, (-2.840, 5.708, 10.497, 20.040), "wardlaw")
PATANKAR_PUBLISHED = OrderedLogitModel(1.906, (2.269, 9.569, 18.995, 28.639), "patankar")
PUBLISHED_MODELS: Dict[str, OrderedLogitModel] = {"wardlaw": WARDLAW_PUBLISHED, "patankar": PATANKAR_PUBLISHED}


def class_probabilities(model: OrderedLogitModel, x) -> np.ndarray:
    """P(y = j | x) for j = 0..m-1; shape (m,) for scalar x, (n, m) for a vector."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(model.mu)[None, :] - model.beta * np.atleast_1d(x)[:, None]
    cdf = np.concatenate(
        (np.zeros((z.shape[0], 1)), expit(z), np.ones((z.shape[0], 1))), axis=1
    )
    probs = np.clip(np.diff(cdf, axis=1), 0.0, 1.0)
    return probs[0] if x.ndim == 0 else probs


def _interval_probability(upper: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """L(upper) - L(lower), evaluated on the tail where the difference keeps its digits."""
    direct = expit(upper) - expit(lower)
    mirrored = expit(-lower) - expit(-upper)
    # the open classes give inf + -inf here, which selects `direct`
    with np.errstate(invalid="ignore"):
        upper_tail = upper + lower > 0
    return np.where(upper_tail, mirrored, direct)


def _observations(observations) -> Tuple[np.ndarray, np.ndarray]:
    pairs = list(observations)
    if not pairs:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    counts, ratings = zip(*pairs)
    return np.asarray(counts, dtype=np.float64), np.asarray(ratings, dtype=np.int64)


def _selected_probabilities(model: OrderedLogitModel, counts: np.ndarray, ratings: np.ndarray) -> np.ndarray:
    if np.any((ratings < 0) | (ratings >= model.m)):
        bad = ratings[(ratings < 0) | (ratings >= model.m)][0]
        raise ParameterError(f"rating {bad} out of range for a {model.m}-class model")
    cuts = np.concatenate(([-np.inf], model.mu, [np.inf]))
    latent = model.beta * counts
    return _interval_probability(cuts[ratings + 1] - latent, cuts[ratings] - latent)


def log_likelihood(model: OrderedLogitModel, observations: Iterable[Tuple[float, int]]) -> float:
    """Sum over observations of log P(y = rating | count), probabilities floored at 1e-300."""
    counts, ratings = _observations(observations)
    if counts.size == 0:
        return 0.0
    p = _selected_probabilities(model, counts, ratings)
    return float(np.sum(np.log(np.maximum(p, PROBABILITY_FLOOR))))


def probability_table(model: OrderedLogitModel, counts: Sequence[float]) -> pd.DataFrame:
    """Class-probability curves, one row per count: count, p0, ..., p{m-1}."""
    probs = class_probabilities(model, np.asarray(counts, dtype=np.float64).reshape(-1))
    table = pd.DataFrame(probs, columns=[f"p{j}" for j in range(model.m)])
    table.insert(0, "count", np.asarray(counts).reshape(-1))
    return table


def sample_ratings(model: OrderedLogitModel, counts, rng: np.random.Generator) -> np.ndarray:
    """Draw ratings from the model: class of beta * x + logistic noise."""
    latent = model.beta * np.asarray(counts, dtype=np.float64) + rng.logistic(size=np.shape(counts))
    return np.searchsorted(np.asarray(model.mu), latent, side="left")


#####################################
# Model files
#####################################


def save_model(model: OrderedLogitModel, path) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"m {model.m}",
        f"beta {model.beta:.17g}",
        "mu " + " ".join(f"{v:.17g}" for v in model.mu),
    ]
    if model.scale:
        lines.append(f"scale {model.scale}")
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote model to {path}")
    return path


def load_model(path) -> OrderedLogitModel:
    path = pathlib.Path(path)
    values: Dict[str, list] = {}
    for line in path.read_text().splitlines():
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if fields[0] not in ("m", "beta", "mu", "scale"):
            raise ModelFormatError(f"unknown key {fields[0]!r} in model file {path}")
        values[fields[0]] = fields[1:]
    try:
        m = int(values["m"][0])
        beta = float(values["beta"][0])
        mu = tuple(float(v) for v in values["mu"])
    except (KeyError, IndexError, ValueError) as e:
        raise ModelFormatError(f"malformed model file {path}: {e}") from e
    if len(mu) != m - 1:
        raise ModelFormatError(f"model file {path} declares m={m} but has {len(mu)} thresholds")
    scale = values.get("scale", [None])[0]
    try:
        return OrderedLogitModel(beta, mu, scale)
    except ParameterError as e:
        raise ModelFormatError(f"model file {path}: {e}") from e


#####################################
# Synthetic calibration data
#####################################


@dataclass(frozen=True)
class SyntheticRatingDataset:
    """pc: true counts, npc: noisy counts (the regressor), rc: assigned classes."""

    pc: np.ndarray
    npc: np.ndarray
    rc: np.ndarray
    metadata: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.npc.size)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"pc": self.pc, "npc": self.npc, "rc": self.rc})

    def save_csv(self, path) -> pathlib.Path:
        path = pathlib.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    def observations(self):
        return zip(self.npc.tolist(), self.rc.tolist())


def generate_synthetic(
    scale: RatingScale,
    n: int = DEFAULT_SYNTHETIC_SIZE,
    seed: int = 7,
    lognormal_mu: float = DEFAULT_LOGNORMAL_MU,
    lognormal_sigma: float = DEFAULT_LOGNORMAL_SIGMA,
    rating_from: str = "pc",
) -> SyntheticRatingDataset:
    """
    Three steps: PC ~ LogNormal rounded; NPC ~ Normal(PC, 1) rounded and
    clamped at 0; RC = class of PC (or of NPC with rating_from="npc").

    The generator is numpy's PCG64 seeded with `seed`.
    """
    if n < 1:
        raise ParameterError(f"n must be at least 1, got {n}")
    if not lognormal_sigma > 0:
        raise ParameterError(f"lognormal_sigma must be positive, got {lognormal_sigma}")
    if rating_from not in ("pc", "npc"):
        raise ParameterError(f"rating_from must be 'pc' or 'npc', got {rating_from!r}")

    rng = np.random.default_rng(seed)
    pc = np.rint(rng.lognormal(lognormal_mu, lognormal_sigma, size=n)).astype(np.int64)
    npc = np.maximum(np.rint(rng.normal(pc, 1.0)), 0).astype(np.int64)
    rc = scale.classify(pc if rating_from == "pc" else npc).astype(np.int64)

    metadata = {
        "scale": scale.name,
        "n": n,
        "seed": seed,
        "generator": "PCG64",
        "lognormal_mu": lognormal_mu,
        "lognormal_sigma": lognormal_sigma,
        "rating_from": rating_from,
    }
    logger.info(
        f"Generated {n} synthetic ratings on {scale.name} (seed {seed}); "
        f"class counts {np.bincount(rc, minlength=scale.m).tolist()}"
    )
    return SyntheticRatingDataset(pc, npc, rc, metadata)


def weighted_probability_sum(model: OrderedLogitModel, dataset: SyntheticRatingDataset) -> float:
    """Diagnostic sum of P(y = RC | NPC) without logs, as the calibration objective is sometimes printed."""
    return float(np.sum(_selected_probabilities(model, dataset.npc.astype(np.float64), dataset.rc)))


#####################################
# Maximum likelihood fit
#####################################


@dataclass(frozen=True)
class FitResult:
    model: OrderedLogitModel
    log_likelihood: float
    iterations: int
    converged: bool
    at_bound: bool
    empty_classes: Tuple[int, ...]
    message: str


def _unpack(theta: np.ndarray) -> Tuple[float, np.ndarray]:
    increments = np.exp(theta[2:])
    mu = theta[1] + np.concatenate(([0.0], np.cumsum(increments)))
    return float(theta[0]), mu


def _negative_log_likelihood(theta: np.ndarray, x: np.ndarray, y: np.ndarray, m: int):
    """Objective and analytic gradient in (beta, mu0, log increments)."""
    beta, mu = _unpack(theta)
    cuts = np.concatenate(([-np.inf], mu, [np.inf]))
    upper = cuts[y + 1] - beta * x
    lower = cuts[y] - beta * x
    p = np.maximum(_interval_probability(upper, lower), PROBABILITY_FLOOR)
    f_upper = expit(upper) * expit(-upper)
    f_lower = expit(lower) * expit(-lower)

    value = -np.sum(np.log(p))

    d_beta = np.sum(x * (f_upper - f_lower) / p)
    d_mu = np.zeros(m - 1)
    top = y < m - 1
    bottom = y > 0
    d_mu -= np.bincount(y[top], weights=f_upper[top] / p[top], minlength=m - 1)
    d_mu += np.bincount(y[bottom] - 1, weights=f_lower[bottom] / p[bottom], minlength=m - 1)

    # mu_k = mu0 + sum_{i <= k} exp(eta_i)
    tail = np.cumsum(d_mu[::-1])[::-1]
    gradient = np.concatenate(([d_beta, tail[0]], np.exp(theta[2:]) * tail[1:]))
    return value, gradient


def _monotone(boundaries: np.ndarray) -> np.ndarray:
    out = np.array(boundaries, dtype=np.float64)
    for k in range(1, out.size):
        out[k] = max(out[k], out[k - 1] + 0.5)
    return out


def _initial_theta(x: np.ndarray, y: np.ndarray, m: int) -> np.ndarray:
    # thresholds halfway between neighbouring class medians, slope 1
    medians = [np.median(x[y == j]) if np.any(y == j) else np.nan for j in range(m)]
    known = [j for j in range(m) if not np.isnan(medians[j])]
    filled = np.interp(np.arange(m), known, [medians[j] for j in known])
    boundaries = _monotone(0.5 * (filled[:-1] + filled[1:]))
    return np.concatenate(([1.0, boundaries[0]], np.log(np.diff(boundaries))))


def _separating_boundaries(x: np.ndarray, y: np.ndarray, m: int) -> Optional[np.ndarray]:
    """Gap midpoints when every class boundary splits the counts cleanly, else None."""
    gaps = np.full(m - 1, np.nan)
    for k in range(m - 1):
        low, high = x[y <= k], x[y > k]
        if low.size and high.size:
            if low.max() >= high.min():
                return None
            gaps[k] = 0.5 * (low.max() + high.min())
    known = np.flatnonzero(~np.isnan(gaps))
    gaps = np.interp(np.arange(m - 1), known, gaps[known])
    return _monotone(gaps)


def fit_detailed(
    dataset: SyntheticRatingDataset, m: int, scale_name: Optional[str] = None
) -> FitResult:
    """Maximise sum_i log P(y = RC_i | NPC_i) over (beta, mu)."""
    x = np.asarray(dataset.npc, dtype=np.float64)
    y = np.asarray(dataset.rc, dtype=np.int64)
    if x.size == 0:
        raise NonIdentifiableError("non-identifiable: empty calibration dataset")
    if m < 2:
        raise ParameterError(f"need at least 2 classes, got m={m}")
    if np.any((y < 0) | (y >= m)):
        raise ParameterError(f"ratings must lie in [0, {m})")
    present = np.unique(y)
    if present.size < 2:
        logger.error(f"All {x.size} calibration samples fall in class {present[0]}")
        raise NonIdentifiableError(f"non-identifiable: every sample is in class {present[0]}")
    empty = tuple(j for j in range(m) if j not in set(present.tolist()))
    if empty:
        logger.warning(f"Rating classes {empty} have no calibration samples; their thresholds are weakly identified")

    gaps = _separating_boundaries(x, y, m)
    if gaps is not None:
        # no finite maximum exists; report the limit direction instead
        beta = BETA_BOUNDS[1]
        model = OrderedLogitModel(beta, tuple(beta * gaps), scale_name)
        logl = log_likelihood(model, zip(x.tolist(), y.tolist()))
        logger.warning(f"Calibration data are perfectly separated at counts {gaps.tolist()}; slope pinned at {beta}")
        return FitResult(model, logl, 0, False, True, empty, "perfect separation")

    theta0 = _initial_theta(x, y, m)
    f0, _ = _negative_log_likelihood(theta0, x, y, m)
    bounds = [BETA_BOUNDS, MU0_BOUNDS] + [LOG_INCREMENT_BOUNDS] * (m - 2)
    history = [f0]

    def record(theta: np.ndarray) -> None:
        history.append(_negative_log_likelihood(theta, x, y, m)[0])

    result = optimize.minimize(
        _negative_log_likelihood,
        theta0,
        args=(x, y, m),
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": MAX_ITERATIONS, "ftol": LOGL_TOLERANCE / max(1.0, abs(f0)), "gtol": 1e-9},
        callback=record,
    )
    if not np.all(np.isfinite(result.x)) or not np.isfinite(result.fun):
        logger.error(f"Ordered logit fit diverged: {result.message}")
        raise CalibrationError(f"failure to converge: {result.message}")
    if not result.success:
        # status 1: iteration or evaluation limit
        if result.status == 1 and (len(history) < 2 or abs(history[-2] - history[-1]) >= LOGL_TOLERANCE):
            logger.error(f"Ordered logit fit hit {MAX_ITERATIONS} iterations with LogL still changing")
            raise CalibrationError(f"failure to converge after {result.nit} iterations: {result.message}")
        logger.warning(f"Ordered logit fit stopped early: {result.message}")

    theta = np.clip(result.x, [b[0] for b in bounds], [b[1] for b in bounds])
    beta, mu = _unpack(theta)
    lows = np.array([b[0] for b in bounds])
    highs = np.array([b[1] for b in bounds])
    at_bound = bool(np.any(np.isclose(theta, lows, rtol=1e-6, atol=1e-9) | np.isclose(theta, highs, rtol=1e-6, atol=1e-9)))
    if at_bound:
        logger.warning(f"Fit reached a parameter bound (beta={beta:.4g}); data may be separated")

    model = OrderedLogitModel(beta, tuple(mu), scale_name)
    logl = -float(result.fun)
    logger.info(f"Fitted ordered logit: beta={beta:.4f}, mu={np.round(mu, 3).tolist()}, LogL={logl:.3f}")
    return FitResult(
        model=model,
        log_likelihood=logl,
        iterations=int(result.nit),
        converged=bool(result.success),
        at_bound=at_bound,
        empty_classes=empty,
        message=str(result.message),
    )


def fit(dataset: SyntheticRatingDataset, m: int) -> OrderedLogitModel:
    """Calibrated model for an m-class scale."""
    scale_name = dataset.metadata.get("scale") if dataset.metadata else None
    return fit_detailed(dataset, m, scale_name).model
