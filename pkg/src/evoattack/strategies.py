"""(1+1)-ES, NES and CMA-ES behind a shared ask/tell interface.

All optimizers *maximize* the fitness handed to ``tell`` and operate on flat
float64 vectors. Every random draw comes from the ``numpy.random.Generator``
passed at construction, so a fixed seed reproduces the candidate stream.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, ContractError, NumericError

ALGORITHMS = ("one_plus_one", "nes", "cma_es")

ALIASES = {
    "one_plus_one": "one_plus_one",
    "1p1": "one_plus_one",
    "(1+1)-es": "one_plus_one",
    "nes": "nes",
    "cma_es": "cma_es",
    "cmaes": "cma_es",
    "cma-es": "cma_es",
}

# per-algorithm defaults; generation caps are enforced by the attack loop
DEFAULTS = {
    "one_plus_one": {"sigma": 1.0, "period": 10, "factor": 0.85, "generations": 10000},
    "nes": {"sigma": 1.0, "eta": 0.05, "popsize": 1, "baseline_decay": 0.9, "generations": 10000},
    "cma_es": {"sigma": 1.0, "popsize": 25, "generations": 400},
}


def canonical_algorithm(name):
    try:
        return ALIASES[str(name).lower()]
    except KeyError:
        raise ConfigError(
            f"unknown algorithm {name!r}; expected one of {', '.join(ALGORITHMS)}"
        ) from None


class Optimizer:
    """Strict ask -> tell -> ask alternation over batches of candidates."""

    name = "optimizer"

    def __init__(self, dimension, rng):
        if dimension < 1:
            raise ConfigError(f"dimension must be >= 1, got {dimension}")
        self.dimension = int(dimension)
        self.rng = rng
        self.generation = 0
        self._pending = None

    def ask(self):
        if self._pending is not None:
            raise ContractError("ask() called twice without an intervening tell()")
        batch = self._sample()
        self._pending = batch
        return [row.copy() for row in batch]

    def tell(self, candidates, fitnesses):
        if self._pending is None:
            raise ContractError("tell() called without a preceding ask()")
        candidates = np.asarray(candidates, dtype=np.float64)
        fitnesses = np.asarray(fitnesses, dtype=np.float64).reshape(-1)
        expected = self._pending.shape
        if candidates.shape != expected or fitnesses.shape[0] != expected[0]:
            raise ContractError(
                f"tell() expects {expected[0]} candidates of length {expected[1]} "
                f"with one fitness each, got {candidates.shape} / {fitnesses.shape[0]}"
            )
        self._pending = None
        self._update(candidates, fitnesses)
        self.generation += 1

    def _sample(self):
        raise NotImplementedError

    def _update(self, candidates, fitnesses):
        raise NotImplementedError


class OnePlusOneES(Optimizer):
    """Elitist (1+1)-ES with the 1/5 success rule.

    The step size is revisited every ``period`` mutations: it is divided by
    ``factor`` when more than a fifth of them improved the parent, multiplied
    by it when fewer did. Equal fitness counts as a failure.

    When ``fitness0`` is not given the first ``ask`` returns the starting
    point itself so that its fitness is measured like any other candidate.
    """

    name = "one_plus_one"

    def __init__(self, x0, rng, sigma=1.0, period=10, factor=0.85, fitness0=None):
        x0 = np.array(x0, dtype=np.float64).reshape(-1)
        super().__init__(x0.size, rng)
        if not sigma >= 0:
            raise ConfigError(f"sigma must be non-negative, got {sigma}")
        if period < 1 or not 0 < factor < 1:
            raise ConfigError("1/5 rule needs period >= 1 and 0 < factor < 1")
        self.current = x0
        self.current_fitness = None if fitness0 is None else float(fitness0)
        self.sigma = float(sigma)
        self.period = int(period)
        self.factor = float(factor)
        self.success_window = []

    def _sample(self):
        if self.current_fitness is None:
            return self.current[None, :].copy()
        step = self.rng.standard_normal(self.dimension)
        return (self.current + self.sigma * step)[None, :]

    def _update(self, candidates, fitnesses):
        fitness = fitnesses[0]
        if not np.isfinite(fitness):
            fitness = -np.inf
        if self.current_fitness is None:
            self.current_fitness = float(fitness)
            return
        improved = fitness > self.current_fitness
        if improved:
            self.current = candidates[0].copy()
            self.current_fitness = float(fitness)
        self.success_window.append(bool(improved))
        if len(self.success_window) >= self.period:
            self.sigma = one_fifth_rule(self.sigma, self.success_window, self.factor)
            self.success_window = []


def one_fifth_rule(sigma, window, factor=0.85):
    """Return the adapted step size for a window of success flags."""
    rate = sum(window) / len(window)
    if rate > 0.2:
        return sigma / factor
    if rate < 0.2:
        return sigma * factor
    return sigma


UTILITY_CLIP = 3.0


class NES(Optimizer):
    """Search-gradient NES with a fixed isotropic Gaussian.

    Candidates are ``mean + sigma * z``; after evaluation the mean moves along
    the score-function estimate of the fitness gradient, see :func:`nes_update`.

    With a single sample per generation there is no batch to centre on, so
    fitness is standardized with exponentially weighted running statistics
    of earlier generations (decay ``baseline_decay``), and the resulting
    utility is clipped to ``[-UTILITY_CLIP, UTILITY_CLIP]``. The very first
    update uses baseline 0 and scale 1, and the update is skipped while the
    running variance is still zero.
    """

    name = "nes"

    def __init__(self, x0, rng, sigma=1.0, eta=0.05, popsize=1, baseline_decay=0.9):
        x0 = np.array(x0, dtype=np.float64).reshape(-1)
        super().__init__(x0.size, rng)
        if not (sigma > 0 and eta > 0 and popsize >= 1):
            raise ConfigError("NES needs sigma > 0, eta > 0 and popsize >= 1")
        if not 0 <= baseline_decay < 1:
            raise ConfigError("baseline_decay must lie in [0, 1)")
        self.mean = x0
        self.sigma = float(sigma)
        self.eta = float(eta)
        self.popsize = int(popsize)
        self.baseline_decay = float(baseline_decay)
        self.baseline = None
        self.fitness_var = 0.0
        self._noise = None

    def _sample(self):
        self._noise = self.rng.standard_normal((self.popsize, self.dimension))
        return self.mean + self.sigma * self._noise

    def _update(self, candidates, fitnesses):
        noise, self._noise = self._noise, None
        if self.popsize > 1:
            self.mean = nes_update(self.mean, self.sigma, self.eta, fitnesses, noise)
            return
        f = fitnesses[0]
        if not np.isfinite(f):
            return
        if self.baseline is None:
            self.mean = nes_update(self.mean, self.sigma, self.eta, fitnesses, noise)
            self.baseline = float(f)
            return
        if self.fitness_var > 0:
            # clipped: on a plateau the variance decays faster than the signal
            u = (f - self.baseline) / math.sqrt(self.fitness_var)
            u = min(max(u, -UTILITY_CLIP), UTILITY_CLIP)
            self.mean = nes_update(self.mean, self.sigma, self.eta, [u], noise, baseline=0.0)
        decay = self.baseline_decay
        delta = f - self.baseline
        self.baseline += (1 - decay) * delta
        self.fitness_var = decay * (self.fitness_var + (1 - decay) * delta * delta)


def nes_update(mean, sigma, eta, fitnesses, noise, baseline=None, scale=1.0):
    """One NES mean update.

    ``mean + eta / (lam * sigma) * sum_i (f_i - b) / scale * z_i``. The
    baseline ``b`` defaults to 0 for a single sample and to the batch mean
    otherwise. Samples with a non-finite fitness are dropped from the estimate.
    """
    fitnesses = np.asarray(fitnesses, dtype=np.float64).reshape(-1)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim != 2 or noise.shape[0] != fitnesses.size:
        raise ContractError(
            f"nes_update needs one noise vector per fitness, got {noise.shape[0]} and {fitnesses.size}"
        )
    lam = fitnesses.size
    keep = np.isfinite(fitnesses)
    if not keep.any():
        return np.array(mean, dtype=np.float64)
    if baseline is None:
        baseline = fitnesses[keep].mean() if lam > 1 else 0.0
    centred = np.where(keep, (fitnesses - baseline) / scale, 0.0)
    gradient = centred @ noise / (lam * sigma)
    return mean + eta * gradient


def recombination_weights(popsize):
    """Positive log-linear weights for the best ``popsize // 2`` candidates."""
    mu = popsize // 2
    raw = math.log((popsize + 1) / 2) - np.log(np.arange(1, mu + 1))
    return raw / raw.sum()


class CMAES(Optimizer):
    """CMA-ES with rank-one and rank-mu covariance updates and CSA step size.

    Learning rates are the standard defaults as functions of n and lambda. The
    eigendecomposition of ``C`` is refreshed lazily; eigenvalues falling
    below ``1e-14`` times the largest one are floored and ``C`` rebuilt.
    """

    name = "cma_es"
    EIGEN_FLOOR = 1e-14

    def __init__(self, x0, rng, sigma=1.0, popsize=25):
        x0 = np.array(x0, dtype=np.float64).reshape(-1)
        super().__init__(x0.size, rng)
        if not sigma >= 0 or popsize < 2:
            raise ConfigError("CMA-ES needs sigma >= 0 and popsize >= 2")
        n = self.dimension
        self.popsize = lam = int(popsize)
        self.mu = lam // 2
        self.weights = recombination_weights(lam)
        self.mu_eff = 1.0 / np.sum(self.weights**2)

        mu_eff = self.mu_eff
        self.c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
        self.d_sigma = 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (n + 1)) - 1) + self.c_sigma
        self.c_c = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
        self.c_1 = 2 / ((n + 1.3) ** 2 + mu_eff)
        self.c_mu = min(1 - self.c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff))
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n**2))
        self.eigen_gap = max(1, int(1 / (10 * n * (self.c_1 + self.c_mu))))

        self.mean = x0
        self.sigma = float(sigma)
        self.C = np.eye(n)
        self.p_sigma = np.zeros(n)
        self.p_c = np.zeros(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.eigen_staleness = 0
        self._identity = True

    def _sample(self):
        if self.eigen_staleness > self.eigen_gap:
            self.update_eigensystem()
        z = self.rng.standard_normal((self.popsize, self.dimension))
        if self._identity:
            y = z
        else:
            y = (z * self.D) @ self.B.T
        return self.mean + self.sigma * y

    def update_eigensystem(self):
        """Decompose ``C = B diag(D^2) B^T``, repairing tiny eigenvalues."""
        C = (self.C + self.C.T) / 2
        if not np.all(np.isfinite(C)):
            raise NumericError("covariance matrix contains non-finite entries")
        try:
            eigenvalues, B = np.linalg.eigh(C)
        except np.linalg.LinAlgError as exc:
            raise NumericError(
                f"eigendecomposition failed (n={self.dimension}, trace={np.trace(C):.6g}): {exc}"
            ) from exc
        top = eigenvalues.max()
        if not top > 0:
            raise NumericError(
                f"covariance matrix is not repairable: eigenvalues in "
                f"[{eigenvalues.min():.6g}, {top:.6g}], trace={np.trace(C):.6g}"
            )
        floor = self.EIGEN_FLOOR * top
        if eigenvalues.min() < floor:
            eigenvalues = np.maximum(eigenvalues, floor)
            C = (B * eigenvalues) @ B.T
            C = (C + C.T) / 2
        self.C = C
        self.B = B
        self.D = np.sqrt(eigenvalues)
        self.eigen_staleness = 0
        self._identity = False

    def _update(self, candidates, fitnesses):
        n = self.dimension
        ranked = np.where(np.isfinite(fitnesses), fitnesses, -np.inf)
        order = np.argsort(-ranked, kind="stable")
        selected = candidates[order[: self.mu]]

        old_mean = self.mean
        y = (selected - old_mean) / self.sigma
        y_w = self.weights @ y
        self.mean = self.weights @ selected

        if self._identity:
            c_inv_sqrt_y = y_w
        else:
            c_inv_sqrt_y = self.B @ ((self.B.T @ y_w) / self.D)
        cs = self.c_sigma
        self.p_sigma = (1 - cs) * self.p_sigma + math.sqrt(cs * (2 - cs) * self.mu_eff) * c_inv_sqrt_y
        ps_norm = float(np.linalg.norm(self.p_sigma))
        correction = math.sqrt(1 - (1 - cs) ** (2 * (self.generation + 1)))
        h_sigma = ps_norm / correction < (1.4 + 2 / (n + 1)) * self.chi_n

        cc = self.c_c
        self.p_c = (1 - cc) * self.p_c + h_sigma * math.sqrt(cc * (2 - cc) * self.mu_eff) * y_w

        c1, cmu = self.c_1, self.c_mu
        decay = 1 - c1 - cmu + (0.0 if h_sigma else c1 * cc * (2 - cc))
        rank_mu = (y.T * self.weights) @ y
        self.C = decay * self.C + c1 * np.outer(self.p_c, self.p_c) + cmu * rank_mu
        self._identity = False

        self.sigma *= math.exp((cs / self.d_sigma) * (ps_norm / self.chi_n - 1))
        self.eigen_staleness += 1


def make_optimizer(algorithm, dimension, seed, params=None):
    """Build an optimizer with default parameters unless overridden.

    The starting point (parent or mean) is drawn from N(0, 1) per coordinate
    using the same generator that later drives sampling, unless ``x0`` is
    passed in ``params``. ``generations`` is accepted and ignored here.
    """
    algorithm = canonical_algorithm(algorithm)
    if int(dimension) < 1:
        raise ConfigError(f"dimension must be >= 1, got {dimension}")
    params = dict(params or {})
    allowed = set(DEFAULTS[algorithm]) | {"x0"}
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(f"unknown {algorithm} parameter(s): {', '.join(sorted(unknown))}")
    settings = {**DEFAULTS[algorithm], **params}
    settings.pop("generations")

    rng = np.random.default_rng(seed)
    x0 = settings.pop("x0", None)
    if x0 is None:
        x0 = rng.standard_normal(int(dimension))
    elif np.size(x0) != int(dimension):
        raise ConfigError(f"x0 has length {np.size(x0)}, expected {dimension}")

    cls = {"one_plus_one": OnePlusOneES, "nes": NES, "cma_es": CMAES}[algorithm]
    return cls(x0, rng, **settings)
