"""
Gaussian tripartite states

Real three-particle Gaussian wavefunctions built from per-particle envelope
widths and pairwise correlation widths, convex mixtures of them, and the
closed-form position/momentum covariances the entanglement witnesses consume.

Conventions: hbar = 1 and [x, p] = i, so one particle at minimum uncertainty
has dx * dp = 1/2. A state exp(-(x_i / 2 s_i)^2) * exp(-((x_i - x_j) / 2 s_c)^2)
is written exp(-1/2 x^T M x); |psi|^2 then has covariance (2M)^-1 and the
momentum distribution has covariance M / 2.
"""

import math
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

DEFAULT_EPSILONS = (1e-2, 1e-3, 1e-4)
LIMIT_TOLERANCE = 1e-4
WEIGHT_TOLERANCE = 1e-12

# Coefficient vectors of the combinations entering the witnesses
X21 = (-1.0, 1.0, 0.0)
X32 = (0.0, -1.0, 1.0)
X31 = (-1.0, 0.0, 1.0)
PSUM = (1.0, 1.0, 1.0)

DOMAINS = ("dimensionless", "energy-time")
BASES = ("position", "momentum")


class WidthSpecError(ValueError):
    """Invalid width parameters or a singular quadratic form"""


class LimitConvergenceError(ValueError):
    """A limit evaluation did not settle over the epsilon sequence"""


@dataclass(frozen=True)
class Correlation:
    """Correlation factor exp(-((x_i - x_j) / 2 sigma_c)^2) between two particles"""
    pair: Tuple[int, int]
    sigma_c: float

    def __post_init__(self):
        i, j = (int(k) for k in self.pair)
        if i not in (1, 2, 3) or j not in (1, 2, 3) or i == j:
            raise WidthSpecError(f"correlation pair must name two distinct particles in 1..3, got {self.pair}")
        sigma_c = float(self.sigma_c)
        if math.isnan(sigma_c) or sigma_c < 0 or math.isinf(sigma_c):
            raise WidthSpecError(f"sigma_c for pair ({i},{j}) must be finite and >= 0, got {self.sigma_c}")
        object.__setattr__(self, 'pair', (min(i, j), max(i, j)))
        object.__setattr__(self, 'sigma_c', sigma_c)

    @property
    def label(self) -> str:
        return f"sigma_c({self.pair[0]},{self.pair[1]})"


@dataclass(frozen=True)
class WidthSpec:
    """Envelope widths sigma_1..3 (inf allowed) and pairwise correlations (0 allowed)"""
    sigma: Tuple[float, float, float]
    correlations: Tuple[Correlation, ...] = ()

    def __post_init__(self):
        sigma = tuple(float(s) for s in self.sigma)
        if len(sigma) != 3:
            raise WidthSpecError(f"sigma needs exactly three widths, got {len(sigma)}")
        for k, s in enumerate(sigma, 1):
            if math.isnan(s) or s <= 0:
                raise WidthSpecError(f"sigma_{k} must be > 0 (inf allowed), got {s}")

        correlations = tuple(
            c if isinstance(c, Correlation) else Correlation(tuple(c[0]), c[1])
            for c in self.correlations
        )
        pairs = [c.pair for c in correlations]
        if len(set(pairs)) != len(pairs):
            raise WidthSpecError(f"at most one correlation per pair, got {pairs}")

        object.__setattr__(self, 'sigma', sigma)
        object.__setattr__(self, 'correlations', correlations)

        if not self.has_limits:
            build_quadratic_form(self)

    @property
    def has_limits(self) -> bool:
        return bool(self.limit_parameters())

    def limit_parameters(self) -> List[str]:
        """Names of the parameters sitting at a limit (sigma = inf or sigma_c = 0)"""
        names = [f"sigma_{k}" for k, s in enumerate(self.sigma, 1) if math.isinf(s)]
        names += [c.label for c in self.correlations if c.sigma_c == 0]
        return names

    def parameter_names(self) -> List[str]:
        return [f"sigma_{k}" for k in (1, 2, 3)] + [c.label for c in self.correlations]


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Symmetric M with psi proportional to exp(-1/2 x^T M x)"""
    matrix: np.ndarray
    parameters: Tuple[str, ...] = ()


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    spec: WidthSpec
    mean: Tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class GaussianMixture:
    """Convex mixture of displaced Gaussian pure states; weights sum to 1"""
    components: Tuple[MixtureComponent, ...]

    def __post_init__(self):
        components = tuple(self.components)
        if not components:
            raise ValueError("mixture needs at least one component")
        for k, comp in enumerate(components):
            if not (0 < comp.weight <= 1):
                raise ValueError(f"mixture weight {k} must be in (0, 1], got {comp.weight}")
            if len(comp.mean) != 3:
                raise ValueError(f"mixture mean {k} needs three offsets, got {comp.mean}")
        total = math.fsum(comp.weight for comp in components)
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"mixture weights must sum to 1, got {total!r}")
        object.__setattr__(self, 'components', components)

    @classmethod
    def equal(cls, specs: Sequence[WidthSpec]) -> 'GaussianMixture':
        """Equal-weight, zero-mean mixture of the given states"""
        n = len(specs)
        return cls(tuple(MixtureComponent(1.0 / n, spec) for spec in specs))

    @property
    def has_limits(self) -> bool:
        return any(comp.spec.has_limits for comp in self.components)

    def limit_parameters(self) -> List[str]:
        names = []
        for k, comp in enumerate(self.components, 1):
            names += [f"component {k} {name}" for name in comp.spec.limit_parameters()]
        return names


State = Union[WidthSpec, GaussianMixture]


@dataclass(frozen=True)
class VarianceSet:
    """Standard deviations of x2-x1, x3-x2, x3-x1 and p1+p2+p3 (or their t/omega twins)"""
    dx21: float
    dx32: float
    dx31: float
    dpsum: float
    domain: str = "dimensionless"

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        for name in ('dx21', 'dx32', 'dx31', 'dpsum'):
            value = float(getattr(self, name))
            if math.isnan(value) or value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
            object.__setattr__(self, name, value)

    def to_dict(self) -> Dict[str, object]:
        return {'dx21': self.dx21, 'dx32': self.dx32, 'dx31': self.dx31,
                'dpsum': self.dpsum, 'domain': self.domain}


def _adjugate(m: np.ndarray) -> np.ndarray:
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    return np.array([
        [e * i - f * h, c * h - b * i, b * f - c * e],
        [f * g - d * i, a * i - c * g, c * d - a * f],
        [d * h - e * g, b * g - a * h, a * e - b * d],
    ])


def _determinant(m: np.ndarray, adj: np.ndarray) -> float:
    return float(m[0, 0] * adj[0, 0] + m[0, 1] * adj[1, 0] + m[0, 2] * adj[2, 0])


def _check_positive_definite(m: np.ndarray, parameters: Sequence[str]) -> None:
    # Sylvester's criterion on the leading principal minors
    minors = (
        m[0, 0],
        m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0],
        _determinant(m, _adjugate(m)),
    )
    if not all(np.isfinite(minors)) or min(minors) <= 0:
        raise WidthSpecError(
            f"quadratic form is not positive definite (minors {minors}); "
            f"check parameters {', '.join(parameters)}"
        )


def build_quadratic_form(spec: WidthSpec) -> QuadraticForm:
    """Map envelope and correlation widths onto the matrix M of exp(-1/2 x^T M x)"""
    if spec.has_limits:
        raise WidthSpecError(
            f"limit parameters {', '.join(spec.limit_parameters())} cannot form a matrix; "
            "use variances_with_limits"
        )

    m = np.zeros((3, 3))
    for k, s in enumerate(spec.sigma):
        m[k, k] = 1.0 / (2.0 * s * s)
    for corr in spec.correlations:
        i, j = corr.pair[0] - 1, corr.pair[1] - 1
        stiffness = 1.0 / (2.0 * corr.sigma_c * corr.sigma_c)
        m[i, i] += stiffness
        m[j, j] += stiffness
        m[i, j] -= stiffness
        m[j, i] -= stiffness

    parameters = tuple(spec.parameter_names())
    _check_positive_definite(m, parameters)
    return QuadraticForm(m, parameters)


def position_covariance(q: QuadraticForm) -> np.ndarray:
    """Covariance (2M)^-1 of |psi|^2, inverted through the adjugate"""
    adj = _adjugate(q.matrix)
    det = _determinant(q.matrix, adj)
    if not np.isfinite(det) or det <= 0:
        raise WidthSpecError(f"quadratic form is singular (det = {det}); parameters {', '.join(q.parameters)}")
    cov = adj / (2.0 * det)
    return 0.5 * (cov + cov.T)


def momentum_covariance(q: QuadraticForm) -> np.ndarray:
    """Covariance M / 2 of the momentum distribution of a real Gaussian wavefunction"""
    return q.matrix / 2.0


def variance_of_combination(cov: np.ndarray, coeffs: Sequence[float]) -> float:
    c = np.asarray(coeffs, dtype=float)
    return max(float(c @ np.asarray(cov) @ c), 0.0)


def combine_mixture_moments(weights: Sequence[float], variances: Sequence[float],
                            means: Sequence[float]) -> float:
    """Law of total variance: sum w*var + sum w*mean^2 - (sum w*mean)^2"""
    w = np.asarray(weights, dtype=float)
    v = np.asarray(variances, dtype=float)
    mu = np.asarray(means, dtype=float)
    if np.any(w <= 0) or abs(w.sum() - 1.0) > WEIGHT_TOLERANCE:
        raise ValueError(f"mixture weights must be positive and sum to 1, got {w.tolist()}")
    spread = float(np.dot(w, mu * mu) - np.dot(w, mu) ** 2)
    return max(float(np.dot(w, v)) + max(spread, 0.0), 0.0)


def mixture_variance(mix: GaussianMixture, coeffs: Sequence[float], basis: str = "position") -> float:
    """Variance of c.x (or c.p) over a mixture; components are displaced in position only"""
    if basis not in BASES:
        raise ValueError(f"basis must be one of {BASES}, got {basis!r}")
    if mix.has_limits:
        raise WidthSpecError(
            f"limit parameters {', '.join(mix.limit_parameters())} present; use variances_with_limits"
        )

    c = np.asarray(coeffs, dtype=float)
    variances, means = [], []
    for comp in mix.components:
        q = build_quadratic_form(comp.spec)
        if basis == "position":
            variances.append(variance_of_combination(position_covariance(q), c))
            means.append(float(c @ np.asarray(comp.mean, dtype=float)))
        else:
            variances.append(variance_of_combination(momentum_covariance(q), c))
            means.append(0.0)

    weights = [comp.weight for comp in mix.components]
    return combine_mixture_moments(weights, variances, means)


def _as_mixture(state: State) -> GaussianMixture:
    if isinstance(state, GaussianMixture):
        return state
    return GaussianMixture((MixtureComponent(1.0, state),))


def _witness_variances(state: State) -> Dict[str, float]:
    mix = _as_mixture(state)
    return {
        'dx21': mixture_variance(mix, X21, "position"),
        'dx32': mixture_variance(mix, X32, "position"),
        'dx31': mixture_variance(mix, X31, "position"),
        'dpsum': mixture_variance(mix, PSUM, "momentum"),
    }


def resolve_limits(state: State, eps: float) -> State:
    """Replace sigma = inf by 1/eps and sigma_c = 0 by eps"""
    if isinstance(state, GaussianMixture):
        return GaussianMixture(tuple(
            MixtureComponent(comp.weight, resolve_limits(comp.spec, eps), comp.mean)
            for comp in state.components
        ))

    sigma = tuple(1.0 / eps if math.isinf(s) else s for s in state.sigma)
    correlations = tuple(
        Correlation(c.pair, eps if c.sigma_c == 0 else c.sigma_c) for c in state.correlations
    )
    return WidthSpec(sigma, correlations)


def variance_set(state: State) -> VarianceSet:
    """VarianceSet of a state whose parameters are all finite and positive"""
    variances = _witness_variances(state)
    return VarianceSet(**{key: math.sqrt(value) for key, value in variances.items()})


def _limit_steps(history: Sequence[Dict[str, float]], key: str) -> List[float]:
    return [abs(later[key] - earlier[key]) for earlier, later in zip(history, history[1:])]


def variances_with_limits(state: State, epsilons: Sequence[float] = DEFAULT_EPSILONS,
                          tolerance: float = LIMIT_TOLERANCE) -> VarianceSet:
    """Evaluate the four witness uncertainties, taking sigma = inf and sigma_c = 0 as limits

    Each limit parameter is substituted by 1/eps or eps for the decreasing
    sequence of epsilons. Steps between successive evaluations are measured
    against the largest of the four variances at the smallest epsilon, so a
    variance heading to zero is judged on the scale of the state. A step
    above tolerance must be smaller than the one before it, and the final
    step must sit within tolerance. The value at the smallest epsilon is
    reported.
    """
    if not state.has_limits:
        return variance_set(state)

    limits = state.limit_parameters()
    eps_sequence = sorted(set(epsilons), reverse=True)
    if len(eps_sequence) < 2:
        raise ValueError("need at least two distinct epsilons to judge convergence")

    history: List[Dict[str, float]] = []
    for eps in eps_sequence:
        variances = _witness_variances(resolve_limits(state, eps))
        logging.debug(f"limit evaluation eps={eps:g}: {variances}")
        history.append(variances)

    last = history[-1]
    allowed = tolerance * max(abs(v) for v in last.values())
    for key in last:
        steps = _limit_steps(history, key)
        growing = [k for k in range(1, len(steps)) if steps[k] > allowed and steps[k] >= steps[k - 1]]
        if steps[-1] > allowed or growing:
            trail = ' -> '.join(f"{h[key]:.6g}" for h in history)
            raise LimitConvergenceError(
                f"{key} variance did not converge over eps {eps_sequence} ({trail}) "
                f"for limit parameters {', '.join(limits)}"
            )

    return VarianceSet(**{key: math.sqrt(value) for key, value in last.items()})


def separability_class(spec: WidthSpec) -> str:
    """Cut structure of a pure state read off its correlation graph"""
    pairs = {c.pair for c in spec.correlations}
    if not pairs:
        return "fully-separable"
    if len(pairs) == 1:
        i, j = next(iter(pairs))
        return f"biseparable-{i}{j}"
    return "fully-inseparable"


# Width slots sigma_1..sigma_9 of the example states

def psi1(s1: float, s2: float, s3: float, sigma_c: float) -> WidthSpec:
    return WidthSpec((s1, s2, s3), (Correlation((1, 2), sigma_c),))


def psi2(s4: float, s5: float, s6: float, sigma_c: float) -> WidthSpec:
    return WidthSpec((s4, s5, s6), (Correlation((1, 3), sigma_c),))


def psi3(s7: float, s8: float, s9: float, sigma_c: float) -> WidthSpec:
    return WidthSpec((s7, s8, s9), (Correlation((2, 3), sigma_c),))


def psi4(s1: float, s2: float, s3: float, sigma_c: float) -> WidthSpec:
    return WidthSpec((s1, s2, s3), (Correlation((1, 2), sigma_c), Correlation((1, 3), sigma_c)))


def sqrt2_mixture() -> GaussianMixture:
    """Fully inseparable, not genuinely tripartite: sum witness bottoms out at sqrt(2)"""
    return GaussianMixture.equal([
        psi1(math.inf, 1.0, 1.0, 0.0),
        psi2(math.inf, 1.0, 1.0, 0.0),
    ])


def sqrt6_mixture() -> GaussianMixture:
    """Violates all three product witnesses; triple sum reaches sqrt(6)"""
    r = 1.0 / math.sqrt(2.0)
    return GaussianMixture.equal([
        psi1(1.0, 1.0, r, 0.0),
        psi2(1.0, r, 1.0, 0.0),
        psi3(r, 1.0, 1.0, 0.0),
    ])


def _parse_spec(data: Dict) -> WidthSpec:
    if 'sigma' not in data:
        raise WidthSpecError("state needs a 'sigma' list")
    sigma = tuple(float(s) for s in data['sigma'])
    correlations = []
    for entry in data.get('correlations', []):
        if 'pair' not in entry or 'sigma_c' not in entry:
            raise WidthSpecError(f"correlation entries need 'pair' and 'sigma_c', got {entry}")
        correlations.append(Correlation(tuple(entry['pair']), float(entry['sigma_c'])))
    return WidthSpec(sigma, tuple(correlations))


def parse_state(data: Dict) -> State:
    """Build a WidthSpec or GaussianMixture from parsed state-file content"""
    if 'mixture' in data:
        components = []
        for k, entry in enumerate(data['mixture'], 1):
            if 'weight' not in entry or 'state' not in entry:
                raise ValueError(f"mixture entry {k} needs 'weight' and 'state'")
            mean = tuple(float(v) for v in entry.get('mean', (0.0, 0.0, 0.0)))
            components.append(MixtureComponent(float(entry['weight']), _parse_spec(entry['state']), mean))
        return GaussianMixture(tuple(components))
    return _parse_spec(data)


def load_state_file(filepath: str) -> State:
    """Read a TOML state file (sigma / correlations, or a mixture list)"""
    with open(filepath, 'rb') as f:
        data = tomllib.load(f)
    state = parse_state(data)
    logging.info(f"Loaded state from {filepath}: {type(state).__name__}")
    return state
