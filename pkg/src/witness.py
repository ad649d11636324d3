"""
Entanglement witnesses

Product, sum and triple-sum inequalities on the uncertainties of pairwise
differences and of the total conjugate variable. Separable states satisfy
every bound, so a strict violation certifies entanglement of the matching
kind. The same code evaluates dimensionless Gaussian states and measured
time/frequency uncertainties (ns and rad/ns, whose product is dimensionless).
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from gaussian import VarianceSet

BOUNDS = {
    'product': 1.0,
    'sum': 1.0,
    'triple_sum': 2.0,
    'additive': 2.0,
}

CLASSIFICATIONS = ("no-witness", "some-entanglement", "fully-inseparable", "genuine-tripartite")

PRODUCT_KEYS = ('x21', 'x32', 'x31')
SUM_KEYS = ('x21_x31', 'x21_x32', 'x32_x31')

BANDWIDTH_CONVENTIONS = ("angular", "direct")

# Scaling search grid: s in [1e-20, 1e20], ratio 10**0.25 between points
_SCALING_GRID = np.logspace(-20.0, 20.0, 161)


@dataclass(frozen=True)
class EnergyTimeInput:
    """Measured timing uncertainties (ns) and pump angular bandwidth (rad/ns)"""
    dt21: float
    dt32: float
    dt31: float
    domega: float
    provenance: str = "measured"
    dt21_err: float = 0.0
    dt32_err: float = 0.0
    dt31_err: float = 0.0
    domega_err: float = 0.0

    def __post_init__(self):
        for name in ('dt21', 'dt32', 'dt31', 'domega', 'dt21_err', 'dt32_err', 'dt31_err', 'domega_err'):
            value = float(getattr(self, name))
            if math.isnan(value) or value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
            object.__setattr__(self, name, value)

    def to_variance_set(self) -> VarianceSet:
        return VarianceSet(self.dt21, self.dt32, self.dt31, self.domega, domain="energy-time")

    @property
    def errors(self) -> Tuple[float, float, float, float]:
        return (self.dt21_err, self.dt32_err, self.dt31_err, self.domega_err)


@dataclass
class WitnessReport:
    products: Dict[str, float]
    sums: Dict[str, float]
    triple_sum: float
    additive: Dict[str, float]
    classification: str
    domain: str = "dimensionless"
    bounds: Dict[str, float] = field(default_factory=lambda: dict(BOUNDS))
    uncertainties: Optional[Dict[str, Dict[str, float]]] = None
    significance: Optional[Dict[str, Dict[str, float]]] = None

    @property
    def product_values(self) -> Tuple[float, float, float]:
        return tuple(self.products[k] for k in PRODUCT_KEYS)

    @property
    def sum_values(self) -> Tuple[float, float, float]:
        return tuple(self.sums[k] for k in SUM_KEYS)

    def violations(self) -> Dict[str, bool]:
        flags = {f"product.{k}": v < self.bounds['product'] for k, v in self.products.items()}
        flags.update({f"sum.{k}": v < self.bounds['sum'] for k, v in self.sums.items()})
        flags['triple_sum'] = self.triple_sum < self.bounds['triple_sum']
        return flags

    def to_dict(self) -> Dict[str, object]:
        data: Dict[str, object] = {
            'classification': self.classification,
            'domain': self.domain,
            'triple_sum': self.triple_sum,
            'products': dict(self.products),
            'sums': dict(self.sums),
            'additive': dict(self.additive),
            'bounds': dict(self.bounds),
        }
        if self.uncertainties is not None:
            data['uncertainties'] = self.uncertainties
        if self.significance is not None:
            data['significance'] = self.significance
        return data


class ScalingResult(NamedTuple):
    scale: float
    value: float


@dataclass(frozen=True)
class PairWitness:
    """Two-photon product dt * domega against the separable bound 1"""
    product: float
    bound: float = 1.0
    uncertainty: float = 0.0

    @property
    def violated(self) -> bool:
        return self.product < self.bound

    @property
    def significance(self) -> Optional[float]:
        if self.uncertainty <= 0:
            return None
        return (self.bound - self.product) / self.uncertainty


def products(v: VarianceSet) -> Tuple[float, float, float]:
    """dx21*dp, dx32*dp, dx31*dp"""
    return (v.dx21 * v.dpsum, v.dx32 * v.dpsum, v.dx31 * v.dpsum)


def sums(v: VarianceSet) -> Tuple[float, float, float]:
    """(dx21+dx31)*dp, (dx21+dx32)*dp, (dx32+dx31)*dp"""
    return (
        (v.dx21 + v.dx31) * v.dpsum,
        (v.dx21 + v.dx32) * v.dpsum,
        (v.dx32 + v.dx31) * v.dpsum,
    )


def triple_sum(v: VarianceSet) -> float:
    return (v.dx21 + v.dx32 + v.dx31) * v.dpsum


def additive_vlf(v: VarianceSet) -> Tuple[float, float, float]:
    """Variance-sum forms dx_ij^2 + dp^2, each bounded below by 2 for separable states"""
    dp2 = v.dpsum ** 2
    return (v.dx21 ** 2 + dp2, v.dx32 ** 2 + dp2, v.dx31 ** 2 + dp2)


def classify(product_values: Sequence[float], sum_values: Sequence[float], triple_value: float) -> str:
    """Strongest entanglement class certified by strict violations"""
    if any(s < BOUNDS['sum'] for s in sum_values) or triple_value < BOUNDS['triple_sum']:
        return "genuine-tripartite"
    violated = sum(1 for p in product_values if p < BOUNDS['product'])
    if violated >= 2:
        return "fully-inseparable"
    if violated == 1:
        return "some-entanglement"
    return "no-witness"


def _propagated_errors(v: VarianceSet, errors: Sequence[float]) -> Dict[str, Dict[str, float]]:
    # First-order propagation for f = (sum of dt terms) * dp with independent errors
    e21, e32, e31, ep = (float(e) for e in errors)
    dx = {'x21': (v.dx21, e21), 'x32': (v.dx32, e32), 'x31': (v.dx31, e31)}

    def sigma(terms: Sequence[str]) -> float:
        total = sum(dx[t][0] for t in terms)
        variance = (total * ep) ** 2 + v.dpsum ** 2 * sum(dx[t][1] ** 2 for t in terms)
        return math.sqrt(variance)

    return {
        'products': {k: sigma([k]) for k in PRODUCT_KEYS},
        'sums': {
            'x21_x31': sigma(['x21', 'x31']),
            'x21_x32': sigma(['x21', 'x32']),
            'x32_x31': sigma(['x32', 'x31']),
        },
        'triple_sum': {'value': sigma(['x21', 'x32', 'x31'])},
    }


def _significance(values: Dict[str, float], errors: Dict[str, float], bound: float) -> Dict[str, float]:
    return {
        k: (bound - values[k]) / errors[k] if errors[k] > 0 else math.nan
        for k in values
    }


def evaluate(v: VarianceSet, errors: Optional[Sequence[float]] = None) -> WitnessReport:
    """Compute every witness, classify, and optionally propagate uncertainties"""
    product_values = products(v)
    sum_values = sums(v)
    triple_value = triple_sum(v)

    report = WitnessReport(
        products=dict(zip(PRODUCT_KEYS, product_values)),
        sums=dict(zip(SUM_KEYS, sum_values)),
        triple_sum=triple_value,
        additive=dict(zip(PRODUCT_KEYS, additive_vlf(v))),
        classification=classify(product_values, sum_values, triple_value),
        domain=v.domain,
    )

    if errors is not None:
        if len(errors) != 4:
            raise ValueError(f"errors needs four entries (dx21, dx32, dx31, dp), got {len(errors)}")
        propagated = _propagated_errors(v, errors)
        report.uncertainties = propagated
        report.significance = {
            'products': _significance(report.products, propagated['products'], BOUNDS['product']),
            'sums': _significance(report.sums, propagated['sums'], BOUNDS['sum']),
            'triple_sum': _significance({'value': triple_value}, propagated['triple_sum'], BOUNDS['triple_sum']),
        }

    logging.debug(f"Witness evaluation ({v.domain}): {report.classification}")
    return report


def evaluate_energy_time(e: EnergyTimeInput) -> WitnessReport:
    """Witnesses for measured timing spreads and pump bandwidth, with propagated errors"""
    has_errors = any(err > 0 for err in e.errors)
    return evaluate(e.to_variance_set(), e.errors if has_errors else None)


def evaluate_two_photon(dt: float, domega: float, dt_err: float = 0.0, domega_err: float = 0.0) -> PairWitness:
    """Two-party product witness dt * domega < 1"""
    if dt < 0 or domega < 0:
        raise ValueError(f"uncertainties must be non-negative, got dt={dt}, domega={domega}")
    product = dt * domega
    uncertainty = math.sqrt((domega * dt_err) ** 2 + (dt * domega_err) ** 2)
    return PairWitness(product=product, uncertainty=uncertainty)


def bandwidth_to_angular(bandwidth_mhz: float, convention: str = "angular") -> float:
    """Convert a pump linewidth std in MHz to the value (rad/ns) entering the witnesses

    "angular" multiplies by 2*pi; "direct" keeps the MHz figure as 1e-3 per ns.
    """
    if convention not in BANDWIDTH_CONVENTIONS:
        raise ValueError(f"convention must be one of {BANDWIDTH_CONVENTIONS}, got {convention!r}")
    factor = 2.0 * math.pi if convention == "angular" else 1.0
    return factor * bandwidth_mhz * 1e-3


def mixture_lower_bound(weights: Sequence[float], component_products: Sequence[float]) -> float:
    """Convexity bound: a mixture's product is at least sum_i w_i * product_i"""
    w = np.asarray(weights, dtype=float)
    p = np.asarray(component_products, dtype=float)
    if w.shape != p.shape:
        raise ValueError(f"weights and products differ in length ({w.size} vs {p.size})")
    return float(np.dot(w, p))


def optimize_scaling(var_x: float, var_p: float, tol: float = 1e-10) -> ScalingResult:
    """Minimise s^2 var_x + var_p / s^2 over s > 0 with a golden-section search

    The minimum equals 2 * sqrt(var_x * var_p), which is how the scaled sum
    witnesses reduce to the product witnesses.
    """
    if not (var_x > 0 and var_p > 0) or not (math.isfinite(var_x) and math.isfinite(var_p)):
        raise ValueError(f"variances must be finite and positive, got {var_x}, {var_p}")

    def objective(s):
        s2 = s * s
        return s2 * var_x + var_p / s2

    with np.errstate(over='ignore'):
        values = objective(_SCALING_GRID)
    k = int(np.clip(np.argmin(values), 1, len(_SCALING_GRID) - 2))
    lo, mid, hi = _SCALING_GRID[k - 1], _SCALING_GRID[k], _SCALING_GRID[k + 1]
    if not (objective(mid) < objective(lo) and objective(mid) < objective(hi)):
        # Minimum straddles two grid points with equal values
        lo, hi = (mid, hi) if objective(hi) <= objective(lo) else (lo, mid)
        mid = math.sqrt(lo * hi)

    result = minimize_scalar(objective, bracket=(lo, mid, hi), method='golden', tol=tol)
    scale = abs(float(result.x))
    return ScalingResult(scale, float(objective(scale)))
