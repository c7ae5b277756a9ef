"""Empirical accuracy, stability, Lipschitz probes and lower bounds.

The measured quantities, over a finite test set S of ground-truth signals:

worst noiseless error      max_x |Psi(A x) - x|            (eta-hat)
stability constant         max_x (|Psi(A x + e) - x| - eta-hat) / |e|,
                           one fresh noise draw per sample, clamped at 0
repeated protocol          T independent trials, seed = base + trial index,
                           maxima reported along with quartiles

plus the two analytic lower bounds from the accuracy/stability trade-off
(adversarial signal pairs built in the trailing singular subspace) and a
difference-quotient Lipschitz estimator.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (CapabilityError, DegenerateSpectrumError, ParameterError,
                     ShapeError)
from .linops import trailing_subspace_vector


@dataclass
class NoiseModel:
    """Seeded Gaussian noise with standard deviation delta per component.

    generator() always starts from the stored seed, so the same model
    replays the same sample sequence.
    """

    delta: float
    seed: int

    def __post_init__(self):
        if self.delta < 0:
            raise ParameterError("noise delta must be >= 0")

    def generator(self):
        return np.random.default_rng(self.seed)

    def draws(self, size, count):
        """Deterministic sequence of `count` noise vectors of length `size`."""
        rng = self.generator()
        return [self.delta * rng.standard_normal(size) for _ in range(count)]


@dataclass
class TrialReport:
    """One trial of the stability protocol on a fixed test set."""

    trial_index: int
    accuracy_error: float           # worst noiseless reconstruction error
    stability_constant: float       # worst noise ratio, clamped below at 0
    max_noise_norm: float           # largest realized |e| in the trial
    sample_ratios: list = field(default_factory=list)   # unclamped ratios


@dataclass
class StabilityReport:
    """Aggregate of repeated trials: maxima and quartiles of both figures."""

    trials: list
    max_accuracy_error: float
    max_stability_constant: float
    accuracy_quartiles: tuple
    stability_quartiles: tuple

    def to_json(self, path):
        payload = {
            "max_accuracy_error": self.max_accuracy_error,
            "max_stability_constant": self.max_stability_constant,
            "accuracy_quartiles": list(self.accuracy_quartiles),
            "stability_quartiles": list(self.stability_quartiles),
            "trials": [
                {"trial_index": t.trial_index,
                 "accuracy_error": t.accuracy_error,
                 "stability_constant": t.stability_constant,
                 "max_noise_norm": t.max_noise_norm,
                 "sample_ratios": list(t.sample_ratios)}
                for t in self.trials
            ],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["trial_index", "accuracy_error",
                             "stability_constant", "max_noise_norm"])
            for t in self.trials:
                writer.writerow([t.trial_index, repr(t.accuracy_error),
                                 repr(t.stability_constant),
                                 repr(t.max_noise_norm)])


def _check_signals(op, test_set):
    sigs = [np.asarray(x, dtype=float) for x in test_set]
    if not sigs:
        raise ParameterError("test set is empty")
    for x in sigs:
        if x.ndim != 1 or x.shape[0] != op.cols:
            raise ShapeError(f"signals must have length {op.cols}")
    return sigs


def empirical_accuracy(psi, op, test_set):
    """Worst noiseless reconstruction error max_x |Psi(A x) - x|."""
    sigs = _check_signals(op, test_set)
    worst = 0.0
    for x in sigs:
        err = float(np.linalg.norm(psi.reconstruct(op.apply(x)) - x))
        worst = max(worst, err)
    return worst


def empirical_stability(psi, op, test_set, noise, accuracy_error,
                        trial_index=0):
    """One stability trial: one fresh noise draw per sample.

    The per-sample ratio is (|Psi(A x + e) - x| - accuracy_error) / |e|;
    the trial's stability constant is the largest ratio, clamped at zero.
    """
    if noise.delta <= 0:
        raise ParameterError("stability trials need noise delta > 0")
    sigs = _check_signals(op, test_set)
    rng = noise.generator()
    ratios = []
    max_noise = 0.0
    for x in sigs:
        e = noise.delta * rng.standard_normal(op.rows)
        e_norm = float(np.linalg.norm(e))
        if e_norm == 0.0:
            e = noise.delta * rng.standard_normal(op.rows)
            e_norm = float(np.linalg.norm(e))
            if e_norm == 0.0:
                raise ParameterError("noise draw collapsed to zero twice")
        err = float(np.linalg.norm(psi.reconstruct(op.apply(x) + e) - x))
        ratios.append((err - accuracy_error) / e_norm)
        max_noise = max(max_noise, e_norm)
    return TrialReport(trial_index=trial_index,
                       accuracy_error=accuracy_error,
                       stability_constant=max(0.0, max(ratios)),
                       max_noise_norm=max_noise,
                       sample_ratios=ratios)


def repeated_stability(psi, op, test_set, base_seed, delta, trials=20):
    """T independent trials; trial i draws from seed base_seed + i."""
    if trials < 1:
        raise ParameterError("need at least one trial")
    sigs = _check_signals(op, test_set)
    accuracy_error = empirical_accuracy(psi, op, sigs)
    reports = []
    for i in range(trials):
        noise = NoiseModel(delta=delta, seed=base_seed + i)
        reports.append(empirical_stability(psi, op, sigs, noise,
                                           accuracy_error, trial_index=i))
    acc = np.array([t.accuracy_error for t in reports])
    sta = np.array([t.stability_constant for t in reports])
    return StabilityReport(
        trials=reports,
        max_accuracy_error=float(acc.max()),
        max_stability_constant=float(sta.max()),
        accuracy_quartiles=tuple(float(v) for v in
                                 np.percentile(acc, [25, 50, 75])),
        stability_quartiles=tuple(float(v) for v in
                                  np.percentile(sta, [25, 50, 75])),
    )


def lipschitz_estimate(psi, y, eps, probes=64, directions=None, seed=0):
    """Difference-quotient probe of the local Lipschitz constant at y.

    Random unit directions are evaluated at perturbation norms eps, eps/10
    and eps/100; supplied directions (adversarial candidates) are
    normalized and evaluated at the same three norms.  Returns the largest
    quotient |Psi(y + r) - Psi(y)| / |r| observed.
    """
    if eps <= 0:
        raise ParameterError("eps must be > 0")
    if probes < 1 and not directions:
        raise ParameterError("need at least one probe direction")
    y = np.asarray(y, dtype=float)
    base = psi.reconstruct(y)
    rng = np.random.default_rng(seed)
    dirs = []
    for _ in range(probes):
        d = rng.standard_normal(y.shape[0])
        dirs.append(d / np.linalg.norm(d))
    for d in directions or []:
        d = np.asarray(d, dtype=float)
        norm = np.linalg.norm(d)
        if norm == 0.0:
            raise ParameterError("zero adversarial direction")
        dirs.append(d / norm)
    best = 0.0
    for d in dirs:
        for scale in (eps, eps / 10.0, eps / 100.0):
            z = y + scale * d
            quot = float(np.linalg.norm(psi.reconstruct(z) - base)) / scale
            best = max(best, quot)
    return best


@dataclass
class AdversarialPair:
    """Two signals far apart whose blurred images nearly coincide.

    perturbation = A (x_prime - x); its norm is at most
    sigma_{index+1} |x - x_prime|, which the construction keeps below the
    error level eta.
    """

    x: np.ndarray
    x_prime: np.ndarray
    perturbation: np.ndarray
    index: int
    error_level: float


def adversarial_pair(op, decomp, x, index, error_level, seed=0):
    """Build x' = x + (eta / sigma_t) * (unit trailing-subspace vector).

    decomp must carry right singular vectors; index is 1-based t.
    """
    if decomp.right_vectors is None:
        raise CapabilityError("decomposition has no singular vectors")
    if error_level <= 0:
        raise ParameterError("error level must be > 0")
    x = np.asarray(x, dtype=float)
    sigma_t = float(decomp.singular_values[index - 1])
    if sigma_t <= 1e-14:
        raise DegenerateSpectrumError(
            f"singular value at index {index} is numerically zero")
    direction = trailing_subspace_vector(decomp, index, seed)
    shift = (error_level / sigma_t) * direction
    x_prime = x + shift
    return AdversarialPair(x=x, x_prime=x_prime,
                           perturbation=op.apply(x_prime - x),
                           index=index, error_level=error_level)


def tradeoff_lower_bound(pinv_norm, noise_norm, error_level):
    """(|A^+ e| - 2 eta) / |e|: floor on the stability constant."""
    if noise_norm <= 0:
        raise ParameterError("noise norm must be > 0")
    return (pinv_norm - 2.0 * error_level) / noise_norm


@dataclass
class LipschitzBound:
    """Analytic floor on the local Lipschitz constant near a blurred signal.

    certified_unstable is true when sigma_t <= eta / (eps + 2 eta), the
    regime where the floor reaches 1 and the reconstructor cannot be
    epsilon-stable.
    """

    bound: float
    certified_unstable: bool
    threshold: float


def lipschitz_lower_bound(singular_value, error_level, eps):
    """Floor (eta - 2 sigma_t eta) / (sigma_t eps) with its certificate."""
    if singular_value <= 0:
        raise ParameterError("singular value must be > 0")
    if error_level <= 0 or eps <= 0:
        raise ParameterError("error level and eps must be > 0")
    bound = (error_level - 2.0 * singular_value * error_level) \
        / (singular_value * eps)
    threshold = error_level / (eps + 2.0 * error_level)
    return LipschitzBound(bound=bound,
                          certified_unstable=singular_value <= threshold,
                          threshold=threshold)


def stability_radius(psi, op, test_set, delta_grid, trials, base_seed):
    """Realized noise level up to which the measured constant stays below 1.

    Runs the repeated protocol at every delta in the grid.  Returns the
    largest passing delta's realized noise norm, math.inf if every delta
    passes, and 0.0 if none does.  Passing means max stability constant
    strictly below 1.
    """
    if not delta_grid:
        raise ParameterError("delta grid is empty")
    deltas = sorted(float(d) for d in delta_grid)
    if deltas[0] <= 0:
        raise ParameterError("all deltas must be > 0")
    best = None
    all_pass = True
    for j, delta in enumerate(deltas):
        report = repeated_stability(psi, op, test_set,
                                    base_seed + j * trials, delta,
                                    trials=trials)
        if report.max_stability_constant < 1.0:
            realized = max(t.max_noise_norm for t in report.trials)
            best = realized
        else:
            all_pass = False
    if all_pass:
        return math.inf
    return best if best is not None else 0.0


def approximation_gap(psi_theta, psi, op, test_set, noise=None):
    """max_x |Psi_theta(y) - Psi(y)| with y = A x, optionally noisy.

    With a noise model, one draw per sample perturbs y before both
    reconstructors see it.
    """
    sigs = _check_signals(op, test_set)
    rng = noise.generator() if noise is not None else None
    gap = 0.0
    for x in sigs:
        y = op.apply(x)
        if rng is not None:
            y = y + noise.delta * rng.standard_normal(op.rows)
        diff = float(np.linalg.norm(psi_theta.reconstruct(y)
                                    - psi.reconstruct(y)))
        gap = max(gap, diff)
    return gap


def sigma_phi_estimate(phi, op, sample_set, collision_tol):
    """Largest signal distance among pairs whose stabilized data collide.

    Pairwise scan: max |x_i - x_j| over pairs with
    |phi(A x_i) - phi(A x_j)| <= collision_tol; 0.0 when no pair collides.
    """
    sigs = _check_signals(op, sample_set)
    if len(sigs) > 2000:
        raise ParameterError("pairwise scan capped at 2000 samples")
    if collision_tol < 0:
        raise ParameterError("collision tolerance must be >= 0")
    images = [phi.reconstruct(op.apply(x)) for x in sigs]
    spread = 0.0
    for i in range(len(sigs)):
        for j in range(i + 1, len(sigs)):
            if np.linalg.norm(images[i] - images[j]) <= collision_tol:
                spread = max(spread,
                             float(np.linalg.norm(sigs[i] - sigs[j])))
    return spread


def error_vs_delta_curve(reconstructors, op, test_set, deltas, base_seed):
    """Reconstruction error statistics per noise level, plot-ready.

    reconstructors is an ordered mapping name -> reconstructor.  Every
    reconstructor sees the same noise draws at each delta.  Returns a list
    of rows [delta, mean_err and max_err per reconstructor in order].
    """
    sigs = _check_signals(op, test_set)
    names = list(reconstructors)
    rows = []
    for j, delta in enumerate(deltas):
        noise = NoiseModel(delta=float(delta), seed=base_seed + j)
        rng = noise.generator()
        draws = [noise.delta * rng.standard_normal(op.rows) for _ in sigs]
        row = [float(delta)]
        for name in names:
            psi = reconstructors[name]
            errs = [float(np.linalg.norm(
                psi.reconstruct(op.apply(x) + e) - x))
                for x, e in zip(sigs, draws)]
            row.extend([float(np.mean(errs)), float(np.max(errs))])
        rows.append(row)
    return rows


def write_curve_csv(path, reconstructor_names, rows):
    header = ["delta"]
    for name in reconstructor_names:
        header.extend([f"{name}_mean_err", f"{name}_max_err"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
