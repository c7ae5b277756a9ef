"""Reconstructors for the linear inverse problem y = A x + e.

A reconstructor is any map from data space back to signal space.  This
module provides the classical ones:

pseudo_inverse          exact least-squares inverse through the SVD
tikhonov                argmin 1/2 |A x - y|^2 + lambda/2 |L x|^2 via CGLS
stabilizer              the map phi_k = first k CGLS iterations
compose                 gamma after phi
constant_reconstructor  ignores the data, returns a fixed vector

CGLS runs on the stacked operator [A; sqrt(lambda) L] with stacked data
[y; 0], starting from x = 0.  Iterations are counted from 1 after the
first update.  Stopping follows two squared tolerances, on the data
residual |y - A x|^2 and on the step |x_k - x_{k-1}|^2, whichever fires
first; a tolerance of zero disables that stop.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (NumericalBreakdownError, ParameterError,
                     RankDeficiencyError, ShapeError)
from .linops import (ConvolutionOperator, IdentityOperator, LinearOperator,
                     spectral_decomposition)

# below this absolute value a singular value counts as exactly zero
RANK_TOL = 1e-14


class StopReason(str, Enum):
    RESIDUAL_TOL = "residual_tol"
    STEP_TOL = "step_tol"
    MAX_ITERS = "max_iters"


@dataclass
class TikhonovConfig:
    """Penalty weight, regularizer, squared tolerances, iteration cap."""

    lam: float = 1e-2
    regularizer: LinearOperator | None = None      # None means L = identity
    tol_f: float = 1e-6
    tol_x: float = 1e-6
    max_iters: int = 500

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError("lambda must be >= 0")
        if self.tol_f < 0 or self.tol_x < 0:
            raise ParameterError("tolerances must be >= 0")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")


@dataclass
class CglsTrace:
    """Per-iteration record of a CGLS run.

    residual_norms holds the stacked least-squares residual
    |[y; 0] - [A; sqrt(lam) L] x^(k)|, the quantity CGLS minimizes over its
    growing subspace, so it is non-increasing by construction.  The
    normal-equations residual |A^T(y - A x) - lam L^T L x| is recorded
    separately; conjugate-gradient theory does not make it monotone.
    """

    iterates: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    normal_eq_residuals: list = field(default_factory=list)
    stop_reason: StopReason = StopReason.MAX_ITERS

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "residual_norm"])
            for k, r in enumerate(self.residual_norms, start=1):
                writer.writerow([k, repr(float(r))])


def cgls(op, regularizer, lam, y, config):
    """CGLS for min |A x - y|^2 + lam |L x|^2, returning (x, trace).

    Tolerances and the iteration cap come from config; the operator,
    regularizer and penalty weight are taken from the explicit arguments.
    """
    return _cgls_core(op, regularizer, lam, y,
                      tol_f=config.tol_f, tol_x=config.tol_x,
                      max_iters=config.max_iters)


def _cgls_core(op, regularizer, lam, y, tol_f, tol_x, max_iters):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] != op.rows:
        raise ShapeError(f"data must have length {op.rows}, got {np.shape(y)}")
    if lam < 0:
        raise ParameterError("lambda must be >= 0")
    if lam > 0:
        if regularizer is None:
            regularizer = IdentityOperator(op.cols)
        if regularizer.cols != op.cols:
            raise ShapeError("regularizer domain does not match operator domain")
    sqrt_lam = np.sqrt(lam)

    x = np.zeros(op.cols)
    r_data = y.copy()                               # y - A x
    r_reg = (np.zeros(regularizer.rows) if lam > 0 else None)  # -sqrt(lam) L x
    s = op.apply_adjoint(r_data)
    if lam > 0:
        s = s + sqrt_lam * regularizer.apply_adjoint(r_reg)
    p = s.copy()
    gamma = float(s @ s)
    # once the projected gradient has shrunk to rounding level, further
    # iterations only amplify noise; eps^2 matches gamma being a squared norm
    gamma_floor = gamma * np.finfo(float).eps ** 2

    trace = CglsTrace()
    stop = None
    converged = False
    for k in range(1, max_iters + 1):
        if gamma <= gamma_floor:
            converged = True
            break
        q_data = op.apply(p)
        q_reg = sqrt_lam * regularizer.apply(p) if lam > 0 else None
        qq = float(q_data @ q_data)
        if lam > 0:
            qq += float(q_reg @ q_reg)
        if qq == 0.0:
            converged = True
            break
        alpha = gamma / qq
        step = alpha * p
        x = x + step
        r_data = r_data - alpha * q_data
        if lam > 0:
            r_reg = r_reg - alpha * q_reg
        s = op.apply_adjoint(r_data)
        if lam > 0:
            s = s + sqrt_lam * regularizer.apply_adjoint(r_reg)
        gamma_new = float(s @ s)
        if not (np.isfinite(gamma_new) and np.all(np.isfinite(x))):
            raise NumericalBreakdownError(
                f"non-finite iterate at CGLS iteration {k}", iteration=k)
        rr = float(r_data @ r_data)
        if lam > 0:
            rr += float(r_reg @ r_reg)
        trace.iterates.append(x.copy())
        trace.residual_norms.append(np.sqrt(rr))
        trace.normal_eq_residuals.append(np.sqrt(gamma_new))
        if float(r_data @ r_data) < tol_f:
            stop = StopReason.RESIDUAL_TOL
            break
        if float(step @ step) < tol_x:
            stop = StopReason.STEP_TOL
            break
        beta = gamma_new / gamma
        gamma = gamma_new
        p = s + beta * p

    if stop is None:
        if converged and float(r_data @ r_data) < tol_f:
            stop = StopReason.RESIDUAL_TOL
        elif converged and tol_x > 0.0:
            stop = StopReason.STEP_TOL
        else:
            stop = StopReason.MAX_ITERS
    trace.stop_reason = stop
    return x, trace


class Reconstructor:
    """Base contract: a map reconstruct(y) from R^m to R^n."""

    kind: str
    input_dim: int
    output_dim: int

    def reconstruct(self, y):
        raise NotImplementedError

    def __call__(self, y):
        return self.reconstruct(y)

    def _check_data(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.shape[0] != self.input_dim:
            raise ShapeError(f"data must have length {self.input_dim}, "
                             f"got shape {np.shape(y)}")
        return y

    def to_config(self):
        raise NotImplementedError

    def save_config(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_config(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class PseudoInverseReconstructor(Reconstructor):
    """Exact least-squares inverse, optionally truncated.

    Circulant operators invert per Fourier coefficient; everything else
    goes through the dense SVD.  Spectral components at or below
    truncation_threshold are dropped.
    """

    kind = "pseudo_inverse"

    def __init__(self, op, truncation_threshold=0.0):
        if truncation_threshold < 0:
            raise ParameterError("truncation threshold must be >= 0")
        self.op = op
        self.truncation_threshold = float(truncation_threshold)
        self.input_dim = op.rows
        self.output_dim = op.cols
        if isinstance(op, ConvolutionOperator):
            mags = np.abs(op.eigen_grid)
            if truncation_threshold == 0.0 and mags.min() <= RANK_TOL:
                raise RankDeficiencyError(
                    "operator has a zero Fourier coefficient; "
                    "set a positive truncation threshold")
            self._inv_grid = np.where(mags > truncation_threshold,
                                      1.0 / np.where(mags > 0, op.eigen_grid, 1.0),
                                      0.0)
            self._dense = None
        else:
            dec = spectral_decomposition(op)
            s = dec.singular_values
            if truncation_threshold == 0.0 and s[-1] <= RANK_TOL:
                raise RankDeficiencyError(
                    "operator has a zero singular value; "
                    "set a positive truncation threshold")
            keep = s > truncation_threshold
            inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
            self._dense = (dec.left_vectors, inv, dec.right_vectors)
            self._inv_grid = None

    def reconstruct(self, y):
        y = self._check_data(y)
        if self._inv_grid is not None:
            h, w = self.op.shape.height, self.op.shape.width
            yg = y.reshape(h, w)
            out = np.fft.ifft2(np.fft.fft2(yg) * self._inv_grid).real
            return out.ravel()
        u, inv, v = self._dense
        return v @ (inv * (u.T @ y))

    def to_config(self):
        return {"kind": self.kind,
                "truncation_threshold": self.truncation_threshold}


def pseudo_inverse(op, truncation_threshold=0.0):
    return PseudoInverseReconstructor(op, truncation_threshold)


class TikhonovReconstructor(Reconstructor):
    """Penalized least squares solved by CGLS to tolerance."""

    kind = "tikhonov"

    def __init__(self, op, config):
        self.op = op
        self.config = config
        self.input_dim = op.rows
        self.output_dim = op.cols

    def reconstruct(self, y):
        x, _ = self.reconstruct_with_trace(y)
        return x

    def reconstruct_with_trace(self, y):
        y = self._check_data(y)
        return cgls(self.op, self.config.regularizer, self.config.lam, y,
                    self.config)

    def to_config(self):
        return {"kind": self.kind, "lambda": self.config.lam,
                "tol_f": self.config.tol_f, "tol_x": self.config.tol_x,
                "max_iters": self.config.max_iters}


def tikhonov(op, config):
    return TikhonovReconstructor(op, config)


class StabilizerReconstructor(Reconstructor):
    """phi_k: exactly k CGLS iterations toward the Tikhonov solution.

    Tolerance stops are disabled; if CGLS converges exactly before k
    iterations the final iterate is returned unchanged.
    """

    kind = "stabilizer"

    def __init__(self, op, spec):
        self.op = op
        self.spec = spec
        self.input_dim = op.rows
        self.output_dim = op.cols

    def reconstruct(self, y):
        y = self._check_data(y)
        cfg = self.spec.tikhonov
        x, _ = _cgls_core(self.op, cfg.regularizer, cfg.lam, y,
                          tol_f=0.0, tol_x=0.0, max_iters=self.spec.k)
        return x

    def to_config(self):
        return {"kind": self.kind, "k": self.spec.k,
                "lambda": self.spec.tikhonov.lam}


@dataclass
class StabilizerSpec:
    """Iteration count k and the Tikhonov problem the iterations target."""

    k: int = 3
    tikhonov: TikhonovConfig = field(default_factory=TikhonovConfig)

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("stabilizer k must be >= 1")


def stabilizer(op, spec):
    return StabilizerReconstructor(op, spec)


class ComposedReconstructor(Reconstructor):
    """gamma after phi; data flows through phi first."""

    kind = "composed"

    def __init__(self, gamma, phi):
        if phi.output_dim != gamma.input_dim:
            raise ShapeError(
                f"cannot compose: phi outputs {phi.output_dim}, "
                f"gamma expects {gamma.input_dim}")
        self.gamma = gamma
        self.phi = phi
        self.input_dim = phi.input_dim
        self.output_dim = gamma.output_dim

    def reconstruct(self, y):
        y = self._check_data(y)
        return self.gamma.reconstruct(self.phi.reconstruct(y))

    def to_config(self):
        return {"kind": self.kind, "gamma": self.gamma.to_config(),
                "phi": self.phi.to_config()}


def compose(gamma, phi):
    return ComposedReconstructor(gamma, phi)


class ConstantReconstructor(Reconstructor):
    """Ignores the data and returns the mean of the training samples."""

    kind = "constant"

    def __init__(self, samples, input_dim=None):
        samples = [np.asarray(s, dtype=float) for s in samples]
        if not samples:
            raise ParameterError("need at least one sample")
        dims = {s.shape for s in samples}
        if len(dims) != 1 or samples[0].ndim != 1:
            raise ShapeError("samples must be vectors of a common length")
        self.value = np.mean(np.stack(samples), axis=0)
        self.output_dim = self.value.shape[0]
        self.input_dim = int(input_dim) if input_dim is not None else self.output_dim

    def reconstruct(self, y):
        self._check_data(y)
        return self.value.copy()

    def to_config(self):
        return {"kind": self.kind, "value": [float(v) for v in self.value]}


def constant_reconstructor(samples, input_dim=None):
    return ConstantReconstructor(samples, input_dim)


def stacked_min_singular_value(op, regularizer):
    """Smallest singular value of the stacked matrix [A; L].

    The Tikhonov objective is strictly convex iff ker A and ker L meet
    only at zero, i.e. iff this value is positive.  Dense check, desk
    scale only.
    """
    a = op.materialize()
    l = regularizer.materialize() if regularizer is not None else np.eye(op.cols)
    stacked = np.vstack([a, l])
    return float(np.linalg.svd(stacked, compute_uv=False)[-1])
