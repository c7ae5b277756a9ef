"""Linear operators for the periodic deblurring testbed.

Contents
--------
Shape                   grid geometry for flattened images
GaussianKernel          truncated Gaussian stencil e^{-(i^2+j^2)/(2 sigma^2)}
StencilKernel           arbitrary small stencil (same duck type as GaussianKernel)
ConvolutionOperator     circulant 2-d convolution, applied through the DFT
GradientOperator        Kronecker square D (x) D of the tridiagonal difference matrix
DenseOperator           explicit matrix
IdentityOperator        identity map
SpectralDecomposition   singular values with optional singular vectors
build_gaussian_kernel, build_convolution_operator, spectral_decomposition,
trailing_subspace_vector, and plain-text / JSON serialization helpers.

Vectors are 1-d float arrays in row-major image order.  Grid sides must be
powers of two; that restriction is part of the operator contract even though
the transform backend would accept other sizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, ParameterError, ShapeError
from .svd import jacobi_svd

# dense factorizations are refused above this side length
DENSE_LIMIT = 4096


def _is_power_of_two(k):
    return isinstance(k, (int, np.integer)) and k >= 1 and (k & (k - 1)) == 0


@dataclass(frozen=True)
class Shape:
    """Height and width of an image grid; vectors have length height * width."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ParameterError("grid sides must be positive")

    @property
    def n(self):
        return self.height * self.width


@dataclass(frozen=True)
class GaussianKernel:
    """Truncated Gaussian blur stencil on {-radius..radius}^2."""

    radius: int
    sigma: float
    weights: np.ndarray        # (2 radius + 1, 2 radius + 1)
    normalized: bool


@dataclass(frozen=True)
class StencilKernel:
    """Arbitrary small stencil; shares the (radius, weights) contract."""

    radius: int
    weights: np.ndarray


def build_gaussian_kernel(radius, sigma, normalized=True):
    """Sampled Gaussian weights w[i+r, j+r] = e^{-(i^2+j^2)/(2 sigma^2)}.

    With normalized=True the weights are scaled to unit sum so the blur
    preserves mean intensity.
    """
    if radius < 0:
        raise ParameterError("kernel radius must be >= 0")
    if sigma <= 0:
        raise ParameterError("kernel sigma must be > 0")
    idx = np.arange(-radius, radius + 1, dtype=float)
    ii = idx[:, None]
    jj = idx[None, :]
    weights = np.exp(-0.5 * (ii * ii + jj * jj) / (sigma * sigma))
    if normalized:
        weights = weights / weights.sum()
    return GaussianKernel(radius=radius, sigma=float(sigma), weights=weights,
                          normalized=bool(normalized))


class LinearOperator:
    """Base contract: apply, apply_adjoint, materialize, with shape checks."""

    rows: int
    cols: int

    def apply(self, x):
        raise NotImplementedError

    def apply_adjoint(self, y):
        raise NotImplementedError

    def materialize(self):
        """Dense (rows, cols) matrix; columns are images of basis vectors."""
        if max(self.rows, self.cols) > DENSE_LIMIT:
            raise CapabilityError(
                f"refusing to materialize a {self.rows}x{self.cols} operator "
                f"(limit {DENSE_LIMIT})")
        a = np.zeros((self.rows, self.cols))
        e = np.zeros(self.cols)
        for j in range(self.cols):
            e[j] = 1.0
            a[:, j] = self.apply(e)
            e[j] = 0.0
        return a

    def _check_vec(self, x, length, what):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] != length:
            raise ShapeError(f"{what} must be a vector of length {length}, "
                             f"got shape {np.shape(x)}")
        return x


class ConvolutionOperator(LinearOperator):
    """Circulant 2-d convolution with a small stencil, periodic boundary.

    The stencil is embedded at the origin of the grid with wraparound; its
    2-d DFT gives the eigenvalues of the circulant matrix, and apply is a
    pointwise multiply in the Fourier domain.
    """

    def __init__(self, shape, kernel):
        support = 2 * kernel.radius + 1
        if not (_is_power_of_two(shape.height) and _is_power_of_two(shape.width)):
            raise ParameterError(
                f"grid sides must be powers of two, got {shape.height}x{shape.width}")
        if support > min(shape.height, shape.width):
            raise ParameterError(
                f"kernel support {support} does not fit in grid "
                f"{shape.height}x{shape.width}")
        self.shape = shape
        self.kernel = kernel
        self.rows = shape.n
        self.cols = shape.n
        self._embedded = self._embed()
        self.eigen_grid = np.fft.fft2(self._embedded)   # (H, W) complex

    def _embed(self):
        h, w = self.shape.height, self.shape.width
        r = self.kernel.radius
        e = np.zeros((h, w))
        for di in range(-r, r + 1):
            for dj in range(-r, r + 1):
                e[di % h, dj % w] += self.kernel.weights[di + r, dj + r]
        return e

    @property
    def eigenvalues(self):
        """Flat row-major view of the circulant eigenvalues, length n."""
        return self.eigen_grid.ravel()

    def apply(self, x):
        x = self._check_vec(x, self.cols, "input")
        xg = x.reshape(self.shape.height, self.shape.width)
        out = np.fft.ifft2(np.fft.fft2(xg) * self.eigen_grid).real
        return out.ravel()

    def apply_adjoint(self, y):
        y = self._check_vec(y, self.rows, "input")
        yg = y.reshape(self.shape.height, self.shape.width)
        out = np.fft.ifft2(np.fft.fft2(yg) * np.conj(self.eigen_grid)).real
        return out.ravel()

    def materialize(self):
        # built by explicit shifts of the embedded stencil, independent of
        # the transform path, so it can serve as a cross-check oracle
        if self.cols > DENSE_LIMIT:
            raise CapabilityError(
                f"refusing to materialize a {self.rows}x{self.cols} operator "
                f"(limit {DENSE_LIMIT})")
        h, w = self.shape.height, self.shape.width
        a = np.zeros((self.rows, self.cols))
        for si in range(h):
            for sj in range(w):
                col = np.roll(self._embedded, (si, sj), axis=(0, 1))
                a[:, si * w + sj] = col.ravel()
        return a


def build_convolution_operator(shape, kernel):
    return ConvolutionOperator(shape, kernel)


class GradientOperator(LinearOperator):
    """Kronecker square L = D (x) D of the 1-d difference matrix.

    D is tridiagonal with -2 on the diagonal and 1 on both off-diagonals;
    interior rows sum to zero, the first and last rows sum to -1.  On a
    row-major flattened size_1d x size_1d image, L x = D X D^T.
    """

    def __init__(self, size_1d):
        if size_1d < 2:
            raise ParameterError("gradient operator needs size_1d >= 2")
        self.size_1d = size_1d
        self.rows = size_1d * size_1d
        self.cols = self.rows
        d = -2.0 * np.eye(size_1d)
        off = np.arange(size_1d - 1)
        d[off, off + 1] = 1.0
        d[off + 1, off] = 1.0
        self.dense_d = d

    def apply(self, x):
        x = self._check_vec(x, self.cols, "input")
        xg = x.reshape(self.size_1d, self.size_1d)
        return (self.dense_d @ xg @ self.dense_d.T).ravel()

    def apply_adjoint(self, y):
        # D is symmetric, so D (x) D is self-adjoint
        return self.apply(y)

    def materialize(self):
        return np.kron(self.dense_d, self.dense_d)


class DenseOperator(LinearOperator):
    """Explicit matrix operator."""

    def __init__(self, entries):
        entries = np.asarray(entries, dtype=float)
        if entries.ndim != 2:
            raise ParameterError("dense operator entries must be 2-d")
        self.entries = entries
        self.rows, self.cols = entries.shape

    def apply(self, x):
        x = self._check_vec(x, self.cols, "input")
        return self.entries @ x

    def apply_adjoint(self, y):
        y = self._check_vec(y, self.rows, "input")
        return self.entries.T @ y

    def materialize(self):
        return self.entries.copy()


class IdentityOperator(LinearOperator):
    """Identity map on vectors of length n."""

    def __init__(self, n):
        if n < 1:
            raise ParameterError("identity dimension must be positive")
        self.rows = n
        self.cols = n

    def apply(self, x):
        return self._check_vec(x, self.cols, "input").copy()

    def apply_adjoint(self, y):
        return self._check_vec(y, self.rows, "input").copy()

    def materialize(self):
        if self.cols > DENSE_LIMIT:
            raise CapabilityError("identity too large to materialize")
        return np.eye(self.cols)


@dataclass
class SpectralDecomposition:
    """Singular values sorted descending, with optional singular vectors.

    left_vectors / right_vectors are (m, k) and (n, k) column matrices, or
    None when only the magnitudes were requested.  A v_i = s_i u_i.
    """

    singular_values: np.ndarray
    left_vectors: np.ndarray | None
    right_vectors: np.ndarray | None


def spectral_decomposition(op, vectors=True):
    """Full SVD of an operator.

    Circulant operators use the exact Fourier construction: conjugate mode
    pairs {k, -k} carry orthonormal real cosine/sine right vectors on which
    the operator acts as a scaled rotation, so both directions share the
    singular value |a_hat_k|; self-conjugate modes are real and contribute
    one direction each.  Other operators are materialized (sides capped at
    4096) and factored with one-sided Jacobi.  With vectors=False only the
    singular values are returned; for circulant operators that path works
    at any size.
    """
    if isinstance(op, ConvolutionOperator):
        if not vectors:
            mags = np.abs(op.eigen_grid).ravel()
            return SpectralDecomposition(
                singular_values=np.sort(mags)[::-1].copy(),
                left_vectors=None, right_vectors=None)
        if op.cols > DENSE_LIMIT:
            raise CapabilityError(
                "circulant singular vectors are only materialized up to "
                f"n = {DENSE_LIMIT}; pass vectors=False for magnitudes")
        return _circulant_decomposition(op)
    a = op.materialize()
    u, s, v = jacobi_svd(a)
    if not vectors:
        return SpectralDecomposition(singular_values=s, left_vectors=None,
                                     right_vectors=None)
    return SpectralDecomposition(singular_values=s, left_vectors=u,
                                 right_vectors=v)


def _circulant_decomposition(op):
    h, w = op.shape.height, op.shape.width
    n = h * w
    eig = op.eigen_grid
    ii = np.arange(h)[:, None]
    jj = np.arange(w)[None, :]

    values = []
    lefts = []
    rights = []
    seen = np.zeros((h, w), dtype=bool)
    for p in range(h):
        for q in range(w):
            if seen[p, q]:
                continue
            pc, qc = (-p) % h, (-q) % w
            if (pc, qc) == (p, q):
                # real mode: entries are exactly +-1 over sqrt(n)
                sign_i = (2 * p) // h
                sign_j = (2 * q) // w
                signs = np.where((sign_i * ii + sign_j * jj) % 2 == 0, 1.0, -1.0)
                vvec = (signs / np.sqrt(n)).ravel()
                lam = eig[p, q].real
                sigma = abs(lam)
                uvec = vvec if lam >= 0 else -vvec
                values.append(sigma)
                lefts.append(uvec)
                rights.append(vvec)
                seen[p, q] = True
            else:
                theta = 2.0 * np.pi * (p * ii / h + q * jj / w)
                scale = np.sqrt(2.0 / n)
                cvec = (scale * np.cos(theta)).ravel()
                svec = (scale * np.sin(theta)).ravel()
                a = eig[p, q].real
                b = eig[p, q].imag
                sigma = float(np.hypot(a, b))
                if sigma > 0.0:
                    uc = (a * cvec - b * svec) / sigma
                    us = (b * cvec + a * svec) / sigma
                else:
                    uc, us = cvec, svec
                values.extend([sigma, sigma])
                lefts.extend([uc, us])
                rights.extend([cvec, svec])
                seen[p, q] = True
                seen[pc, qc] = True

    values = np.asarray(values)
    order = np.argsort(-values, kind="stable")
    u = np.column_stack([lefts[i] for i in order])
    v = np.column_stack([rights[i] for i in order])
    return SpectralDecomposition(singular_values=values[order],
                                 left_vectors=u, right_vectors=v)


def trailing_subspace_vector(decomp, index, seed):
    """Unit vector drawn from span{v_{index+1}, ..., v_n} (1-based index).

    Gaussian coefficients from the given seed, normalized.  Requires the
    decomposition to carry right vectors.
    """
    if decomp.right_vectors is None:
        raise CapabilityError("decomposition has no singular vectors")
    n = decomp.right_vectors.shape[1]
    if not 1 <= index < n:
        raise ParameterError(f"index must satisfy 1 <= index < {n}, got {index}")
    rng = np.random.default_rng(seed)
    coeff = rng.standard_normal(n - index)
    vec = decomp.right_vectors[:, index:] @ coeff
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ParameterError("degenerate trailing combination")
    return vec / norm


# ---------------------------------------------------------------------------
# serialization

def save_kernel_text(kernel, path):
    """Write stencil weights as plain text, one row per line."""
    with open(path, "w") as fh:
        for row in kernel.weights:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_kernel_text(path):
    """Read stencil weights written by save_kernel_text.

    Returns a StencilKernel; the radius is recovered from the row count.
    """
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rows.append([float(tok) for tok in line.split()])
    if not rows:
        raise ParameterError(f"no kernel rows in {path}")
    side = len(rows)
    if side % 2 == 0 or any(len(r) != side for r in rows):
        raise ParameterError(f"kernel in {path} is not an odd square stencil")
    return StencilKernel(radius=side // 2, weights=np.asarray(rows))


def operator_to_descriptor(op):
    """JSON-ready dict describing an operator's construction."""
    if isinstance(op, ConvolutionOperator):
        k = op.kernel
        if isinstance(k, GaussianKernel):
            kernel = {"kind": "gaussian", "radius": k.radius, "sigma": k.sigma,
                      "normalized": k.normalized}
        else:
            kernel = {"kind": "stencil", "radius": k.radius,
                      "weights": [[float(v) for v in row] for row in k.weights]}
        return {"type": "convolution",
                "shape": [op.shape.height, op.shape.width],
                "kernel": kernel}
    if isinstance(op, GradientOperator):
        return {"type": "gradient", "size_1d": op.size_1d}
    if isinstance(op, IdentityOperator):
        return {"type": "identity", "n": op.cols}
    if isinstance(op, DenseOperator):
        return {"type": "dense",
                "entries": [[float(v) for v in row] for row in op.entries]}
    raise ParameterError(f"cannot describe operator of type {type(op).__name__}")


def operator_from_descriptor(desc):
    kind = desc.get("type")
    if kind == "convolution":
        h, w = desc["shape"]
        kd = desc["kernel"]
        if kd.get("kind", "gaussian") == "gaussian":
            kernel = build_gaussian_kernel(kd["radius"], kd["sigma"],
                                           kd.get("normalized", True))
        else:
            kernel = StencilKernel(radius=kd["radius"],
                                   weights=np.asarray(kd["weights"], dtype=float))
        return ConvolutionOperator(Shape(h, w), kernel)
    if kind == "gradient":
        return GradientOperator(desc["size_1d"])
    if kind == "identity":
        return IdentityOperator(desc["n"])
    if kind == "dense":
        return DenseOperator(np.asarray(desc["entries"], dtype=float))
    raise ParameterError(f"unknown operator type {kind!r}")


def save_operator(op, path):
    with open(path, "w") as fh:
        json.dump(operator_to_descriptor(op), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_operator(path):
    with open(path) as fh:
        return operator_from_descriptor(json.load(fh))
