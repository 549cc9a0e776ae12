# exterior.py
"""
Pointwise alternating-tensor algebra.

Components are stored densely, one entry per strictly increasing multi-index
in lexicographic order (itertools.combinations). Every bilinear operation is
driven by a product table listing (I, J, I∪J, sgn(I, J)) for disjoint I, J;
signs come from explicit inversion counting.

The array kernels (`*_components`) accept leading batch axes so fields and
jets reuse them; the tensor-level operations wrap them for single points.
"""
import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from math import comb, factorial
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from config import MAX_DIMENSION
from errors import ShapeError

MultiIndex = Tuple[int, ...]


class Variance(str, Enum):
    VECTOR = "vector"
    COVECTOR = "covector"


# ==========================================================
# MULTI-INDEX BOOKKEEPING
# ==========================================================


@lru_cache(maxsize=None)
def multi_indices(n: int, k: int) -> Tuple[MultiIndex, ...]:
    if k < 0 or k > n:
        return ()
    return tuple(itertools.combinations(range(n), k))


@lru_cache(maxsize=None)
def index_map(n: int, k: int) -> Dict[MultiIndex, int]:
    return {index: pos for pos, index in enumerate(multi_indices(n, k))}


def permutation_sign(sequence: Sequence[int]) -> int:
    """Sign of the permutation sorting `sequence`; 0 if an entry repeats."""
    items = list(sequence)
    if len(set(items)) != len(items):
        return 0
    inversions = sum(
        1 for a in range(len(items)) for b in range(a + 1, len(items)) if items[a] > items[b]
    )
    return -1 if inversions % 2 else 1


def complement(index: MultiIndex, n: int) -> MultiIndex:
    taken = set(index)
    return tuple(i for i in range(n) if i not in taken)


def shuffle_sign(first: MultiIndex, second: MultiIndex) -> int:
    return permutation_sign(tuple(first) + tuple(second))


@dataclass(frozen=True)
class ProductTable:
    """Nonzero entries of e_I ∧ e_J = sign · e_K for grades (k, m) in dimension n."""

    left: np.ndarray
    right: np.ndarray
    out: np.ndarray
    sign: np.ndarray
    size: int


@lru_cache(maxsize=None)
def product_table(n: int, k: int, m: int) -> ProductTable:
    left, right, out, sign = [], [], [], []
    if k >= 0 and m >= 0 and k + m <= n:
        left_pos, right_pos = index_map(n, k), index_map(n, m)
        for pos, whole in enumerate(multi_indices(n, k + m)):
            for first in itertools.combinations(whole, k):
                second = tuple(i for i in whole if i not in first)
                left.append(left_pos[first])
                right.append(right_pos[second])
                out.append(pos)
                sign.append(shuffle_sign(first, second))
    logging.debug(f"[EXTERIOR] product table n={n} k={k} m={m}: {len(out)} entries")
    return ProductTable(
        left=np.asarray(left, dtype=np.intp),
        right=np.asarray(right, dtype=np.intp),
        out=np.asarray(out, dtype=np.intp),
        sign=np.asarray(sign, dtype=float),
        size=comb(n, k + m) if 0 <= k + m <= n else 0,
    )


@lru_cache(maxsize=None)
def _complement_table(n: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Position of Iᶜ in grade n-k and sgn(I, Iᶜ), for every I of grade k."""
    target = index_map(n, n - k)
    positions, signs = [], []
    for index in multi_indices(n, k):
        rest = complement(index, n)
        positions.append(target[rest])
        signs.append(shuffle_sign(index, rest))
    return np.asarray(positions, dtype=np.intp), np.asarray(signs, dtype=float)


# ==========================================================
# ARRAY KERNELS (leading batch axes allowed)
# ==========================================================


def _scatter(values: np.ndarray, index: np.ndarray, size: int) -> np.ndarray:
    moved = np.moveaxis(values, -1, 0)
    out = np.zeros((size,) + moved.shape[1:])
    np.add.at(out, index, moved)
    return np.moveaxis(out, 0, -1)


def wedge_components(a: np.ndarray, b: np.ndarray, n: int, k: int, m: int) -> np.ndarray:
    table = product_table(n, k, m)
    if k + m > n:
        shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
        return np.zeros(shape + (0,))
    values = a[..., table.left] * b[..., table.right] * table.sign
    return _scatter(values, table.out, table.size)


def contract_components(first: np.ndarray, whole: np.ndarray, n: int, p: int, q: int) -> np.ndarray:
    """out[J] = Σ_I first[I] · whole[I∪J] · sgn(I, J); grade q-p, or a zero scalar if p > q.

    With first = X (vector) and whole = ω this is i_X ω; with first = ω and
    whole = X it is j_ω X.
    """
    if p > q:
        shape = np.broadcast_shapes(first.shape[:-1], whole.shape[:-1])
        return np.zeros(shape + (1,))
    table = product_table(n, p, q - p)
    values = first[..., table.left] * whole[..., table.out] * table.sign
    return _scatter(values, table.right, comb(n, q - p))


def derivative_components(grad: np.ndarray, n: int, k: int) -> np.ndarray:
    """Coordinate exterior derivative from component gradients.

    `grad` has shape (..., n, C(n,k)) with grad[..., i, I] = ∂_i ω_I;
    (dω) = Σ_i dx^i ∧ ∂_i ω.
    """
    if k + 1 > n:
        return np.zeros(grad.shape[:-2] + (0,))
    table = product_table(n, 1, k)
    values = grad[..., table.left, table.right] * table.sign
    return _scatter(values, table.out, table.size)


def flat_components(x: np.ndarray, rho, n: int, k: int) -> np.ndarray:
    """i_X Ω for Ω = ρ dx^0∧…∧dx^(n-1): component at Iᶜ is ρ · sgn(I, Iᶜ) · X^I."""
    positions, signs = _complement_table(n, k)
    out = np.zeros(x.shape[:-1] + (comb(n, n - k),))
    out[..., positions] = x * signs * np.asarray(rho)[..., None]
    return out


def sharp_components(eta: np.ndarray, rho, n: int, k: int) -> np.ndarray:
    """Inverse of flat_components: X^I = η_{Iᶜ} · sgn(I, Iᶜ) / ρ."""
    positions, signs = _complement_table(n, k)
    return eta[..., positions] * signs / np.asarray(rho)[..., None]


def compound_matrix(matrix: np.ndarray, k: int) -> np.ndarray:
    """k-th compound: entry [J, I] is the minor det(A[J, I]) (rows J, columns I)."""
    matrix = np.asarray(matrix, dtype=float)
    rows, cols = matrix.shape[-2:]
    batch = matrix.shape[:-2]
    if k == 0:
        return np.ones(batch + (1, 1))
    row_idx = np.asarray(multi_indices(rows, k), dtype=np.intp).reshape(-1, k)
    col_idx = np.asarray(multi_indices(cols, k), dtype=np.intp).reshape(-1, k)
    if len(row_idx) == 0 or len(col_idx) == 0:
        return np.zeros(batch + (len(row_idx), len(col_idx)))
    sub = matrix[..., row_idx[:, None, :, None], col_idx[None, :, None, :]]
    return np.linalg.det(sub)


# ==========================================================
# TENSORS
# ==========================================================


@dataclass(frozen=True, eq=False)
class AlternatingTensor:
    dimension: int
    grade: int
    variance: Variance
    components: np.ndarray

    def __post_init__(self):
        if not 0 <= self.dimension <= MAX_DIMENSION:
            raise ShapeError(f"dimension {self.dimension} outside [0, {MAX_DIMENSION}]")
        if self.grade < 0:
            raise ShapeError(f"negative grade {self.grade}")
        components = np.asarray(self.components, dtype=float).reshape(-1)
        expected = comb(self.dimension, self.grade)
        if components.shape != (expected,):
            raise ShapeError(
                f"grade {self.grade} in dimension {self.dimension} needs {expected} components, got {components.size}"
            )
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "variance", Variance(self.variance))

    # ---------- constructors ----------
    @classmethod
    def zero(cls, n: int, k: int, variance: Variance) -> "AlternatingTensor":
        return cls(n, k, variance, np.zeros(comb(n, k)))

    @classmethod
    def scalar(cls, n: int, value: float, variance: Variance = Variance.COVECTOR) -> "AlternatingTensor":
        return cls(n, 0, variance, np.array([float(value)]))

    @classmethod
    def basis(cls, n: int, index: Sequence[int], variance: Variance) -> "AlternatingTensor":
        """Signed basis element e_{i1}∧…∧e_{ik} (indices in any order)."""
        index = tuple(index)
        sign = permutation_sign(index)
        tensor = cls.zero(n, len(index), variance)
        if sign:
            tensor.components[index_map(n, len(index))[tuple(sorted(index))]] = sign
        return tensor

    @classmethod
    def from_dict(
        cls, n: int, k: int, variance: Variance, values: Mapping[MultiIndex, float]
    ) -> "AlternatingTensor":
        tensor = cls.zero(n, k, variance)
        lookup = index_map(n, k)
        for index, value in values.items():
            index = tuple(index)
            if len(index) != k:
                raise ShapeError(f"multi-index {index} is not of grade {k}")
            sign = permutation_sign(index)
            if sign:
                tensor.components[lookup[tuple(sorted(index))]] += sign * float(value)
        return tensor

    @classmethod
    def vector(cls, values: Sequence[float]) -> "AlternatingTensor":
        return cls(len(values), 1, Variance.VECTOR, np.asarray(values, dtype=float))

    @classmethod
    def covector(cls, values: Sequence[float]) -> "AlternatingTensor":
        return cls(len(values), 1, Variance.COVECTOR, np.asarray(values, dtype=float))

    # ---------- access ----------
    def component(self, index: Sequence[int]) -> float:
        index = tuple(index)
        sign = permutation_sign(index)
        if not sign:
            return 0.0
        return sign * float(self.components[index_map(self.dimension, self.grade)[tuple(sorted(index))]])

    def as_dict(self) -> Dict[MultiIndex, float]:
        return dict(zip(multi_indices(self.dimension, self.grade), self.components.tolist()))

    def norm(self) -> float:
        return norm(self)

    def allclose(self, other: "AlternatingTensor", atol: float = 1e-12) -> bool:
        _require_same_space(self, other)
        return bool(np.allclose(self.components, other.components, rtol=0.0, atol=atol))

    # ---------- linear structure ----------
    def _with(self, components: np.ndarray) -> "AlternatingTensor":
        return AlternatingTensor(self.dimension, self.grade, self.variance, components)

    def __add__(self, other: "AlternatingTensor") -> "AlternatingTensor":
        _require_same_space(self, other)
        return self._with(self.components + other.components)

    def __sub__(self, other: "AlternatingTensor") -> "AlternatingTensor":
        _require_same_space(self, other)
        return self._with(self.components - other.components)

    def __mul__(self, scale: float) -> "AlternatingTensor":
        return self._with(self.components * float(scale))

    __rmul__ = __mul__

    def __neg__(self) -> "AlternatingTensor":
        return self._with(-self.components)

    def __xor__(self, other: "AlternatingTensor") -> "AlternatingTensor":
        return wedge(self, other)

    def __repr__(self) -> str:
        terms = ", ".join(f"{idx}: {val:.6g}" for idx, val in self.as_dict().items() if val)
        return f"AlternatingTensor(n={self.dimension}, k={self.grade}, {self.variance.value}, {{{terms}}})"


def _require_same_space(a: AlternatingTensor, b: AlternatingTensor):
    if (a.dimension, a.grade, a.variance) != (b.dimension, b.grade, b.variance):
        raise ShapeError(
            f"tensors live in different spaces: (n={a.dimension}, k={a.grade}, {a.variance.value}) "
            f"vs (n={b.dimension}, k={b.grade}, {b.variance.value})"
        )


def _require(tensor: AlternatingTensor, variance: Variance, what: str):
    if tensor.variance != variance:
        raise ShapeError(f"{what} must be a {variance.value}, got a {tensor.variance.value}")


def _require_dimension(a: AlternatingTensor, b: AlternatingTensor):
    if a.dimension != b.dimension:
        raise ShapeError(f"dimension mismatch: {a.dimension} vs {b.dimension}")


# ==========================================================
# OPERATIONS
# ==========================================================


def wedge(a: AlternatingTensor, b: AlternatingTensor) -> AlternatingTensor:
    _require_dimension(a, b)
    if a.variance != b.variance:
        raise ShapeError("wedge needs operands of the same variance")
    n, k, m = a.dimension, a.grade, b.grade
    if k + m > n:
        return AlternatingTensor(n, k + m, a.variance, np.zeros(0))
    return AlternatingTensor(n, k + m, a.variance, wedge_components(a.components, b.components, n, k, m))


def pair(omega: AlternatingTensor, x: AlternatingTensor) -> float:
    _require(omega, Variance.COVECTOR, "first argument")
    _require(x, Variance.VECTOR, "second argument")
    _require_dimension(omega, x)
    if omega.grade != x.grade:
        raise ShapeError(f"cannot pair grade {omega.grade} with grade {x.grade}")
    return float(np.dot(omega.components, x.components))


def interior_by_multivector(omega: AlternatingTensor, x: AlternatingTensor) -> AlternatingTensor:
    """i_X ω; the zero scalar form when grade(X) > grade(ω)."""
    _require(omega, Variance.COVECTOR, "omega")
    _require(x, Variance.VECTOR, "X")
    _require_dimension(omega, x)
    n, k, m = omega.dimension, omega.grade, x.grade
    if m > k:
        return AlternatingTensor.zero(n, 0, Variance.COVECTOR)
    return AlternatingTensor(n, k - m, Variance.COVECTOR, contract_components(x.components, omega.components, n, m, k))


def interior_by_form(omega: AlternatingTensor, x: AlternatingTensor) -> AlternatingTensor:
    """j_ω X; the zero scalar when grade(ω) > grade(X)."""
    _require(omega, Variance.COVECTOR, "omega")
    _require(x, Variance.VECTOR, "X")
    _require_dimension(omega, x)
    n, k, m = omega.dimension, omega.grade, x.grade
    if k > m:
        return AlternatingTensor.zero(n, 0, Variance.VECTOR)
    return AlternatingTensor(n, m - k, Variance.VECTOR, contract_components(omega.components, x.components, n, k, m))


def interior_by_vectors(
    omega: AlternatingTensor, vectors: Sequence[AlternatingTensor], reverse: bool = False
) -> AlternatingTensor:
    """Iterated single contractions: X1 first (i_{Xm}…i_{X1}), or Xm first when `reverse`."""
    order = list(reversed(vectors)) if reverse else list(vectors)
    result = omega
    for vector in order:
        if vector.grade != 1:
            raise ShapeError("interior_by_vectors expects grade-1 vectors")
        result = interior_by_multivector(result, vector)
    return result


def interior_by_form_permutation(
    omega: AlternatingTensor, vectors: Sequence[AlternatingTensor]
) -> AlternatingTensor:
    """j_ω(X1∧…∧Xm) straight from the normalised permutation sum.

    (1/(k!(m-k)!)) Σ_σ sign(σ) ω(X_σ1, …, X_σk) X_σ(k+1)∧…∧X_σm
    """
    _require(omega, Variance.COVECTOR, "omega")
    n, k, m = omega.dimension, omega.grade, len(vectors)
    if k > m:
        return AlternatingTensor.zero(n, 0, Variance.VECTOR)
    total = AlternatingTensor.zero(n, m - k, Variance.VECTOR)
    for perm in itertools.permutations(range(m)):
        head = decomposable([vectors[i] for i in perm[:k]], n)
        tail = decomposable([vectors[i] for i in perm[k:]], n)
        total = total + tail * (permutation_sign(perm) * pair(omega, head))
    return total * (1.0 / (factorial(k) * factorial(m - k)))


def decomposable(vectors: Sequence[AlternatingTensor], dimension: int) -> AlternatingTensor:
    result = AlternatingTensor.scalar(dimension, 1.0, Variance.VECTOR)
    for vector in vectors:
        result = wedge(result, vector)
    return result


def volume_form(n: int, rho: float = 1.0) -> AlternatingTensor:
    return AlternatingTensor(n, n, Variance.COVECTOR, np.array([float(rho)]))


def omega_flat(x: AlternatingTensor, rho: float) -> AlternatingTensor:
    _require(x, Variance.VECTOR, "X")
    if rho <= 0:
        raise ShapeError(f"density must be positive, got {rho}")
    n, k = x.dimension, x.grade
    if k > n:
        return AlternatingTensor.zero(n, 0, Variance.COVECTOR)
    return AlternatingTensor(n, n - k, Variance.COVECTOR, flat_components(x.components, rho, n, k))


def omega_sharp(eta: AlternatingTensor, rho: float) -> AlternatingTensor:
    _require(eta, Variance.COVECTOR, "eta")
    if rho <= 0:
        raise ShapeError(f"density must be positive, got {rho}")
    n, k = eta.dimension, eta.dimension - eta.grade
    return AlternatingTensor(n, k, Variance.VECTOR, sharp_components(eta.components, rho, n, k))


def pushforward(x: AlternatingTensor, matrix: np.ndarray) -> AlternatingTensor:
    """Image of a k-vector under the linear map `matrix` (columns = images of basis vectors)."""
    _require(x, Variance.VECTOR, "X")
    matrix = np.asarray(matrix, dtype=float)
    compound = compound_matrix(matrix, x.grade)
    return AlternatingTensor(matrix.shape[0], x.grade, Variance.VECTOR, compound @ x.components)


def pullback(omega: AlternatingTensor, matrix: np.ndarray) -> AlternatingTensor:
    _require(omega, Variance.COVECTOR, "omega")
    matrix = np.asarray(matrix, dtype=float)
    compound = compound_matrix(matrix, omega.grade)
    return AlternatingTensor(matrix.shape[1], omega.grade, Variance.COVECTOR, compound.T @ omega.components)


def norm(tensor: AlternatingTensor) -> float:
    """Euclidean norm of the component vector in the chart."""
    return float(np.linalg.norm(tensor.components))
