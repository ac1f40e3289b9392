"""Cross products in three and N dimensions, their Jacobians, and the scaled cosine head.

Every function accepts leading batch axes: a vector argument of shape (..., dim)
and an operand stack of shape (..., dim - 1, dim).
"""
import numpy as np

from greed.utils import InvalidParameter


EPS = 1e-12


def _as_vectors(values, name):
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise InvalidParameter('{} has non-finite components'.format(name))
    return values


class ConstantFrame:
    """The dim - 3 fixed operands that follow source and target in an N-dimensional product."""

    def __init__(self, vectors, dim, rng_seed=None):
        vectors = _as_vectors(vectors, 'frame').reshape(-1, dim)
        if len(vectors) != dim - 3:
            raise InvalidParameter('A frame in {} dimensions needs {} vectors, got {}'.format(dim, dim - 3, len(vectors)))
        if len(vectors) and np.linalg.matrix_rank(vectors) < len(vectors):
            raise InvalidParameter('Frame vectors must be linearly independent')
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.dim = dim
        self.rng_seed = rng_seed

    @classmethod
    def sample(cls, dim, rng_seed):
        if dim < 3:
            raise InvalidParameter('Cross products need dim >= 3, got {}'.format(dim))
        rng = np.random.default_rng(rng_seed)
        while True:
            vectors = rng.standard_normal((dim - 3, dim))
            # Resample on rank deficiency
            if dim == 3 or np.linalg.matrix_rank(vectors) == dim - 3:
                return cls(vectors, dim, rng_seed=rng_seed)

    def operands(self, source, target):
        """Stack (source, target, c_1 .. c_{dim-3}) along a new operand axis."""
        source = np.asarray(source, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        batch_shape = np.broadcast_shapes(source.shape[:-1], target.shape[:-1])
        frame = np.broadcast_to(self.vectors, batch_shape + self.vectors.shape)
        return np.concatenate([np.broadcast_to(source, batch_shape + (self.dim,))[..., None, :],
                               np.broadcast_to(target, batch_shape + (self.dim,))[..., None, :],
                               frame], axis=-2)

    def __len__(self):
        return len(self.vectors)


def cross3(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise InvalidParameter('cross3 needs 3-vectors')
    return np.cross(a, b)


def crossN(operands):
    """Generalized cross product of dim - 1 operands in dim dimensions.

    Component i is the cofactor of the basis row in the determinant whose
    remaining rows are the operands, so dim = 3 is the right-handed product.
    """
    operands = np.asarray(operands, dtype=np.float64)
    if operands.ndim < 2:
        raise InvalidParameter('crossN needs a stack of operands')
    count, dim = operands.shape[-2:]
    if dim < 3 or count != dim - 1:
        raise InvalidParameter('crossN in {} dimensions needs {} operands, got {}'.format(dim, dim - 1, count))
    if dim == 3:
        return cross3(operands[..., 0, :], operands[..., 1, :])

    components = []
    for i in range(dim):
        minor = np.delete(operands, i, axis=-1)
        components.append((-1) ** i * np.linalg.det(minor))
    return np.stack(components, axis=-1)


def crossN_jacobian(operands, operand_index):
    """Jacobian of crossN with respect to one operand, shape (..., dim, dim).

    Column j is crossN with that operand replaced by the basis vector e_j.
    """
    operands = np.asarray(operands, dtype=np.float64)
    count, dim = operands.shape[-2:]
    if not 0 <= operand_index < count:
        raise InvalidParameter('Operand index {} outside 0..{}'.format(operand_index, count - 1))

    columns = []
    for j in range(dim):
        replaced = operands.copy()
        replaced[..., operand_index, :] = 0.0
        replaced[..., operand_index, j] = 1.0
        columns.append(crossN(replaced))
    return np.stack(columns, axis=-1)


def _cosine(v_r, v_d, eps):
    v_r = np.asarray(v_r, dtype=np.float64)
    v_d = np.asarray(v_d, dtype=np.float64)
    if v_r.shape[-1] != v_d.shape[-1]:
        raise InvalidParameter('Dimension mismatch: {} vs {}'.format(v_r.shape[-1], v_d.shape[-1]))
    norm_d = np.linalg.norm(v_d, axis=-1)
    if np.any(norm_d == 0):
        raise InvalidParameter('Reference vector has zero norm')
    norm_r = np.linalg.norm(v_r, axis=-1)
    degenerate = norm_r < eps
    safe_norm_r = np.where(degenerate, 1.0, norm_r)
    phi = np.sum(v_d * v_r, axis=-1) / (norm_d * safe_norm_r)
    return v_r, v_d, norm_d, safe_norm_r, phi, degenerate


def scaled_cosine(v_r, v_d, eps=EPS):
    """(1 + cos(v_r, v_d)) / 2, exactly 0.5 when ||v_r|| < eps."""
    _, _, _, _, phi, degenerate = _cosine(v_r, v_d, eps)
    scaled = np.where(degenerate, 0.5, (1.0 + phi) / 2.0)
    return float(scaled) if scaled.ndim == 0 else scaled


def scaled_cosine_grad(v_r, v_d, eps=EPS):
    """Gradient of scaled_cosine with respect to v_r; zero when ||v_r|| < eps."""
    v_r, v_d, norm_d, norm_r, phi, degenerate = _cosine(v_r, v_d, eps)
    grad = 0.5 * (v_d / np.expand_dims(norm_d * norm_r, -1) - v_r * np.expand_dims(phi / norm_r ** 2, -1))
    return np.where(np.expand_dims(degenerate, -1), 0.0, grad)
