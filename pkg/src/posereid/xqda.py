"""Cross-view Quadratic Discriminant Analysis.

The subspace W maximizes extra-personal over intra-personal variance of
cross-camera pair differences, found through the generalized eigenproblem
Sigma_E w = lambda (Sigma_I + reg I) w. Distances are quadratic forms with
core M = inv(Sigma'_I) - inv(Sigma'_E) in that subspace.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .core import Descriptor
from .errors import DimError, FormatError, InsufficientPairs, NumericalError

MODEL_MAGIC = b"XQDA"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sIIIdQQ")
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ScatterPair:
    sigma_I: np.ndarray
    sigma_E: np.ndarray
    n_I: int
    n_E: int


@dataclass(frozen=True, eq=False)
class XqdaModel:
    W: np.ndarray
    M: np.ndarray
    eigvals: np.ndarray
    reg: float = 1e-3
    provenance: str = ""
    n_I: int = 0
    n_E: int = 0

    @property
    def dim(self):
        return self.W.shape[0]

    @property
    def rank(self):
        return self.W.shape[1]

    def project(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DimError(f"model expects dim {self.dim}, got {X.shape[1]}")
        return X @ self.W


def _pair_count(n):
    return n * (n - 1) // 2


def _group_terms(X, groups):
    """Return (per-sample group size, sum over groups of s_g s_g^T, total pair count)."""
    _, inverse, counts = np.unique(groups, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    sums = np.zeros((counts.size, X.shape[1]))
    np.add.at(sums, inverse, X)
    return counts[inverse].astype(np.float64), sums.T @ sums, int(sum(_pair_count(c) for c in counts))


def compute_scatter(X, identities, cameras, junk=None):
    """Covariances of cross-camera pair differences, each unordered pair counted once.

    Uses per-group sums: for a set S the unordered pair scatter is
    |S| X_S^T X_S - s s^T, and cross-camera scatter is that of S minus its
    per-camera subsets. Junk samples are ignored.
    """
    X = np.asarray(X, dtype=np.float64)
    ids = np.asarray(identities)
    cams = np.asarray(cameras)
    if junk is not None:
        keep = ~np.asarray(junk, dtype=bool)
        X, ids, cams = X[keep], ids[keep], cams[keep]
    n, d = X.shape
    if n == 0:
        raise InsufficientPairs("no samples")
    X = X - X.mean(axis=0)

    w_id, ss_id, p_id = _group_terms(X, ids)
    w_idc, ss_idc, p_idc = _group_terms(X, np.column_stack([ids, cams]))
    w_c, ss_c, p_c = _group_terms(X, cams)
    s = X.sum(axis=0)

    intra = (X * (w_id - w_idc)[:, None]).T @ X - ss_id + ss_idc
    total = (X * (n - w_c)[:, None]).T @ X - np.outer(s, s) + ss_c
    extra = total - intra
    n_I = p_id - p_idc
    n_E = (_pair_count(n) - p_c) - n_I
    if n_I == 0:
        raise InsufficientPairs("no same-identity pairs across cameras")
    sigma_I = intra / n_I
    sigma_E = extra / n_E if n_E else np.zeros((d, d))
    return ScatterPair((sigma_I + sigma_I.T) / 2, (sigma_E + sigma_E.T) / 2, n_I, n_E)


def solve_geneig(A, B):
    """Eigenpairs of A w = lambda B w, eigenvalues descending, B-orthonormal vectors.

    Each eigenvector is sign-fixed so its largest-magnitude entry is positive.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise NumericalError("non-finite matrix entries")
    try:
        vals, vecs = scipy.linalg.eigh(A, B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"generalized eigensolve failed: {exc}") from None
    vals, vecs = vals[::-1], vecs[:, ::-1]
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1
    return vals.copy(), vecs * signs


def geneig_residuals(A, B, vals, vecs):
    """Per-pair ||A w - l B w|| and the bound 1e-8 (||A||_F + l ||B||_F)."""
    res = np.linalg.norm(A @ vecs - (B @ vecs) * vals, axis=0)
    bound = RESIDUAL_TOL * (np.linalg.norm(A) + np.abs(vals) * np.linalg.norm(B))
    return res, bound


def train_xqda(X, identities, cameras, reg=1e-3, max_dim=None, eig_threshold=1.0,
               project="auto", junk=None, provenance=""):
    """Learn an XqdaModel from training features (n, d).

    ``project`` controls the exact pre-projection onto the span of the
    centered training data: "auto" applies it when n < d.
    """
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise NumericalError("non-finite training descriptors")
    n, d = X.shape
    if junk is not None:
        keep = ~np.asarray(junk, dtype=bool)
        X, identities, cameras = X[keep], np.asarray(identities)[keep], np.asarray(cameras)[keep]
        n = X.shape[0]
    if max_dim is None:
        max_dim = min(d, 512)

    Q = None
    if project is True or (project == "auto" and n < d):
        Q, _ = np.linalg.qr((X - X.mean(axis=0)).T)
        Z = X @ Q
    else:
        Z = X

    scatter = compute_scatter(Z, identities, cameras)
    if scatter.n_E == 0:
        raise InsufficientPairs("no different-identity pairs across cameras")
    V, M, eigvals = fit_scatter(scatter, reg, max_dim, eig_threshold)
    W = Q @ V if Q is not None else V
    return XqdaModel(np.ascontiguousarray(W), M, eigvals, reg, provenance, scatter.n_I, scatter.n_E)


def fit_scatter(scatter, reg=1e-3, max_dim=None, eig_threshold=1.0):
    """Subspace, metric core and kept eigenvalues from a ScatterPair.

    Keeps eigenvectors with eigenvalue above ``eig_threshold`` (at least one,
    at most ``max_dim``). The ridge is added to both covariances before
    projecting, which keeps the model invariant to a joint rescaling of
    features by c and ridge by c**2.
    """
    k = scatter.sigma_I.shape[0]
    eye = np.eye(k)
    A = scatter.sigma_E
    B = scatter.sigma_I + reg * eye
    vals, vecs = solve_geneig(A, B)

    r = int(np.clip(np.sum(vals > eig_threshold), 1, max_dim or k))
    res, bound = geneig_residuals(A, B, vals[:r], vecs[:, :r])
    if np.any(res > bound):
        worst = np.argmax(res / bound)
        raise NumericalError(f"eigen residual {res[worst]:.3e} exceeds bound {bound[worst]:.3e}")

    V = vecs[:, :r]
    cov_I = V.T @ B @ V
    cov_E = V.T @ (A + reg * eye) @ V
    try:
        M = np.linalg.inv(cov_I) - np.linalg.inv(cov_E)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"projected covariance is singular: {exc}") from None
    return V, (M + M.T) / 2, vals[:r].copy()


def _as_vector(v):
    return v.values.astype(np.float64) if isinstance(v, Descriptor) else np.asarray(v, dtype=np.float64)


def xqda_distance(model, x, z):
    x, z = _as_vector(x), _as_vector(z)
    if x.shape != (model.dim,) or z.shape != (model.dim,):
        raise DimError(f"model expects dim {model.dim}, got {x.shape} and {z.shape}")
    u = model.W.T @ (x - z)
    return float(u @ model.M @ u)


def xqda_distance_matrix(model, P, G):
    """All probe/gallery distances via the expanded quadratic form."""
    p, g = model.project(P), model.project(G)
    pm, gm = p @ model.M, g @ model.M
    return (np.sum(pm * p, axis=1)[:, None] + np.sum(gm * g, axis=1)[None, :] - 2.0 * pm @ g.T)


def save_model(model, path):
    prov = model.provenance.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.dim, model.rank, model.reg,
                                    model.n_I, model.n_E))
        fh.write(struct.pack("<H", len(prov)) + prov)
        fh.write(model.eigvals.astype("<f8").tobytes())
        fh.write(model.W.astype("<f8").tobytes(order="F"))
        fh.write(model.M.astype("<f8").tobytes(order="F"))


def load_model(path):
    buf = Path(path).read_bytes()
    if len(buf) < _MODEL_HEADER.size + 2:
        raise FormatError("truncated model header")
    magic, version, d, r, reg, n_I, n_E = _MODEL_HEADER.unpack_from(buf, 0)
    if magic != MODEL_MAGIC or version != MODEL_VERSION:
        raise FormatError("not an XQDA model file")
    pos = _MODEL_HEADER.size
    (plen,) = struct.unpack_from("<H", buf, pos)
    pos += 2
    prov = buf[pos:pos + plen].decode("utf-8")
    pos += plen
    expected = pos + 8 * (r + d * r + r * r)
    if len(buf) != expected:
        raise FormatError(f"model payload size mismatch ({len(buf)} != {expected})")

    def take(count, shape=None):
        nonlocal pos
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr if shape is None else arr.reshape(shape, order="F")

    eigvals = take(r)
    W = np.ascontiguousarray(take(d * r, (d, r)))
    M = np.ascontiguousarray(take(r * r, (r, r)))
    return XqdaModel(W, M, eigvals, reg, prov, n_I, n_E)
