"""Standard-form SOCP data for the coordinated beamforming feasibility problem.

The power-minimization problem for a fixed rate target is written as

    minimize    c' nu
    subject to  A nu + mu = b,   mu in V

with ``nu = [x0; y0_1..y0_L; t0_1..t0_K; v]``.  The row blocks of ``A`` are,
in order: L power rows, K QoS scalar rows, the objective cone, L per-AP
power cones and K QoS cones.  Only a few entries of ``(A, b)`` depend on the
network realization; :func:`build_template` lays out the sparsity pattern
once and records where those entries live so that :func:`stuff` reduces to
indexed memory writes.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
import scipy.sparse as sp

from .cones import ConeProduct, nonneg, soc


class InvalidConfigError(ValueError):
    """Network dimensions are not usable."""


class InvalidTargetError(ValueError):
    """Rate target must be strictly positive."""


FIELD_MODES = ("real", "complex")


@dataclass(frozen=True)
class ProblemDims:
    L: int
    K: int
    antennas: tuple[int, ...]
    field_mode: str
    N: int
    M: int
    n: int
    m: int

    @property
    def field_factor(self) -> int:
        return 2 if self.field_mode == "complex" else 1

    @property
    def antenna_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.antennas)]).astype(int)

    # Column layout of nu.
    @property
    def x0_col(self) -> int:
        return 0

    @property
    def y0_cols(self) -> np.ndarray:
        return 1 + np.arange(self.L)

    @property
    def t0_cols(self) -> np.ndarray:
        return 1 + self.L + np.arange(self.K)

    @property
    def v_offset(self) -> int:
        return 1 + self.L + self.K

    @property
    def user_width(self) -> int:
        """Length of one user's real beamformer block (N or 2N)."""
        return self.field_factor * self.N

    # Row layout of A.
    @property
    def objective_row(self) -> int:
        return self.L + self.K

    def ap_rows(self, l: int) -> int:
        start = self.objective_row + self.M + 1
        return start + sum(self.K * self.field_factor * n + 1 for n in self.antennas[:l])

    def qos_rows(self, k: int) -> int:
        start = self.ap_rows(self.L)
        return start + k * (self.K * self.field_factor + 2)

    def cone(self) -> ConeProduct:
        ff = self.field_factor
        factors = [nonneg(1)] * (self.L + self.K) + [soc(self.M + 1)]
        factors += [soc(self.K * ff * n + 1) for n in self.antennas]
        factors += [soc(self.K * ff + 2)] * self.K
        return ConeProduct(factors)


def compute_dims(L: int, K: int, antennas, field_mode: str = "real") -> ProblemDims:
    """Problem sizes for ``L`` APs with ``antennas[l]`` antennas and ``K`` users.

    ``antennas`` may be a single integer (same count at every AP).
    """
    if field_mode not in FIELD_MODES:
        raise InvalidConfigError(f"field_mode must be one of {FIELD_MODES}, got {field_mode!r}")
    if int(L) < 1 or int(K) < 1:
        raise InvalidConfigError(f"need L >= 1 and K >= 1, got L={L}, K={K}")
    L, K = int(L), int(K)
    if np.isscalar(antennas):
        antennas = (int(antennas),) * L
    antennas = tuple(int(a) for a in antennas)
    if len(antennas) != L:
        raise InvalidConfigError(f"expected {L} antenna counts, got {len(antennas)}")
    if min(antennas) < 1:
        raise InvalidConfigError(f"antenna counts must be >= 1, got {antennas}")
    ff = 2 if field_mode == "complex" else 1
    N = sum(antennas)
    M = ff * K * N
    n = 1 + L + K + M
    m = (L + K) + (M + 1) + sum(ff * K * a + 1 for a in antennas) + K * (ff * K + 2)
    return ProblemDims(L, K, antennas, field_mode, N, M, n, m)


@dataclass
class ConicProblem:
    """Standard-form data ``(A, b, c, V)``.

    ``version`` increases on every value update so that cached
    factorizations of ``A`` can tell they are stale.
    """

    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    cone: ConeProduct
    dims: ProblemDims | None = None
    version: int = 0
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def touch(self):
        self.version += 1


@dataclass(frozen=True)
class StuffingTemplate:
    """Sparsity skeleton plus the positions of every parameter-dependent entry.

    Slot arrays index into ``A.data`` (column-compressed order) or into ``b``.
    """

    dims: ProblemDims
    power_slots: np.ndarray  # (L,) into b
    sigma_slots: np.ndarray  # (K,) into b
    beta_r_slots: np.ndarray  # (K, W) into A.data
    C_slots: np.ndarray  # (K, K, R, W) into A.data
    indptr: np.ndarray
    indices: np.ndarray
    base_data: np.ndarray

    @property
    def variable_layout(self) -> dict[str, object]:
        d = self.dims
        return {"x0": d.x0_col, "y0": d.y0_cols, "t0": d.t0_cols, "v": d.v_offset}

    def new_problem(self) -> ConicProblem:
        d = self.dims
        A = sp.csc_matrix(
            (self.base_data.copy(), self.indices.copy(), self.indptr.copy()), shape=(d.m, d.n)
        )
        c = np.zeros(d.n)
        c[0] = 1.0
        return ConicProblem(A, np.zeros(d.m), c, d.cone(), d)


def embed_complex(channels) -> np.ndarray:
    """Real 2 x 2N blocks representing ``h_k^H v`` for complex ``v``.

    For ``h = a + jb`` and ``v = c + jd`` the returned block ``E_k`` satisfies
    ``E_k @ [c; d] = [Re(h^H v), Im(h^H v)]``.
    """
    h = np.atleast_2d(np.asarray(channels, dtype=complex))
    a, b = h.real, h.imag
    top = np.concatenate([a, b], axis=1)
    bottom = np.concatenate([-b, a], axis=1)
    return np.stack([top, bottom], axis=1)


def embed_beamformers(v) -> np.ndarray:
    """Stack complex beamformers ``(K, N)`` as real rows ``[Re v_k, Im v_k]``."""
    v = np.atleast_2d(np.asarray(v, dtype=complex))
    return np.concatenate([v.real, v.imag], axis=1)


def channel_blocks(dims: ProblemDims, channels) -> np.ndarray:
    """Per-user real coefficient blocks, shape ``(K, R, W)``.

    ``R`` is 1 in real mode (the row ``h_k'``) and 2 in complex mode.
    """
    h = np.asarray(channels)
    if h.shape != (dims.K, dims.N):
        raise InvalidConfigError(f"channels must have shape {(dims.K, dims.N)}, got {h.shape}")
    if dims.field_mode == "complex":
        return embed_complex(h)
    if np.iscomplexobj(h):
        if np.any(h.imag != 0):
            raise InvalidConfigError("complex channels require field_mode='complex'")
        h = h.real
    return np.asarray(h, dtype=float)[:, None, :]


def qos_coefficients(gamma: float, weights) -> tuple[np.ndarray, np.ndarray]:
    """SINR thresholds ``theta_k = 2^(gamma/w_k) - 1`` and ``beta_k = sqrt(1 + 1/theta_k)``."""
    if not gamma > 0:
        raise InvalidTargetError(f"rate target must be > 0, got {gamma}")
    w = np.asarray(weights, dtype=float)
    theta = np.exp2(gamma / w) - 1.0
    return theta, np.sqrt(1.0 + 1.0 / theta)


def _d_selector_cols(dims: ProblemDims, l: int) -> np.ndarray:
    """Columns of nu picked by the per-AP selector D_l, in row order."""
    off = dims.antenna_offsets
    ant = np.arange(off[l], off[l + 1])
    cols = []
    for k in range(dims.K):
        base = dims.v_offset + k * dims.user_width
        cols.append(base + ant)
        if dims.field_mode == "complex":
            cols.append(base + dims.N + ant)
    return np.concatenate(cols)


def build_template(dims: ProblemDims) -> tuple[StuffingTemplate, ConicProblem]:
    """Lay out ``(A, b, c, V)`` with zero placeholders in every parameter slot."""
    d = dims
    L, K, M = d.L, d.K, d.M
    R, W = d.field_factor, d.user_width
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    # tag >= 0 marks a parameter slot by its position in the flat slot list
    tags: list[np.ndarray] = []

    def add(r, c, v, tag=None):
        r, c = np.broadcast_arrays(np.asarray(r), np.asarray(c))
        r, c = r.ravel(), c.ravel()
        rows.append(r)
        cols.append(c)
        vals.append(np.broadcast_to(np.asarray(v, dtype=float), r.shape).copy())
        tags.append(np.full(r.shape, -1) if tag is None else np.asarray(tag).ravel())

    # power rows: y0_l + s = sqrt(P_l)
    add(np.arange(L), d.y0_cols, 1.0)
    # QoS scalar rows: t0_k - beta_k r_k'v + s = 0
    add(L + np.arange(K), d.t0_cols, 1.0)
    qos_r = np.repeat(L + np.arange(K), W).reshape(K, W)
    qos_c = d.v_offset + np.arange(K)[:, None] * W + np.arange(W)[None, :]
    n_beta = K * W
    add(qos_r, qos_c, 0.0, np.arange(n_beta).reshape(K, W))
    # objective cone: (x0, v)
    r0 = d.objective_row
    add(r0, d.x0_col, -1.0)
    add(r0 + 1 + np.arange(M), d.v_offset + np.arange(M), -1.0)
    # per-AP cones: (y0_l, D_l v)
    for l in range(L):
        rl = d.ap_rows(l)
        sel = _d_selector_cols(d, l)
        add(rl, d.y0_cols[l], -1.0)
        add(rl + 1 + np.arange(sel.size), sel, -1.0)
    # QoS cones: (t0_k, C_k v + g_k)
    kk, ii, rr, ww = np.meshgrid(np.arange(K), np.arange(K), np.arange(R), np.arange(W), indexing="ij")
    c_rows = np.array([d.qos_rows(k) for k in range(K)])[kk] + 1 + ii * R + rr
    c_cols = d.v_offset + ii * W + ww
    add(np.array([d.qos_rows(k) for k in range(K)]), d.t0_cols, -1.0)
    add(c_rows, c_cols, 0.0, n_beta + np.arange(kk.size).reshape(kk.shape))

    rows_a = np.concatenate(rows)
    cols_a = np.concatenate(cols)
    vals_a = np.concatenate(vals)
    tags_a = np.concatenate(tags)
    order = np.lexsort((rows_a, cols_a))
    position = np.empty_like(order)
    position[order] = np.arange(order.size)
    indptr = np.concatenate([[0], np.cumsum(np.bincount(cols_a, minlength=d.n))]).astype(np.int32)
    indices = rows_a[order].astype(np.int32)
    data = vals_a[order]

    slot_of_tag = np.empty(n_beta + kk.size, dtype=np.int64)
    tagged = tags_a >= 0
    slot_of_tag[tags_a[tagged]] = position[tagged]
    template = StuffingTemplate(
        dims=d,
        power_slots=np.arange(L),
        sigma_slots=np.array([d.qos_rows(k) + K * R + 1 for k in range(K)]),
        beta_r_slots=slot_of_tag[:n_beta].reshape(K, W),
        C_slots=slot_of_tag[n_beta:].reshape(K, K, R, W),
        indptr=indptr,
        indices=indices,
        base_data=data,
    )
    return template, template.new_problem()


def _check_params(dims: ProblemDims, powers, sigma, weights):
    P = np.asarray(powers, dtype=float)
    s = np.asarray(sigma, dtype=float)
    w = np.asarray(weights, dtype=float)
    if P.shape != (dims.L,) or s.shape != (dims.K,) or w.shape != (dims.K,):
        raise InvalidConfigError(
            f"expected powers ({dims.L},), sigma ({dims.K},), weights ({dims.K},); "
            f"got {P.shape}, {s.shape}, {w.shape}"
        )
    if np.any(P <= 0) or np.any(s <= 0) or np.any(w <= 0):
        raise InvalidConfigError("powers, noise levels and weights must be > 0")
    return P, s, w


def stuff(template: StuffingTemplate, problem: ConicProblem, channels, powers, sigma, weights, gamma) -> ConicProblem:
    """Write one realization's parameters into ``problem`` in place.

    ``powers`` are per-AP budgets in watts, ``sigma`` the noise standard
    deviations.  The sparsity pattern is never touched.
    """
    d = template.dims
    if problem.dims != d or problem.A.nnz != template.base_data.size:
        raise InvalidConfigError("problem was not built from this template")
    P, s, w = _check_params(d, powers, sigma, weights)
    _, beta = qos_coefficients(gamma, w)
    E = channel_blocks(d, channels)
    data = problem.A.data
    data[template.beta_r_slots] = -(beta[:, None] * E[:, 0, :])
    data[template.C_slots] = np.broadcast_to(-E[:, None, :, :], template.C_slots.shape)
    problem.b[template.power_slots] = np.sqrt(P)
    problem.b[template.sigma_slots] = s
    problem.touch()
    return problem


def build_from_scratch(dims: ProblemDims, channels, powers, sigma, weights, gamma) -> ConicProblem:
    """Assemble the problem constraint by constraint with no reuse.

    Reference path for :func:`stuff`: it expands every Smith-form group into
    triplets, then converts to compressed-column storage.
    """
    d = dims
    P, s, w = _check_params(d, powers, sigma, weights)
    _, beta = qos_coefficients(gamma, w)
    E = channel_blocks(d, channels)
    R, W = d.field_factor, d.user_width
    trip_r: list[int] = []
    trip_c: list[int] = []
    trip_v: list[float] = []
    b = np.zeros(d.m)

    def entry(r, c, v):
        trip_r.append(r)
        trip_c.append(c)
        trip_v.append(v)

    for l in range(d.L):
        entry(l, 1 + l, 1.0)
        b[l] = np.sqrt(P[l])
    for k in range(d.K):
        row = d.L + k
        entry(row, 1 + d.L + k, 1.0)
        for j in range(W):
            entry(row, d.v_offset + k * W + j, -(beta[k] * E[k, 0, j]))
    row = d.objective_row
    entry(row, 0, -1.0)
    for j in range(d.M):
        entry(row + 1 + j, d.v_offset + j, -1.0)
    off = d.antenna_offsets
    for l in range(d.L):
        row = d.ap_rows(l)
        entry(row, 1 + l, -1.0)
        row += 1
        for k in range(d.K):
            parts = [0, d.N] if d.field_mode == "complex" else [0]
            for part in parts:
                for a in range(off[l], off[l + 1]):
                    entry(row, d.v_offset + k * W + part + a, -1.0)
                    row += 1
    for k in range(d.K):
        row = d.qos_rows(k)
        entry(row, 1 + d.L + k, -1.0)
        for i in range(d.K):
            for r in range(R):
                for j in range(W):
                    entry(row + 1 + i * R + r, d.v_offset + i * W + j, -E[k, r, j])
        b[row + 1 + d.K * R] = s[k]

    A = sp.coo_matrix((trip_v, (trip_r, trip_c)), shape=(d.m, d.n)).tocsc()
    A.sort_indices()
    c = np.zeros(d.n)
    c[0] = 1.0
    return ConicProblem(A, b, c, d.cone(), d)


def problems_equal(p: ConicProblem, q: ConicProblem) -> bool:
    """Exact entrywise equality of ``(A, b, c, V)`` including the sparsity pattern."""
    return (
        p.A.shape == q.A.shape
        and np.array_equal(p.A.indptr, q.A.indptr)
        and np.array_equal(p.A.indices, q.A.indices)
        and np.array_equal(p.A.data, q.A.data)
        and np.array_equal(p.b, q.b)
        and np.array_equal(p.c, q.c)
        and p.cone == q.cone
    )


def dump_problem(problem: ConicProblem, out: TextIO | None = None) -> str:
    """Plain-text dump: dims header, ``row,col,value`` triplets, b, c, cone list."""
    buf = io.StringIO()
    d = problem.dims
    if d is not None:
        buf.write(
            f"# L={d.L} K={d.K} antennas={','.join(map(str, d.antennas))} "
            f"field={d.field_mode} N={d.N} M={d.M}\n"
        )
    buf.write(f"# m={problem.m} n={problem.n} nnz={problem.A.nnz}\n")
    buf.write("[A]\n")
    A = problem.A
    for j in range(A.shape[1]):
        for p in range(A.indptr[j], A.indptr[j + 1]):
            buf.write(f"{A.indices[p]},{j},{A.data[p]:.17g}\n")
    buf.write("[b]\n")
    buf.writelines(f"{x:.17g}\n" for x in problem.b)
    buf.write("[c]\n")
    buf.writelines(f"{x:.17g}\n" for x in problem.c)
    buf.write("[cone]\n")
    buf.writelines(f"{f}\n" for f in problem.cone)
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def parse_dump(text: str) -> dict[str, object]:
    """Inverse of :func:`dump_problem` (used for golden comparisons)."""
    section = None
    out: dict[str, list] = {"A": [], "b": [], "c": [], "cone": []}
    header: dict[str, str] = {}
    for line in text.splitlines():
        if line.startswith("#"):
            header.update(kv.split("=", 1) for kv in line[1:].split())
            continue
        if line.startswith("["):
            section = line.strip("[]")
            continue
        if section == "A":
            r, c, v = line.split(",")
            out["A"].append((int(r), int(c), float(v)))
        elif section in ("b", "c"):
            out[section].append(float(line))
        elif section == "cone":
            kind, dim = line.split()
            out["cone"].append((kind, int(dim)))
    return {"header": header, **out}
