"""Multi-start feasibility solver for the certificate conditions.

Each refute case contributes a Gram matrix whose entries are polynomials in
the decision variables (index parameters, scalar multipliers, and optional
Gram kernel shares).  A decision vector is a certificate when every Gram
matrix is positive semidefinite.  The solver minimizes a smooth penalty on
the minimum eigenvalues over the sign-constrained decision box, restarting
from several random initializations.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .poly import VarId
from .refute import GramSpec, RefuteCase

JACOBI_TOL = 1e-13
MAX_SWEEPS = 60


def _round_robin_rounds(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Partition all index pairs of [0, n) into rounds of disjoint pairs.

    Disjoint pairs commute as Jacobi rotations, so each round can be applied
    as one vectorized update (classic circle-method tournament schedule).
    """
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh_batch(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecompositions of a stack of symmetric matrices by Jacobi rotations.

    Applies rounds of disjoint rotation pairs to all matrices at once.
    Returns eigenvalues sorted ascending, shape (B, n), and matching
    orthonormal eigenvector columns, shape (B, n, n).  Deterministic: fixed
    schedule, fixed rotation convention.
    """
    A = np.array(mats, dtype=float)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ValueError("expected a stack of square matrices")
    nb, n, _ = A.shape
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    if n == 1:
        return A[:, :, 0], V
    scale = np.maximum(np.max(np.abs(A), axis=(1, 2)), 1e-300)
    rounds = _round_robin_rounds(n)
    tril = np.tril_indices(n, -1)
    for _ in range(MAX_SWEEPS):
        off = np.sqrt(np.sum(A[:, tril[0], tril[1]] ** 2, axis=1))
        if np.all(off <= JACOBI_TOL * scale):
            break
        for ps, qs in rounds:
            apq = A[:, ps, qs]
            active = np.abs(apq) > 1e-300
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                theta = (A[:, qs, qs] - A[:, ps, ps]) / np.where(active, 2.0 * apq, 1.0)
                t = np.where(theta == 0.0, 1.0,
                             np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            cb, sb = c[:, None, :], s[:, None, :]
            Ap, Aq = A[:, :, ps], A[:, :, qs]
            A[:, :, ps] = cb * Ap - sb * Aq
            A[:, :, qs] = sb * Ap + cb * Aq
            cb, sb = c[:, :, None], s[:, :, None]
            Ap, Aq = A[:, ps, :], A[:, qs, :]
            A[:, ps, :] = cb * Ap - sb * Aq
            A[:, qs, :] = sb * Ap + cb * Aq
            A[:, ps, qs] = np.where(active, 0.0, A[:, ps, qs])
            A[:, qs, ps] = np.where(active, 0.0, A[:, qs, ps])
            cb, sb = c[:, None, :], s[:, None, :]
            Vp, Vq = V[:, :, ps], V[:, :, qs]
            V[:, :, ps] = cb * Vp - sb * Vq
            V[:, :, qs] = sb * Vp + cb * Vq
    w = np.diagonal(A, axis1=1, axis2=2).copy()
    order = np.argsort(w, axis=1, kind="stable")
    w_sorted = np.take_along_axis(w, order, axis=1)
    V_sorted = np.take_along_axis(V, order[:, None, :], axis=2)
    return w_sorted, V_sorted


def jacobi_eigh(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of one symmetric matrix by Jacobi rotations.

    Returns eigenvalues sorted ascending and the matching orthonormal
    eigenvectors as columns.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    w, V = jacobi_eigh_batch(M[None])
    return w[0], V[0]


def min_eigenvalue(M: np.ndarray) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue and a unit eigenvector of a symmetric matrix."""
    w, V = jacobi_eigh(M)
    return float(w[0]), V[:, 0]


@dataclass
class DecisionLayout:
    """Global ordering of decision variables across all refute cases."""

    variables: list[VarId]
    theta_idx: np.ndarray
    gamma_idx: np.ndarray
    zeta_idx: np.ndarray
    kernel_idx: np.ndarray

    @classmethod
    def build(cls, theta: Sequence[VarId], cases: Sequence[RefuteCase],
              specs: Sequence[GramSpec]) -> "DecisionLayout":
        variables = list(theta)
        zeta, gamma, kernel = [], [], []
        for case, spec in zip(cases, specs):
            for v in case.zeta_multipliers:
                zeta.append(len(variables))
                variables.append(v)
            for v in case.gamma_multipliers:
                gamma.append(len(variables))
                variables.append(v)
            for v in spec.kernel_vars:
                kernel.append(len(variables))
                variables.append(v)
        return cls(variables=variables,
                   theta_idx=np.arange(len(theta)),
                   gamma_idx=np.array(gamma, dtype=int),
                   zeta_idx=np.array(zeta, dtype=int),
                   kernel_idx=np.array(kernel, dtype=int))

    @property
    def size(self) -> int:
        return len(self.variables)

    def index_of(self) -> dict[VarId, int]:
        return {v: i for i, v in enumerate(self.variables)}

    def bounds(self, k_min: float) -> list[tuple[float | None, float | None]]:
        out: list[tuple[float | None, float | None]] = [(None, None)] * self.size
        for i in self.theta_idx:
            out[i] = (k_min, None)
        for i in self.gamma_idx:
            out[i] = (0.0, None)
        return out


class CompiledGram:
    """A Gram spec lowered to index arithmetic for fast numeric evaluation.

    Each Gram entry polynomial becomes rows of flat numpy arrays: entry row,
    entry column, coefficient, and a fixed-width matrix of decision-variable
    factor indices (padded with an index pointing at a constant 1 slot).
    """

    def __init__(self, spec: GramSpec, index_of: dict[VarId, int]):
        self.size = spec.size
        self.spec = spec
        self.nvars = len(index_of)
        rows, cols, coeffs, factors = [], [], [], []
        width = 1
        for i in range(self.size):
            for j in range(i, self.size):
                for mono, _ in spec.entries[i][j].terms.items():
                    width = max(width, sum(e for _, e in mono))
        self.width = width
        pad = self.nvars  # index of the constant-1 slot
        for i in range(self.size):
            for j in range(i, self.size):
                for mono, coeff in spec.entries[i][j].terms.items():
                    idx = []
                    for v, e in mono:
                        idx.extend([index_of[v]] * e)
                    idx += [pad] * (width - len(idx))
                    rows.append(i)
                    cols.append(j)
                    coeffs.append(coeff)
                    factors.append(idx)
        self.rows = np.array(rows, dtype=np.intp)
        self.cols = np.array(cols, dtype=np.intp)
        self.coeffs = np.array(coeffs, dtype=float)
        self.factors = np.array(factors, dtype=np.intp).reshape(len(rows), width)
        self.sym_w = np.where(self.rows == self.cols, 1.0, 2.0)

    def _extended(self, d: np.ndarray) -> np.ndarray:
        return np.append(d, 1.0)

    def matrix(self, d: np.ndarray) -> np.ndarray:
        de = self._extended(d)
        vals = self.coeffs * np.prod(de[self.factors], axis=1)
        Q = np.zeros((self.size, self.size))
        np.add.at(Q, (self.rows, self.cols), vals)
        np.add.at(Q, (self.cols, self.rows), np.where(self.rows == self.cols, 0.0, vals))
        return Q

    def weighted_gradient(self, d: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Gradient of ``sum_ij W[i,j] Q(d)[i,j]`` for a symmetric weight matrix."""
        de = self._extended(d)
        fvals = de[self.factors]                       # (T, width)
        w = self.coeffs * self.sym_w * weights[self.rows, self.cols]
        g = np.zeros(self.nvars + 1)
        for s in range(self.width):
            others = np.prod(np.delete(fvals, s, axis=1), axis=1) if self.width > 1 \
                else np.ones(len(w))
            np.add.at(g, self.factors[:, s], w * others)
        return g[:-1]

    def quadform_gradient(self, d: np.ndarray, vec: np.ndarray) -> np.ndarray:
        """Gradient of ``vec^T Q(d) vec`` with respect to d."""
        return self.weighted_gradient(d, np.outer(vec, vec))


def eval_grams(compiled: Sequence[CompiledGram], d: np.ndarray) -> list[np.ndarray]:
    return [cg.matrix(d) for cg in compiled]


class AffineGramMap:
    """The Gram stack as an affine function of the non-index decision variables.

    For pinned index parameters every Gram entry is affine in the remaining
    decision coordinates (multipliers and kernel shares), so the stacked
    matrices are ``A y + b``.  Sign constraints on the gamma multipliers ride
    along as extra scalar rows, which makes both feasibility projections
    exact: eigenvalue clipping on the cone side, a pseudoinverse solve on the
    affine side.
    """

    def __init__(self, compiled: Sequence[CompiledGram], layout: DecisionLayout,
                 theta: np.ndarray):
        nv = layout.size
        theta_set = set(layout.theta_idx.tolist())
        self.free_idx = np.array([i for i in range(nv) if i not in theta_set],
                                 dtype=np.intp)
        free_pos = {g: i for i, g in enumerate(self.free_idx)}
        self.gamma_pos = np.array([free_pos[g] for g in layout.gamma_idx],
                                  dtype=np.intp)
        self.sizes = [cg.size for cg in compiled]
        self.theta = np.asarray(theta, dtype=float)

        pin = np.zeros(nv + 1)
        pin[-1] = 1.0
        pin[layout.theta_idx] = self.theta
        rows_gram = sum(n * n for n in self.sizes)
        A = np.zeros((rows_gram + len(self.gamma_pos), len(self.free_idx)))
        b = np.zeros(A.shape[0])
        off = 0
        self.offsets = []
        for cg in compiled:
            self.offsets.append(off)
            n = cg.size
            for t in range(len(cg.coeffs)):
                facs = cg.factors[t]
                free_f = [f for f in facs if f < nv and f not in theta_set]
                if len(free_f) > 1:
                    raise ValueError("Gram entries must be affine in the multipliers")
                cval = cg.coeffs[t] * np.prod(
                    [pin[f] for f in facs if f == nv or f in theta_set])
                r1 = off + cg.rows[t] * n + cg.cols[t]
                r2 = off + cg.cols[t] * n + cg.rows[t]
                for r in ([r1] if r1 == r2 else [r1, r2]):
                    if free_f:
                        A[r, free_pos[free_f[0]]] += cval
                    else:
                        b[r] += cval
            off += n * n
        for j, gp in enumerate(self.gamma_pos):
            A[rows_gram + j, gp] = 1.0
        self.rows_gram = rows_gram
        self.A = A
        self.b = b
        self.pinv = np.linalg.pinv(A, rcond=1e-12)

    def _eig(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mats = np.stack([v[o:o + n * n].reshape(n, n)
                         for o, n in zip(self.offsets, self.sizes)])
        mats = 0.5 * (mats + mats.transpose(0, 2, 1))
        return jacobi_eigh_batch(mats)

    def candidate(self, y: np.ndarray) -> tuple[np.ndarray, float]:
        """Clip the sign constraints and report the worst minimum eigenvalue."""
        y = y.copy()
        y[self.gamma_pos] = np.maximum(y[self.gamma_pos], 0.0)
        w, _ = self._eig(self.A @ y + self.b)
        return y, float(w[:, 0].min())

    def refine(self, y: np.ndarray, iterations: int, tolerance: float,
               relaxation: float = 1.8, check_every: int = 5
               ) -> tuple[np.ndarray, float]:
        """Douglas-Rachford feasibility iteration between the PSD product
        cone and the affine image, keeping the best sign-feasible iterate.

        The splitting handles the boundary-only intersections that arise when
        the certificate set has no strict interior, where plain penalty
        descent slows to a crawl.
        """
        y_best, lam_best = self.candidate(y)
        if lam_best >= -tolerance:
            return y_best, lam_best
        z = self.A @ y + self.b
        nb = len(self.sizes)
        last_improvement = 0
        patience = max(500, iterations // 8)
        for it in range(iterations):
            w, V = self._eig(z)
            clipped = np.maximum(w, 0.0)
            cone = np.einsum("bij,bj,bkj->bik", V, clipped, V)
            xc = np.concatenate([cone.reshape(nb, -1).ravel(),
                                 np.maximum(z[self.rows_gram:], 0.0)])
            yv = self.pinv @ (2.0 * xc - z - self.b)
            xl = self.A @ yv + self.b
            z = z + relaxation * (xl - xc)
            if it % check_every == 0 or it == iterations - 1:
                y_cand, lam = self.candidate(self.pinv @ (xc - self.b))
                if lam > lam_best + 0.01 * abs(lam_best):
                    last_improvement = it
                if lam > lam_best:
                    y_best, lam_best = y_cand, lam
                    if lam_best >= -tolerance:
                        break
                if it - last_improvement > patience:
                    break
        return y_best, lam_best


def compile_grams(specs: Sequence[GramSpec], layout: DecisionLayout) -> list[CompiledGram]:
    index_of = layout.index_of()
    return [CompiledGram(spec, index_of) for spec in specs]


@dataclass
class SolverConfig:
    restarts: int = 10
    iterations: int = 5000
    rounds: int = 4
    tolerance: float = 1e-6
    margin: float = 1e-5
    seed: int = 0
    k_min: float = 1e-4
    k_init: tuple[float, float] = (1e-4, 1.0)
    mult_init: tuple[float, float] = (0.0, 1.0)
    free_init: tuple[float, float] = (-1.0, 1.0)

    def digest(self) -> str:
        payload = json.dumps(self.__dict__, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass
class Certificate:
    decision: np.ndarray
    variable_names: list[str]
    lambda_mins: np.ndarray
    tolerance: float
    seed: int
    config_hash: str
    restarts: list[dict] = field(default_factory=list)
    matrices: list[np.ndarray] = field(default_factory=list)
    basis_repr: list[list[str]] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return bool(np.all(self.lambda_mins >= -self.tolerance))

    def theta(self, layout: DecisionLayout) -> np.ndarray:
        return self.decision[layout.theta_idx]

    def to_dict(self) -> dict:
        return {
            "decision": dict(zip(self.variable_names, self.decision.tolist())),
            "lambda_mins": self.lambda_mins.tolist(),
            "tolerance": self.tolerance,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "valid": self.valid,
            "restarts": self.restarts,
            "basis": self.basis_repr,
            "matrices": [m.tolist() for m in self.matrices],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Certificate":
        names = list(data["decision"].keys())
        return cls(decision=np.array(list(data["decision"].values()), dtype=float),
                   variable_names=names,
                   lambda_mins=np.array(data["lambda_mins"], dtype=float),
                   tolerance=float(data["tolerance"]),
                   seed=int(data["seed"]),
                   config_hash=data.get("config_hash", ""),
                   restarts=data.get("restarts", []),
                   matrices=[np.array(m) for m in data.get("matrices", [])],
                   basis_repr=data.get("basis", []))


class SolverFailure(RuntimeError):
    """No restart reached a valid certificate; carries the best attempt."""

    def __init__(self, certificate: Certificate, residual: float):
        super().__init__(f"feasibility search failed; best residual {residual:.3e}")
        self.certificate = certificate
        self.residual = residual


def penalty(compiled: Sequence[CompiledGram], d: np.ndarray,
            margin: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient, and per-case minimum eigenvalues of the PSD penalty.

    The penalty is the spectral sum ``sum_i max(0, margin - lambda_i)^2``
    over every eigenvalue of every case, which vanishes exactly when all
    minimum eigenvalues clear the margin and, unlike a min-eigenvalue-only
    hinge, stays continuously differentiable through eigenvalue crossings.
    Cases with equal Gram size are eigendecomposed together in one batched
    Jacobi pass.
    """
    total = 0.0
    grad = np.zeros(len(d))
    lams = np.empty(len(compiled))
    by_size: dict[int, list[int]] = {}
    for c, cg in enumerate(compiled):
        by_size.setdefault(cg.size, []).append(c)
    for indices in by_size.values():
        stack = np.stack([compiled[c].matrix(d) for c in indices])
        w, V = jacobi_eigh_batch(stack)
        for pos, c in enumerate(indices):
            lams[c] = float(w[pos, 0])
            gaps = np.maximum(0.0, margin - w[pos])
            if np.any(gaps > 0.0):
                total += float(np.sum(gaps * gaps))
                active = gaps > 0.0
                Va = V[pos][:, active]
                weight = (Va * (2.0 * gaps[active])) @ Va.T
                grad -= compiled[c].weighted_gradient(d, weight)
    return total, grad, lams


def _map_restarts(fn, count: int) -> list:
    """Run independent restarts, in parallel when SISYNTH_THREADS allows."""
    threads = int(os.environ.get("SISYNTH_THREADS", "0")) or min(count, os.cpu_count() or 1)
    if threads <= 1 or count <= 1:
        return [fn(r) for r in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def solve(specs: Sequence[GramSpec], layout: DecisionLayout,
          config: SolverConfig) -> Certificate:
    """Search for a decision vector making every Gram matrix PSD.

    Each of the ``config.restarts`` seeded restarts alternates a joint
    penalty descent over all decision variables (which steers the index
    parameters) with a Douglas-Rachford feasibility refinement of the
    multipliers at pinned index parameters (exact convex projections, which
    handle the flat tail where gradient descent stalls).  The restart with
    the lowest final penalty wins, ties broken by restart index.  Raises
    :class:`SolverFailure` with the best attempt when no restart certifies.
    """
    if not specs:
        raise ValueError("no Gram specs to solve")
    compiled = compile_grams(specs, layout)
    bounds = layout.bounds(config.k_min)

    def descend(x, budget, margin):
        def objective(d):
            val, grad, _ = penalty(compiled, d, margin)
            return val, grad
        return minimize(objective, x, jac=True, method="L-BFGS-B", bounds=bounds,
                        options={"maxiter": budget, "maxfun": 4 * budget,
                                 "ftol": 1e-18, "gtol": 1e-14}).x

    warmup = max(100, config.iterations // 20)
    dr_budget = max(500, config.iterations // config.rounds)

    def run_restart(r):
        rng = np.random.default_rng([config.seed, r])
        x = np.empty(layout.size)
        x[layout.theta_idx] = rng.uniform(*config.k_init, size=len(layout.theta_idx))
        x[layout.gamma_idx] = rng.uniform(*config.mult_init, size=len(layout.gamma_idx))
        for idx in (layout.zeta_idx, layout.kernel_idx):
            x[idx] = rng.uniform(*config.free_init, size=len(idx))

        for rnd in range(config.rounds):
            if rnd > 0:
                # the sampled index parameters did not certify: steer them
                # with a joint penalty descent before trying again
                margins = (1e-1, 1e-2, 1e-3, config.margin) if rnd == 1 \
                    else (1e-3, config.margin)
                for margin in margins:
                    x = descend(x, warmup, margin)
            amap = AffineGramMap(compiled, layout, x[layout.theta_idx])
            y, lam = amap.refine(x[amap.free_idx], dr_budget, config.tolerance)
            x = x.copy()
            x[amap.free_idx] = y
            if lam >= -config.tolerance:
                break
        val, _, lams = penalty(compiled, x, config.margin)
        return x, lams, float(val)

    results = _map_restarts(run_restart, config.restarts)

    best = None
    restart_log = []
    for r, (res_x, lams, residual) in enumerate(results):
        valid = bool(np.all(lams >= -config.tolerance))
        restart_log.append({
            "restart": r,
            "k": res_x[layout.theta_idx].tolist(),
            "lambda_mins": lams.tolist(),
            "residual": residual,
            "valid": valid,
        })
        if best is None or residual < best[0]:
            best = (residual, r, res_x.copy(), lams.copy())

    residual, _, x, lams = best
    cert = Certificate(
        decision=x,
        variable_names=[v.name for v in layout.variables],
        lambda_mins=lams,
        tolerance=config.tolerance,
        seed=config.seed,
        config_hash=config.digest(),
        restarts=restart_log,
        matrices=eval_grams(compiled, x),
        basis_repr=[[_mono_repr(m) for m in spec.basis] for spec in specs],
    )
    if not cert.valid:
        raise SolverFailure(cert, residual)
    return cert


def _mono_repr(m) -> str:
    if not m:
        return "1"
    return "*".join(f"{v.name}^{e}" if e > 1 else v.name for v, e in m)


def check_certificate(specs: Sequence[GramSpec], layout: DecisionLayout,
                      cert: Certificate, tolerance: float | None = None,
                      k_min: float = 1e-4) -> tuple[bool, list[str]]:
    """Independent re-check: recompute every Gram matrix and eigenvalue.

    Verifies the sign constraints on the decision vector and that each
    case's minimum eigenvalue clears ``-tolerance``.  Returns a pass flag
    and per-violation diagnostics.
    """
    tol = cert.tolerance if tolerance is None else tolerance
    diagnostics: list[str] = []
    d = cert.decision
    if len(d) != layout.size:
        return False, [f"decision dimension {len(d)} != layout size {layout.size}"]
    for i in layout.theta_idx:
        if d[i] < k_min - 1e-12:
            diagnostics.append(f"theta component {layout.variables[i].name} = {d[i]:.3e} below {k_min}")
    for i in layout.gamma_idx:
        if d[i] < -1e-12:
            diagnostics.append(f"multiplier {layout.variables[i].name} = {d[i]:.3e} is negative")
    compiled = compile_grams(specs, layout)
    for c, cg in enumerate(compiled):
        lam, _ = min_eigenvalue(cg.matrix(d))
        if lam < -tol:
            diagnostics.append(f"case {c}: lambda_min = {lam:.3e} < {-tol:.1e} (margin {lam + tol:.3e})")
    return not diagnostics, diagnostics
