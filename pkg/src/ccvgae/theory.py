"""Numerical checks of the structural and approximation results behind the model.

* acyclicity of a weighted adjacency's support (DFS) and topological orders;
* ``(I - phi^T)^-1`` of a DAG is a row/column permutation of a
  lower-triangular matrix;
* the linear approximation bound for the Gaussian distribution function;
* the normal-to-target construction for a two-dimensional linear-uniform
  target;
* sample means of SCM factors converging at the ``n^-1/2`` rate.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import ks_2samp

from .autodiff import lu_inverse
from .synth import ScmSpec, gen_factors

SUPPORT_TOL = 1e-12
TRIANGULAR_TOL = 1e-9
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class PreconditionError(ValueError):
    pass


# ---------------------------------------------------------------- graph structure


def support(phi: np.ndarray) -> np.ndarray:
    return np.abs(np.asarray(phi, dtype=np.float64)) > SUPPORT_TOL


def acyclicity_oracle(phi: np.ndarray) -> bool:
    """True iff the support graph (edge i -> j when phi[i, j] != 0) has no directed cycle."""
    adj = support(phi)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("phi must be square")
    k = adj.shape[0]
    succ = [np.flatnonzero(adj[i]).tolist() for i in range(k)]
    state = [0] * k  # 0 unvisited, 1 on stack, 2 done
    for root in range(k):
        if state[root]:
            continue
        stack = [(root, iter(succ[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state[nxt] == 1:
                return False
            elif state[nxt] == 0:
                state[nxt] = 1
                stack.append((nxt, iter(succ[nxt])))
    return True


def topological_order(phi: np.ndarray) -> list[int] | None:
    """Parents-first order by repeatedly removing a zero in-degree node; None if cyclic."""
    adj = support(phi)
    k = adj.shape[0]
    indeg = adj.sum(axis=0).astype(int)
    ready = sorted(np.flatnonzero(indeg == 0).tolist())
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in np.flatnonzero(adj[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
        ready.sort()
    return order if len(order) == k else None


def causal_inverse(phi: np.ndarray) -> np.ndarray:
    k = phi.shape[0]
    return lu_inverse(np.eye(k) - np.asarray(phi, dtype=np.float64).T)


def _is_lower(m: np.ndarray, tol: float = TRIANGULAR_TOL) -> bool:
    return bool(np.all(np.abs(np.triu(m, k=1)) <= tol))


def permuted(m: np.ndarray, perm) -> np.ndarray:
    """``P M P^T`` where row ``a`` of ``P`` selects ``perm[a]``."""
    p = np.asarray(perm)
    return m[np.ix_(p, p)]


def brute_force_triangular_perm(m: np.ndarray) -> list[int] | None:
    for perm in itertools.permutations(range(m.shape[0])):
        if _is_lower(permuted(m, perm)):
            return list(perm)
    return None


def perm_triangular_check(phi: np.ndarray, brute_force: bool | None = None):
    """Check that ``(I - phi^T)^-1`` becomes lower-triangular under a topological permutation.

    Returns ``(ok, perm)``.  For ``k <= 6`` (or when asked) an exhaustive
    search over all permutations must agree that such an ordering exists.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if not acyclicity_oracle(phi):
        raise PreconditionError("phi's support has a directed cycle")
    order = topological_order(phi)
    m = causal_inverse(phi)
    ok = _is_lower(permuted(m, order))
    if brute_force is None:
        brute_force = phi.shape[0] <= 6
    if brute_force:
        ok = ok and brute_force_triangular_perm(m) is not None
    return ok, order


def random_dag(k: int, rng: np.random.Generator, density: float = 0.5) -> np.ndarray:
    """Weighted DAG: random strictly-lower support, then a random relabelling."""
    w = np.tril(rng.uniform(-2.0, 2.0, size=(k, k)) * (rng.random((k, k)) < density), k=-1)
    p = rng.permutation(k)
    return w[np.ix_(p, p)].T if rng.random() < 0.5 else w[np.ix_(p, p)]


# ---------------------------------------------------------------- linear approximation bound


def smoothed_cdf(x, sigma: float):
    """``1/2 + int_0^x (2 pi)^-1/2 exp(-t^2 / (2 sigma^2)) dt``.

    This is the integrand the bound is derived for; it equals the N(0, 1)
    distribution function at ``sigma = 1`` and ``1/2 + sigma (Phi(x/sigma) - 1/2)``
    in general.
    """
    return 0.5 + sigma * (ndtr(np.asarray(x, dtype=np.float64) / sigma) - 0.5)


def linear_cdf_approx(x):
    return INV_SQRT_2PI * np.asarray(x, dtype=np.float64) + 0.5


def smoothed_cdf_bound(sigma: float, delta: float) -> float:
    return INV_SQRT_2PI * delta * (1.0 - math.exp(-delta * delta / (2.0 * sigma * sigma)))


@dataclass
class BoundRow:
    sigma: float
    delta: float
    empirical_max_err: float
    analytic_bound: float
    passed: bool
    gaussian_cdf_max_err: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def linear_bound_check(sigma: float, delta: float, grid_points: int = 2001) -> BoundRow:
    """Max of ``|F(x) - (x / sqrt(2 pi) + 1/2)|`` over ``[-delta, delta]`` against the bound."""
    if not (sigma > 0 and delta > 0):
        raise ValueError("sigma and delta must be positive")
    x = np.linspace(-delta, delta, grid_points)
    approx = linear_cdf_approx(x)
    emp = float(np.max(np.abs(smoothed_cdf(x, sigma) - approx)))
    gauss = float(np.max(np.abs(ndtr(x / sigma) - approx)))
    bound = smoothed_cdf_bound(sigma, delta)
    return BoundRow(sigma, delta, emp, bound, bool(emp <= bound + 1e-12), gauss)


def bound_grid(sigmas=(0.5, 1.0, 2.0), deltas=(0.25, 0.5, 1.0, 2.0, 3.0), grid_points=2001):
    return [linear_bound_check(s, d, grid_points) for s in sigmas for d in deltas]


# ---------------------------------------------------------------- normal -> target construction


@dataclass
class LinearUniformSpec:
    """``Z_1 ~ U(r0[0], r1[0])``, ``Z_k | Z_<k ~ U(eta_k + r0[k], eta_k + r1[k])``, ``eta = omega Z``."""
    omega: np.ndarray
    r0: np.ndarray
    r1: np.ndarray

    def __post_init__(self):
        self.omega = np.atleast_2d(np.asarray(self.omega, dtype=np.float64))
        self.r0 = np.asarray(self.r0, dtype=np.float64).ravel()
        self.r1 = np.asarray(self.r1, dtype=np.float64).ravel()
        k = self.k
        if self.omega.shape != (k, k) or self.r1.shape != (k,):
            raise ValueError("omega must be k x k and r0, r1 length k")
        if np.any(np.triu(self.omega) != 0):
            raise ValueError("omega must be strictly lower-triangular")
        if np.any(self.r1 <= self.r0):
            raise ValueError("need r1 > r0 in every dimension")

    @property
    def k(self) -> int:
        return len(self.r0)

    @classmethod
    def two_dim(cls, omega: float, r0=(0.0, 0.0), r1=(1.0, 1.0)) -> "LinearUniformSpec":
        return cls(np.array([[0.0, 0.0], [omega, 0.0]]), r0, r1)

    @classmethod
    def random(cls, rng: np.random.Generator, k: int = 2) -> "LinearUniformSpec":
        omega = np.tril(rng.uniform(-1.5, 1.5, size=(k, k)), k=-1)
        r0 = rng.uniform(-1.0, 0.5, size=k)
        return cls(omega, r0, r0 + rng.uniform(0.5, 2.0, size=k))

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Map independent U(0, 1) columns to target samples, dimension by dimension."""
        z = np.empty_like(u)
        for i in range(self.k):
            eta = z[:, :i] @ self.omega[i, :i]
            z[:, i] = eta + self.r0[i] + (self.r1[i] - self.r0[i]) * u[:, i]
        return z

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Direct draws: each conditional sampled as its own uniform."""
        z = np.empty((n, self.k))
        for i in range(self.k):
            eta = z[:, :i] @ self.omega[i, :i]
            z[:, i] = rng.uniform(eta + self.r0[i], eta + self.r1[i])
        return z

    def analytic_corr(self) -> float:
        """corr(Z_1, Z_2) for k = 2."""
        if self.k != 2:
            raise ValueError("closed form only for k = 2")
        w = self.omega[1, 0]
        v1 = (self.r1[0] - self.r0[0]) ** 2 / 12.0
        v2 = w * w * v1 + (self.r1[1] - self.r0[1]) ** 2 / 12.0
        return float(w * v1 / math.sqrt(v1 * v2))


def construct_q(spec: LinearUniformSpec, normals: np.ndarray, mu, sigma) -> np.ndarray:
    """Push independent normals through their CDFs, rescale to U(a, b), then through the target map.

    With ``a = 0, b = 1`` the rescale is the identity.
    """
    u_prime = ndtr((normals - np.asarray(mu)) / np.asarray(sigma))
    a, b = 0.0, 1.0
    u = (b - a) * u_prime + a
    return spec.from_uniform(u)


def construct_q_demo(spec: LinearUniformSpec, n_samples: int = 100_000, seed: int = 0,
                     mu=None, sigma=None) -> dict:
    """Compare the construction's samples with direct target samples."""
    if spec.k != 2:
        raise ValueError("the demo covers k = 2 targets")
    rng = np.random.default_rng(seed)
    mu = np.zeros(2) if mu is None else np.asarray(mu, dtype=np.float64)
    sigma = np.ones(2) if sigma is None else np.asarray(sigma, dtype=np.float64)
    normals = rng.normal(mu, sigma, size=(n_samples, 2))
    built = construct_q(spec, normals, mu, sigma)
    direct = spec.sample(n_samples, rng)
    ks = [float(ks_2samp(built[:, i], direct[:, i]).statistic) for i in range(2)]
    corr_built = float(np.corrcoef(built.T)[0, 1])
    corr_direct = float(np.corrcoef(direct.T)[0, 1])
    return {"ks": ks, "corr_built": corr_built, "corr_direct": corr_direct,
            "corr_analytic": spec.analytic_corr(),
            "corr_diff": abs(corr_built - corr_direct),
            "n_samples": n_samples}


# ---------------------------------------------------------------- consistency


def consistency_check(spec: ScmSpec, sample_counts=(100, 1_000, 10_000), reps: int = 50,
                      seed: int = 0) -> dict:
    """Mean deviation of the running factor mean from E[Z] = 0 and its log-log slope in n."""
    counts = list(sample_counts)
    if counts != sorted(counts) or len(set(counts)) != len(counts):
        raise ValueError("sample_counts must be strictly increasing")
    seeds = np.random.SeedSequence(seed).generate_state(reps * len(counts)).reshape(len(counts), reps)
    errors, medians = [], []
    for ci, n in enumerate(counts):
        devs = []
        for s in seeds[ci]:
            z = gen_factors(ScmSpec(spec.k, n, spec.c, spec.noise_var, int(s)))
            devs.append(float(np.linalg.norm(z.mean(axis=0))))
        errors.append(float(np.mean(devs)))
        medians.append(float(np.median(devs)))
    slope = float(np.polyfit(np.log(counts), np.log(errors), 1)[0])
    return {"counts": counts, "mean_error": errors, "median_error": medians,
            "slope": slope, "reps": reps}
