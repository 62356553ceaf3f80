"""Stability toolkit for the linearized context subsystem.

Models the context deviation dynamics c' = A c + B e around an expert
trajectory, with decay constants (c, sigma) for the uncontrolled context and
an input-to-state gain bound epsilon. The central results implemented here:

* a context-feedback gain K is certified stable whenever
  ||A|| <= c*sigma, ||B|| <= eps*(1-sigma)/c and
  ||K|| < c*(1-c*sigma) / (eps*(1-sigma)),
  because then rho(A + B K) <= ||A|| + ||B||*||K|| < 1;
* no norm budget on a displacement-feedback gain K_bc can stabilize
  e' = (I + K_bc) e: the witness K_bc = (budget/2)*I always has
  rho(I + K_bc) = 1 + budget/2 > 1.

Spectral radius and induced 2-norm are computed by block power iteration
with random restarts (gaps widened by repeated squaring); for matrices up
to 3x3 the result is cross-checked against characteristic-polynomial roots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POWER_MAX_ITER = 10_000
POWER_TOL = 1e-12
POWER_RESTARTS = 3


def _charpoly_radius(M: np.ndarray) -> float:
    """Spectral radius from explicit characteristic polynomials, n <= 3."""
    n = M.shape[0]
    if n == 1:
        return abs(float(M[0, 0]))
    if n == 2:
        tr = M[0, 0] + M[1, 1]
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        disc = complex(tr * tr - 4.0 * det) ** 0.5
        return float(max(abs((tr + disc) / 2.0), abs((tr - disc) / 2.0)))
    if n == 3:
        tr = np.trace(M)
        minors = (
            M[1, 1] * M[2, 2]
            - M[1, 2] * M[2, 1]
            + M[0, 0] * M[2, 2]
            - M[0, 2] * M[2, 0]
            + M[0, 0] * M[1, 1]
            - M[0, 1] * M[1, 0]
        )
        det = float(np.linalg.det(M))
        roots = np.roots([1.0, -tr, minors, -det])
        return float(np.max(np.abs(roots)))
    raise ValueError("characteristic-polynomial path only supports n <= 3")


def _ritz_radius(W: np.ndarray, Q: np.ndarray) -> float:
    """Largest eigenvalue magnitude of the 2x2 compression Q^T W Q."""
    H = Q.T @ (W @ Q)
    tr = H[0, 0] + H[1, 1]
    det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
    disc = complex(tr * tr - 4.0 * det) ** 0.5
    return float(max(abs((tr + disc) / 2.0), abs((tr - disc) / 2.0)))


def _power_radius(
    M: np.ndarray,
    max_iter: int = POWER_MAX_ITER,
    tol: float = POWER_TOL,
    restarts: int = POWER_RESTARTS,
    seed: int = 7,
    squarings: int = 6,
) -> float:
    """Block power iteration for the spectral radius of a real matrix.

    A two-column subspace is iterated so complex conjugate pairs converge,
    and the matrix is repeatedly squared first (with scale tracking) to
    widen eigenvalue gaps. Falls back to fewer squarings on underflow.
    """
    n = M.shape[0]
    if n == 1:
        return abs(float(M[0, 0]))
    for j in range(squarings, -1, -2):
        # W = M^(2^j) / exp(log_div), built with per-squaring normalization
        W = np.array(M, dtype=np.float64)
        log_div = 0.0
        for _ in range(j):
            s = float(np.linalg.norm(W))
            if s == 0.0:
                return 0.0
            W = W / s
            log_div = 2.0 * (log_div + np.log(s))
            W = W @ W
        if not np.all(np.isfinite(W)):
            continue
        best = -np.inf
        for r in range(restarts):
            rng = np.random.default_rng(seed + 7919 * r)
            Q, _ = np.linalg.qr(rng.standard_normal((n, 2)))
            est, prev = 0.0, np.inf
            for _ in range(max_iter):
                Z = W @ Q
                Q, R = np.linalg.qr(Z)
                if abs(R[1, 1]) < 1e-300:
                    # subspace collapsed onto the dominant direction
                    Q[:, 1] = rng.standard_normal(n)
                    Q, _ = np.linalg.qr(Q)
                est = _ritz_radius(W, Q)
                if abs(est - prev) <= tol * max(est, 1e-30):
                    break
                prev = est
            if est > 0.0:
                best = max(best, (np.log(est) + log_div) / float(2**j))
        if np.isfinite(best):
            rho = float(np.exp(best))
            # rho(M) can never exceed these cheap induced-norm bounds
            caps = (
                float(np.linalg.norm(M)),
                float(np.max(np.sum(np.abs(M), axis=0))),
                float(np.max(np.sum(np.abs(M), axis=1))),
            )
            return min(rho, *caps)
    return 0.0


def spectral_radius(M, max_iter: int = POWER_MAX_ITER, tol: float = POWER_TOL, restarts: int = POWER_RESTARTS) -> float:
    """Spectral radius rho(M) = max |eigenvalue|.

    Computed by block power iteration with random restarts; for n <= 3 the
    estimate is cross-checked against the characteristic-polynomial roots,
    which win on disagreement (they are exact up to root finding).
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got shape {M.shape}")
    est = _power_radius(M, max_iter=max_iter, tol=tol, restarts=restarts)
    if M.shape[0] <= 3:
        ref = _charpoly_radius(M)
        if abs(est - ref) > 1e-8 * max(ref, 1.0):
            return ref
    return est


def induced_norm2(M) -> float:
    """Largest singular value, via power iteration on M^T M."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    if M.size == 0:
        return 0.0
    S = M.T @ M if M.shape[0] >= M.shape[1] else M @ M.T
    return float(np.sqrt(max(_power_radius(S), 0.0)))


@dataclass
class LinearSubsystem:
    """Context dynamics A, ego coupling B, and the ISS constants (c, sigma, eps)."""

    A: np.ndarray
    B: np.ndarray
    sigma: float
    c: float
    epsilon: float

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        if self.B.ndim == 1:
            self.B = self.B.reshape(-1, 1)
        self.sigma = float(self.sigma)
        self.c = float(self.c)
        self.epsilon = float(self.epsilon)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError("A must be square")
        if self.B.shape[0] != self.A.shape[0]:
            raise ValueError("B row count must match A")
        if not 0.0 <= self.sigma < 1.0:
            raise ValueError("sigma must lie in [0, 1)")
        if self.c <= 0.0:
            raise ValueError("c must be positive")
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be non-negative")

    @property
    def coupling_limit(self) -> float:
        """Largest ||B|| compatible with the ISS gain bound: eps*(1-sigma)/c."""
        return self.epsilon * (1.0 - self.sigma) / self.c

    def premises_hold(self) -> bool:
        """||A|| <= c*sigma and ||B|| <= eps*(1-sigma)/c, with c*sigma < 1."""
        return (
            self.c * self.sigma < 1.0
            and induced_norm2(self.A) <= self.c * self.sigma + 1e-12
            and induced_norm2(self.B) <= self.coupling_limit + 1e-12
        )


@dataclass
class PolicyGain:
    """Linear feedback u = K c (or u = K e for the displacement witness)."""

    K: np.ndarray

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64)
        if self.K.ndim == 1:
            self.K = self.K.reshape(1, -1)

    @property
    def norm(self) -> float:
        return induced_norm2(self.K)


@dataclass(frozen=True)
class NormBound:
    """Outcome of the gain-norm bound; only `finite` carries a number."""

    kind: str  # "finite" | "unconditionally_stable" | "vacuous"
    value: float | None = None

    def admits(self, gain_norm: float) -> bool:
        if self.kind == "unconditionally_stable":
            return True
        if self.kind == "vacuous":
            return False
        return gain_norm < self.value


def policy_norm_bound(sys: LinearSubsystem) -> NormBound:
    """Largest certifiable gain norm: c*(1 - c*sigma) / (eps*(1 - sigma)).

    With eps = 0 the coupling must vanish, so any gain is stable
    (unconditionally stable); with c*sigma >= 1 no gain can be certified
    (vacuous). Both outcomes are reported as kinds, not numbers.
    """
    if sys.epsilon == 0.0:
        return NormBound(kind="unconditionally_stable")
    if sys.c * sys.sigma >= 1.0:
        return NormBound(kind="vacuous")
    value = sys.c * (1.0 - sys.c * sys.sigma) / (sys.epsilon * (1.0 - sys.sigma))
    return NormBound(kind="finite", value=float(value))


@dataclass(frozen=True)
class ClosedLoopCertificate:
    bound_holds: bool
    rho: float
    norm_A: float
    norm_B: float
    norm_K: float
    bound: NormBound

    def to_json(self) -> dict:
        return {
            "bound_holds": self.bound_holds,
            "rho": self.rho,
            "norm_A": self.norm_A,
            "norm_B": self.norm_B,
            "norm_K": self.norm_K,
            "bound_kind": self.bound.kind,
            "bound_value": self.bound.value,
            "verdict": "stable" if self.bound_holds else "uncertified",
        }


def certify_closed_loop(sys: LinearSubsystem, gain: PolicyGain) -> ClosedLoopCertificate:
    """Check the small-gain premises and report rho(A + B K).

    bound_holds requires all three premises; whenever it is true the
    reported rho is provably below 1. rho is reported either way.
    """
    if gain.K.shape != (sys.B.shape[1], sys.A.shape[0]):
        raise ValueError(
            f"gain shape {gain.K.shape} incompatible with B {sys.B.shape} and A {sys.A.shape}"
        )
    norm_A = induced_norm2(sys.A)
    norm_B = induced_norm2(sys.B)
    norm_K = gain.norm
    bound = policy_norm_bound(sys)
    holds = (
        norm_A <= sys.c * sys.sigma + 1e-12
        and norm_B <= sys.coupling_limit + 1e-12
        and bound.admits(norm_K)
    )
    rho = spectral_radius(sys.A + sys.B @ gain.K)
    return ClosedLoopCertificate(
        bound_holds=bool(holds), rho=rho, norm_A=norm_A, norm_B=norm_B, norm_K=norm_K, bound=bound
    )


def bc_instability_witness(norm_budget: float, dim: int = 2) -> PolicyGain:
    """A displacement-feedback gain inside any norm budget that destabilizes.

    Returns K_bc = (budget/2) * I, for which rho(I + K_bc) = 1 + budget/2 > 1
    however small the budget: bounding ||K_bc|| can never certify the
    displacement formulation e' = (I + K_bc) e.
    """
    if norm_budget <= 0.0:
        raise ValueError("norm budget must be positive")
    return PolicyGain((norm_budget / 2.0) * np.eye(dim))


def simulate_linear(sys: LinearSubsystem, gain: PolicyGain, c0, T: int) -> np.ndarray:
    """Iterate c' = (A + B K) c and return the deviation norms, length T+1."""
    if T < 1:
        raise ValueError("need at least one step")
    M = sys.A + sys.B @ gain.K
    c = np.asarray(c0, dtype=np.float64).reshape(-1)
    norms = np.empty(T + 1)
    norms[0] = np.linalg.norm(c)
    for t in range(T):
        c = M @ c
        norms[t + 1] = np.linalg.norm(c)
    return norms


def random_certified_instance(
    rng: np.random.Generator, n: int = 3, m: int = 1
) -> tuple[LinearSubsystem, PolicyGain]:
    """Random (system, gain) pair built to satisfy all three premises."""
    sigma = float(rng.uniform(0.05, 0.9))
    c = float(rng.uniform(1.0, 1.0 / sigma * 0.999))
    epsilon = float(rng.uniform(0.1, 2.0))

    A = rng.standard_normal((n, n))
    A *= rng.uniform(0.1, 0.999) * sigma * c / max(induced_norm2(A), 1e-12)
    B = rng.standard_normal((n, m))
    B *= rng.uniform(0.1, 0.999) * (epsilon * (1.0 - sigma) / c) / max(induced_norm2(B), 1e-12)
    sys = LinearSubsystem(A=A, B=B, sigma=sigma, c=c, epsilon=epsilon)

    bound = policy_norm_bound(sys).value
    K = rng.standard_normal((m, n))
    K *= rng.uniform(0.1, 0.999) * bound / max(induced_norm2(K), 1e-12)
    return sys, PolicyGain(K)
