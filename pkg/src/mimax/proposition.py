"""Numerical check of approximate monotone improvement under alternating
block updates of L(theta, xi) = J(theta; xi) - M(theta; xi).

J is a jointly concave quadratic. M = eps * sin(a.theta + b.xi) with unit a, b,
so the gradient of M in either block has norm at most eps and M moves by at
most 2 eps per update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import substream

# float64 rounding allowance when comparing successive objective values
ROUNDING = 64 * np.finfo(float).eps


class ConcavityError(ValueError):
    pass


@dataclass(frozen=True)
class QuadraticBlockSpec:
    """J = -1/2 t'At + t'Bx + c't - 1/2 x'Dx + e'x, with M = eps sin(a't + b'x)."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    c: np.ndarray
    e: np.ndarray
    a: np.ndarray
    b: np.ndarray
    epsilon: float

    def __post_init__(self):
        hessian = np.block([[-self.A, self.B], [self.B.T, -self.D]])
        if not np.allclose(hessian, hessian.T):
            raise ConcavityError("A and D must be symmetric")
        top = np.linalg.eigvalsh(hessian).max()
        if top >= 0:
            raise ConcavityError(f"J is not strictly concave: largest Hessian eigenvalue {top:.3g}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        for name in ("a", "b"):
            if abs(np.linalg.norm(getattr(self, name)) - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a unit vector")

    def joint(self, t: np.ndarray, x: np.ndarray) -> float:
        return float(-0.5 * t @ self.A @ t + t @ self.B @ x + self.c @ t - 0.5 * x @ self.D @ x + self.e @ x)

    def marginal(self, t: np.ndarray, x: np.ndarray) -> float:
        return float(self.epsilon * np.sin(self.a @ t + self.b @ x))

    def objective(self, t: np.ndarray, x: np.ndarray) -> float:
        return self.joint(t, x) - self.marginal(t, x)

    def grad_theta(self, t, x):
        dm = self.epsilon * np.cos(self.a @ t + self.b @ x) * self.a
        return -self.A @ t + self.B @ x + self.c - dm

    def grad_xi(self, t, x):
        dm = self.epsilon * np.cos(self.a @ t + self.b @ x) * self.b
        return self.B.T @ t - self.D @ x + self.e - dm


def random_quadratic(seed: int, index: int, epsilon: float, dim_theta: int = 4, dim_xi: int = 4) -> QuadraticBlockSpec:
    gen = substream(seed, "quadratic", index)
    n = dim_theta + dim_xi
    root = gen.normal(size=(n, n))
    neg_hessian = root @ root.T / n + 0.1 * np.eye(n)
    A = neg_hessian[:dim_theta, :dim_theta]
    D = neg_hessian[dim_theta:, dim_theta:]
    B = -neg_hessian[:dim_theta, dim_theta:]
    a = gen.normal(size=dim_theta)
    b = gen.normal(size=dim_xi)
    return QuadraticBlockSpec(A, B, D, gen.normal(size=dim_theta), gen.normal(size=dim_xi),
                              a / np.linalg.norm(a), b / np.linalg.norm(b), epsilon)


@dataclass
class PropositionReport:
    epsilon: float
    mode: str
    values: list[float]
    max_violation: float  # largest drop L(before) - L(after) over all half-steps, 0 if none
    violations: int  # half-steps whose drop exceeds the rounding allowance

    @property
    def constant(self) -> float:
        """Measured c in drop <= c * eps (0 when eps is 0 or nothing dropped)."""
        return self.max_violation / self.epsilon if self.epsilon > 0 else 0.0

    def holds(self, c: float = 10.0) -> bool:
        scale = ROUNDING * (1.0 + max(abs(v) for v in self.values))
        return self.max_violation <= c * self.epsilon + scale


def verify_block_coordinate_proposition(spec: QuadraticBlockSpec, steps: int = 50, mode: str = "gradient",
                                        seed: int = 0) -> PropositionReport:
    """Alternate theta and xi updates and record every half-step of the objective.

    ``mode="exact"`` maximizes J over one block in closed form, ``mode="gradient"``
    takes a gradient ascent step on the full objective with step 1 / lambda_max.
    """
    if mode not in ("exact", "gradient"):
        raise ValueError(f"mode must be 'exact' or 'gradient', got {mode!r}")
    gen = substream(seed, "proposition-init")
    t = gen.normal(size=spec.A.shape[0]) * 3
    x = gen.normal(size=spec.D.shape[0]) * 3
    eta_t = 1.0 / np.linalg.eigvalsh(spec.A).max()
    eta_x = 1.0 / np.linalg.eigvalsh(spec.D).max()
    values = [spec.objective(t, x)]
    worst, count = 0.0, 0
    for _ in range(steps):
        for block in ("theta", "xi"):
            if block == "theta":
                t = (np.linalg.solve(spec.A, spec.B @ x + spec.c) if mode == "exact"
                     else t + eta_t * spec.grad_theta(t, x))
            else:
                x = (np.linalg.solve(spec.D, spec.B.T @ t + spec.e) if mode == "exact"
                     else x + eta_x * spec.grad_xi(t, x))
            values.append(spec.objective(t, x))
            drop = values[-2] - values[-1]
            worst = max(worst, drop)
            if drop > ROUNDING * (1.0 + abs(values[-2])):
                count += 1
    return PropositionReport(spec.epsilon, mode, values, worst, count)


def verify_joint_ascent(seed: int, index: int = 0, dim: int = 5, steps: int = 100) -> list[float]:
    """Gradient ascent on a shared-parameter concave objective.

    L(t) = -1/2 t'Qt + c't - logsumexp(W t): concave quadratic joint term minus a
    convex marginal term. Returns the objective after every step.
    """
    gen = substream(seed, "joint-ascent", index)
    root = gen.normal(size=(dim, dim))
    Q = root @ root.T / dim + 0.1 * np.eye(dim)
    W = gen.normal(size=(7, dim))
    c = gen.normal(size=dim)

    def value(t):
        s = W @ t
        m = s.max()
        return float(-0.5 * t @ Q @ t + c @ t - (m + np.log(np.exp(s - m).sum())))

    def grad(t):
        s = W @ t
        p = np.exp(s - s.max())
        p /= p.sum()
        return -Q @ t + c - W.T @ p

    # the softmax Jacobian has norm <= 1, so the gradient is Lipschitz with this constant
    lipschitz = np.linalg.eigvalsh(Q).max() + np.linalg.norm(W, 2) ** 2
    t = gen.normal(size=dim) * 3
    out = [value(t)]
    for _ in range(steps):
        t = t + grad(t) / lipschitz
        out.append(value(t))
    return out
