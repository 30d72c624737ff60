"""Client-indexed NC-SC minimax problems with exact and stochastic oracles.

Each problem is a family ``f_i(x, y)``, ``i = 0..n-1``, whose global objective is
``f = (1/n) sum_i f_i``. Two concrete families are provided:

* quadratic clients ``f_i(x,y) = 1/2 x'A_i x + x'B_i y - 1/2 y'C_i y + a_i'x + b_i'y``
  with closed-form best response, primal function and stationary point;
* robust linear regression ``f_i(x,y) = y'(A_i x - b_i) - mu/2 |y|^2``, which
  goes through the iterative best-response path.

Problems are immutable; gradients of all clients at once are available through
:meth:`MinimaxProblem.grads`, which the simulator uses on ``d x n`` iterate
matrices (one column per client).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from kgtmm import rng as rngmod
from kgtmm.errors import ConstructionError, ContractViolation, ConvergenceFailure

BEST_RESPONSE_MAX_ITER = 1_000_000


def _frozen(a, ndim: int | None = None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ContractViolation(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ProblemDims:
    n: int
    d_x: int
    d_y: int

    def __post_init__(self):
        for name in ("n", "d_x", "d_y"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ContractViolation(f"{name} must be a positive integer, got {v!r}")


@dataclass(frozen=True)
class SmoothnessProfile:
    """Joint smoothness ``L``, strong-concavity modulus ``mu`` and ``kappa = L/mu``."""

    L: float
    mu: float
    kappa: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not (self.mu > 0 and self.L >= self.mu * (1 - 1e-12)):
            raise ContractViolation(f"need L >= mu > 0, got L={self.L}, mu={self.mu}")
        expected = self.L / self.mu
        if self.kappa is None:
            object.__setattr__(self, "kappa", expected)
        elif abs(self.kappa - expected) > 1e-12 * expected:
            raise ContractViolation(f"kappa={self.kappa} inconsistent with L/mu={expected}")


@dataclass(frozen=True)
class NoiseModel:
    """Additive isotropic Gaussian noise with ``E|noise|^2 = sigma^2`` on each gradient block."""

    sigma: float = 0.0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ContractViolation(f"sigma must be nonnegative, got {self.sigma}")

    def scales(self, d_x: int, d_y: int) -> tuple[float, float]:
        """Per-coordinate standard deviations for the x and y blocks."""
        return self.sigma / np.sqrt(d_x), self.sigma / np.sqrt(d_y)


@dataclass(frozen=True)
class QuadraticClient:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for name, nd in (("A", 2), ("B", 2), ("C", 2), ("a", 1), ("b", 1)):
            object.__setattr__(self, name, _frozen(getattr(self, name), nd))
        dx, dy = self.B.shape
        if self.A.shape != (dx, dx) or self.C.shape != (dy, dy) or self.a.shape != (dx,) or self.b.shape != (dy,):
            raise ContractViolation("inconsistent quadratic client shapes")
        if not np.allclose(self.A, self.A.T, rtol=0, atol=1e-12):
            raise ContractViolation("A_i must be symmetric")
        if not np.allclose(self.C, self.C.T, rtol=0, atol=1e-12):
            raise ContractViolation("C_i must be symmetric")

    def hessian(self) -> np.ndarray:
        return np.block([[self.A, self.B], [self.B.T, -self.C]])


@dataclass(frozen=True)
class RobustRegressionClient:
    """``f_i(x,y) = y'(A x - b) - mu/2 |y|^2`` with ``A`` of shape ``(d_y, d_x)``."""

    A: np.ndarray
    b: np.ndarray
    mu: float

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen(self.A, 2))
        object.__setattr__(self, "b", _frozen(self.b, 1))
        if self.b.shape != (self.A.shape[0],):
            raise ContractViolation("b must have length d_y")
        if not self.mu > 0:
            raise ContractViolation("mu must be positive")

    def hessian(self) -> np.ndarray:
        dy, dx = self.A.shape
        return np.block([[np.zeros((dx, dx)), self.A.T], [self.A, -self.mu * np.eye(dy)]])


class MinimaxProblem:
    """Base class: a client-indexed family with gradient and primal-function oracles.

    Subclasses provide the batched gradient :meth:`grads`, per-client values and,
    when available, a closed-form best response.
    """

    family = "abstract"

    def __init__(self, dims: ProblemDims, smoothness: SmoothnessProfile, clients: tuple, noise: NoiseModel):
        self.dims = dims
        self.smoothness = smoothness
        self.clients = tuple(clients)
        self.noise = noise

    # -- shape helpers -------------------------------------------------
    @property
    def n(self) -> int:
        return self.dims.n

    def _check_point(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != (self.dims.d_x,) or y.shape != (self.dims.d_y,):
            raise ContractViolation(
                f"point shapes {x.shape}, {y.shape} do not match d_x={self.dims.d_x}, d_y={self.dims.d_y}"
            )
        return x, y

    def _check_client(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise ContractViolation(f"client index {i} out of range for n={self.n}")

    # -- oracles implemented by subclasses ------------------------------
    def grads(self, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-client gradients at ``(X[:, i], Y[:, i])``, returned as ``d_x x n`` and ``d_y x n``."""
        raise NotImplementedError

    def value(self, i: int, x, y) -> float:
        raise NotImplementedError

    def closed_form_best_response(self, x: np.ndarray) -> np.ndarray | None:
        return None

    def x_star(self) -> np.ndarray | None:
        """Stationary point of the primal function, when known in closed form."""
        return None

    # -- generic oracles -----------------------------------------------
    def grad(self, i: int, x, y) -> tuple[np.ndarray, np.ndarray]:
        self._check_client(i)
        x, y = self._check_point(x, y)
        gx, gy = self._client_grad(i, x, y)
        return gx, gy

    def _client_grad(self, i, x, y):
        X = np.zeros((self.dims.d_x, self.n))
        Y = np.zeros((self.dims.d_y, self.n))
        X[:, i], Y[:, i] = x, y
        GX, GY = self.grads(X, Y)
        return GX[:, i].copy(), GY[:, i].copy()

    def stoch_grad(self, i: int, x, y, stream: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        gx, gy = self.grad(i, x, y)
        if self.noise.sigma == 0:
            return gx, gy
        sx, sy = self.noise.scales(self.dims.d_x, self.dims.d_y)
        z = stream.standard_normal(self.dims.d_x + self.dims.d_y)
        return gx + sx * z[: self.dims.d_x], gy + sy * z[self.dims.d_x :]

    def global_value(self, x, y) -> float:
        x, y = self._check_point(x, y)
        return float(np.mean([self.value(i, x, y) for i in range(self.n)]))

    def global_grad(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        x, y = self._check_point(x, y)
        X = np.repeat(x[:, None], self.n, axis=1)
        Y = np.repeat(y[:, None], self.n, axis=1)
        GX, GY = self.grads(X, Y)
        return GX.mean(axis=1), GY.mean(axis=1)

    def best_response_y(self, x, tol: float = 1e-10, method: str = "auto", y0=None) -> np.ndarray:
        """Maximizer of ``f(x, .)``.

        ``method="auto"`` uses the closed form when the family has one and falls
        back to gradient ascent with step ``1/L`` otherwise.
        """
        x = np.asarray(x, dtype=float)
        self._check_point(x, np.zeros(self.dims.d_y))
        if method in ("auto", "closed"):
            y = self.closed_form_best_response(x)
            if y is not None:
                return y
            if method == "closed":
                raise ContractViolation(f"{self.family} problems have no closed-form best response")
        if not tol > 0:
            raise ContractViolation("the iterative best response needs tol > 0")
        step = 1.0 / self.smoothness.L
        y = np.zeros(self.dims.d_y) if y0 is None else np.array(y0, dtype=float)
        for _ in range(BEST_RESPONSE_MAX_ITER):
            _, gy = self.global_grad(x, y)
            res = float(np.linalg.norm(gy))
            if res <= tol:
                return y
            y = y + step * gy
        raise ConvergenceFailure("gradient ascent for the best response hit its iteration cap", res)

    def primal_value_and_grad(self, x, tol: float = 1e-10) -> tuple[float, np.ndarray]:
        """``Phi(x) = max_y f(x, y)`` and its gradient ``grad_x f(x, y_hat(x))``."""
        x = np.asarray(x, dtype=float)
        y_hat = self.best_response_y(x, tol)
        gx, _ = self.global_grad(x, y_hat)
        return self.global_value(x, y_hat), gx

    def phi_star(self) -> float | None:
        xs = self.x_star()
        if xs is None:
            return None
        return self.primal_value_and_grad(xs)[0]

    def with_noise(self, sigma: float) -> MinimaxProblem:
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.noise = NoiseModel(sigma)
        return other

    def __repr__(self):
        s = self.smoothness
        return (
            f"{type(self).__name__}(n={self.n}, d_x={self.dims.d_x}, d_y={self.dims.d_y}, "
            f"L={s.L:.4g}, mu={s.mu:.4g}, sigma={self.noise.sigma:g})"
        )


class QuadraticProblem(MinimaxProblem):
    family = "quadratic"

    def __init__(self, clients, noise: NoiseModel | float = 0.0):
        clients = tuple(clients)
        if not clients:
            raise ContractViolation("need at least one client")
        dx, dy = clients[0].B.shape
        if any(c.B.shape != (dx, dy) for c in clients):
            raise ContractViolation("all clients must share dimensions")
        if not isinstance(noise, NoiseModel):
            noise = NoiseModel(float(noise))
        mu = min(float(np.linalg.eigvalsh(c.C)[0]) for c in clients)
        if mu <= 0:
            raise ConstructionError("every C_i must be positive definite")
        L = max(float(np.max(np.abs(np.linalg.eigvalsh(c.hessian())))) for c in clients)
        super().__init__(ProblemDims(len(clients), dx, dy), SmoothnessProfile(max(L, mu), mu), clients, noise)
        self._A = _frozen([c.A for c in clients])
        self._B = _frozen([c.B for c in clients])
        self._C = _frozen([c.C for c in clients])
        self._a = _frozen(np.array([c.a for c in clients]).T)
        self._b = _frozen(np.array([c.b for c in clients]).T)
        self._H = _frozen([c.hessian() for c in clients])
        self._h = _frozen(np.vstack([self._a, self._b]))
        self.A_bar = _frozen(self._A.mean(axis=0))
        self.B_bar = _frozen(self._B.mean(axis=0))
        self.C_bar = _frozen(self._C.mean(axis=0))
        self.a_bar = _frozen(self._a.mean(axis=1))
        self.b_bar = _frozen(self._b.mean(axis=1))

    def grads(self, X, Y):
        dx = self.dims.d_x
        G = np.einsum("nij,jn->in", self._H, np.vstack((X, Y))) + self._h
        return G[:dx], G[dx:]

    def _client_grad(self, i, x, y):
        c = self.clients[i]
        return c.A @ x + c.B @ y + c.a, c.B.T @ x - c.C @ y + c.b

    def value(self, i, x, y):
        self._check_client(i)
        c = self.clients[i]
        return float(0.5 * x @ c.A @ x + x @ c.B @ y - 0.5 * y @ c.C @ y + c.a @ x + c.b @ y)

    def global_value(self, x, y):
        x, y = self._check_point(x, y)
        return float(
            0.5 * x @ self.A_bar @ x + x @ self.B_bar @ y - 0.5 * y @ self.C_bar @ y + self.a_bar @ x + self.b_bar @ y
        )

    def global_grad(self, x, y):
        x, y = self._check_point(x, y)
        return (
            self.A_bar @ x + self.B_bar @ y + self.a_bar,
            self.B_bar.T @ x - self.C_bar @ y + self.b_bar,
        )

    def closed_form_best_response(self, x):
        return np.linalg.solve(self.C_bar, self.B_bar.T @ x + self.b_bar)

    def schur_hessian(self) -> np.ndarray:
        """Hessian of the primal function, ``A + B C^-1 B'`` on the averaged matrices."""
        return self.A_bar + self.B_bar @ np.linalg.solve(self.C_bar, self.B_bar.T)

    def x_star(self):
        S = self.schur_hessian()
        if np.linalg.eigvalsh(S)[0] <= 0:
            return None
        rhs = self.B_bar @ np.linalg.solve(self.C_bar, self.b_bar) + self.a_bar
        return -np.linalg.solve(S, rhs)

    def to_dict(self) -> dict[str, Any]:
        """Plain nested-list form (matrices row-major) suitable for JSON."""
        return {
            "family": self.family,
            "sigma": self.noise.sigma,
            "clients": [
                {k: getattr(c, k).tolist() for k in ("A", "B", "C", "a", "b")} for c in self.clients
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> QuadraticProblem:
        clients = [QuadraticClient(**{k: np.array(v, dtype=float) for k, v in c.items()}) for c in data["clients"]]
        return cls(clients, NoiseModel(float(data.get("sigma", 0.0))))


class RobustRegressionProblem(MinimaxProblem):
    family = "robust_regression"

    def __init__(self, clients, noise: NoiseModel | float = 0.0):
        clients = tuple(clients)
        if not clients:
            raise ContractViolation("need at least one client")
        dy, dx = clients[0].A.shape
        if any(c.A.shape != (dy, dx) for c in clients):
            raise ContractViolation("all clients must share dimensions")
        if len({c.mu for c in clients}) != 1:
            raise ContractViolation("clients must share mu")
        if not isinstance(noise, NoiseModel):
            noise = NoiseModel(float(noise))
        mu = clients[0].mu
        L = max(float(np.max(np.abs(np.linalg.eigvalsh(c.hessian())))) for c in clients)
        super().__init__(ProblemDims(len(clients), dx, dy), SmoothnessProfile(max(L, mu), mu), clients, noise)
        self._A = _frozen([c.A for c in clients])
        self._b = _frozen(np.array([c.b for c in clients]).T)
        self.mu = mu

    def grads(self, X, Y):
        GX = np.einsum("nji,jn->in", self._A, Y)
        GY = np.einsum("nij,jn->in", self._A, X) - self._b - self.mu * Y
        return GX, GY

    def _client_grad(self, i, x, y):
        c = self.clients[i]
        return c.A.T @ y, c.A @ x - c.b - self.mu * y

    def value(self, i, x, y):
        self._check_client(i)
        c = self.clients[i]
        return float(y @ (c.A @ x - c.b) - 0.5 * self.mu * y @ y)


# -- module-level oracle functions ---------------------------------------


def grad(problem: MinimaxProblem, i: int, x, y):
    return problem.grad(i, x, y)


def stoch_grad(problem: MinimaxProblem, i: int, x, y, stream: np.random.Generator):
    return problem.stoch_grad(i, x, y, stream)


def best_response_y(problem: MinimaxProblem, x, tol: float = 1e-10, method: str = "auto"):
    return problem.best_response_y(x, tol, method=method)


def primal_value_and_grad(problem: MinimaxProblem, x, tol: float = 1e-10):
    return problem.primal_value_and_grad(x, tol)


# -- generators ------------------------------------------------------------


def _random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _random_sym_unit(rng: np.random.Generator, d: int) -> np.ndarray:
    M = rng.standard_normal((d, d))
    M = 0.5 * (M + M.T)
    return M / max(np.linalg.norm(M, 2), 1e-300)


def _centered(stack: np.ndarray) -> np.ndarray:
    return stack - stack.mean(axis=0, keepdims=True)


def make_quadratic_suite(
    dims: ProblemDims,
    heterogeneity: float,
    target_kappa: float,
    seed: int,
    sigma: float = 0.0,
) -> QuadraticProblem:
    """Random heterogeneous quadratic NC-SC suite with a certified condition number.

    The average problem does not depend on ``heterogeneity`` or ``n``: client
    perturbations are centered across clients. The primal Hessian of the
    averaged problem is positive definite, so ``Phi`` has a unique minimizer,
    while individual ``A_i`` are typically indefinite (nonconvex in ``x``).
    After construction the whole family is rescaled so that ``mu = 1`` and
    ``L = kappa`` (within 5% of ``target_kappa``, in practice to ~1e-9).
    """
    if not target_kappa >= 1:
        raise ContractViolation(f"target_kappa must be >= 1, got {target_kappa}")
    if not heterogeneity >= 0:
        raise ContractViolation("heterogeneity must be nonnegative")
    n, dx, dy = dims.n, dims.d_x, dims.d_y
    g = rngmod.stream(seed, "problem")

    # shared (average) structure
    Qc = _random_orthogonal(g, dy)
    c_eigs = 1.0 + 0.25 * (target_kappa - 1.0) * np.sort(g.uniform(0.0, 1.0, dy))
    c_eigs[0] = 1.0
    C0 = (Qc * c_eigs) @ Qc.T
    C0 = 0.5 * (C0 + C0.T)
    Qs = _random_orthogonal(g, dx)
    s_eigs = g.uniform(0.25, 1.0, dx)
    S0 = (Qs * s_eigs) @ Qs.T
    S0 = 0.5 * (S0 + S0.T)
    B0 = g.standard_normal((dx, dy))
    B0 /= np.linalg.norm(B0, 2)
    BCB = B0 @ np.linalg.solve(C0, B0.T)
    BCB = 0.5 * (BCB + BCB.T)
    a0 = g.standard_normal(dx)
    b0 = g.standard_normal(dy)

    # client perturbations, centered so they cancel on average
    h = float(heterogeneity)
    dA = _centered(np.array([_random_sym_unit(g, dx) for _ in range(n)]))
    dB = _centered(g.standard_normal((n, dx, dy)) / np.sqrt(dx * dy))
    dC = _centered(np.array([_random_sym_unit(g, dy) for _ in range(n)]))
    da = _centered(g.standard_normal((n, dx)))
    db = _centered(g.standard_normal((n, dy)))
    c_shrink = 0.25 * h / (1.0 + h)

    Cs = C0[None] + c_shrink * dC
    mu_raw = min(float(np.linalg.eigvalsh(C)[0]) for C in Cs)

    def build(s: float):
        As = (S0 - s * s * BCB)[None] + 0.5 * h * dA
        Bs = s * B0[None] + h * dB
        return As, Bs

    def kappa_of(s: float) -> float:
        As, Bs = build(s)
        L = max(
            float(np.max(np.abs(np.linalg.eigvalsh(np.block([[A, B], [B.T, -C]])))))
            for A, B, C in zip(As, Bs, Cs)
        )
        return L / mu_raw

    k0 = kappa_of(0.0)
    if k0 > 1.05 * target_kappa:
        raise ConstructionError(
            f"heterogeneity={h} alone gives kappa={k0:.4g} > target {target_kappa}; lower heterogeneity or raise kappa"
        )
    if k0 >= target_kappa:
        s = 0.0
    else:
        lo, hi = 0.0, 1.0
        while kappa_of(hi) < target_kappa:
            hi *= 2.0
            if hi > 1e8:
                raise ConstructionError(f"could not reach kappa={target_kappa}")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if kappa_of(mid) < target_kappa:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * hi:
                break
        s = hi
    As, Bs = build(s)
    scale = 1.0 / mu_raw
    clients = []
    for i in range(n):
        A = 0.5 * (As[i] + As[i].T) * scale
        C = 0.5 * (Cs[i] + Cs[i].T) * scale
        clients.append(QuadraticClient(A, Bs[i] * scale, C, (a0 + h * da[i]) * scale, (b0 + h * db[i]) * scale))
    problem = QuadraticProblem(clients, NoiseModel(sigma))
    if abs(problem.smoothness.kappa - target_kappa) > 0.05 * target_kappa:
        raise ConstructionError(f"certified kappa {problem.smoothness.kappa:.4g} misses target {target_kappa}")
    return problem


def make_robust_regression_suite(
    dims: ProblemDims,
    heterogeneity: float,
    mu: float,
    seed: int,
    sigma: float = 0.0,
) -> RobustRegressionProblem:
    """Synthetic robust linear regression clients sharing one ground-truth model.

    Client ``i`` owns the rows ``A_i`` (``d_y x d_x``) of a synthetic design and the
    responses ``b_i``; ``heterogeneity`` shifts each client's design and
    targets away from the common ones.
    """
    if not mu > 0:
        raise ContractViolation("mu must be positive")
    n, dx, dy = dims.n, dims.d_x, dims.d_y
    g = rngmod.stream(seed, "problem")
    A0 = g.standard_normal((dy, dx)) / np.sqrt(dx)
    x_true = g.standard_normal(dx)
    dA = _centered(g.standard_normal((n, dy, dx)) / np.sqrt(dx))
    db = _centered(g.standard_normal((n, dy)))
    clients = []
    for i in range(n):
        A = A0 + heterogeneity * dA[i]
        b = A @ x_true + 0.1 * g.standard_normal(dy) + heterogeneity * db[i]
        clients.append(RobustRegressionClient(A, b, mu))
    return RobustRegressionProblem(clients, NoiseModel(sigma))


__all__ = [
    "ProblemDims",
    "SmoothnessProfile",
    "NoiseModel",
    "QuadraticClient",
    "RobustRegressionClient",
    "MinimaxProblem",
    "QuadraticProblem",
    "RobustRegressionProblem",
    "grad",
    "stoch_grad",
    "best_response_y",
    "primal_value_and_grad",
    "make_quadratic_suite",
    "make_robust_regression_suite",
]
