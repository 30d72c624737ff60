"""Analysis quantities measured on live run state.

All functions are pure in ``(state, problem)``. Gradients here are the exact
client gradients: the quantities are defined through ``f_i``, not the noisy
oracle, so noise never enters a diagnostic. Values are single-run
realizations; :func:`average_records` turns several seeded runs into
per-round means and standard errors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import TYPE_CHECKING

import numpy as np

from kgtmm.errors import ContractViolation, KGTMMError

if TYPE_CHECKING:
    from kgtmm.algorithm import InnerTrace, StepSizes, SwarmState
    from kgtmm.problems import MinimaxProblem

LYAPUNOV_VARIANTS = ("statement", "proof")

CSV_FIELDS = (
    "round",
    "grad_phi_sq",
    "xi_x",
    "xi_y",
    "drift_x",
    "drift_y",
    "gamma_x",
    "gamma_y",
    "eps_consensus",
    "lyapunov",
    "phi_gap",
)


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: int
    grad_phi_sq: float
    xi_x: float
    xi_y: float
    drift_x: float
    drift_y: float
    gamma_x: float
    gamma_y: float
    eps_consensus: float
    lyapunov: float | None = None
    phi_gap: float | None = None

    def as_row(self) -> dict[str, float | int | None]:
        row = asdict(self)
        row["round"] = row.pop("t")
        return {k: row[k] for k in CSV_FIELDS}


@dataclass(frozen=True)
class LyapunovConstants:
    A_x: float
    A_y: float
    B_x: float
    B_y: float
    C: float

    @classmethod
    def from_theory(cls, v: float, p: float, variant: str = "statement") -> LyapunovConstants:
        """Weights of the potential for global constant ``v`` and mixing parameter ``p``.

        ``variant="statement"`` uses ``A = (108 v^3 + 54 v) / p``; ``"proof"``
        uses ``A = (72 v^3 + 24 v) / p``. Both use ``B = 6 v / p`` and ``C = 1/24``.
        """
        if variant not in LYAPUNOV_VARIANTS:
            raise ContractViolation(f"unknown Lyapunov variant {variant!r}")
        p = max(p, 1e-300)
        A = (108 * v**3 + 54 * v) / p if variant == "statement" else (72 * v**3 + 24 * v) / p
        B = 6 * v / p
        return cls(A, A, B, B, 1.0 / 24)


def _deviation_sq(M: np.ndarray, center: np.ndarray) -> float:
    return float(np.sum((M - center[:, None]) ** 2)) / M.shape[1]


def client_variance(state: SwarmState) -> tuple[float, float]:
    """Mean squared distance of client iterates from their network average."""
    return _deviation_sq(state.X, state.x_bar), _deviation_sq(state.Y, state.y_bar)


def client_drift(inner_trace: InnerTrace, state_at_round_start: SwarmState, K: int | None = None) -> tuple[float, float]:
    """Sum over local steps of the mean squared distance to the round-start average."""
    if K is not None and (len(inner_trace.X) != K or len(inner_trace.Y) != K):
        raise ContractViolation(f"trace holds {len(inner_trace.X)} steps, expected K={K}")
    xb, yb = state_at_round_start.x_bar, state_at_round_start.y_bar
    return (
        sum(_deviation_sq(Xk, xb) for Xk in inner_trace.X),
        sum(_deviation_sq(Yk, yb) for Yk in inner_trace.Y),
    )


def _client_grads_at_average(state: SwarmState, problem: MinimaxProblem):
    n = state.n
    X = np.repeat(state.x_bar[:, None], n, axis=1)
    Y = np.repeat(state.y_bar[:, None], n, axis=1)
    return problem.grads(X, Y)


def correction_quality(state: SwarmState, problem: MinimaxProblem) -> tuple[float, float]:
    """``|C + G - G J|_F^2 / (n L^2)`` with ``G`` the client gradients at the averaged point.

    Zero exactly when every correction equals the network-average gradient
    minus the client's own, i.e. the correction that cancels heterogeneity.
    """
    GX, GY = _client_grads_at_average(state, problem)
    n, L = state.n, problem.smoothness.L
    dev_x = state.Cx + GX - GX.mean(axis=1, keepdims=True)
    dev_y = state.Cy + GY - GY.mean(axis=1, keepdims=True)
    norm = n * L * L
    return float(np.sum(dev_x**2)) / norm, float(np.sum(dev_y**2)) / norm


def consensus_distance_y(state: SwarmState, problem: MinimaxProblem, tol: float = 1e-10, y_hat=None) -> float:
    if y_hat is None:
        y_hat = problem.best_response_y(state.x_bar, tol)
    return float(np.sum((state.y_bar - y_hat) ** 2))


def stationarity(state: SwarmState, problem: MinimaxProblem, tol: float = 1e-10, y_hat=None) -> float:
    """``|grad Phi(x_bar)|^2``.

    For quadratics the Danskin gradient ``grad_x f(x_bar, y_hat)`` is checked
    against the closed-form primal gradient and a mismatch raises.
    """
    x_bar = state.x_bar
    if y_hat is None:
        y_hat = problem.best_response_y(x_bar, tol)
    g, _ = problem.global_grad(x_bar, y_hat)
    schur = getattr(problem, "schur_hessian", None)
    if schur is not None:
        lin = problem.B_bar @ np.linalg.solve(problem.C_bar, problem.b_bar) + problem.a_bar
        g_closed = schur() @ x_bar + lin
        scale = max(1.0, float(np.linalg.norm(g_closed)))
        if np.linalg.norm(g - g_closed) > 1e-10 * scale * max(1.0, float(np.linalg.norm(x_bar))):
            raise KGTMMError("Danskin gradient disagrees with the closed-form primal gradient")
    return float(g @ g)


def lyapunov(
    record: DiagnosticsRecord,
    constants: LyapunovConstants,
    steps: StepSizes,
    problem: MinimaxProblem,
    K: int,
    p: float,
) -> float | None:
    """Potential combining primal gap, client variance, correction quality and consensus distance.

    Returns ``None`` when the record carries no primal gap (``Phi*`` unknown).
    """
    if record.phi_gap is None:
        return None
    L, kappa = problem.smoothness.L, problem.smoothness.kappa
    ecy = steps.eta_c_y
    c = constants
    return (
        record.phi_gap
        + c.B_x * ecy * L * record.xi_x
        + c.B_y * ecy * L * record.xi_y
        + c.A_x * K**2 * L**3 * ecy**3 * record.gamma_x
        + c.A_y * K**2 * L**3 * ecy**3 * record.gamma_y
        + c.C * record.eps_consensus / (K * kappa * max(p, 1e-300))
    )


def compute_record(
    state: SwarmState,
    trace: InnerTrace,
    problem: MinimaxProblem,
    steps: StepSizes,
    K: int,
    p: float,
    phi_star: float | None = None,
    constants: LyapunovConstants | None = None,
    tol: float = 1e-10,
) -> DiagnosticsRecord:
    # states close to overflow give inf entries rather than warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _compute_record(state, trace, problem, steps, K, p, phi_star, constants, tol)


def _compute_record(state, trace, problem, steps, K, p, phi_star, constants, tol) -> DiagnosticsRecord:
    y_hat = problem.best_response_y(state.x_bar, tol)
    xi_x, xi_y = client_variance(state)
    drift_x, drift_y = client_drift(trace, state, K)
    gamma_x, gamma_y = correction_quality(state, problem)
    eps = consensus_distance_y(state, problem, tol, y_hat)
    gphi = stationarity(state, problem, tol, y_hat)
    phi_gap = None
    if phi_star is not None:
        phi = problem.global_value(state.x_bar, y_hat)
        # clamp rounding below the optimum; the gap is nonnegative by definition
        phi_gap = max(0.0, phi - phi_star)
    rec = DiagnosticsRecord(state.t, gphi, xi_x, xi_y, drift_x, drift_y, gamma_x, gamma_y, eps, None, phi_gap)
    if constants is not None and phi_gap is not None:
        rec = DiagnosticsRecord(**{**asdict(rec), "lyapunov": lyapunov(rec, constants, steps, problem, K, p)})
    return rec


def gradient_bound_violations(
    state: SwarmState, problem: MinimaxProblem, tol: float = 1e-10, rel: float = 1e-9
) -> list[str]:
    """Check the two pathwise bounds relating gradients at the averaged point to ``eps`` and ``grad Phi``.

    ``|grad_x f(xb,yb)|^2 <= 2 L^2 eps + 2 |grad Phi(xb)|^2`` and
    ``|grad_y f(xb,yb)|^2 <= L^2 eps``. Returns descriptions of violations.
    """
    y_hat = problem.best_response_y(state.x_bar, tol)
    eps = consensus_distance_y(state, problem, tol, y_hat)
    gphi = stationarity(state, problem, tol, y_hat)
    gx, gy = problem.global_grad(state.x_bar, state.y_bar)
    L2 = problem.smoothness.L ** 2
    out = []
    lhs, rhs = float(gx @ gx), 2 * L2 * eps + 2 * gphi
    if lhs > rhs * (1 + rel) + 1e-300:
        out.append(f"round {state.t}: |grad_x f|^2={lhs:.6e} > {rhs:.6e}")
    lhs, rhs = float(gy @ gy), L2 * eps
    if lhs > rhs * (1 + rel) + 1e-300:
        out.append(f"round {state.t}: |grad_y f|^2={lhs:.6e} > {rhs:.6e}")
    return out


def average_records(trajectories: list[list[DiagnosticsRecord]]) -> list[dict[str, float]]:
    """Per-round mean and standard error across runs sharing a diagnostic cadence."""
    if not trajectories:
        return []
    lengths = {len(t) for t in trajectories}
    if len(lengths) != 1:
        raise ContractViolation("trajectories differ in length")
    R = len(trajectories)
    names = [f.name for f in fields(DiagnosticsRecord) if f.name != "t"]
    out = []
    for rows in zip(*trajectories):
        entry: dict[str, float] = {"round": rows[0].t}
        for name in names:
            vals = [getattr(r, name) for r in rows]
            if any(v is None for v in vals):
                entry[name] = entry[name + "_se"] = math.nan
                continue
            arr = np.array(vals, dtype=float)
            entry[name] = float(arr.mean())
            entry[name + "_se"] = float(arr.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
        out.append(entry)
    return out
