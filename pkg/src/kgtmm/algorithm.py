"""K-GT-Minimax: local gradient descent-ascent with gradient-tracking corrections and gossip.

Iterates are stored as matrices with one column per client (``X`` is ``d_x x n``),
so one gossip round is a right-multiplication by the mixing matrix ``W``.
One communication round consists of

1. ``K`` local steps per client, both blocks driven by the same noise sample::

       x <- x - eta_c_x (g_x + c_x)        y <- y + eta_c_y (g_y + c_y)

2. a tracking update on the local progress ``dX = X_end - X``::

       Cx <- Cx + dX (I - W) / (K eta_c_x)   Cy <- Cy - dY (I - W) / (K eta_c_y)

3. a mixing step ``X <- (X + eta_s_x dX) W`` (same for ``Y``).
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from kgtmm import diagnostics as diag
from kgtmm import rng as rngmod
from kgtmm.errors import ConfigError, ContractViolation, DivergenceError
from kgtmm.problems import MinimaxProblem
from kgtmm.topology import MixingMatrix

OUTPUT_SELECTIONS = ("randomized_tau", "final", "best_grad")


@dataclass(frozen=True)
class StepSizes:
    eta_c_x: float
    eta_c_y: float
    eta_s_x: float = 1.0
    eta_s_y: float = 1.0

    def __post_init__(self):
        for name in ("eta_c_x", "eta_c_y", "eta_s_x", "eta_s_y"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"must be a finite nonnegative number, got {v!r}", name)

    @property
    def eta_x(self) -> float:
        return self.eta_s_x * self.eta_c_x

    @property
    def eta_y(self) -> float:
        return self.eta_s_y * self.eta_c_y

    def require_positive(self) -> None:
        for name in ("eta_c_x", "eta_c_y", "eta_s_x", "eta_s_y"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be strictly positive", f"steps.{name}")


@dataclass(frozen=True)
class RunConfig:
    T: int
    K: int
    steps: StepSizes
    seed: int = 0
    diag_every: int = 1
    output_selection: str = "randomized_tau"
    tol: float = 1e-10
    lyapunov_v: float = 1.0
    lyapunov_variant: str = "statement"
    record_inner: bool = False

    def __post_init__(self):
        for name in ("T", "K", "diag_every"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"must be an integer >= 1, got {v!r}", f"run.{name}")
        if self.output_selection not in OUTPUT_SELECTIONS:
            raise ConfigError(f"must be one of {OUTPUT_SELECTIONS}", "run.output_selection")
        if self.lyapunov_variant not in diag.LYAPUNOV_VARIANTS:
            raise ConfigError(f"must be one of {diag.LYAPUNOV_VARIANTS}", "run.lyapunov_variant")

    def validate(self) -> None:
        self.steps.require_positive()


@dataclass
class SwarmState:
    t: int
    X: np.ndarray
    Y: np.ndarray
    Cx: np.ndarray
    Cy: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def x_bar(self) -> np.ndarray:
        return self.X.mean(axis=1)

    @property
    def y_bar(self) -> np.ndarray:
        return self.Y.mean(axis=1)

    def copy(self) -> SwarmState:
        return SwarmState(self.t, self.X.copy(), self.Y.copy(), self.Cx.copy(), self.Cy.copy())


@dataclass
class InnerTrace:
    """Iterates ``X^{(t)+k}``, ``Y^{(t)+k}`` for ``k = 0..K-1`` of one local phase."""

    X: list[np.ndarray] = field(default_factory=list)
    Y: list[np.ndarray] = field(default_factory=list)


@dataclass
class RunResult:
    x_out: np.ndarray
    tau: int
    trajectory: list[diag.DiagnosticsRecord]
    final_state: SwarmState
    x_bar: np.ndarray
    y_bar: np.ndarray
    algorithm: str = "kgt_minimax"
    inner_x_bar: np.ndarray | None = None


def _finite(*arrays: np.ndarray) -> bool:
    # a single reduction per array; an overflowing sum only happens on runaway iterates anyway
    with np.errstate(over="ignore", invalid="ignore"):
        return all(math.isfinite(float(a.sum())) for a in arrays)


def _check_dims(problem: MinimaxProblem, W: MixingMatrix) -> None:
    if W.n != problem.n:
        raise ContractViolation(f"mixing matrix has n={W.n}, problem has n={problem.n}")


def _initial_point(problem: MinimaxProblem, x0, y0) -> tuple[np.ndarray, np.ndarray]:
    dx, dy = problem.dims.d_x, problem.dims.d_y
    x0 = np.zeros(dx) if x0 is None else np.asarray(x0, dtype=float)
    y0 = np.zeros(dy) if y0 is None else np.asarray(y0, dtype=float)
    if x0.shape != (dx,) or y0.shape != (dy,):
        raise ContractViolation("initial point does not match problem dimensions")
    return x0, y0


def _noise(problem: MinimaxProblem, seed: int, purpose: str, round_index: int, rows: int):
    """Noise for every client, shape ``(rows, d, n)`` per block; ``None`` when sigma is 0.

    Row ``k`` of client ``i`` comes from stream ``(seed, purpose, i, round_index)``,
    and the same standard-normal row feeds the x block and the y block.
    """
    if problem.noise.sigma == 0:
        return None, None
    dx, dy, n = problem.dims.d_x, problem.dims.d_y, problem.n
    Z = np.empty((rows, dx + dy, n))
    for i in range(n):
        Z[:, :, i] = rngmod.stream(seed, purpose, i, round_index).standard_normal((rows, dx + dy))
    sx, sy = problem.noise.scales(dx, dy)
    return sx * Z[:, :dx, :], sy * Z[:, dx:, :]


def init_state(problem: MinimaxProblem, config: RunConfig, W: MixingMatrix, x0=None, y0=None, tracking: bool = True):
    """Round-0 state: shared initial point and zero-mean tracking corrections.

    Each client draws one stochastic gradient at the shared point; its
    correction is the network average of those draws minus its own.
    """
    _check_dims(problem, W)
    x0, y0 = _initial_point(problem, x0, y0)
    n = problem.n
    X = np.repeat(x0[:, None], n, axis=1)
    Y = np.repeat(y0[:, None], n, axis=1)
    if not tracking:
        return SwarmState(0, X, Y, np.zeros_like(X), np.zeros_like(Y))
    GX, GY = problem.grads(X, Y)
    NX, NY = _noise(problem, config.seed, "init", 0, 1)
    if NX is not None:
        GX = GX + NX[0]
        GY = GY + NY[0]
    Cx = GX.mean(axis=1, keepdims=True) - GX
    Cy = GY.mean(axis=1, keepdims=True) - GY
    return SwarmState(0, X, Y, Cx, Cy)


def local_phase(state: SwarmState, problem: MinimaxProblem, config: RunConfig, W: MixingMatrix | None = None):
    """Run ``K`` local descent-ascent steps on every client.

    Returns ``(X_end, Y_end, trace)`` where ``trace`` holds the iterates at the
    start of each local step.
    """
    del W  # local steps do not communicate
    K = config.K
    ex, ey = config.steps.eta_c_x, config.steps.eta_c_y
    NX, NY = _noise(problem, config.seed, "local", state.t, K)
    X, Y = state.X, state.Y
    trace = InnerTrace()
    # overflow is reported as DivergenceError below, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            trace.X.append(X)
            trace.Y.append(Y)
            GX, GY = problem.grads(X, Y)
            if NX is not None:
                GX = GX + NX[k]
                GY = GY + NY[k]
            X = X - ex * (GX + state.Cx)
            Y = Y + ey * (GY + state.Cy)
            if not _finite(X, Y):
                raise DivergenceError("non-finite iterate in local update", state.t, k)
    return X, Y, trace


def communication_phase(
    state: SwarmState,
    X_end: np.ndarray,
    Y_end: np.ndarray,
    config: RunConfig,
    W: MixingMatrix,
    tracking: bool = True,
) -> SwarmState:
    """Tracking update followed by gossip; returns the state of round ``t + 1``."""
    Wm = W.W
    s = config.steps
    with np.errstate(over="ignore", invalid="ignore"):
        dX = X_end - state.X
        dY = Y_end - state.Y
        if tracking:
            scale = 1.0 / config.K
            Cx = state.Cx + (dX - dX @ Wm) * (scale / s.eta_c_x)
            Cy = state.Cy - (dY - dY @ Wm) * (scale / s.eta_c_y)
        else:
            Cx, Cy = state.Cx, state.Cy
        X = (state.X + s.eta_s_x * dX) @ Wm
        Y = (state.Y + s.eta_s_y * dY) @ Wm
        if not _finite(X, Y, Cx, Cy):
            raise DivergenceError("non-finite state after communication", state.t)
    return SwarmState(state.t + 1, X, Y, Cx, Cy)


def stepsize_conditions(steps: StepSizes, problem: MinimaxProblem, p: float, K: int) -> list[tuple[str, float, float, bool]]:
    """Step-size preconditions used by the convergence analysis.

    Each entry is ``(name, value, bound, holds)``. The entry named
    ``ratio_eta_x`` (``eta_x <= eta_y / (4 sqrt(6) kappa^2)``) is reported but
    is not implied by the theorem schedule, which gives ``eta_x = eta_y / kappa^2``.
    """
    L, kappa = problem.smoothness.L, problem.smoothness.kappa
    ex, ey = steps.eta_x, steps.eta_y
    rows = [
        ("local_eta_c_x", steps.eta_c_x, 1 / (8 * K * L)),
        ("local_eta_c_y", steps.eta_c_y, 1 / (8 * K * L)),
        ("variance_eta_x", ex, math.sqrt(p) / (2 * math.sqrt(6) * K * L)),
        ("variance_eta_y", ey, math.sqrt(p) / (2 * math.sqrt(6) * K * L)),
        ("dual_eta_y", ey, 1 / (K * L)),
        ("descent_eta_x", ex, 1 / (16 * K * L * kappa)),
        ("ratio_eta_x", ex, ey / (4 * math.sqrt(6) * kappa**2)),
    ]
    return [(name, v, b, v <= b * (1 + 1e-12)) for name, v, b in rows]


SCHEDULE_IMPLIED = ("local_eta_c_x", "local_eta_c_y", "variance_eta_x", "variance_eta_y", "dual_eta_y", "descent_eta_x")


def theorem_stepsizes(problem: MinimaxProblem, p: float, K: int, v: float = 1.0) -> StepSizes:
    """Step sizes of the convergence theorem.

    ``eta_c_y = p / (300 v kappa K L)``, ``eta_c_x = eta_c_y / kappa^2`` and
    ``eta_s_x = eta_s_y = v p``.
    """
    if not 0 < p <= 1:
        raise ConfigError(f"p must lie in (0, 1], got {p}", "p")
    if int(K) != K or K < 1:
        raise ConfigError("K must be an integer >= 1", "run.K")
    if not v >= 1:
        raise ConfigError(f"v must be >= 1, got {v}", "run.v")
    L, kappa = problem.smoothness.L, problem.smoothness.kappa
    eta_c_y = p / (300 * v * kappa * K * L)
    steps = StepSizes(eta_c_y / kappa**2, eta_c_y, v * p, v * p)
    violated = [
        f"{name}: {val:.6g} > {bound:.6g}"
        for name, val, bound, ok in stepsize_conditions(steps, problem, p, K)
        if name in SCHEDULE_IMPLIED and not ok
    ]
    if violated:
        raise ConfigError("step-size preconditions violated: " + "; ".join(violated), "steps")
    return steps


def _select_output(config: RunConfig, x_bar: np.ndarray, trajectory) -> int:
    T = config.T
    if config.output_selection == "randomized_tau":
        return int(rngmod.stream(config.seed, "tau").integers(0, T))
    if config.output_selection == "final":
        return T
    candidates = [r for r in trajectory if r.t < T] or trajectory
    return min(candidates, key=lambda r: (r.grad_phi_sq, r.t)).t


class _Recorder:
    """Computes diagnostics at round boundaries with the shared per-run constants."""

    def __init__(self, problem: MinimaxProblem, config: RunConfig, W: MixingMatrix, enabled: bool = True, sink=None):
        self.problem = problem
        self.sink = sink
        self.config = config
        self.p = W.p
        self.enabled = enabled
        self.phi_star = problem.phi_star() if enabled else None
        self.constants = diag.LyapunovConstants.from_theory(config.lyapunov_v, W.p, config.lyapunov_variant)
        self.records: list[diag.DiagnosticsRecord] = []

    def due(self, t: int) -> bool:
        return self.enabled and (t % self.config.diag_every == 0 or t == self.config.T)

    def record(self, state: SwarmState, trace: InnerTrace) -> None:
        rec = diag.compute_record(
            state,
            trace,
            self.problem,
            self.config.steps,
            self.config.K,
            self.p,
            phi_star=self.phi_star,
            constants=self.constants,
            tol=self.config.tol,
        )
        self.records.append(rec)
        if self.sink is not None:
            self.sink(rec)


def _simulate(
    problem: MinimaxProblem,
    W: MixingMatrix,
    config: RunConfig,
    tracking: bool,
    x0=None,
    y0=None,
    callback: Callable[[SwarmState], None] | None = None,
    diagnostics: bool = True,
    name: str = "kgt_minimax",
    on_record: Callable[[diag.DiagnosticsRecord], None] | None = None,
) -> RunResult:
    _check_dims(problem, W)
    config.validate()
    state = init_state(problem, config, W, x0, y0, tracking=tracking)
    rec = _Recorder(problem, config, W, diagnostics, on_record)
    T = config.T
    x_bar = np.empty((T + 1, problem.dims.d_x))
    y_bar = np.empty((T + 1, problem.dims.d_y))
    inner = [] if config.record_inner else None
    if callback is not None:
        callback(state)
    for t in range(T):
        x_bar[t], y_bar[t] = state.x_bar, state.y_bar
        X_end, Y_end, trace = local_phase(state, problem, config, W)
        if inner is not None:
            inner.extend(Xk.mean(axis=1) for Xk in trace.X)
        if rec.due(t):
            rec.record(state, trace)
        state = communication_phase(state, X_end, Y_end, config, W, tracking=tracking)
        if callback is not None:
            callback(state)
    x_bar[T], y_bar[T] = state.x_bar, state.y_bar
    if inner is not None:
        inner.append(x_bar[T].copy())
    if rec.due(T):
        # drift at the last boundary comes from a local phase that is never applied
        _, _, trace = local_phase(state, problem, config, W)
        rec.record(state, trace)
    tau = _select_output(config, x_bar, rec.records)
    return RunResult(
        x_out=x_bar[tau].copy(),
        tau=tau,
        trajectory=rec.records,
        final_state=state,
        x_bar=x_bar,
        y_bar=y_bar,
        algorithm=name,
        inner_x_bar=None if inner is None else np.array(inner),
    )


def run(
    problem: MinimaxProblem,
    W: MixingMatrix,
    config: RunConfig,
    x0=None,
    y0=None,
    callback: Callable[[SwarmState], None] | None = None,
    diagnostics: bool = True,
    on_record: Callable[[diag.DiagnosticsRecord], None] | None = None,
) -> RunResult:
    """Run K-GT-Minimax for ``config.T`` communication rounds.

    Args:
        problem: client objectives and gradient oracles.
        W: mixing matrix; its size must match ``problem.n``.
        config: rounds, local steps, step sizes, seed and diagnostic cadence.
        x0, y0: shared initial point (zeros by default).
        callback: called with the state at every round boundary, round 0 included.
        diagnostics: set to False to skip all diagnostic computation.
        on_record: called with each diagnostics record as soon as it is computed.

    Raises:
        DivergenceError: an iterate became non-finite.
    """
    return _simulate(problem, W, config, True, x0, y0, callback, diagnostics, "kgt_minimax", on_record)


def run_local_sgda_baseline(problem, W, config, x0=None, y0=None, callback=None, diagnostics=True, on_record=None):
    """Same loop with the tracking corrections pinned at zero."""
    return _simulate(problem, W, config, False, x0, y0, callback, diagnostics, "local_sgda", on_record)


def run_centralized_gda_baseline(
    problem: MinimaxProblem, config: RunConfig, x0=None, y0=None, diagnostics=True, on_record=None
):
    """Plain GDA on the averaged objective with steps ``(eta_x, eta_y)``.

    Runs ``T * K`` iterations and reports round boundaries every ``K`` of them.
    The stochastic variant averages one noise draw per client per iteration,
    mirroring what the averaged network would see.
    """
    config.validate()
    x, y = _initial_point(problem, x0, y0)
    n, K, T = problem.n, config.K, config.T
    ex, ey = config.steps.eta_x, config.steps.eta_y
    W = MixingMatrix(np.full((n, n), 1.0 / n), 1.0)
    rec = _Recorder(problem, config, W, diagnostics, on_record)
    x_bar = np.empty((T + 1, problem.dims.d_x))
    y_bar = np.empty((T + 1, problem.dims.d_y))
    inner = [] if config.record_inner else None

    def as_state(t, x, y):
        z = np.zeros((1, n))
        return SwarmState(t, x[:, None] + z, y[:, None] + z, np.zeros((x.size, n)), np.zeros((y.size, n)))

    def step_round(t, x, y, apply):
        NX, NY = _noise(problem, config.seed, "central", t, K)
        trace = InnerTrace()
        for k in range(K):
            trace.X.append(x[:, None] + np.zeros((1, n)))
            trace.Y.append(y[:, None] + np.zeros((1, n)))
            if apply and inner is not None:
                inner.append(x.copy())
            gx, gy = problem.global_grad(x, y)
            if NX is not None:
                gx = gx + NX[k].mean(axis=1)
                gy = gy + NY[k].mean(axis=1)
            with np.errstate(over="ignore", invalid="ignore"):
                x, y = x - ex * gx, y + ey * gy
            if not (np.isfinite(x).all() and np.isfinite(y).all()):
                raise DivergenceError("non-finite iterate in centralized GDA", t, k)
        return x, y, trace

    for t in range(T):
        x_bar[t], y_bar[t] = x, y
        x_new, y_new, trace = step_round(t, x, y, True)
        if rec.due(t):
            rec.record(as_state(t, x, y), trace)
        x, y = x_new, y_new
    x_bar[T], y_bar[T] = x, y
    if inner is not None:
        inner.append(x.copy())
    final = as_state(T, x, y)
    if rec.due(T):
        _, _, trace = step_round(T, x, y, False)
        rec.record(final, trace)
    tau = _select_output(config, x_bar, rec.records)
    return RunResult(
        x_out=x_bar[tau].copy(),
        tau=tau,
        trajectory=rec.records,
        final_state=final,
        x_bar=x_bar,
        y_bar=y_bar,
        algorithm="centralized_gda",
        inner_x_bar=None if inner is None else np.array(inner),
    )
