"""End-to-end episode runner and batch statistics for both case studies.

One episode: apply the known safe input while no residual data exists, then
each step retrain the model on the full transition history, recompute
per-depth residual distributions and offsets with the fresh snapshot, solve
the tightened receding-horizon problem, and step the truth plant.  Disabling
the robust mode keeps the identical formulation with all offsets at zero.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import model, mpc, plants
from .config import BatteryConfig, ExperimentConfig, VehicleConfig
from .dro import AmbiguityConfig, EmpiricalResidualSet, inflate_residuals_for_drift

logger = logging.getLogger(__name__)

_SEED_MODEL = 1
_SEED_ES = 2
_SEED_RESIDUAL = 3
_SEED_FIELD = 4


@dataclass(frozen=True)
class StepRecord:
    t: int
    state: tuple[float, ...]
    inputs: tuple[float, ...]
    constraint_value: float
    offsets: tuple[float, ...] | None
    horizon: int
    feasible: bool
    violation: bool
    violation_magnitude: float
    solve_ms: float


@dataclass
class RunLog:
    study: str
    seed: int
    dro_enabled: bool
    n_target: int
    records: list[StepRecord] = field(default_factory=list)
    final_state: tuple[float, ...] | None = None
    field_ref: plants.ObstacleField | None = None

    @property
    def steps(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class RunMetrics:
    seed: int
    violation_pct: float
    max_constraint: float
    mean_iter_time_s: float
    completion: str
    steps: int
    finished: bool
    completion_value: float


@dataclass(frozen=True)
class StepTrace:
    """Solver internals retained for post-hoc consistency checks."""

    t: int
    constraints: np.ndarray
    offsets_per_point: np.ndarray
    bound: float
    feasible: bool


class _BatteryStudy:
    """Adapter wiring the ECM plant into the generic episode loop."""

    state_columns = ("soc", "v_rc1", "v_rc2")
    input_columns = ("current",)

    def __init__(self, cfg: BatteryConfig):
        self.cfg = cfg
        ocv = plants.OCVCurve.synthetic(
            base=cfg.ocv_base, slope=cfg.ocv_slope,
            dip_amp=cfg.ocv_dip_amp, dip_rate=cfg.ocv_dip_rate,
            knee_amp=cfg.ocv_knee_amp, knee_rate=cfg.ocv_knee_rate,
            step_amp=cfg.ocv_step_amp, step_width=cfg.ocv_step_width,
        )
        self.params = plants.BatteryParams(
            q=cfg.q, r0=cfg.r0, r1=cfg.r1, r2=cfg.r2,
            c1=cfg.c1, c2=cfg.c2, dt=cfg.dt, ocv=ocv,
        )
        self.state = plants.BatteryState(cfg.soc_initial, cfg.vrc1_initial, cfg.vrc2_initial)
        self.u_min = np.array([cfg.i_min])
        self.u_max = np.array([cfg.i_max])
        self.bootstrap = np.array([cfg.bootstrap_current])
        self.bound = cfg.v_limit
        self.attainable_floor = float(ocv(0.0))
        # Network learns the three states jointly with the voltage output,
        # which has direct feedthrough of the current.
        self.topology = model.NetworkTopology(input_dim=4, output_dim=4,
                                              hidden=cfg.hidden_units)
        self.state_dim = 3
        self.has_aux = True
        self.max_steps = cfg.episode_steps

    def state_array(self) -> np.ndarray:
        return self.state.as_array()

    def step(self, u: np.ndarray) -> tuple[np.ndarray, float]:
        self.state, voltage = plants.battery_step(self.state, float(u[0]), self.params)
        return self.state.as_array(), voltage

    def exited(self, state: np.ndarray) -> bool:
        return False

    def g_pred(self, snapshot: model.ModelSnapshot, states: np.ndarray,
               inputs: np.ndarray) -> np.ndarray:
        return snapshot.forward_batch(states, inputs)[:, 3]

    def violation_magnitude(self, constraint_value: float, state: np.ndarray) -> float:
        return max(constraint_value - self.bound, 0.0)

    def make_evaluator(self, snapshot: model.ModelSnapshot, x_now: np.ndarray, horizon: int):
        target = self.cfg.soc_target

        def evaluate(batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            b = batch.shape[0]
            x = np.tile(x_now, (b, 1))
            cost = np.full(b, (x_now[0] - target) ** 2)
            g = np.empty((b, horizon + 1))
            for k in range(horizon + 1):
                out = snapshot.forward_batch(x, batch[:, k])
                g[:, k] = out[:, 3]
                if k < horizon:
                    x = out[:, :3]
                    cost += (x[:, 0] - target) ** 2
            return cost, g

        return evaluate


class _VehicleStudy:
    """Adapter wiring the bicycle plant and obstacle field into the loop."""

    state_columns = ("x1", "x2", "heading", "speed")
    input_columns = ("accel", "steer")

    def __init__(self, cfg: VehicleConfig, seed: int):
        self.cfg = cfg
        self.params = plants.VehicleParams(length=cfg.length, dt=cfg.dt)
        self.field = plants.generate_obstacle_field(
            seed=int(np.random.SeedSequence([seed, _SEED_FIELD]).generate_state(1)[0]),
            n_gaussians=cfg.n_gaussians,
            cutoff_quantile=cfg.cutoff_quantile,
            extent=cfg.arena,
            resolution=cfg.grid_resolution,
            amplitude_range=(cfg.amplitude_min, cfg.amplitude_max),
            sigma_range=(cfg.sigma_min, cfg.sigma_max),
            start=(cfg.x1_initial, cfg.x2_initial),
            corridor_width_m=cfg.corridor_width,
            corridor_progress_m=cfg.corridor_progress,
        )
        self.state = plants.VehicleState(cfg.x1_initial, cfg.x2_initial,
                                         cfg.heading_initial, cfg.speed_initial)
        self.u_min = np.array([cfg.accel_min, cfg.steer_min])
        self.u_max = np.array([cfg.accel_max, cfg.steer_max])
        self.bootstrap = np.array([cfg.bootstrap_accel, cfg.bootstrap_steer])
        self.bound = self.field.cutoff
        self.attainable_floor = self.field.min_z
        self.topology = model.NetworkTopology(input_dim=6, output_dim=4,
                                              hidden=cfg.hidden_units)
        self.state_dim = 4
        self.has_aux = False
        self.max_steps = cfg.max_steps

    def state_array(self) -> np.ndarray:
        return self.state.as_array()

    def step(self, u: np.ndarray) -> tuple[np.ndarray, float]:
        value = float(self.field.value(self.state.as_array()[:2]))
        self.state = plants.bicycle_step(self.state, u, self.params)
        return self.state.as_array(), value

    def exited(self, state: np.ndarray) -> bool:
        return not self.field.inside(state[:2])

    def g_pred(self, snapshot: model.ModelSnapshot, states: np.ndarray,
               inputs: np.ndarray) -> np.ndarray:
        return self.field.value(states[:, :2])

    def violation_magnitude(self, constraint_value: float, state: np.ndarray) -> float:
        if constraint_value <= self.bound:
            return 0.0
        return self.field.violation_depth(state[:2])

    def make_evaluator(self, snapshot: model.ModelSnapshot, x_now: np.ndarray, horizon: int):
        value = self.field.value

        def evaluate(batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            b = batch.shape[0]
            x = np.tile(x_now, (b, 1))
            g = np.empty((b, horizon + 1))
            g[:, 0] = value(x[:, :2])
            for k in range(horizon):
                x = snapshot.forward_batch(x, batch[:, k])[:, :4]
                g[:, k + 1] = value(x[:, :2])
            cost = -(x[:, 0] + x[:, 1])
            return cost, g

        return evaluate


def _make_study(config: ExperimentConfig, seed: int):
    if config.study == "battery":
        return _BatteryStudy(config.battery)
    return _VehicleStudy(config.vehicle, seed)


def _child_seed(seed: int, tag: int, t: int = 0) -> int:
    return int(np.random.SeedSequence([int(seed), tag, t]).generate_state(1)[0])


def run_episode(config: ExperimentConfig, seed: int,
                trace: list[StepTrace] | None = None) -> RunLog:
    """Run one full episode of the learning controller; returns the step log."""
    p = config.params
    study = _make_study(config, seed)
    log = RunLog(study=config.study, seed=seed, dro_enabled=config.dro_enabled,
                 n_target=p.n_target,
                 field_ref=getattr(study, "field", None))

    ambiguity = AmbiguityConfig(eta=p.eta, beta=p.beta)
    snapshot = model.init_random(study.topology, _child_seed(seed, _SEED_MODEL))
    buffer = model.TransitionBuffer(study.state_dim, study.u_min.size,
                                    has_aux=study.has_aux)
    g_true: list[float] = []
    mutation_scale = p.mutation_scale_frac * (study.u_max - study.u_min)
    train_cfg = model.TrainConfig(iterations=p.train_iterations,
                                  learning_rate=p.train_lr,
                                  lr_decay=p.train_lr_decay)
    warm: np.ndarray | None = None

    for t in range(1, study.max_steps + 1):
        state = study.state_array()
        if study.exited(state):
            break
        started = time.perf_counter()
        horizon_used = 1
        offsets_logged: tuple[float, ...] | None = None
        feasible = True

        if t == 1 or len(buffer) == 0:
            u = mpc.bootstrap_action(study.bootstrap)
        else:
            snapshot = model.train(buffer, snapshot, train_cfg)
            n_sched = mpc.horizon_for(t, p.n_target)
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, _SEED_RESIDUAL, t]))
            residuals = model.compute_residuals(
                buffer, snapshot, study.g_pred, np.asarray(g_true),
                max_depth=n_sched, cap=p.residual_cap, rng=rng,
            )
            if p.residual_window > 0:
                residuals = _apply_window(residuals, t, p.residual_window)
            n_eff = 0
            for depth in range(1, n_sched + 1):
                if depth not in residuals:
                    break
                n_eff = depth
            if n_eff == 0:
                # Horizon data gap at every depth: fall back to the safe input.
                u = mpc.bootstrap_action(study.bootstrap)
            else:
                sets = _finalize_sets(residuals, t, p.c_drift, n_eff)
                if config.dro_enabled:
                    robust = mpc.assemble_offsets(sets, ambiguity, n_eff,
                                                  study.bound, study.attainable_floor)
                else:
                    robust = None
                point_offsets = mpc.offsets_per_point(robust, n_eff)
                problem = mpc.ControlProblem(
                    evaluate=study.make_evaluator(snapshot, state, n_eff),
                    horizon=n_eff,
                    u_min=study.u_min,
                    u_max=study.u_max,
                    bound=study.bound,
                    offsets_per_point=point_offsets,
                )
                es = mpc.ESConfig(mutants=p.mutants, mutation_scale=mutation_scale,
                                  seed=_child_seed(seed, _SEED_ES, t),
                                  iterations=p.es_iterations)
                candidate = mpc.solve(problem, es, warm)
                u = candidate.inputs[0].copy()
                warm = candidate.inputs
                feasible = candidate.feasible
                horizon_used = n_eff
                offsets_logged = tuple(
                    robust.per_depth.tolist()) if robust is not None else tuple(
                    [0.0] * n_eff)
                if trace is not None:
                    _, constraints = problem.evaluate(candidate.inputs[None])
                    trace.append(StepTrace(t=t, constraints=constraints[0],
                                           offsets_per_point=point_offsets,
                                           bound=study.bound,
                                           feasible=candidate.feasible))
        solve_ms = (time.perf_counter() - started) * 1e3

        next_state, constraint_value = study.step(u)
        buffer.append(state, u, next_state, timestep=t,
                      aux=constraint_value if study.has_aux else None)
        g_true.append(constraint_value if study.has_aux
                      else float(study.field.value(state[:2])))
        violation = constraint_value > study.bound
        log.records.append(StepRecord(
            t=t,
            state=tuple(state.tolist()),
            inputs=tuple(np.atleast_1d(u).tolist()),
            constraint_value=float(constraint_value),
            offsets=offsets_logged,
            horizon=horizon_used,
            feasible=feasible,
            violation=bool(violation),
            violation_magnitude=study.violation_magnitude(float(constraint_value), state),
            solve_ms=solve_ms,
        ))
    log.final_state = tuple(study.state_array().tolist())
    return log


def _apply_window(residuals: dict, now: int, window: int) -> dict:
    out = {}
    for depth, (values, starts) in residuals.items():
        keep = starts >= now - window
        if np.any(keep):
            out[depth] = (values[keep], starts[keep])
    return out


def _finalize_sets(residuals: dict, now: int, c_drift: float,
                   n_eff: int) -> dict[int, EmpiricalResidualSet]:
    sets = {}
    for depth in range(1, n_eff + 1):
        values, starts = residuals[depth]
        if c_drift > 0.0:
            values = inflate_residuals_for_drift(values, now - starts, c_drift)
        sets[depth] = EmpiricalResidualSet.from_values(depth, values)
    return sets


def compute_metrics(log: RunLog, config: ExperimentConfig) -> RunMetrics:
    """Per-run safety and performance statistics."""
    if not log.records:
        raise ValueError("empty run log")
    n = len(log.records)
    violations = sum(r.violation for r in log.records)
    violation_pct = 100.0 * violations / n
    mean_time = sum(r.solve_ms for r in log.records) / n / 1e3

    if log.study == "battery":
        p = config.battery
        max_constraint = max(r.constraint_value for r in log.records)
        socs = [r.state[0] for r in log.records]
        if log.final_state is not None:
            socs.append(log.final_state[0])
        hit = next((i for i, s in enumerate(socs) if s >= p.soc_target), None)
        if hit is None:
            max_soc = max(socs)
            return RunMetrics(log.seed, violation_pct, max_constraint, mean_time,
                              completion=f"DNF max_soc={max_soc:.4f}",
                              steps=n, finished=False, completion_value=float("nan"))
        minutes = hit * p.dt / 60.0
        return RunMetrics(log.seed, violation_pct, max_constraint, mean_time,
                          completion=f"{minutes:.4f}", steps=n, finished=True,
                          completion_value=minutes)
    max_depth = max((r.violation_magnitude for r in log.records), default=0.0)
    return RunMetrics(log.seed, violation_pct, max_depth, mean_time,
                      completion=str(n), steps=n, finished=True,
                      completion_value=float(n))


def summarize(metrics: list[RunMetrics]) -> RunMetrics:
    """Column averages; completion averages over finished runs only."""
    n = len(metrics)
    finished = [m for m in metrics if m.finished]
    completion_value = (sum(m.completion_value for m in finished) / len(finished)
                        if finished else float("nan"))
    completion = f"{completion_value:.4f}" if finished else "DNF"
    return RunMetrics(
        seed=-1,
        violation_pct=sum(m.violation_pct for m in metrics) / n,
        max_constraint=sum(m.max_constraint for m in metrics) / n,
        mean_iter_time_s=sum(m.mean_iter_time_s for m in metrics) / n,
        completion=completion,
        steps=sum(m.steps for m in metrics) // n,
        finished=all(m.finished for m in metrics),
        completion_value=completion_value,
    )


def run_batch(config: ExperimentConfig) -> tuple[list[RunLog], list[RunMetrics], RunMetrics]:
    """Independent seeded episodes plus the averages row."""
    logs: list[RunLog] = []
    metrics: list[RunMetrics] = []
    for seed in config.seeds:
        try:
            log = run_episode(config, seed)
        except Exception:
            logger.exception("episode with seed %d failed; batch continues", seed)
            continue
        logs.append(log)
        metrics.append(compute_metrics(log, config))
    if not metrics:
        raise RuntimeError("all episodes in the batch failed")
    return logs, metrics, summarize(metrics)
