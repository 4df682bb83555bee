"""Experiment commands: corpus generation, encoder training, metric-failure
sweeps, the automatic hyperparameter loop, and the GD/BO comparison.

Every command writes its resolved config next to its outputs.  Outputs
are deterministic given (config, seed); wall-clock times go to a separate
``timing.json`` so they never perturb the reproducible artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dmp import adapt_dmp
from ..encoder import EncoderParams, TrainConfig, encode, train_encoder
from ..gmm import ProbRefTrajectory, extract_reference
from ..hyperopt import DEFAULT_BOUNDS, Hyperparams, bo_optimize, gd_optimize
from ..kmp import adapt_kmp
from ..letters import synth_letters
from ..metrics import MetricReport, discrete_frechet, metric_report, mle_cost, mse, shape_distortion
from ..trajectory import (
    ConstraintPoint,
    Constraints,
    Demonstration,
    Trajectory,
    load_demonstrations,
    save_trajectory_csv,
)
from ..triplets import TripletDataset, generate_triplets
from .config import DEFAULT_FAILURE_CASES, SCENARIOS, ExperimentConfig
from .svg import emit_svg

log = logging.getLogger(__name__)

GOOD_SHAPE = 0.05
BAD_SHAPE = 0.15


class CertificationError(AssertionError):
    """A command ran but could not establish the property it exists to show."""


def _json_dump(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def _write_config(cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(cfg.to_json(), encoding="utf-8")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("AUTOLFD_THREADS", "1")))
    except ValueError:
        return 1


def _run_cells(fn, cells: list) -> list:
    """Run independent cells, in parallel if allowed; results keep cell order."""
    workers = min(_threads(), len(cells))
    if workers <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


# ---------------------------------------------------------------------------
# Corpus and tasks


def load_corpus(cfg: ExperimentConfig, letters=None) -> dict[str, list[Demonstration]]:
    letters = list(letters or cfg.letters)
    corpus = {}
    for letter in letters:
        if cfg.demos_dir is not None:
            corpus[letter] = load_demonstrations(Path(cfg.demos_dir) / letter)
        else:
            corpus[letter] = synth_letters(letter, cfg.demos_per_letter, cfg.corpus_seed)
    return corpus


def make_constraints(anchor: Trajectory, spec: dict) -> Constraints:
    """Constraint points from a relative spec (see ``harness.config``)."""
    p = anchor.positions
    t = anchor.times
    centroid = p.mean(axis=0)
    scale = float(spec.get("scale", 1.0))
    points = []
    for item in spec["points"]:
        at = float(item["at"])
        idx = int(round(at * (t.size - 1)))
        offset = np.asarray(item.get("offset", np.zeros(anchor.n_dims)), dtype=float)
        pos = centroid + scale * (p[idx] - centroid) + offset
        points.append(ConstraintPoint(float(t[idx]), tuple(float(v) for v in pos)))
    return Constraints(tuple(points))


@dataclass(frozen=True, eq=False)
class Task:
    method: str
    letter: str
    anchor: Trajectory
    source: object  # Demonstration for DMP, ProbRefTrajectory for KMP
    constraints: Constraints
    reference: ProbRefTrajectory | None

    def adapt(self, theta: Hyperparams) -> Trajectory:
        if self.method == "dmp":
            return adapt_dmp(self.source, self.constraints, theta, n_out=self.anchor.n_points)
        return adapt_kmp(self.source, self.constraints, theta, n_out=self.anchor.n_points)

    def constraint_errors(self, traj: Trajectory) -> dict:
        """Distance of the trajectory to each constraint, relative to the anchor diagonal."""
        diag = self.anchor.bbox_diagonal()
        errs = []
        for c in self.constraints.points:
            k = int(np.argmin(np.abs(traj.times - c.time)))
            errs.append(float(np.linalg.norm(traj.positions[k] - np.asarray(c.position))) / diag)
        return {
            "start": errs[0],
            "end": errs[-1],
            "via": errs[1:-1],
            "max": max(errs),
        }


def build_task(cfg: ExperimentConfig, method: str | None = None, letter: str | None = None, spec=None) -> Task:
    method = method or cfg.method
    letter = letter or cfg.letter
    demos = load_corpus(cfg, [letter])[letter]
    if method == "dmp":
        source = demos[cfg.demo_index]
        anchor = source.trajectory
        reference = None
    else:
        reference = extract_reference(demos, seed=cfg.corpus_seed)
        source = reference
        anchor = reference.mean_trajectory()
    constraints = make_constraints(anchor, spec or cfg.constraint_spec())
    return Task(method, letter, anchor, source, constraints, reference)


def make_loss(task: Task, metric: str, encoder: EncoderParams | None = None):
    """``loss(x)`` over log10 hyperparameters; non-finite when the adaptation fails."""
    if metric == "latent":
        if encoder is None:
            raise ValueError("the latent metric needs a trained encoder (set 'encoder' in the config)")
        anchor_emb = encode(encoder, task.anchor)

        def score(traj):
            return float(np.linalg.norm(anchor_emb - encode(encoder, traj)))

    elif metric == "mle" and task.reference is not None:

        def score(traj):
            return mle_cost(task.reference, traj)

    else:

        def score(traj):
            return mse(task.anchor, traj)

    def loss(x):
        try:
            traj = task.adapt(Hyperparams.from_array(x))
        except (np.linalg.LinAlgError, RuntimeError, FloatingPointError, ValueError):
            return float("nan")
        return score(traj)

    return loss


# ---------------------------------------------------------------------------
# gen-data / train-encoder


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_gen_data(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    _write_config(cfg, out)
    t0 = time.perf_counter()
    corpus = load_corpus(cfg)
    demos, refs = [], []
    for letter, items in corpus.items():
        d = out / "demos" / letter
        d.mkdir(parents=True, exist_ok=True)
        for k, demo in enumerate(items):
            save_trajectory_csv(demo.trajectory, d / f"demo_{k}.csv")
        demos.extend(items)
        ref = extract_reference(items, seed=cfg.corpus_seed)
        ref.save_json(out / "demos" / f"{letter}_reference.json")
        refs.append(ref)
    dataset = generate_triplets(demos, cfg.n_triplets, seed=cfg.seeds[0], references=refs)
    dataset.save(out / "triplets")
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name not in ("manifest.json", "timing.json", "config.resolved.json"))
    hashes = {str(p.relative_to(out)): _sha256(p) for p in files}
    corpus_hash = hashlib.sha256(json.dumps(hashes, sort_keys=True).encode()).hexdigest()
    summary = {"corpus_hash": corpus_hash, "files": hashes, "n_triplets": len(dataset), "triplets": "triplets"}
    _json_dump(summary, out / "manifest.json")
    _json_dump({"seconds": time.perf_counter() - t0}, out / "timing.json")
    return summary


def train_config_from(cfg: ExperimentConfig) -> TrainConfig:
    base = TrainConfig.paper(cfg.seeds[0]) if cfg.preset == "paper" else TrainConfig.desk(cfg.seeds[0])
    overrides = {
        k: getattr(cfg, k)
        for k in ("learning_rate", "batch_size", "epochs", "margin")
        if getattr(cfg, k) is not None
    }
    return TrainConfig(**{**asdict(base), **overrides})


def cmd_train_encoder(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    _write_config(cfg, out)
    t0 = time.perf_counter()
    if cfg.dataset is not None:
        dataset = TripletDataset.load(cfg.dataset)
    else:
        corpus = load_corpus(cfg)
        demos = [d for items in corpus.values() for d in items]
        refs = [extract_reference(items, seed=cfg.corpus_seed) for items in corpus.values()]
        dataset = generate_triplets(demos, cfg.n_triplets, seed=cfg.seeds[0], references=refs)
    tcfg = train_config_from(cfg)
    params, tlog = train_encoder(dataset, tcfg)
    params.save_json(out / "encoder.json")
    (out / "curve.csv").write_text(tlog.to_csv(), encoding="utf-8")
    smooth = tlog.smoothed(100)
    summary = {
        "encoder": "encoder.json",
        "curve": "curve.csv",
        "train_config": asdict(tcfg),
        "n_triplets": len(dataset),
        "holdout_accuracy": tlog.holdout_accuracy[-1],
        "final_epoch_loss": tlog.epoch_losses[-1],
        "smoothed_loss_initial": float(smooth[0]),
        "smoothed_loss_final": float(smooth[-1]),
    }
    # file names stay relative on disk so outputs are independent of ``out``
    _json_dump(summary, out / "summary.json")
    _json_dump({"seconds": time.perf_counter() - t0}, out / "timing.json")
    return {**summary, "encoder": str(out / "encoder.json"), "curve": str(out / "curve.csv")}


# ---------------------------------------------------------------------------
# metric-failure


def sweep_grid(task: Task, metric: str, n: int, bounds=DEFAULT_BOUNDS):
    """Adapt on an ``n x n`` grid; rows ``(log10_kh, log10_lambda, cost, shape_distortion, frechet)``."""
    rows = []
    for a in np.linspace(bounds[0, 0], bounds[0, 1], n):
        for b in np.linspace(bounds[1, 0], bounds[1, 1], n):
            try:
                traj = task.adapt(Hyperparams(float(a), float(b)))
            except (np.linalg.LinAlgError, RuntimeError, FloatingPointError, ValueError):
                rows.append((float(a), float(b), float("nan"), float("nan"), float("nan")))
                continue
            cost = mle_cost(task.reference, traj) if metric == "mle" else mse(task.anchor, traj)
            rows.append((float(a), float(b), cost, shape_distortion(task.anchor, traj), discrete_frechet(task.anchor, traj)))
    return rows


def certify_pair(rows):
    """Indices ``(A, B)``: A keeps the shape, B does not, yet A costs more; ``None`` if absent.

    B is the cheapest distorted adaptation and A the most expensive
    well-shaped one, which makes the inversion as wide as the grid allows.
    """
    r = np.array(rows, dtype=float)
    finite = np.all(np.isfinite(r[:, 2:4]), axis=1)
    bad = np.flatnonzero(finite & (r[:, 3] > BAD_SHAPE))
    if bad.size == 0:
        return None
    b = int(bad[np.argmin(r[bad, 2])])
    good = np.flatnonzero(finite & (r[:, 3] < GOOD_SHAPE) & (r[:, 2] > r[b, 2]))
    if good.size == 0:
        return None
    a = int(good[np.argmax(r[good, 2])])
    return a, b


def _table_csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _failure_cell(args):
    cfg, case = args
    spec = SCENARIOS[case["scenario"]] if "scenario" in case else case.get("constraints")
    task = build_task(cfg, case["method"], case["letter"], spec)
    metric = case.get("metric", "mse" if case["method"] == "dmp" else "mle")
    out = Path(cfg.out) / f"{case['method']}-{case['letter']}"
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rows = sweep_grid(task, metric, cfg.grid_size)
    header = ["log10_kh", "log10_lambda", metric, "shape_distortion", "frechet"]
    (out / "sweep.csv").write_text(_table_csv(rows, header), encoding="utf-8")
    pair = certify_pair(rows)
    result = {"method": case["method"], "letter": case["letter"], "metric": metric, "rows": len(rows), "certified": pair is not None}
    save_trajectory_csv(task.anchor, out / "anchor.csv")
    if pair is not None:
        trajs = []
        for name, i in zip(("A", "B"), pair):
            theta = Hyperparams(rows[i][0], rows[i][1])
            traj = task.adapt(theta)
            save_trajectory_csv(traj, out / f"pair_{name}.csv")
            trajs.append(traj)
            result[name] = dict(zip(header, rows[i]))
        emit_svg(
            [task.anchor, *trajs],
            [
                {"label": "demonstration" if task.method == "dmp" else "reference mean", "color": "#7f7f7f", "dash": 4},
                {"label": f"A: {metric}={rows[pair[0]][2]:.3g}, distortion={rows[pair[0]][3]:.3g}"},
                {"label": f"B: {metric}={rows[pair[1]][2]:.3g}, distortion={rows[pair[1]][3]:.3g}"},
            ],
            out / "pair.svg",
            constraints=task.constraints,
            title=f"{task.method.upper()} letter {task.letter}: lower {metric} is not better shape",
        )
    _json_dump(result, out / "result.json")
    return result, time.perf_counter() - t0


def cmd_metric_failure(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    _write_config(cfg, out)
    cases = list(cfg.failure_cases or DEFAULT_FAILURE_CASES)
    results = _run_cells(_failure_cell, [(cfg, c) for c in cases])
    summary = {"cases": [r for r, _ in results]}
    _json_dump(summary, out / "summary.json")
    _json_dump({"seconds": [s for _, s in results]}, out / "timing.json")
    failed = [r for r, _ in results if not r["certified"]]
    if failed:
        names = ", ".join(f"{r['method']}-{r['letter']}" for r in failed)
        raise CertificationError(f"no certified inversion pair for {names}; see sweep.csv")
    return summary


# ---------------------------------------------------------------------------
# auto loop and comparison


@dataclass
class RunReport:
    seed: int
    method: str
    optimizer: str
    metric: str
    letter: str
    initial_theta: list[float]
    final_theta: list[float]
    intermediate_theta: list[float]
    initial_cost: float
    intermediate_cost: float
    final_cost: float
    history: list[dict]
    metrics_initial: dict
    metrics_intermediate: dict
    metrics_final: dict
    constraint_errors: dict
    evaluations: int
    constraints: list[dict]
    wall_clock: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock")
        return d

    def trace_csv(self) -> str:
        rows = [(h["iter"], h["log10_kh"], h["log10_lambda"], h["cost"], h["incumbent"]) for h in self.history]
        return _table_csv(rows, ["iter", "log10_kh", "log10_lambda", "cost", "incumbent"])


def _history_rows(points, costs) -> list[dict]:
    rows, best = [], float("inf")
    for i, (x, c) in enumerate(zip(points, costs)):
        best = min(best, c)
        rows.append({"iter": i, "log10_kh": float(x[0]), "log10_lambda": float(x[1]), "cost": float(c), "incumbent": best})
    return rows


def run_optimizer(cfg: ExperimentConfig, task: Task, loss, optimizer: str, seed: int, init=None):
    """Returns ``(history rows, evaluations)``; row 0 is the starting point.

    For BO the starting point is evaluated for reference only; the search
    itself begins from its seeded Latin-hypercube design.
    """
    x0 = np.array(cfg.init_theta(init), dtype=float)
    if optimizer == "gd":
        res = gd_optimize(loss, x0, cfg.gd_learning_rate, cfg.gd_steps, DEFAULT_BOUNDS)
        pts = [h[0] for h in res.history]
        costs = [h[1] for h in res.history]
        return _history_rows(pts, costs), res.evaluations
    c0 = float(loss(x0))
    res = bo_optimize(loss, DEFAULT_BOUNDS, cfg.bo_budget, seed)
    pts = [x0, *res.observations.x]
    costs = [c0, *res.observations.y]
    return _history_rows(pts, costs), len(res.observations) + 1


def _incumbent_at(history: list[dict], i: int):
    best = min(history[: i + 1], key=lambda h: h["cost"])
    return [best["log10_kh"], best["log10_lambda"]], best["cost"]


def run_auto(cfg: ExperimentConfig, task: Task, encoder, seed: int, optimizer=None, init=None, out: Path | None = None) -> RunReport:
    optimizer = optimizer or cfg.optimizer
    t0 = time.perf_counter()
    loss = make_loss(task, cfg.metric, encoder)
    history, evals = run_optimizer(cfg, task, loss, optimizer, seed, init)
    first = history[0]
    x_init, c_init = [first["log10_kh"], first["log10_lambda"]], first["cost"]
    x_mid, c_mid = _incumbent_at(history, len(history) // 2)
    x_fin, c_fin = _incumbent_at(history, len(history) - 1)
    trajs = {}
    reports = {}
    for name, x in (("initial", x_init), ("intermediate", x_mid), ("final", x_fin)):
        try:
            traj = task.adapt(Hyperparams.from_array(x))
        except (np.linalg.LinAlgError, RuntimeError, FloatingPointError, ValueError):
            traj = None
        trajs[name] = traj
        reports[name] = (
            metric_report(task.anchor, traj, task.reference, encoder).to_dict() if traj is not None else None
        )
    report = RunReport(
        seed=seed,
        method=task.method,
        optimizer=optimizer,
        metric=cfg.metric,
        letter=task.letter,
        initial_theta=x_init,
        final_theta=x_fin,
        intermediate_theta=x_mid,
        initial_cost=c_init,
        intermediate_cost=c_mid,
        final_cost=c_fin,
        history=history,
        metrics_initial=reports["initial"],
        metrics_intermediate=reports["intermediate"],
        metrics_final=reports["final"],
        constraint_errors=task.constraint_errors(trajs["final"]) if trajs["final"] is not None else {},
        evaluations=evals,
        constraints=task.constraints.to_dict(),
        wall_clock=time.perf_counter() - t0,
    )
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_trajectory_csv(task.anchor, out / "anchor.csv")
        for name, traj in trajs.items():
            if traj is not None:
                save_trajectory_csv(traj, out / f"{name}.csv")
        (out / "trace.csv").write_text(report.trace_csv(), encoding="utf-8")
        _json_dump(report.to_dict(), out / "report.json")
        _json_dump({"seconds": report.wall_clock}, out / "timing.json")
        shown = [(n, t) for n, t in trajs.items() if t is not None]
        emit_svg(
            [task.anchor] + [t for _, t in shown],
            [{"label": "anchor", "color": "#7f7f7f", "dash": 4}]
            + [{"label": f"{n} ({optimizer}), cost={history_cost:.3g}"} for (n, _), history_cost in zip(shown, (c_init, c_mid, c_fin))],
            out / "overlay.svg",
            constraints=task.constraints,
            title=f"auto-{task.method.upper()} letter {task.letter}, seed {seed}",
        )
    return report


def _load_encoder(cfg: ExperimentConfig):
    if cfg.metric != "latent":
        return EncoderParams.load_json(cfg.encoder) if cfg.encoder else None
    if cfg.encoder is None:
        raise ValueError("the latent metric needs a trained encoder: pass 'encoder' in the config")
    return EncoderParams.load_json(cfg.encoder)


def _auto_cell(args):
    cfg, seed = args
    encoder = _load_encoder(cfg)
    task = build_task(cfg)
    rep = run_auto(cfg, task, encoder, seed, out=Path(cfg.out) / f"seed-{seed}")
    return rep


def cmd_auto(cfg: ExperimentConfig) -> list[RunReport]:
    out = Path(cfg.out)
    _write_config(cfg, out)
    reports = _run_cells(_auto_cell, [(cfg, s) for s in cfg.seeds])
    rows = [
        (r.seed, r.initial_cost, r.final_cost, r.metrics_final["shape_distortion"] if r.metrics_final else float("nan"), r.constraint_errors.get("max", float("nan")))
        for r in reports
    ]
    (out / "summary.csv").write_text(
        _table_csv(rows, ["seed", "initial_cost", "final_cost", "final_shape_distortion", "max_constraint_error"]),
        encoding="utf-8",
    )
    return reports


COMPARE_RUNS = (("gd-good", "gd", "good"), ("gd-adversarial", "gd", "adversarial"), ("bo", "bo", "adversarial"))


def _compare_cell(args):
    cfg, seed = args
    encoder = _load_encoder(cfg)
    task = build_task(cfg)
    rows = []
    for name, opt, init in COMPARE_RUNS:
        rep = run_auto(cfg, task, encoder, seed, optimizer=opt, init=init, out=Path(cfg.out) / f"seed-{seed}" / name)
        rows.append(
            {
                "seed": seed,
                "run": name,
                "initial_cost": rep.initial_cost,
                "final_cost": rep.final_cost,
                "final_log10_kh": rep.final_theta[0],
                "final_log10_lambda": rep.final_theta[1],
                "final_shape_distortion": rep.metrics_final["shape_distortion"] if rep.metrics_final else float("nan"),
            }
        )
    return rows


def cmd_compare_gd_bo(cfg: ExperimentConfig) -> list[dict]:
    out = Path(cfg.out)
    _write_config(cfg, out)
    rows = [r for cell in _run_cells(_compare_cell, [(cfg, s) for s in cfg.seeds]) for r in cell]
    header = list(rows[0])
    (out / "compare.csv").write_text(_table_csv([[r[h] for h in header] for r in rows], header), encoding="utf-8")
    _json_dump(rows, out / "compare.json")
    return rows
