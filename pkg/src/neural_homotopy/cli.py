"""Command-line entry point: ``neural-homotopy <command> ...``.

Exit codes: 0 success, 1 usage/config error, 2 numeric failure, 3 threshold violation.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation, exact
from .config import RunConfig
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateGradientError,
    InvalidInputError,
    PointCloudError,
    TrainingError,
)
from .field import SirenNetwork, evaluate_chunked, extract_slice, init_from_condition, load_checkpoint, save_checkpoint
from .geometry import Sphere, load_point_cloud, marching_cubes, write_obj
from .optim import FitConfig, TrainConfig, fit_condition, train
from .parallel import set_workers, single_threaded
from .pde import ConstantField, Interpolation, LevelSet, MeanCurvature, TwistField

log = logging.getLogger("neural_homotopy")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_THRESHOLD = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _refuse_existing(path: Path, force: bool):
    if path.exists() and not force:
        raise UsageError(f"{path} already exists; pass --force to overwrite")


def _output_dir(cfg: RunConfig, args) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.has("output.dir"):
        return Path(cfg.get("output.dir"))
    return cfg.base / "runs" / cfg.get("experiment")


def _apply_overrides(cfg: RunConfig, args):
    if getattr(args, "seed", None) is not None:
        cfg.values["seed"] = str(args.seed)
    if getattr(args, "workers", None) is not None:
        cfg.values["workers"] = str(args.workers)
    set_workers(cfg.get_int("workers"))


def _fit_config(cfg: RunConfig, input_widths) -> FitConfig:
    return FitConfig(
        widths=(3, *input_widths),
        omega0=cfg.get_float("net.omega0"),
        epochs=cfg.get_int("fit.epochs"),
        lr=cfg.get_float("fit.lr", cfg.get_float("train.lr")),
        total=cfg.get_int("fit.total"),
        seed=cfg.get_int("seed"),
        weights=cfg.loss_weights(),
    )


def build_train_config(cfg: RunConfig, out_dir: Path | None) -> TrainConfig:
    problem = cfg.problem()
    hidden = cfg.hidden_widths()
    init = cfg.get("net.init")
    condition_net = None
    if init == "condition":
        condition_net = load_checkpoint(cfg.get_path("net.condition"))
    elif init == "fit":
        condition_net = fit_condition(problem.conditions[0].source, _fit_config(cfg, hidden))
        init = "condition"
    decay = cfg.get_float("train.lr_decay", 1.0)
    try:
        return TrainConfig(
            problem=problem,
            widths=(4, *hidden),
            omega0=cfg.get_float("net.omega0"),
            init=init,
            condition_net=condition_net,
            weights=cfg.loss_weights(),
            loss_mode=cfg.get("loss.mode"),
            total=cfg.get_int("sampling.total"),
            split=cfg.get_floats("sampling.split", 3),
            cloud_size=cfg.get_int("sampling.cloud_size"),
            epochs=cfg.get_int("train.epochs"),
            lr=cfg.get_float("train.lr"),
            beta1=cfg.get_float("train.beta1"),
            beta2=cfg.get_float("train.beta2"),
            eps=cfg.get_float("train.eps"),
            lr_decay=decay if decay < 1 else None,
            seed=cfg.get_int("seed"),
            checkpoint_every=cfg.get_int("train.checkpoint_every"),
            output_dir=str(out_dir) if out_dir else None,
        )
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None


# --- commands ---------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    _apply_overrides(cfg, args)
    out = _output_dir(cfg, args)
    _refuse_existing(out / "final.nhf", args.force)
    cfg.values["output.dir"] = str(out.resolve())
    tc = build_train_config(cfg, out)
    net, report = train(tc, progress_every=max(1, tc.epochs // 10))
    # rewrite with the interval so later commands can warn about extrapolation
    a, b = tc.problem.interval
    meta = {**net.metadata, "interval": [a, b], "experiment": cfg.get("experiment")}
    save_checkpoint(SirenNetwork(net.weights, net.biases, net.omega0, meta), out / "final.nhf")
    (out / "resolved.cfg").write_text(cfg.resolved_text(), encoding="utf-8")
    print(f"wrote {out / 'final.nhf'}, {out / 'report.csv'}, {out / 'resolved.cfg'}")
    return EXIT_OK


def cmd_fit_sdf(args) -> int:
    cfg = RunConfig.load(args.config)
    _apply_overrides(cfg, args)
    out = Path(args.out)
    _refuse_existing(out, args.force)
    fc = _fit_config(cfg, cfg.hidden_widths())
    if cfg.has("fit.cloud"):
        net = fit_condition(None, fc, cloud=load_point_cloud(cfg.get_path("fit.cloud")))
    else:
        net = fit_condition(cfg.problem().conditions[0].source, fc)
    save_checkpoint(net, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_init(args) -> int:
    cfg = RunConfig.load(args.config)
    _apply_overrides(cfg, args)
    out = Path(args.out)
    _refuse_existing(out, args.force)
    g = load_checkpoint(args.checkpoint or cfg.get_path("net.condition"))
    f = init_from_condition(g, (4, *cfg.hidden_widths()))
    save_checkpoint(f, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_mesh(args) -> int:
    out = Path(args.out)
    _refuse_existing(out, args.force)
    net = load_checkpoint(args.checkpoint)
    t = args.t
    if net.input_dim == 4:
        interval = net.metadata.get("interval")
        if interval and not interval[0] <= t <= interval[1]:
            log.warning("t=%g lies outside the trained interval [%g, %g]; extrapolating", t, *interval)
        net = extract_slice(net, t)
    mesh = marching_cubes(lambda p: evaluate_chunked(net, p), n=args.resolution)
    if mesh.empty:
        log.warning("zero level set does not cross the domain; writing an empty mesh")
    write_obj(mesh, out)
    print(f"wrote {out} ({len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles)")
    return EXIT_OK


def cmd_slice(args) -> int:
    out = Path(args.out)
    _refuse_existing(out, args.force)
    net = load_checkpoint(args.checkpoint)
    if net.input_dim != 4:
        raise UsageError(f"{args.checkpoint} is not a space-time checkpoint (input dim {net.input_dim})")
    save_checkpoint(extract_slice(net, args.t), out)
    print(f"wrote {out}")
    return EXIT_OK


def _eval_out(cfg, args) -> Path:
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_thresholds(rows, thresholds) -> list[str]:
    violated = []
    for r in rows:
        for stat in ("mean", "max"):
            key = f"{r.constraint}_{stat}"
            if key in thresholds and not getattr(r, stat) <= thresholds[key]:
                violated.append(f"{key}: {getattr(r, stat):.6g} > {thresholds[key]:.6g}")
    return violated


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config)
    _apply_overrides(cfg, args)
    net = load_checkpoint(args.checkpoint)
    out = _eval_out(cfg, args)
    path = out / "constraints.csv"
    _refuse_existing(path, args.force)
    train_seed = net.metadata.get("seed", cfg.get_int("seed"))
    report = evaluation.evaluate_constraints(net, cfg.problem(), cfg.get_int("eval.n"), cfg.get_int("eval.seed"),
                                             train_seed=train_seed)
    report.write_csv(path)
    for r in report.rows:
        print(f"{r.constraint:12s} mean={r.mean:.3g} max={r.max:.3g} n={r.n}")
    return _finish(_check_thresholds(report.rows, cfg.thresholds()), path)


def _finish(violated, path) -> int:
    print(f"wrote {path}")
    if violated:
        print("threshold violations:")
        for v in violated:
            print(f"  {v}")
        return EXIT_THRESHOLD
    return EXIT_OK


def _sphere(src, what):
    if not isinstance(src, Sphere):
        raise ConfigError(f"the {what} oracle needs a sphere condition")
    return src


def cmd_oracle(args) -> int:
    cfg = RunConfig.load(args.config)
    _apply_overrides(cfg, args)
    net = load_checkpoint(args.checkpoint)
    out = _eval_out(cfg, args)
    problem = cfg.problem()
    kind = cfg.get("eval.oracle")
    times = cfg.get_floats("eval.times", default="0")
    th = cfg.thresholds()
    res = cfg.get_int("eval.resolution")
    path = out / f"oracle_{kind}.csv"
    _refuse_existing(path, args.force)
    violated = []
    g0 = problem.conditions[0].source
    if kind == "mcf_sphere":
        if not isinstance(problem.kind, MeanCurvature):
            raise ConfigError("mcf_sphere oracle needs pde.kind = mean_curvature", key="eval.oracle")
        s = _sphere(g0, kind)
        rows = evaluation.mcf_sphere_check(net, problem.kind.alpha, s.radius, times, s.center)
    elif kind == "transport":
        if not isinstance(problem.kind, LevelSet) or not isinstance(problem.kind.field, (ConstantField, TwistField)):
            raise ConfigError("transport oracle needs a constant or twist level-set problem", key="eval.oracle")
        s = _sphere(g0, kind)
        rows = evaluation.transport_check(net, problem.kind.field, exact.sphere_sdf(s.center, s.radius), times, res)
    elif kind == "interpolation":
        if not isinstance(problem.kind, Interpolation):
            raise ConfigError("interpolation oracle needs pde.kind = interpolation", key="eval.oracle")
        s1, s2 = _sphere(g0, kind), _sphere(problem.kind.target, kind)
        values, rows = evaluation.interpolation_check(net, s1.radius, s2.radius, times,
                                                      n=cfg.get_int("eval.n"), seed=cfg.get_int("eval.seed"),
                                                      center=s1.center)
        report = evaluation.EvalReport(rows=values)
        vpath = out / "interpolation_values.csv"
        _refuse_existing(vpath, args.force)
        report.write_csv(vpath)
        if "value_mean" in th:
            violated += [f"{r.constraint} mean: {r.mean:.6g} > {th['value_mean']:.6g}"
                         for r in values if not r.mean <= th["value_mean"]]
    elif kind == "area":
        band = th.get("area_band", 0.01)
        areas, ok = evaluation.area_monotonicity_check(net, times, band=band, strict=True, resolution=res)
        expected = [float("nan")] * len(times)
        if isinstance(problem.kind, MeanCurvature) and isinstance(g0, Sphere):
            r = exact.shrinking_sphere_radius(g0.radius, problem.kind.alpha, sorted(times))
            expected = list(4 * np.pi * r**2)
        rows = [evaluation.OracleRow(t, e, a, abs(a - e)) for t, e, a in zip(sorted(times), expected, areas)]
        if not ok:
            violated.append(f"areas {['%.4f' % a for a in areas]} do not decrease by more than {band:g} x initial")
    else:
        raise ConfigError(f"unknown oracle {kind!r}", key="eval.oracle")
    evaluation.write_oracle_csv(rows, path)
    for r in rows:
        print(f"t={r.time:g} expected={r.expected:.6g} measured={r.measured:.6g} abs_err={r.abs_err:.3g}")
    if "oracle_abs_err" in th:
        violated += [f"t={r.time:g} abs_err: {r.abs_err:.6g} > {th['oracle_abs_err']:.6g}"
                     for r in rows if not r.abs_err <= th["oracle_abs_err"]]
    return _finish(violated, path)


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neural-homotopy", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, checkpoint=False, t=False, out_required=False):
        if config:
            sp.add_argument("--config", required=True, type=Path)
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, type=Path)
        if t:
            sp.add_argument("--t", required=True, type=float)
        sp.add_argument("--out", required=out_required, type=Path)
        sp.add_argument("--force", action="store_true")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--seed", type=int)

    common(sub.add_parser("train", help="train a homotopy network"))
    common(sub.add_parser("fit-sdf", help="fit a 3-input condition network"), out_required=True)
    sp = sub.add_parser("init", help="embed a condition network into a space-time network")
    common(sp, out_required=True)
    sp.add_argument("--checkpoint", type=Path)
    common(sub.add_parser("eval", help="held-out constraint errors"), checkpoint=True)
    common(sub.add_parser("oracle", help="compare against a closed-form solution"), checkpoint=True)
    sp = sub.add_parser("mesh", help="marching-cubes mesh of f(., t) as OBJ")
    common(sp, config=False, checkpoint=True, t=True, out_required=True)
    sp.add_argument("--resolution", type=int, default=128)
    common(sub.add_parser("slice", help="extract the 3-input network f(., t)"),
           config=False, checkpoint=True, t=True, out_required=True)
    return p


COMMANDS = {
    "train": cmd_train,
    "fit-sdf": cmd_fit_sdf,
    "init": cmd_init,
    "eval": cmd_eval,
    "oracle": cmd_oracle,
    "mesh": cmd_mesh,
    "slice": cmd_slice,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s: %(message)s")
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            print("error: --workers must be at least 1", file=sys.stderr)
            return EXIT_USAGE
        set_workers(args.workers)
    try:
        with single_threaded():
            return COMMANDS[args.command](args)
    except (UsageError, ConfigError, CheckpointError, PointCloudError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"error: training aborted at epoch {exc.epoch} ({exc.component}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DegenerateGradientError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
