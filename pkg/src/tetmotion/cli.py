"""Command-line entry point.

Exit codes: 0 success, 2 usage or config error, 3 numeric divergence,
4 I/O error.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from tetmotion import io
from tetmotion.config import THREADS_ENV, RunConfig
from tetmotion.diff.checkpoint import save_checkpoint
from tetmotion.diff.optim import adam, sgd
from tetmotion.errors import FitDiverged, InvalidArgument, NumericError, TetMotionError
from tetmotion.eval import evaluate_run
from tetmotion.fit import (LossWeights, canonical_grid, fit_motion, fit_shape,
                           predict_surfaces)
from tetmotion.march import marching_tetrahedra
from tetmotion.observe import (AMPLITUDE_LIMITS, AnalyticMotion, SliceSpec, generate_sequence,
                               load_dataset, observe_sequence, save_dataset)
from tetmotion.tetgrid import build_uniform_grid, set_sdf_from_field, sphere_field

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--threads", type=int,
                   help=f"worker threads, 0 = auto (default from ${THREADS_ENV}, else 0)")
    p.add_argument("--out", help="output directory")


def _optim_flags(p):
    p.add_argument("--optimizer", choices=["sgd-momentum", "adam"],
                   help="optimizer (default sgd-momentum for fit-shape, adam for fit-motion)")
    p.add_argument("--lr", type=float, help="learning rate (default 0.01 for sgd-momentum, 1e-3 for adam)")
    p.add_argument("--momentum", type=float, help="SGD momentum (default 0.99)")
    p.add_argument("--weight-decay", dest="weight_decay", type=float, help="weight decay")
    p.add_argument("--iters", type=int, help="optimizer steps (default 300 for fit-shape, 150 for fit-motion)")
    p.add_argument("--samples", type=int, help="surface samples per chamfer evaluation (default 10000 / 5000)")
    p.add_argument("--non-squared", dest="squared", action="store_const", const=False,
                   help="use unsquared distances in the chamfer loss")
    for name, default in (("cd", 1.0), ("sdf", 0.1), ("vol", 1.0), ("reg", 1e-2)):
        p.add_argument(f"--w-{name}", dest=f"w_{name}", type=float,
                       help=f"loss weight lambda_{name} (default {default})")


def build_parser():
    parser = _Parser(prog="tetmotion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic deforming sequence")
    _common(p)
    p.add_argument("--base", choices=["icosphere", "box", "capsule"], help="canonical shape")
    p.add_argument("--motion", choices=sorted(AMPLITUDE_LIMITS), help="analytic motion")
    p.add_argument("--amp", type=float, help="motion amplitude")
    p.add_argument("--frames", type=int, help="number of frames T+1 (default 25)")
    p.add_argument("--k", type=int, help="slices written to obs_*.csv (default 3)")
    p.add_argument("--placement", choices=["central", "strided", "explicit"], help="slice placement")
    p.add_argument("--offsets", type=float, nargs="+", help="plane z offsets for explicit placement")

    p = sub.add_parser("fit-shape", help="fit grid offsets and SDF to a target mesh")
    _common(p)
    _optim_flags(p)
    p.add_argument("--target", help="target OBJ")
    p.add_argument("--res", dest="resolution", type=int, help="grid cells per axis (default 16)")
    p.add_argument("--init-radius", dest="init_radius", type=float,
                   help="initial sphere SDF radius (default 0.3)")

    p = sub.add_parser("fit-motion", help="fit a deformation model to a sequence")
    _common(p)
    _optim_flags(p)
    p.add_argument("--dataset", help="dataset directory written by generate")
    p.add_argument("--grid", help="canonical grid file (default: exact SDF of frame 0)")
    p.add_argument("--res", dest="resolution", type=int, help="canonical grid resolution")
    p.add_argument("--mode", choices=["full", "slices", "volume"], help="observation type")
    p.add_argument("--k", type=int, help="number of slices")
    p.add_argument("--placement", choices=["central", "strided", "explicit"], help="slice placement")
    p.add_argument("--offsets", type=float, nargs="+", help="plane z offsets for explicit placement")
    p.add_argument("--model", choices=["free-offsets", "mlp", "gru"], help="deformation model")
    p.add_argument("--steps", type=int, help="refinement steps S (default 3 for full meshes, 2 otherwise)")
    p.add_argument("--latent-dim", dest="latent_dim", type=int, help="latent code size")
    p.add_argument("--hidden", type=int, help="hidden width")
    p.add_argument("--reextract", action="store_const", const=True,
                   help="move the whole grid and re-run extraction for exported frames")
    p.add_argument("--eval-seed", dest="eval_seed", type=int, help="seed for metric sampling")
    p.add_argument("--eval-samples", dest="eval_samples", type=int, help="samples per surface")

    p = sub.add_parser("eval", help="score a results directory against a dataset")
    _common(p)
    p.add_argument("--results", help="results directory")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--eval-seed", dest="eval_seed", type=int, help="seed for metric sampling")
    p.add_argument("--eval-samples", dest="eval_samples", type=int, help="samples per surface")

    p = sub.add_parser("export", help="extract a grid's surface to OBJ")
    _common(p)
    p.add_argument("--grid", help="grid container file")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _common(p)
    return parser


_NON_CONFIG = {"command", "config"}


def resolve_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    if overrides.get("threads") is None and not (args.config and "threads" in json.loads(
            Path(args.config).read_text())):
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                overrides["threads"] = int(env)
            except ValueError:
                raise InvalidArgument(f"${THREADS_ENV} must be an integer, got {env!r}") from None
    if overrides.get("offsets") is not None:
        overrides["offsets"] = list(overrides["offsets"])
    return cfg.merged(overrides)


def _require(cfg, *names):
    for name in names:
        if getattr(cfg, name) is None:
            raise InvalidArgument(f"--{name.replace('_', '-')} is required")


def _optimizer(cfg, default_kind):
    kind = cfg.optimizer or default_kind
    if kind == "adam":
        return adam(lr=cfg.lr if cfg.lr is not None else 1e-3,
                    weight_decay=cfg.weight_decay if cfg.weight_decay is not None else 0.0)
    return sgd(lr=cfg.lr if cfg.lr is not None else 0.01, momentum=cfg.momentum,
               weight_decay=cfg.weight_decay if cfg.weight_decay is not None else 3e-5)


def _weights(cfg):
    return LossWeights(cfg.w_cd, cfg.w_sdf, cfg.w_vol, cfg.w_reg)


def _write_trace(path, trace):
    names = list(trace[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in trace:
            w.writerow([repr(float(row[n])) if isinstance(row[n], float) else row[n] for n in names])


def _slice_spec(cfg):
    return SliceSpec(cfg.k, cfg.placement, tuple(cfg.offsets))


def cmd_generate(cfg):
    _require(cfg, "out")
    if cfg.frames < 1:
        raise InvalidArgument(f"--frames must be >= 1, got {cfg.frames}")
    motion = AnalyticMotion(cfg.motion, cfg.amp, max(cfg.frames - 1, 1))
    ds = generate_sequence(cfg.base, motion, cfg.frames, cfg.seed)
    path = save_dataset(cfg.out, ds, _slice_spec(cfg))
    print(path)
    return EXIT_OK


def cmd_fit_shape(cfg):
    _require(cfg, "target", "out")
    if not Path(cfg.target).is_file():
        raise InvalidArgument(f"target {cfg.target} does not exist")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    target = io.read_obj(cfg.target)
    grid = set_sdf_from_field(build_uniform_grid(cfg.resolution), sphere_field(cfg.init_radius))
    result = fit_shape(grid, target, _weights(cfg), cfg.iters if cfg.iters is not None else 300,
                       _optimizer(cfg, "sgd-momentum"), cfg.samples or 10_000, cfg.seed, cfg.squared)
    io.save_grid(out / "grid.tmcf", result.grid)
    _write_trace(out / "loss.csv", result.trace)
    io.write_obj(out / "surface.obj", marching_tetrahedra(result.grid))
    print(f"best loss {result.best_loss:.6g} at iteration {result.best_iteration}")
    return EXIT_OK


def _observations(cfg, ds):
    if cfg.mode == "slices":
        return observe_sequence(ds, _slice_spec(cfg), cfg.seed)
    return observe_sequence(ds, cfg.mode, cfg.seed)


def cmd_fit_motion(cfg):
    _require(cfg, "dataset", "out")
    if not (Path(cfg.dataset) / "manifest.json").is_file():
        raise InvalidArgument(f"no dataset manifest in {cfg.dataset}")
    ds = load_dataset(cfg.dataset)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    canonical = io.load_grid(cfg.grid) if cfg.grid else canonical_grid(ds.canonical, cfg.resolution)
    steps = cfg.steps or (3 if cfg.mode == "full" else 2)
    result = fit_motion(canonical, _observations(cfg, ds), cfg.model, _weights(cfg),
                        cfg.iters if cfg.iters is not None else 150, _optimizer(cfg, "adam"),
                        steps, cfg.latent_dim, cfg.hidden, cfg.samples or 5_000, cfg.seed,
                        cfg.thread_count(), cfg.squared, cfg.reextract)
    io.save_grid(out / "canonical.tmcf", canonical)
    save_checkpoint(out / "checkpoint.tmcf", result.model.params, result.optimizer,
                    result.model.metadata())
    _write_trace(out / "loss.csv", result.trace)
    preds = predict_surfaces(result.model, result.setup)
    io.write_obj(out / "reference.obj", result.setup.surface)
    for t, mesh in enumerate(preds):
        io.write_obj(out / f"pred_{t:03d}.obj", mesh)
    report = evaluate_run(preds, result.setup.surface.positions, ds, cfg.eval_seed,
                          cfg.eval_samples, json.loads(cfg.to_json()))
    report.write(out)
    print(report.summary())
    return EXIT_OK


def cmd_eval(cfg):
    _require(cfg, "results", "dataset")
    results = Path(cfg.results)
    if not (Path(cfg.dataset) / "manifest.json").is_file():
        raise InvalidArgument(f"no dataset manifest in {cfg.dataset}")
    if not (results / "reference.obj").is_file():
        raise InvalidArgument(f"no reference.obj in {results}")
    ds = load_dataset(cfg.dataset)
    preds = [io.read_obj(results / f"pred_{t:03d}.obj") for t in range(len(ds))
             if (results / f"pred_{t:03d}.obj").is_file()]
    if len(preds) != len(ds) or (results / f"pred_{len(ds):03d}.obj").exists():
        raise InvalidArgument(f"results hold {len(preds)} frames, dataset has {len(ds)}")
    reference = io.read_obj(results / "reference.obj").positions
    report = evaluate_run(preds, reference, ds, cfg.eval_seed, cfg.eval_samples,
                          json.loads(cfg.to_json()))
    report.write(Path(cfg.out) if cfg.out else results)
    print(report.summary())
    return EXIT_OK


def cmd_export(cfg):
    _require(cfg, "grid", "out")
    grid = io.load_grid(cfg.grid)
    out = Path(cfg.out)
    if out.suffix.lower() != ".obj":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "surface.obj"
    io.write_obj(out, marching_tetrahedra(grid))
    print(out)
    return EXIT_OK


def cmd_gradcheck(cfg):
    from tetmotion.gradcheck import run_all
    results = run_all(cfg.seed)
    ok = True
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<14} max rel err {r.max_rel_error:.3e}  (tol {r.tolerance:g}, "
              f"{r.entries} entries, {r.seconds:.2f}s)  {status}")
        ok &= r.passed
    print(f"max relative error {max(r.max_rel_error for r in results):.3e}")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "generate": cmd_generate,
    "fit-shape": cmd_fit_shape,
    "fit-motion": cmd_fit_motion,
    "eval": cmd_eval,
    "export": cmd_export,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitDiverged, NumericError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidArgument, TetMotionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
