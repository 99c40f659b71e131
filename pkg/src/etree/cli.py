"""Command-line entry point: ``etree {fit,predict,eval,export-tree,synth-check}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
A JSON file given with ``--config`` supplies defaults using the flag names
(``min-item-ratings`` or ``min_item_ratings``); explicit flags win.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _accel
from .data import FORMATS, filter_columns, load_coordinate, log_transform, holdout_validation
from .errors import ContractError, DataError, EtreeError, NumericError
from .evaluate import BUDGET_GRID, FULL_GRID, METHODS, EvalConfig, EvalRunError, cross_validate, write_trace_csv
from .model import Hyperparams, TreeSpec, load_model, save_model
from .solver import etree_fit
from .synth import SYNTH_MU, SynthSpec, synth_check
from .tree import export, extract_hierarchy

logger = logging.getLogger("etree")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Shows defaults for every flag, except unset ones (``None``)."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.default is None or action.default is argparse.SUPPRESS or "%(default)" in text:
            return text
        if action.option_strings or action.nargs in (argparse.OPTIONAL, argparse.ZERO_OR_MORE):
            text += " (default: %(default)s)"
        return text.strip()


def _floats(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


def _layer_list(text):
    """``"40,10;10"`` -> ``[(40, 10), (10,)]``."""
    return [tuple(_ints(part)) for part in str(text).split(";") if part.strip()]


def _clip(text):
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("expected LO,HI")
    return tuple(vals)


def _common(seed_default=0):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON file with default values for any flag")
    p.add_argument("--seed", type=int, default=seed_default, help="random seed")
    p.add_argument("--workers", type=int, default=None,
                   help="kernel threads; unset uses NUMBA_NUM_THREADS")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                   help="logging verbosity")
    return p


def _data_args(p, required=True):
    p.add_argument("--data", type=Path, default=None, help="input matrix file" + (" (required)" if required else ""))
    p.add_argument("--format", dest="data_format", default="movielens", choices=FORMATS, help="input file format")
    p.add_argument("--min-item-ratings", type=int, default=10,
                   help="drop columns with fewer observations (0 keeps all)")
    p.add_argument("--log-transform", action="store_true", help="replace each value v by ln(v + 1)")


def _solver_args(p, mu=0.0, rank=None, layers_required=True):
    p.add_argument("--rank", type=int, default=rank, help="latent dimension R" + ("" if rank else " (required)"))
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="ridge weight on A")
    p.add_argument("--mu", type=float, default=mu, help="tree weight")
    p.add_argument("--eta", type=float, default=1000.0, help="slack coupling weight")
    p.add_argument("--admm-iters", type=int, default=5, help="ADMM iteration cap K")
    p.add_argument("--tree-iters", type=int, default=5, help="tree-loop passes T")
    p.add_argument("--eps", type=float, default=1e-4, help="ADMM residual threshold")
    p.add_argument("--max-epochs", type=int, default=1000, help="outer epoch cap")
    p.add_argument("--init-epochs", type=int, default=200, help="NMF warm-up epochs")
    p.add_argument("--tol", type=float, default=1e-6, help="relative objective change for stopping")
    p.add_argument("--patience", type=int, default=10, help="early-stopping patience (epochs)")


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = _Parser(prog="etree", description="Tree-structured nonnegative embeddings.", formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit", parents=[_common()], formatter_class=fmt, help="train a model and write a checkpoint")
    _data_args(p)
    _solver_args(p)
    p.add_argument("--layers", default=None,
                   help="comma-separated layer sizes M1,...,MQ; M1 may be given as 0 to use the column count (required)")
    p.add_argument("--val-fraction", type=float, default=0.0,
                   help="holdout fraction for early stopping (0 disables)")
    p.add_argument("--out", type=Path, default=None, help="checkpoint path (required)")
    p.add_argument("--trace", type=Path, default=None, help="write the objective trace CSV here")

    p = sub.add_parser("predict", parents=[_common()], formatter_class=fmt, help="predict entries from a checkpoint")
    p.add_argument("--model", type=Path, default=None, help="checkpoint (required)")
    p.add_argument("--pairs", type=Path, default=None, help="CSV with header i,j (0-based model indices)")
    _data_args(p, required=False)
    p.add_argument("--clip", type=_clip, default=None, help="clip predictions to LO,HI")
    p.add_argument("--out", type=Path, default=None, help="output CSV (default: stdout)")

    p = sub.add_parser("eval", parents=[_common()], formatter_class=fmt, help="cross-validated RMSE/MAE")
    _data_args(p)
    p.add_argument("--method", default="etree", choices=METHODS, help="model to evaluate")
    p.add_argument("--folds", type=int, default=5, help="cross-validation folds")
    p.add_argument("--repeats", type=int, default=20, help="trainings per fold")
    p.add_argument("--val-fraction", type=float, default=0.1, help="validation holdout fraction of each training part")
    p.add_argument("--budget", default="small", choices=["small", "full"],
                   help="base grid; the --grid-* flags override single axes")
    p.add_argument("--grid-rank", type=_ints, default=None, help="comma-separated ranks")
    p.add_argument("--grid-lambda", type=_floats, default=None, help="comma-separated ridge weights")
    p.add_argument("--grid-mu", type=_floats, default=None, help="comma-separated tree weights")
    p.add_argument("--grid-layers", type=_layer_list, default=None,
                   help="upper layer shapes, e.g. '40,10;10'")
    p.add_argument("--eta", type=float, default=1000.0, help="slack coupling weight")
    p.add_argument("--admm-iters", type=int, default=5, help="ADMM iteration cap K")
    p.add_argument("--tree-iters", type=int, default=5, help="tree-loop passes T")
    p.add_argument("--eps", type=float, default=1e-4, help="ADMM residual threshold")
    p.add_argument("--max-epochs", type=int, default=1000, help="outer epoch cap")
    p.add_argument("--init-epochs", type=int, default=200, help="NMF warm-up epochs")
    p.add_argument("--patience", type=int, default=10, help="early-stopping patience (epochs)")
    p.add_argument("--clip", type=_clip, default=None, help="clip predictions to LO,HI")
    p.add_argument("--out", type=Path, default=None, help="JSON report (default: stdout)")
    p.add_argument("--traces", type=Path, default=None, help="write all objective traces to this CSV")
    p.add_argument("--timings", action="store_true", help="include wall-clock seconds in the report")

    p = sub.add_parser("export-tree", parents=[_common()], formatter_class=fmt, help="write the learned hierarchy")
    p.add_argument("--model", type=Path, default=None, help="checkpoint (required)")
    p.add_argument("--format", dest="tree_format", default="json", choices=["json", "dot"],
                   help="output format")
    p.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")

    p = sub.add_parser("synth-check", parents=[_common()], formatter_class=fmt,
                       help="recovery on planted synthetic trees")
    p.add_argument("--spec", default="default", help="'default' or a JSON file with SynthSpec fields")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds, run as 0..n-1 offset by --seed")
    p.add_argument("--N", type=int, default=None, help="override rows")
    p.add_argument("--layers", default=None, help="override layer sizes")
    p.add_argument("--R", type=int, default=None, help="override planted rank")
    p.add_argument("--noise", type=float, default=None, help="override noise std")
    p.add_argument("--rate", type=float, default=None, help="override observation rate")
    _solver_args(p, mu=SYNTH_MU, rank=None)
    p.add_argument("--out", type=Path, default=None, help="JSON report (default: stdout)")
    return parser


def _apply_config(parser, argv):
    """Parse twice: config values become defaults, then command-line flags override them."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    if not args.config.is_file():
        raise UsageError(f"config file not found: {args.config}")
    try:
        conf = json.loads(args.config.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise UsageError(f"config {args.config}: {e}") from None
    if not isinstance(conf, dict):
        raise UsageError("config file must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    by_flag = {}
    for action in sub._actions:
        for opt in action.option_strings:
            by_flag[opt.lstrip("-").replace("-", "_")] = action
    defaults = {}
    for key, value in conf.items():
        action = by_flag.get(key.replace("-", "_"))
        if action is None or action.dest in ("config", "help"):
            raise UsageError(f"config key {key!r} is not a flag of '{args.command}'")
        if action.type is not None and isinstance(value, str):
            value = action.type(value)
        elif action.type in (_ints, _floats) and isinstance(value, (int, float)):
            value = [value]
        elif action.type is _layer_list and isinstance(value, list):
            value = [tuple(v) for v in value]
        elif action.type is _clip and isinstance(value, list):
            value = tuple(float(v) for v in value)
        elif action.type is Path and value is not None:
            value = Path(value)
        defaults[action.dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _need(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise UsageError(f"{args.command}: --{n.replace('_', '-')} is required")


def _check_input(path):
    if not Path(path).is_file():
        raise DataError(f"input file not found: {path}")


def _check_output(path):
    if path is not None and not Path(path).parent.exists():
        raise DataError(f"output directory does not exist: {Path(path).parent}")


def _load(args):
    _check_input(args.data)
    X = load_coordinate(args.data, args.data_format)
    if args.min_item_ratings:
        X = filter_columns(X, args.min_item_ratings)
    if args.log_transform:
        X = log_transform(X)
    logger.info("loaded %s: %d x %d, %d entries", args.data, X.n_rows, X.n_cols, X.nnz)
    return X


def _hyper(args, seed) -> Hyperparams:
    return Hyperparams(
        rank=args.rank, lam=args.lam, mu=args.mu, eta=args.eta, admm_iters=args.admm_iters,
        tree_iters=args.tree_iters, eps=args.eps, max_epochs=args.max_epochs, tol=args.tol,
        patience=args.patience, init_epochs=args.init_epochs, seed=seed,
    )


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_fit(args):
    _need(args, "data", "rank", "layers", "out")
    _check_output(args.out)
    _check_output(args.trace)
    X = _load(args)
    sizes = _ints(args.layers)
    if sizes and sizes[0] == 0:
        sizes[0] = X.n_cols
    tree = TreeSpec(tuple(sizes))
    if tree.layer_sizes[0] != X.n_cols:
        raise ContractError(f"--layers starts with {tree.layer_sizes[0]} but the data has {X.n_cols} columns")
    hp = _hyper(args, args.seed)
    fit, val = (X, None)
    if args.val_fraction:
        fit, val = holdout_validation(X, args.val_fraction, args.seed)
    model = etree_fit(fit, hp, tree, validation=val)
    save_model(model, args.out, {"data_shape": [X.n_rows, X.n_cols], "train_entries": int(fit.nnz)})
    if args.trace is not None:
        write_trace_csv(model.trace, args.trace)
    logger.info("wrote %s after %d epochs", args.out, len(model.trace))
    return EXIT_OK


def cmd_predict(args):
    _need(args, "model")
    if (args.pairs is None) == (args.data is None):
        raise UsageError("predict: give exactly one of --pairs or --data")
    _check_input(args.model)
    _check_output(args.out)
    model = load_model(args.model)
    if args.pairs is not None:
        _check_input(args.pairs)
        i, j = _read_pairs(args.pairs)
        truth = None
    else:
        X = _load(args)
        i, j, truth = X.rows, X.cols, X.vals
    pred = model.predict(i, j, clip=args.clip) if len(i) else np.empty(0)
    pred = np.atleast_1d(pred)
    lines = ["i,j,prediction" + (",value" if truth is not None else "")]
    for k in range(len(i)):
        row = f"{i[k]},{j[k]},{float(pred[k])!r}"
        if truth is not None:
            row += f",{float(truth[k])!r}"
        lines.append(row)
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _read_pairs(path):
    i, j = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["i", "j"]:
            raise DataError("pairs file must start with the header 'i,j'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                i.append(int(row[0]))
                j.append(int(row[1]))
            except (ValueError, IndexError):
                raise DataError(f"expected two integers, got {row!r}", line=lineno) from None
    return np.asarray(i, dtype=np.int64), np.asarray(j, dtype=np.int64)


def cmd_eval(args):
    _need(args, "data")
    _check_output(args.out)
    _check_output(args.traces)
    X = _load(args)
    grid = dict(FULL_GRID if args.budget == "full" else BUDGET_GRID)
    for key, flag in (("rank", "grid_rank"), ("lam", "grid_lambda"), ("mu", "grid_mu"), ("layers", "grid_layers")):
        if getattr(args, flag) is not None:
            grid[key] = getattr(args, flag)
    cfg = EvalConfig(
        folds=args.folds, repeats=args.repeats, val_fraction=args.val_fraction, grid=grid,
        patience=args.patience, max_epochs=args.max_epochs, init_epochs=args.init_epochs,
        clip=args.clip, seed=args.seed, eta=args.eta, admm_iters=args.admm_iters,
        tree_iters=args.tree_iters, eps=args.eps,
    )
    report = cross_validate(
        X, args.method, cfg,
        progress=lambda r: logger.info("fold %d repeat %d rmse=%.4f mae=%.4f", r.fold, r.repeat, r.rmse, r.mae),
    )
    _emit(report.to_json(timings=args.timings) + "\n", args.out)
    if args.traces is not None:
        report.write_traces(args.traces)
    return EXIT_OK


def cmd_export_tree(args):
    _need(args, "model")
    _check_input(args.model)
    _check_output(args.out)
    h = extract_hierarchy(load_model(args.model))
    _emit(export(h, args.tree_format), args.out)
    return EXIT_OK


def cmd_synth_check(args):
    _check_output(args.out)
    if args.spec == "default":
        base = {}
    else:
        _check_input(args.spec)
        try:
            base = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"spec {args.spec}: {e}") from None
    for key, val in (("N", args.N), ("R", args.R), ("noise_std", args.noise), ("observation_rate", args.rate)):
        if val is not None:
            base[key] = val
    if args.layers is not None:
        base["layer_sizes"] = _ints(args.layers)
    if "layer_sizes" in base:
        base["layer_sizes"] = tuple(base["layer_sizes"])
    try:
        spec = SynthSpec(**base)
    except TypeError as e:
        raise UsageError(f"bad synthetic spec: {e}") from None
    if args.rank is None:
        args.rank = spec.R
    hp = _hyper(args, args.seed)
    report = synth_check(spec, hp, range(args.seed, args.seed + args.seeds))
    _emit(json.dumps(report, indent=2) + "\n", args.out)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "export-tree": cmd_export_tree,
    "synth-check": cmd_synth_check,
}


def _exit_code(err) -> int:
    if isinstance(err, EvalRunError):
        err = err.cause
    if isinstance(err, NumericError):
        return EXIT_DIVERGED
    if isinstance(err, (DataError, OSError)):
        return EXIT_DATA
    return EXIT_USAGE


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
        _accel.set_workers(args.workers)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (EtreeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return _exit_code(e)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
