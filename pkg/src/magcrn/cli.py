"""Command line entry point: synth | train | eval | ablate | gradcheck | params."""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import numerics as nx
from .data import PreparedData, Scaler, SynthSpec, load_dataset, prepare, synth_generate, write_series
from .model import ABLATIONS, VARIANTS, ModelConfig, count_params, forward, init, param_breakdown, tiny_config
from .nawg import NormContext
from .trainer import TrainConfig, evaluate, metrics_report, predict, train, win_point


@dataclass
class RunConfig:
    data: str = ""
    out: str = "runs/default"
    nodes: int = 0  # 0 -> taken from the data
    embed_dim: int = 8
    hidden_dim: int = 64
    input_dim: int = 1
    horizon_in: int = 12
    horizon_out: int = 12
    filter_len: int = 9
    heads: int = 4
    attn_layers: int = 2
    ffn_dim: int = 0
    gcrn_layers: int = 2
    variant: str = "full"
    precision: str = "float64"
    theta_source: str = "candidate"
    output_proj: bool = True
    norm_mode: str = "batch"
    norm_momentum: float = 0.1
    self_loops: bool = False
    per_horizon_head: bool = False
    ratios: str = "6:2:2"
    per_node_scaler: bool = False
    batch_size: int = 64
    lr: float = 0.003
    epochs: int = 100
    patience: int = 15
    grad_clip: float = 0.0
    drop_last: bool = True
    seed: int = 0

    # ------------------------------------------------------------ text form
    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    @classmethod
    def parse(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        values = asdict(base or cls())
        types = {f.name: f.type for f in fields(cls)}
        errors = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                errors.append(f"line {lineno}: expected key=value, got {line!r}")
                continue
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in types:
                errors.append(f"line {lineno}: unknown key {key!r}")
                continue
            try:
                values[key] = _coerce(raw, types[key])
            except ValueError as exc:
                errors.append(f"line {lineno}: {key}: {exc}")
        if errors:
            raise ValueError("\n".join(errors))
        return cls(**values)

    # ------------------------------------------------------------ derived configs
    def ratio_tuple(self) -> tuple[float, ...]:
        return tuple(float(x) for x in self.ratios.split(":"))

    def model_config(self, num_nodes: int | None = None, **overrides) -> ModelConfig:
        kw = {f.name: getattr(self, f.name) for f in fields(ModelConfig) if hasattr(self, f.name)}
        kw["num_nodes"] = num_nodes or self.nodes
        kw.update(overrides)
        return ModelConfig(**kw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.batch_size, self.lr, self.epochs, self.patience, self.seed, self.grad_clip, self.drop_last)

    def errors(self, need_data: bool = True) -> list[str]:
        errs = []
        if need_data and not self.data:
            errs.append("data: a series file or manifest is required")
        elif need_data and not Path(self.data).exists():
            errs.append(f"data: {self.data} does not exist")
        try:
            r = self.ratio_tuple()
            if len(r) != 3 or min(r) <= 0:
                errs.append(f"ratios must be three positive numbers, got {self.ratios!r}")
        except ValueError:
            errs.append(f"ratios must look like 6:2:2, got {self.ratios!r}")
        for name in ("batch_size", "epochs"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.patience < 0:
            errs.append(f"patience must be >= 0, got {self.patience}")
        if self.lr <= 0:
            errs.append(f"lr must be > 0, got {self.lr}")
        if self.nodes < 0:
            errs.append(f"nodes must be >= 0, got {self.nodes}")
        errs += [e for e in self.model_config(num_nodes=max(self.nodes, 1)).errors()]
        return errs


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(raw: str, typ):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw


# ---------------------------------------------------------------- argument plumbing

def _add_run_flags(p: argparse.ArgumentParser, skip=()) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    for f in fields(RunConfig):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        typ = f.type if isinstance(f.type, str) else f.type.__name__
        p.add_argument(flag, dest=f.name, default=None, metavar=typ.upper(),
                       help=f"(default: {_fmt(f.default)})")


def _run_config(args, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    if getattr(args, "config", None):
        cfg = RunConfig.parse(Path(args.config).read_text(), cfg)
    types = {f.name: f.type for f in fields(RunConfig)}
    overrides = {}
    errors = []
    for name, typ in types.items():
        raw = getattr(args, name, None)
        if raw is None:
            continue
        try:
            overrides[name] = _coerce(str(raw), typ)
        except ValueError as exc:
            errors.append(f"--{name.replace('_', '-')}: {exc}")
    if errors:
        raise ValueError("\n".join(errors))
    return RunConfig(**{**asdict(cfg), **overrides})


def _fail(errors: list[str]) -> int:
    print("configuration errors:", file=sys.stderr)
    for e in errors:
        print(f"  - {e}", file=sys.stderr)
    return 2


def _prepare(rc: RunConfig) -> PreparedData:
    raw = load_dataset(rc.data)
    return prepare(raw, rc.horizon_in, rc.horizon_out, rc.ratio_tuple(), rc.per_node_scaler)


def _scaler_arrays(s: Scaler) -> dict[str, np.ndarray]:
    mean, std = s.arrays()
    return {"mean": mean, "std": std}


def _train_one(rc: RunConfig, data: PreparedData, out: Path, variant: str | None = None, quiet: bool = False):
    out.mkdir(parents=True, exist_ok=True)
    if variant:
        rc = RunConfig(**{**asdict(rc), "variant": variant})
    cfg = rc.model_config(num_nodes=data.num_nodes)
    (out / "config.txt").write_text(rc.to_text())
    log_lines = ["epoch\ttrain_loss\tval_mae\tbest"]
    start = time.time()

    def on_epoch(epoch, loss, val, best):
        log_lines.append(f"{epoch}\t{loss!r}\t{val!r}\t{int(best)}")
        if not quiet:
            print(f"[{cfg.variant}] epoch {epoch:3d}  train_loss {loss:.4f}  val_mae {val:.4f}"
                  f"{'  *' if best else ''}  ({time.time() - start:.0f}s)", flush=True)

    result = train(cfg, data, rc.train_config(), on_epoch)
    (out / "train_log.tsv").write_text("\n".join(log_lines) + "\n")
    h = result.history
    ck = ckpt_io.Checkpoint(
        # the output location is not part of the run's identity
        config={"run": {k: v for k, v in asdict(rc).items() if k != "out"}, "model": cfg.to_dict()},
        params=result.params,
        buffers=result.buffers,
        scaler=_scaler_arrays(data.scaler),
        meta={"best_epoch": h.best_epoch, "best_val_mae": h.best_val_mae,
              "epochs_run": h.epochs_run, "stop_reason": h.stop_reason},
    )
    ckpt_io.save(out / "checkpoint.ckpt", ck)
    return result


def _load_model(path):
    ck = ckpt_io.load(path)
    cfg = ModelConfig.from_dict(ck.config["model"])
    params = {k: v.astype(cfg.dtype) for k, v in ck.params.items()}
    scaler = Scaler.from_arrays(ck.scaler["mean"], ck.scaler["std"])
    return ck, cfg, params, scaler


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    series = synth_generate(SynthSpec(nodes=args.nodes, length=args.steps, seed=args.seed,
                                      noise=args.noise, mixing=args.mixing))
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_series(args.out, series)
    except OSError as exc:
        print(f"cannot write {args.out}: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.steps}x{args.nodes} series to {args.out} (seed={args.seed})")
    return 0


def cmd_train(args) -> int:
    rc = _run_config(args)
    errs = rc.errors()
    if errs:
        return _fail(errs)
    data = _prepare(rc)
    out = Path(rc.out)
    result = _train_one(rc, data, out, quiet=args.quiet)
    h = result.history
    print(f"best epoch {h.best_epoch}  val_mae {h.best_val_mae!r}  ({h.stop_reason})")
    print(f"checkpoint: {out / 'checkpoint.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    ck, cfg, params, scaler = _load_model(args.checkpoint)
    rc = RunConfig(**ck.config["run"])
    if args.data:
        rc = RunConfig(**{**asdict(rc), "data": args.data})
    errs = rc.errors()
    if errs:
        return _fail(errs)
    data = _prepare(rc)
    x, y = data.split_arrays(args.split)
    pred = predict(params, ck.buffers, cfg, x, scaler)
    report = metrics_report(pred, y)
    text = report.to_text(per_horizon=args.per_horizon)
    lines = [text.rstrip("\n")]
    if args.compare:
        ck_b, cfg_b, params_b, scaler_b = _load_model(args.compare)
        pred_b = predict(params_b, ck_b.buffers, cfg_b, x, scaler_b)
        wp = win_point(pred, pred_b, y)
        lines.append("")
        lines.append("win_point,count_a,count_b,ties,win_percentage")
        lines.append(f"{args.split},{wp.count_a},{wp.count_b},{wp.ties},{wp.win_percentage!r}")
    out_text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(out_text)
    print(out_text, end="")
    return 0


ABLATION_COLUMNS = (("no_nawg", "w/o NAWG"), ("no_nmpl", "w/o NMPL"), ("query", "Query"),
                    ("key", "Key"), ("full", "Default"))


def cmd_ablate(args) -> int:
    rc = _run_config(args)
    errs = rc.errors()
    if errs:
        return _fail(errs)
    data = _prepare(rc)
    out = Path(rc.out)
    rows = {}
    for variant, _ in ABLATION_COLUMNS:
        res = _train_one(rc, data, out / variant, variant=variant, quiet=args.quiet)
        test = evaluate(res.params, res.buffers, res.config, data.x_test, data.y_test, data.scaler)
        rows[variant] = (res.history, test)
        print(f"[{variant}] best val_mae {res.history.best_val_mae:.4f} at epoch "
              f"{res.history.best_epoch} ({res.history.stop_reason})", flush=True)
    report = ablation_table(rows)
    (out / "ablation.csv").write_text(report)
    print(report, end="")
    return 0


def ablation_table(rows) -> str:
    """Metric rows x variant columns, ablations first and the full model last."""
    header = "metric," + ",".join(label for _, label in ABLATION_COLUMNS)
    lines = [header]

    def cell(v):
        return "NA" if v is None else f"{v:.6f}"

    for metric in ("mae", "mape", "rmse"):
        vals = [getattr(rows[v][1].overall, metric) for v, _ in ABLATION_COLUMNS]
        lines.append(f"test_{metric}," + ",".join(cell(x) for x in vals))
    lines.append("val_mae," + ",".join(cell(rows[v][0].best_val_mae) for v, _ in ABLATION_COLUMNS))
    lines.append("best_epoch," + ",".join(str(rows[v][0].best_epoch) for v, _ in ABLATION_COLUMNS))
    return "\n".join(lines) + "\n"


def gradcheck(cfg: ModelConfig, batch: int = 2, seed: int = 0, h: float = 1e-5, fault: bool = False):
    """Per-tensor max relative error between tape gradients and central differences."""
    params = init(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, cfg.horizon_in, cfg.num_nodes, cfg.input_dim))
    y = rng.normal(size=(batch, cfg.horizon_out, cfg.num_nodes))

    def loss_of(p):
        return nx.mean(nx.tabs(forward(p, x, cfg, NormContext(training=True, mode=cfg.norm_mode)) - y))

    leaves = nx.leaves(params)
    analytic = nx.gradients(loss_of(leaves), leaves)
    if fault:
        name = sorted(analytic)[0]
        analytic[name] = analytic[name] * 1.01 + 1e-3
    numeric = nx.finite_diff_gradient(lambda p: float(loss_of(p).data), params, h)
    return {k: (params[k].shape, nx.relative_error(analytic[k], numeric[k])) for k in params}


def cmd_gradcheck(args) -> int:
    overrides = {k: getattr(args, k) for k in ("num_nodes", "embed_dim", "hidden_dim", "heads",
                                              "attn_layers", "filter_len", "gcrn_layers")
                 if getattr(args, k) is not None}
    if args.steps is not None:
        overrides.update(horizon_in=args.steps, horizon_out=args.steps)
    cfg = tiny_config(variant=args.variant, **overrides)
    errs = cfg.errors()
    if errs:
        return _fail(errs)
    start = time.time()
    table = gradcheck(cfg, batch=args.batch, seed=args.seed, h=args.h, fault=args.fault_inject)
    ok = True
    print(f"{'tensor':24s} {'shape':>14s} {'max_rel_err':>12s}  status")
    for name, (shape, err) in table.items():
        passed = err < args.tol
        ok &= passed
        print(f"{name:24s} {str(shape):>14s} {err:12.3e}  {'PASS' if passed else 'FAIL'}")
    print(f"{'all passed' if ok else 'FAILED'} (tol {args.tol:g}, {time.time() - start:.1f}s)")
    return 0 if ok else 1


def cmd_params(args) -> int:
    base = RunConfig(nodes=307)
    rc = _run_config(args, base)
    errs = rc.errors(need_data=False)
    if errs:
        return _fail(errs)
    modules = ("agl", "gcrn", "nmpl", "nawg", "output")
    print("variant," + ",".join(modules) + ",total")
    for variant in VARIANTS:
        cfg = rc.model_config(variant=variant)
        b = param_breakdown(cfg)
        total = sum(b.values())
        assert total == count_params(init(cfg)) if cfg.num_nodes * cfg.hidden_dim < 50000 else True
        print(f"{variant}," + ",".join(str(b[m]) for m in modules) + f",{total}")
    return 0


# ---------------------------------------------------------------- parser

def _positive(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magcrn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic node-heterogeneous series")
    p.add_argument("--nodes", type=_positive, required=True)
    p.add_argument("--steps", type=_positive, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--mixing", type=float, default=0.3)
    p.add_argument("--out", default="synth.txt")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model, write checkpoint and epoch log")
    _add_run_flags(p)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a checkpoint on a split")
    p.add_argument("checkpoint")
    p.add_argument("--data", help="series file or manifest (default: the one used in training)")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--per-horizon", action="store_true")
    p.add_argument("--compare", metavar="CKPT", help="second checkpoint for Win Point counts")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train full model and the four ablations")
    _add_run_flags(p, skip=("variant",))
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="tape gradients vs central differences")
    p.add_argument("--variant", choices=VARIANTS, default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=_positive, default=2)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--fault-inject", action="store_true", help="corrupt one analytic gradient")
    for name in ("num_nodes", "embed_dim", "hidden_dim", "heads", "attn_layers", "filter_len",
                 "gcrn_layers", "steps"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=_positive, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="parameter counts by module for every variant")
    _add_run_flags(p, skip=("data", "out", "variant"))
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
