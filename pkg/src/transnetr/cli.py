"""Command-line entry point: ``python -m transnetr <command> [options]``.

Every option can also come from a flat ``key=value`` file passed with
``--config``; precedence is built-in defaults < config file < flags. For
commands that load an archive, model settings stored in the archive sit
between the defaults and the config file. The fully resolved settings are
echoed to ``<out>/config.txt`` and can be fed back with ``--config``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger("transnetr")

COMMANDS = ("train", "eval", "infer", "bench", "ablate", "inspect")
MODEL_CMDS = COMMANDS
TRAIN_CMDS = ("train", "ablate")
ABLATION_ORDER = ("no_rt", "residual_only", "full")


class CLIError(ValueError):
    pass


# value parsing ----------------------------------------------------------------
def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def parse_resolution(text) -> Tuple[int, int]:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    t = str(text).lower().replace("×", "x")
    parts = t.split("x")
    try:
        vals = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW or a single size, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected HxW or a single size, got {text!r}")
    return vals


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return "x".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Option:
    name: str
    type: Callable
    default: Any
    help: str
    commands: Tuple[str, ...]
    choices: Optional[Tuple[str, ...]] = None
    model_field: Optional[str] = None


OPTIONS: Tuple[Option, ...] = (
    # model
    Option("preset", str, "resnet50", "encoder preset", MODEL_CMDS, ("resnet50", "tiny"), "encoder_preset"),
    Option("variant", str, "full", "decoder variant", MODEL_CMDS, ("full", "no_rt", "residual_only"), "variant"),
    Option("reduction_channels", int, 64, "channels after each reduction block", MODEL_CMDS, None, "reduction_channels"),
    Option("patch_size", int, 4, "patch size of the transformer blocks", MODEL_CMDS, None, "patch_size"),
    Option("heads", int, 4, "attention heads", MODEL_CMDS, None, "attn_heads"),
    Option("layers", int, 2, "transformer layers per block", MODEL_CMDS, None, "transformer_layers"),
    Option("token_dim", int, 128, "token embedding width", MODEL_CMDS, None, "token_dim"),
    Option("ff_hidden", int, None, "feed-forward width (default 2*token_dim)", MODEL_CMDS, None, "ff_hidden"),
    Option("pos_embed", parse_bool, True, "learned positional embedding", MODEL_CMDS, None, "positional_embedding"),
    Option("resolution", parse_resolution, None, "training resolution HxW (default: synthetic size, else 256x256)", MODEL_CMDS, None, "train_resolution"),
    Option("slope", float, 0.01, "LeakyReLU negative slope", MODEL_CMDS, None, "leaky_slope"),
    Option("seed", int, 0, "seed for initialization, sampling and augmentation", COMMANDS),
    # data
    Option("data", str, None, "dataset root or synth:n=..,size=..,seed=..,centers=..", ("train", "eval", "ablate")),
    Option("layout", str, "auto", "dataset layout", ("train", "eval", "ablate"), ("auto", "flat", "centered")),
    Option("val_data", str, None, "validation dataset (same forms as --data)", ("train",)),
    Option("test_data", str, None, "evaluation dataset for the ablation table (default: the training set)", ("ablate",)),
    Option("train_n", int, None, "hold out all but train_n samples (seeded shuffle)", TRAIN_CMDS),
    Option("split_file", str, None, "split file to apply (or to write when train_n is set)", ("train", "eval", "ablate")),
    Option("split", str, "all", "which part of the split to evaluate", ("eval",), ("all", "train", "test")),
    # training
    Option("steps", int, 500, "optimizer steps", TRAIN_CMDS),
    Option("batch_size", int, 8, "mini-batch size", TRAIN_CMDS),
    Option("lr", float, 1e-4, "Adam learning rate", TRAIN_CMDS),
    Option("beta1", float, 0.9, "Adam beta1", TRAIN_CMDS),
    Option("beta2", float, 0.999, "Adam beta2", TRAIN_CMDS),
    Option("eps", float, 1e-8, "Adam epsilon", TRAIN_CMDS),
    Option("augment", str, "all", "augmentations: all, none, or a comma list of hflip,vflip,rot90,crop,jitter", TRAIN_CMDS),
    Option("augment_p", float, 0.5, "probability of each augmentation", TRAIN_CMDS),
    Option("bce_weight", float, 1.0, "weight of the BCE term", TRAIN_CMDS),
    Option("dice_weight", float, 1.0, "weight of the Dice term", TRAIN_CMDS),
    Option("checkpoint_every", int, 0, "checkpoint cadence in steps (0: final only)", TRAIN_CMDS),
    Option("val_every", int, 0, "validation cadence in steps (0: never)", ("train",)),
    Option("resume", str, None, "resume training from this checkpoint", ("train",)),
    # evaluation / inference
    Option("checkpoint", str, None, "weight archive or training checkpoint", ("eval", "infer", "bench", "inspect")),
    Option("from_masks", str, None, "score prediction masks in this directory instead of running a model", ("eval",)),
    Option("threshold", float, 0.5, "binarization threshold (pixel >= threshold is foreground)", ("eval", "infer", "ablate")),
    Option("dataset_name", str, None, "dataset label used in report titles", ("eval", "ablate")),
    Option("input", str, None, "image file or directory of images", ("infer",)),
    Option("heatmaps", parse_bool, False, "also write per-stage feature heatmaps", ("infer",)),
    Option("colormap", str, "jet", "heatmap colouring", ("infer",), ("jet", "gray")),
    Option("warmup", int, 2, "untimed forwards before measuring", ("bench",)),
    Option("iters", int, 10, "timed forwards", ("bench",)),
)
OPTION_BY_NAME = {o.name: o for o in OPTIONS}


def options_for(cmd: str) -> List[Option]:
    return [o for o in OPTIONS if cmd in o.commands]


def convert(opt: Option, raw) -> Any:
    if raw is None or (isinstance(raw, str) and raw.strip() == "" and opt.type is not str):
        return None
    if isinstance(raw, str) and raw.strip() == "" and opt.default is None:
        return None
    try:
        value = opt.type(raw)
    except (argparse.ArgumentTypeError, ValueError) as exc:
        raise CLIError(f"invalid value for {opt.name}: {exc}") from None
    if opt.choices and value not in opt.choices:
        raise CLIError(f"invalid value for {opt.name}: {value!r} (choose from {', '.join(opt.choices)})")
    return value


def read_config_file(path: str, cmd: str) -> Dict[str, Any]:
    if not os.path.isfile(path):
        raise CLIError(f"config file not found: {path}")
    allowed = {o.name for o in options_for(cmd)}
    out: Dict[str, Any] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep:
                raise CLIError(f"{path}:{lineno}: expected key=value, got {line!r}")
            if key not in allowed:
                raise CLIError(f"{path}:{lineno}: unknown key {key!r} for command {cmd}")
            out[key] = convert(OPTION_BY_NAME[key], value.strip())
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transnetr", description="TransNetR polyp segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "train a model and write checkpoints and the loss history",
        "eval": "score a checkpoint (or prediction masks) per center and overall",
        "infer": "write probability maps, masks and optional heatmaps for images",
        "bench": "measure throughput, parameters and multiply-accumulates",
        "ablate": "train and score the three decoder variants side by side",
        "inspect": "summarize a model configuration or an archive",
    }
    for cmd in COMMANDS:
        p = sub.add_parser(cmd, help=helps[cmd], description=helps[cmd])
        p.add_argument("--config", help="key=value file; flags override its entries")
        p.add_argument("--out", help="output directory (default runs/<command>-<timestamp>)")
        p.add_argument("-q", "--quiet", action="store_true", help="only report warnings and errors on stderr")
        for o in options_for(cmd):
            flag = "--" + o.name.replace("_", "-")
            default = format_value(o.default) or "none"
            kwargs = dict(dest=o.name, default=None, help=f"{o.help} [default: {default}]")
            if o.choices:
                kwargs["choices"] = o.choices
            if o.type is parse_bool:
                p.add_argument(flag, nargs="?", const=True, type=parse_bool, **kwargs)
            else:
                p.add_argument(flag, type=o.type, **kwargs)
    return parser


@dataclass
class RunConfig:
    command: str
    values: Dict[str, Any]
    explicit: frozenset
    out: str

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def echo(self) -> str:
        lines = [f"# transnetr {self.command}", f"# out={self.out}"]
        lines += [f"{k}={format_value(v)}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"


def resolve(cmd: str, args: argparse.Namespace) -> RunConfig:
    values = {o.name: o.default for o in options_for(cmd)}
    explicit = set()
    if args.config:
        from_file = read_config_file(args.config, cmd)
        values.update(from_file)
        explicit |= set(from_file)
    for o in options_for(cmd):
        v = getattr(args, o.name)
        if v is not None:
            values[o.name] = v
            explicit.add(o.name)
    out = args.out or default_run_dir(cmd)
    return RunConfig(cmd, values, frozenset(explicit), out)


def default_run_dir(cmd: str) -> str:
    base = os.path.join("runs", f"{cmd}-{time.strftime('%Y%m%d-%H%M%S')}")
    path, k = base, 1
    while os.path.exists(path):
        path = f"{base}-{k}"
        k += 1
    return path


# shared helpers ---------------------------------------------------------------
def open_dataset(spec: Optional[str], layout: str = "auto", what: str = "data"):
    from .data import load_dataset
    from .synth import parse_synth_spec, synth_dataset

    if not spec:
        raise CLIError(f"--{what.replace('_', '-')} is required")
    if spec.startswith("synth"):
        return synth_dataset(**parse_synth_spec(spec))
    if not os.path.exists(spec):
        raise CLIError(f"dataset path does not exist: {spec}")
    return load_dataset(spec, layout)


def synth_size(spec: Optional[str]) -> Optional[int]:
    from .synth import parse_synth_spec

    if spec and spec.startswith("synth"):
        return parse_synth_spec(spec)["size"]
    return None


def archive_model_config(path: str) -> Dict[str, Any]:
    from .archive import read_archive

    if not os.path.isfile(path):
        raise CLIError(f"checkpoint not found: {path}")
    _, meta = read_archive(path)
    if "model_config" not in meta:
        raise CLIError(f"{path} does not record a model configuration")
    return meta["model_config"]


def fill_from_archive(rc: RunConfig) -> None:
    """Take model settings stored in the checkpoint unless set by file or flag."""
    if not rc.values.get("checkpoint"):
        return
    stored = archive_model_config(rc.checkpoint)
    for o in options_for(rc.command):
        if o.model_field and o.name not in rc.explicit and o.model_field in stored:
            v = stored[o.model_field]
            rc.values[o.name] = tuple(v) if o.name == "resolution" else v


def model_config(rc: RunConfig, variant: Optional[str] = None):
    from .model import ModelConfig

    kwargs = {}
    for o in options_for(rc.command):
        if o.model_field:
            kwargs[o.model_field] = rc.values[o.name]
    if variant:
        kwargs["variant"] = variant
    return ModelConfig(**kwargs)


def default_resolution(rc: RunConfig, spec: Optional[str] = None) -> None:
    if rc.values.get("resolution") is None:
        size = synth_size(spec)
        rc.values["resolution"] = (size, size) if size else (256, 256)


def load_model(rc: RunConfig):
    from .archive import assign_state, read_archive
    from .model import build_model

    model = build_model(model_config(rc), rc.seed)
    tensors, _ = read_archive(rc.checkpoint)
    if any(k.startswith("model/") for k in tensors):
        state = {k[len("model/") :]: v for k, v in tensors.items() if k.startswith("model/")}
    else:
        state = tensors
    assign_state(model, state, strict=True)
    model.eval()
    return model


def train_config(rc: RunConfig):
    from .augment import AugmentConfig
    from .train import TrainConfig

    aug = AugmentConfig.parse(rc.augment)
    return TrainConfig(
        learning_rate=rc.lr,
        batch_size=rc.batch_size,
        max_steps=rc.steps,
        beta1=rc.beta1,
        beta2=rc.beta2,
        eps=rc.eps,
        seed=rc.seed,
        augment=tuple(sorted(aug.enabled)),
        augment_p=rc.augment_p,
        bce_weight=rc.bce_weight,
        dice_weight=rc.dice_weight,
        checkpoint_every=rc.checkpoint_every,
        val_every=rc.values.get("val_every", 0),
    )


def select_split(rc: RunConfig, manifest):
    """(train, test) views from a split file or a fresh seeded holdout; test may be None."""
    from .data import read_split_file, split_holdout

    split_file = rc.values.get("split_file")
    train_n = rc.values.get("train_n")
    if train_n:
        target = split_file or os.path.join(rc.out, "split.txt")
        return split_holdout(manifest, train_n, rc.seed, target)
    if split_file:
        if not os.path.isfile(split_file):
            raise CLIError(f"split file not found: {split_file}")
        return read_split_file(split_file, manifest)
    return manifest, None


def dataset_label(rc: RunConfig, spec: Optional[str]) -> str:
    if rc.values.get("dataset_name"):
        return rc.dataset_name
    if spec and spec.startswith("synth"):
        return "synthetic"
    return os.path.basename(os.path.normpath(spec)) if spec else "dataset"


def write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def prepare_out(rc: RunConfig) -> None:
    os.makedirs(rc.out, exist_ok=True)
    write_text(os.path.join(rc.out, "config.txt"), rc.echo())


# commands ---------------------------------------------------------------------
def cmd_train(rc: RunConfig) -> int:
    from .model import build_model
    from .train import train

    manifest = open_dataset(rc.data, rc.layout)
    default_resolution(rc, rc.data)
    cfg = model_config(rc)
    tcfg = train_config(rc)
    prepare_out(rc)
    train_set, test_set = select_split(rc, manifest)
    val_set = open_dataset(rc.val_data, rc.layout, "val_data") if rc.val_data else test_set
    model = build_model(cfg, rc.seed)
    log.info("training %s/%s on %d samples for %d steps", cfg.encoder_preset, cfg.variant, len(train_set), tcfg.max_steps)
    history = train(model, train_set, tcfg, val_dataset=val_set, out_dir=rc.out, resume=rc.resume)
    write_text(os.path.join(rc.out, "history.csv"), history.to_csv())
    last = history.losses[-1] if history.losses else float("nan")
    print(f"steps {len(history.losses)}  final loss {last:.6f}")
    print(f"checkpoint {os.path.join(rc.out, 'checkpoint_last.tnr')}")
    return 0


def cmd_eval(rc: RunConfig) -> int:
    from .metrics import evaluate

    fill_from_archive(rc)
    manifest = open_dataset(rc.data, rc.layout)
    if rc.split != "all":
        train_set, test_set = select_split(rc, manifest)
        if test_set is None:
            raise CLIError("--split train/test needs --split-file")
        manifest = train_set if rc.split == "train" else test_set
    if rc.from_masks:
        if not os.path.isdir(rc.from_masks):
            raise CLIError(f"prediction directory does not exist: {rc.from_masks}")
        prepare_out(rc)
        report = evaluate(rc.from_masks, manifest, rc.threshold)
    else:
        if not rc.checkpoint:
            raise CLIError("--checkpoint is required unless --from-masks is given")
        default_resolution(rc, rc.data)
        model = load_model(rc)
        prepare_out(rc)
        report = evaluate(model, manifest, rc.threshold, resolution=model.config.train_resolution)
    table = report.format_table(dataset=dataset_label(rc, rc.data))
    report.write_csv(os.path.join(rc.out, "metrics.csv"))
    write_text(os.path.join(rc.out, "report.txt"), table)
    print(table, end="")
    return 0


def list_images(path: str) -> List[str]:
    from .data import IMAGE_EXTENSIONS

    if os.path.isfile(path):
        return [path]
    if not os.path.isdir(path):
        raise CLIError(f"input does not exist: {path}")
    files = [os.path.join(path, f) for f in sorted(os.listdir(path)) if os.path.splitext(f)[1].lower() in IMAGE_EXTENSIONS]
    if not files:
        raise CLIError(f"no images found in {path}")
    return files


def colorize(heatmap: np.ndarray, colormap: str) -> np.ndarray:
    if colormap == "gray":
        return (np.clip(heatmap, 0, 1) * 255 + 0.5).astype(np.uint8)
    from matplotlib import colormaps

    rgba = colormaps[colormap](np.clip(heatmap, 0, 1))
    return (rgba[..., :3] * 255 + 0.5).astype(np.uint8)


def cmd_infer(rc: RunConfig) -> int:
    from PIL import Image

    from .infer import predict
    from .metrics import binarize
    from .model import extract_feature_heatmaps
    from .tensor import Tensor

    if not rc.checkpoint:
        raise CLIError("--checkpoint is required")
    if not rc.input:
        raise CLIError("--input is required")
    files = list_images(rc.input)
    fill_from_archive(rc)
    default_resolution(rc)
    model = load_model(rc)
    images = []
    for path in files:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32).transpose(2, 0, 1) / 255.0
        try:
            model.check_input((1,) + arr.shape)
        except ValueError as exc:
            raise CLIError(f"{path}: {exc}") from None
        images.append((path, arr))
    prepare_out(rc)
    for path, arr in images:
        stem = os.path.splitext(os.path.basename(path))[0]
        prob = predict(model, arr[None])[0, 0]
        Image.fromarray((prob * 255 + 0.5).astype(np.uint8)).save(os.path.join(rc.out, f"{stem}_prob.png"))
        Image.fromarray(binarize(prob, rc.threshold) * 255).save(os.path.join(rc.out, f"{stem}_mask.png"))
        written = 2
        if rc.heatmaps:
            for stage, hm in extract_feature_heatmaps(model, Tensor(arr[None])):
                Image.fromarray(colorize(hm[0], rc.colormap)).save(os.path.join(rc.out, f"{stem}_heatmap_{stage}.png"))
                written += 1
        log.info("%s: wrote %d files", path, written)
    print(f"processed {len(images)} image(s) into {rc.out}")
    return 0


def cmd_bench(rc: RunConfig) -> int:
    from .cost import REFERENCE_GMAC, REFERENCE_PARAMS_M, count_parameters, flop_report, format_cost
    from .infer import fps_benchmark
    from .model import build_model

    fill_from_archive(rc)
    default_resolution(rc)
    cfg = model_config(rc)
    model = load_model(rc) if rc.checkpoint else build_model(cfg, rc.seed)
    prepare_out(rc)
    res = cfg.train_resolution
    bench = fps_benchmark(model, res, warmup=rc.warmup, iters=rc.iters)
    params = count_parameters(model)
    macs = flop_report(model, res).total
    lines = [
        f"preset {cfg.encoder_preset}  variant {cfg.variant}  input 1x3x{res[0]}x{res[1]}",
        f"fps {bench.fps:.2f}",
        "latency ms  " + "  ".join(f"{k} {v:.2f}" for k, v in bench.latency_ms.items()),
        f"parameters {params}",
        f"macs {macs}  ({macs / 1e9:.3f} GMac)",
    ]
    # reference comparison always uses the resnet50 preset at 256x256
    ref_cfg = replace(cfg, encoder_preset="resnet50", train_resolution=(256, 256))
    if ref_cfg == cfg:
        ref_params, ref_macs = params, macs
    else:
        ref_model = build_model(ref_cfg, rc.seed)
        ref_params, ref_macs = count_parameters(ref_model), flop_report(ref_model, (256, 256)).total
    lines.append(f"resnet50 preset at 256x256 vs reference {REFERENCE_PARAMS_M}M / {REFERENCE_GMAC} GMac (informational):")
    lines.append("  " + format_cost(ref_params, ref_macs))
    text = "\n".join(lines) + "\n"
    write_text(os.path.join(rc.out, "bench.txt"), text)
    print(text, end="")
    return 0


def cmd_ablate(rc: RunConfig) -> int:
    from .cost import count_parameters
    from .metrics import TABLE_COLUMNS, evaluate, format_rows
    from .model import VARIANT_LABELS, build_model
    from .train import train

    manifest = open_dataset(rc.data, rc.layout)
    default_resolution(rc, rc.data)
    tcfg = train_config(rc)
    configs = {v: model_config(rc, v) for v in ABLATION_ORDER}
    prepare_out(rc)
    train_set, test_set = select_split(rc, manifest)
    if rc.test_data:
        test_set = open_dataset(rc.test_data, rc.layout, "test_data")
    eval_set = test_set if test_set is not None else train_set
    rows, params, train_dsc, csv_lines = [], [], [], ["variant,label,parameters,train_dsc,iou,dsc,recall,precision,f2"]
    for v in ABLATION_ORDER:
        model = build_model(configs[v], rc.seed)
        log.info("ablation: training %s", v)
        train(model, train_set, tcfg, out_dir=os.path.join(rc.out, v))
        tr = evaluate(model, train_set, rc.threshold).overall
        agg = tr if eval_set is train_set else evaluate(model, eval_set, rc.threshold).overall
        n = count_parameters(model)
        rows.append((VARIANT_LABELS[v], agg))
        params.append(str(n))
        train_dsc.append(f"{tr['dsc']:.4f}")
        csv_lines.append(",".join([v, f'"{VARIANT_LABELS[v]}"', str(n), repr(tr["dsc"])] + [repr(agg[k]) for k in ("iou", "dsc", "recall", "precision", "f2")]))
    which = "training set" if eval_set is train_set else "held-out set"
    title = f"Ablation on {dataset_label(rc, rc.data)} ({which})"
    table = format_rows(rows, TABLE_COLUMNS[:4], extra=[("Params", params), ("Train mDSC", train_dsc)])
    text = f"{title}\n{table}\n"
    write_text(os.path.join(rc.out, "ablation.txt"), text)
    write_text(os.path.join(rc.out, "ablation.csv"), "\n".join(csv_lines) + "\n")
    print(text, end="")
    return 0


def cmd_inspect(rc: RunConfig) -> int:
    from .archive import read_archive
    from .cost import count_parameters, flop_report, parameter_breakdown
    from .model import build_model

    lines = []
    if rc.checkpoint:
        fill_from_archive(rc)
        tensors, meta = read_archive(rc.checkpoint)
        lines.append(f"archive {rc.checkpoint}: {len(tensors)} tensors, kind {meta.get('kind', 'weights')}")
        if "step" in meta:
            lines.append(f"step {meta['step']}")
        for name, arr in tensors.items():
            lines.append(f"  {name} {tuple(arr.shape)}")
    default_resolution(rc)
    cfg = model_config(rc)
    model = build_model(cfg, rc.seed)
    lines.append("model config:")
    lines += [f"  {k}={format_value(tuple(v) if isinstance(v, list) else v)}" for k, v in cfg.to_dict().items()]
    lines.append(f"parameters {count_parameters(model)}")
    lines += [f"  {k} {n}" for k, n in parameter_breakdown(model).items()]
    rep = flop_report(model, cfg.train_resolution)
    lines.append(f"macs {rep.total} at {cfg.train_resolution[0]}x{cfg.train_resolution[1]}")
    lines += [f"  {k} {n}" for k, n in rep.grouped().items()]
    prepare_out(rc)
    text = "\n".join(lines) + "\n"
    write_text(os.path.join(rc.out, "inspect.txt"), text)
    print(text, end="")
    return 0


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
    "inspect": cmd_inspect,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        stream=sys.stderr, level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s", force=True
    )
    try:
        rc = resolve(args.command, args)
        return HANDLERS[args.command](rc)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
