"""``ppgbench`` command line: synth, curate, split, train, eval, report.

Every option may also come from ``--config FILE`` (flat ``key=value`` lines,
keys spelled like the long flag with or without dashes); flags given on the
command line win. Each command writes its effective configuration to
``config.txt`` in its output directory and refuses to write into a
non-empty directory unless ``--force`` is given.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .curation import (
    CohortCriteria,
    apply_cohort_filter,
    apply_quality_filter,
    format_audit,
    relabel_from_abp,
    summarize_cohort,
)
from .dataset import (
    MANIFEST_NAME,
    CuratedDataset,
    fmt_real,
    load_dataset,
    load_dataset_dir,
    save_dataset_dir,
)
from .errors import EmptyDataset, InvalidSpec, PPGBenchError, UsageError
from .metrics import (
    PROTOCOLS,
    ConfidenceSet,
    confidence_text,
    histogram_text,
    patient_series_text,
    read_predictions,
    residual_histogram,
    top_patients_report,
    write_predictions,
)
from .modelzoo import BACKBONES, DemographicNorm, ModelSpec, build_model
from .report import REFERENCE_TABLE, benchmark_report
from .splits import apply_split_manifest, build_folds, build_split, fold_datasets, write_split_manifest
from .synthgen import ABP_NAME, SynthConfig, generate_cohort, write_cohort
from .train import TrainConfig, history_text, load_trained, predict, train

# option tables: name -> (kind, default, help); kinds are int, float, str, bool,
# "range" (two floats "lo,hi"), "irange" (two ints) and "paths" (one or more)
_COMMON = {
    "out": ("str", None, "output directory"),
}

OPTIONS = {
    "synth": {
        "subjects": ("int", 20, "number of subjects"),
        "segments_per_subject": ("irange", (50, 150), "inclusive range of segments per subject, lo,hi"),
        "seed": ("int", 0, "generator seed"),
        "noise_sd": ("float", 0.05, "relative PPG noise; label noise scales with it"),
        "sample_rate": ("float", 125.0, "sampling rate in Hz"),
        "segment_length": ("int", 1250, "samples per segment"),
        "emit_abp": ("bool", False, "also write paired ABP waveforms (abp.txt)"),
    },
    "curate": {
        "input": ("str", None, "dataset directory (manifest.csv + segments.txt)"),
        "quality": ("bool", True, "apply the signal-quality filter"),
        "relabel_abp": ("bool", False, "derive SBP/DBP labels from abp.txt before filtering"),
        "sbp_range": ("range", (90.0, 130.0), "inclusive SBP range, mmHg"),
        "dbp_range": ("range", (60.0, 85.0), "inclusive DBP range, mmHg"),
        "age_range": ("range", (18.0, 65.0), "inclusive age range, years"),
        "bmi_range": ("range", (18.5, 25.0), "inclusive BMI range, kg/m^2"),
    },
    "split": {
        "input": ("str", None, "curated dataset directory"),
        "seed": ("int", 0, "shuffle seed for the subject-level split"),
        "cal_free_fraction": ("float", 0.056, "fraction of subjects held out entirely"),
        "cal_based_fraction": ("float", 0.1, "fraction of each remaining subject's segments held out"),
    },
    "train": {
        "data": ("str", None, "dataset directory"),
        "split": ("str", "", "split manifest; without it the whole dataset is used"),
        "backbone": ("str", "inception1d", "one of " + ", ".join(BACKBONES)),
        "demo": ("bool", False, "multimodal variant (demographic late fusion)"),
        "target": ("str", "sbp", "sbp or dbp"),
        "epochs": ("int", 100, "training epochs"),
        "batch_size": ("int", 32, "minibatch size"),
        "lr": ("float", 2e-5, "Adam learning rate"),
        "weight_decay": ("float", 1e-8, "coupled weight decay"),
        "seed": ("int", 0, "model initialization seed"),
        "shuffle_seed": ("int", 0, "minibatch shuffling seed"),
        "width_scale": ("float", 1.0, "channel-width multiplier for the backbone"),
        "init_output_bias": ("bool", False, "start the output bias at the mean training label"),
        "folds": ("int", 0, "also train this many fold models for confidence intervals (0: none)"),
        "fold_seed": ("int", 0, "seed for assigning training subjects to folds"),
    },
    "eval": {
        "checkpoint": ("str", None, "model checkpoint written by train"),
        "data": ("str", None, "dataset directory"),
        "split": ("str", None, "split manifest"),
        "protocols": ("str", "cal_based,cal_free", "comma-separated partitions to evaluate"),
        "reference": ("bool", False, "include reference-table deltas in the report"),
        "backbone": ("str", "", "expected backbone; a mismatch with the checkpoint is an error"),
    },
    "report": {
        "inputs": ("paths", None, "eval output directories and/or prediction files"),
        "bins": ("int", 41, "residual histogram bins"),
        "top_k": ("int", 10, "patients in the per-patient series"),
        "reference": ("bool", True, "include reference-table deltas"),
    },
}

REQUIRED = {
    "synth": ("out",),
    "curate": ("input", "out"),
    "split": ("input", "out"),
    "train": ("data", "out"),
    "eval": ("checkpoint", "data", "split", "out"),
    "report": ("inputs", "out"),
}

HELP = {
    "synth": "generate a synthetic cohort with ground-truth sidecar",
    "curate": "quality and cohort filtering with audit and summary",
    "split": "Train / CalBased / CalFree split manifest",
    "train": "train one model for one target",
    "eval": "predict on split partitions, metrics and AAMI verdicts",
    "report": "benchmark table, residual histograms, per-patient and interval series",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        exc = UsageError(message)
        exc.prog = self.prog
        raise exc


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _parse_value(kind: str, raw, name: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str":
            return str(raw)
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in ("range", "irange"):
            if isinstance(raw, (tuple, list)):
                parts = list(raw)
            else:
                parts = str(raw).split(",")
            if len(parts) != 2:
                raise ValueError(raw)
            conv = int if kind == "irange" else float
            return (conv(parts[0]), conv(parts[1]))
        if kind == "paths":
            return [str(p) for p in raw] if isinstance(raw, (list, tuple)) else str(raw).split()
    except ValueError:
        pass
    raise UsageError(f"invalid value for {_flag(name)}: {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ppgbench", description="Cuffless blood pressure benchmarking from PPG.")
    p.add_argument("--version", action="version", version=f"ppgbench {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for cmd, opts in OPTIONS.items():
        sp = sub.add_parser(cmd, help=HELP[cmd], description=HELP[cmd])
        sp.add_argument("--config", default=argparse.SUPPRESS, help="key=value file; flags override it")
        sp.add_argument("--force", action="store_true", default=False,
                        help="allow writing into a non-empty output directory")
        for name, (kind, default, text) in {**opts, **_COMMON}.items():
            shown = "" if default is None else f" (default: {_show(default)})"
            kw = dict(dest=name, default=argparse.SUPPRESS, help=text + shown)
            if kind == "bool":
                sp.add_argument(_flag(name), action=argparse.BooleanOptionalAction, **kw)
            elif kind == "paths":
                sp.add_argument(_flag(name), nargs="+", **kw)
            else:
                sp.add_argument(_flag(name), **kw)
    return p


def _show(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_show(x) for x in v)
    if isinstance(v, list):
        return " ".join(v)
    return repr(v) if isinstance(v, float) else str(v)


def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{no}: expected key=value")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def effective_config(cmd: str, ns: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = {**OPTIONS[cmd], **_COMMON}
    cfg = {name: default for name, (_, default, _) in opts.items()}
    if hasattr(ns, "config"):
        for key, raw in read_config_file(ns.config).items():
            if key in ("command", "force", "config"):
                continue
            if key not in opts:
                raise UsageError(f"unknown key {key!r} in config file for '{cmd}'")
            cfg[key] = _parse_value(opts[key][0], raw, key)
    for name, (kind, _, _) in opts.items():
        if hasattr(ns, name):
            cfg[name] = _parse_value(kind, getattr(ns, name), name)
    missing = [_flag(k) for k in REQUIRED[cmd] if cfg.get(k) in (None, "", [])]
    if missing:
        raise UsageError(f"missing required option(s) {', '.join(missing)}")
    return cfg


def config_text(cmd: str, cfg: dict) -> str:
    lines = [f"command={cmd}"] + [f"{k}={_show(cfg[k])}" for k in sorted(cfg) if cfg[k] is not None]
    return "\n".join(lines) + "\n"


def prepare_out(path, force: bool) -> Path:
    d = Path(path)
    if d.exists() and not d.is_dir():
        raise UsageError(f"output path {d} exists and is not a directory")
    if d.exists() and any(d.iterdir()) and not force:
        raise UsageError(f"output directory {d} is not empty; pass --force to overwrite")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _say(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# commands


def check_synth(cfg: dict) -> None:
    if cfg["subjects"] < 1:
        raise UsageError("--subjects must be >= 1")
    lo, hi = cfg["segments_per_subject"]
    if not 1 <= lo <= hi:
        raise UsageError("--segments-per-subject must satisfy 1 <= lo <= hi")
    if cfg["segment_length"] < 1 or cfg["sample_rate"] <= 0:
        raise UsageError("--segment-length and --sample-rate must be positive")
    if cfg["noise_sd"] < 0:
        raise UsageError("--noise-sd must be >= 0")


def cmd_synth(cfg: dict, out: Path) -> int:
    sc = SynthConfig(
        n_subjects=cfg["subjects"], segments_per_subject=tuple(cfg["segments_per_subject"]), seed=cfg["seed"],
        noise_sd=cfg["noise_sd"], sample_rate_hz=cfg["sample_rate"],
        segment_length=cfg["segment_length"], emit_abp=cfg["emit_abp"],
    )
    ds, sidecar = generate_cohort(sc)
    write_cohort(ds, sidecar, out)
    _say(f"wrote {ds.n_subjects} subjects, {len(ds)} segments to {out}")
    return 0


def _criteria(cfg) -> CohortCriteria:
    try:
        return CohortCriteria(sbp_range=cfg["sbp_range"], dbp_range=cfg["dbp_range"],
                              age_range=cfg["age_range"], bmi_range=cfg["bmi_range"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def check_curate(cfg: dict) -> None:
    _criteria(cfg)


def cmd_curate(cfg: dict, out: Path) -> int:
    src = Path(cfg["input"])
    criteria = _criteria(cfg)
    ds = load_dataset_dir(src)
    n_in = len(ds)
    audit = {}
    if cfg["relabel_abp"]:
        abp = load_dataset(src / MANIFEST_NAME, src / ABP_NAME)
        ds, a = relabel_from_abp(ds, np.asarray(abp.ppg, dtype=np.float64))
        audit.update(a)
    if cfg["quality"]:
        ds, a = apply_quality_filter(ds)
        audit.update(a)
    ds, a = apply_cohort_filter(ds, criteria)
    audit.update(a)
    audit["kept"] = len(ds)
    (out / "audit.csv").write_text(format_audit(audit))
    if len(ds) == 0:
        raise EmptyDataset(f"curation kept 0 of {n_in} segments (audit written to {out / 'audit.csv'})")
    save_dataset_dir(ds, out)
    summary = summarize_cohort(ds).to_text()
    (out / "summary.txt").write_text(summary)
    _say(summary.rstrip())
    return 0


def partition_summary_text(split) -> str:
    """Table-style block with one column per partition."""
    names = [("Train", split.train), ("CalBased", split.cal_based), ("CalFree", split.cal_free)]
    cols = [(n, summarize_cohort(p).rows() if len(p) else None) for n, p in names]
    keys = [k for k, _ in next(r for _, r in cols if r is not None)]
    table = [[""] + [n for n, _ in cols]]
    for i, k in enumerate(keys):
        table.append([k] + [r[i][1] if r is not None else "-" for _, r in cols])
    total = len(split.train) + len(split.cal_based) + len(split.cal_free)
    widths = [max(len(row[j]) for row in table) for j in range(len(table[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table]
    lines.append(f"Total segments: {total}")
    return "\n".join(lines) + "\n"


def cmd_split(cfg: dict, out: Path) -> int:
    ds = load_dataset_dir(cfg["input"])
    split = build_split(ds, cfg["cal_free_fraction"], cfg["cal_based_fraction"], cfg["seed"])
    write_split_manifest(split, out / "split.csv")
    text = partition_summary_text(split)
    (out / "summary.txt").write_text(text)
    _say(text.rstrip())
    return 0


def _load_partitions(data, split_path) -> tuple[CuratedDataset, object]:
    ds = load_dataset_dir(data)
    if not split_path:
        return ds, None
    return ds, apply_split_manifest(ds, split_path)


def check_train(cfg: dict) -> None:
    if cfg["folds"] == 1 or cfg["folds"] < 0:
        raise UsageError("--folds must be 0 or at least 2")


def cmd_train(cfg: dict, out: Path) -> int:
    ds, split = _load_partitions(cfg["data"], cfg["split"])
    train_set = split.train if split is not None else ds
    spec = ModelSpec(cfg["backbone"], cfg["demo"], cfg["target"].upper(), train_set.segment_length,
                     cfg["seed"], cfg["width_scale"])
    tcfg = TrainConfig(batch_size=cfg["batch_size"], epochs=cfg["epochs"], lr=cfg["lr"],
                       weight_decay=cfg["weight_decay"], shuffle_seed=cfg["shuffle_seed"],
                       init_output_bias=cfg["init_output_bias"])
    norm = DemographicNorm.from_dataset(train_set) if spec.use_demographics else None

    def progress(epoch, loss):
        _say(f"epoch {epoch + 1}/{tcfg.epochs} loss {loss:.4f}")

    tm = train(build_model(spec), train_set, tcfg, norm, progress)
    tm.save(out / "model.ckpt")
    (out / "history.csv").write_text(history_text(tm.history))
    if cfg["folds"]:
        plan = build_folds(train_set, cfg["folds"], cfg["fold_seed"])
        fold_dir = out / "folds"
        fold_dir.mkdir(exist_ok=True)
        for f in range(plan.k):
            fit, _ = fold_datasets(train_set, plan, f)
            fnorm = DemographicNorm.from_dataset(fit) if spec.use_demographics else None
            ftm = train(build_model(spec), fit, tcfg, fnorm)
            ftm.save(fold_dir / f"fold_{f}.ckpt")
            _say(f"fold {f + 1}/{plan.k} trained")
    return 0


def _protocols(cfg) -> list[str]:
    return [p.strip() for p in cfg["protocols"].split(",") if p.strip()]


def check_eval(cfg: dict) -> None:
    protocols = _protocols(cfg)
    if not protocols or any(p not in PROTOCOLS for p in protocols):
        raise UsageError(f"--protocols must name some of {', '.join(PROTOCOLS)}")


def cmd_eval(cfg: dict, out: Path) -> int:
    ckpt = Path(cfg["checkpoint"])
    tm = load_trained(ckpt)
    if cfg["backbone"] and cfg["backbone"] != tm.spec.backbone:
        raise InvalidSpec(f"checkpoint holds a {tm.spec.backbone} model, not {cfg['backbone']}")
    protocols = _protocols(cfg)
    _, split = _load_partitions(cfg["data"], cfg["split"])
    parts = split.partitions()
    fold_paths = sorted(ckpt.parent.joinpath("folds").glob("fold_*.ckpt"),
                        key=lambda p: int(p.stem.split("_")[1]))
    folds = [load_trained(p) for p in fold_paths]
    sets = []
    for proto in protocols:
        if len(parts[proto]) == 0:
            raise EmptyDataset(f"partition {proto} is empty")
        p = predict(tm, parts[proto], proto)
        write_predictions(p, out / f"predictions_{proto}.csv")
        sets.append(p)
        if folds:
            ci = ConfidenceSet(np.stack([predict(f, parts[proto], proto).y_pred for f in folds]))
            (out / f"ci_{proto}.csv").write_text(confidence_text(p, ci))
    rep = benchmark_report(sets, REFERENCE_TABLE if cfg["reference"] else {})
    (out / "report.json").write_text(rep.to_json())
    (out / "report.txt").write_text(rep.to_table())
    _say(rep.to_table().rstrip())
    return 0


def _read_ci(path, p) -> np.ndarray:
    """``(n, 3)`` array of mean, lower, upper from a ci file aligned with ``p``."""
    rows = Path(path).read_text().splitlines()[1:]
    if len(rows) != len(p):
        raise EmptyDataset(f"{path} does not match its prediction set")
    vals = np.array([[float(x) for x in r.split(",")[2:5]] for r in rows])
    return vals


def _collect_inputs(paths):
    items = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            for f in sorted(path.glob("predictions_*.csv")):
                proto = f.stem[len("predictions_"):]
                ci = path / f"ci_{proto}.csv"
                items.append((f, ci if ci.exists() else None))
        elif path.is_file():
            items.append((path, None))
        else:
            raise UsageError(f"no such input: {raw}")
    if not items:
        raise UsageError("no prediction files found in the given inputs")
    return items


def check_report(cfg: dict) -> None:
    if cfg["bins"] < 1:
        raise UsageError("--bins must be >= 1")
    if cfg["top_k"] < 1:
        raise UsageError("--top-k must be >= 1")


def cmd_report(cfg: dict, out: Path) -> int:
    sets, cis, seen = [], [], set()
    for pred_path, ci_path in _collect_inputs(cfg["inputs"]):
        p = read_predictions(pred_path)
        key = (p.model, p.target, p.protocol)
        if key in seen:
            raise UsageError(f"duplicate prediction set for {'/'.join(key)}")
        seen.add(key)
        sets.append(p)
        cis.append(_read_ci(ci_path, p) if ci_path else None)
    rep = benchmark_report(sets, REFERENCE_TABLE if cfg["reference"] else {})
    (out / "report.json").write_text(rep.to_json())
    (out / "report.txt").write_text(rep.to_table())
    for sub in ("residuals", "top_patients", "intervals"):
        (out / sub).mkdir(exist_ok=True)
    notes = []
    for p, ci in zip(sets, cis):
        stem = f"{p.model}_{p.target}_{p.protocol}"
        edges, counts = residual_histogram(p, cfg["bins"])
        (out / "residuals" / f"{stem}.csv").write_text(histogram_text(edges, counts))
        try:
            series = top_patients_report(p, None, cfg["top_k"])
        except PPGBenchError as exc:
            notes.append(f"{stem}: per-patient series skipped ({exc})")
            series = None
        if series is not None:
            if ci is not None:
                series = [replace(s, lower=ci[s.indices, 1], upper=ci[s.indices, 2]) for s in series]
            (out / "top_patients" / f"{stem}.csv").write_text(patient_series_text(series))
        if ci is not None:
            rows = ["subject_id,y_true,mean,lower,upper"]
            rows += [f"{s},{fmt_real(t)},{fmt_real(m)},{fmt_real(lo)},{fmt_real(hi)}"
                     for s, t, (m, lo, hi) in zip(p.subject_ids, p.y_true, ci)]
            (out / "intervals" / f"{stem}.csv").write_text("\n".join(rows) + "\n")
    (out / "notes.txt").write_text("".join(n + "\n" for n in notes))
    _say(rep.to_table().rstrip())
    return 0


CHECKS = {
    "synth": check_synth,
    "curate": check_curate,
    "train": check_train,
    "eval": check_eval,
    "report": check_report,
}

COMMANDS = {
    "synth": cmd_synth,
    "curate": cmd_curate,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    cmd = "ppgbench"
    try:
        ns = parser.parse_args(argv)
        if not ns.command:
            parser.print_help(sys.stderr)
            return UsageError.exit_code
        cmd = f"ppgbench {ns.command}"
        cfg = effective_config(ns.command, ns)
        if ns.command in CHECKS:
            CHECKS[ns.command](cfg)
        fresh = not Path(cfg["out"]).exists()
        out = prepare_out(cfg["out"], ns.force)
        try:
            code = COMMANDS[ns.command](cfg, out)
        except BaseException:
            # a failed run leaves nothing behind that would need --force to retry
            if fresh and out.is_dir() and not any(out.iterdir()):
                out.rmdir()
            raise
        (out / "config.txt").write_text(config_text(ns.command, cfg))
        return code
    except PPGBenchError as exc:
        print(f"{getattr(exc, 'prog', cmd)}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"{cmd}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
