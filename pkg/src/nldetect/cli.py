"""Command-line pipeline: simulate, train, detect, frc, scalogram, run.

Every command reads one experiment config (a TOML file or a preset name),
writes its outputs into ``--out`` and records a JSON manifest next to them
with the resolved configuration, all seeds and the SHA-256 of every input
and output file. Existing outputs are only replaced with ``--force``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric
divergence or instability, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from . import dataset as ds
from . import svg
from .analysis import cwt_scalogram, frc_sweep
from .autoencoder import AEConfig, AutoEncoder, build_ae, score_ae, train_ae
from .detector import build_report
from .dynamics import GRAVITY
from .errors import ConfigError, ContractError, DomainError, FileFormatError, NLDetectError, NumericError, ParseError
from .excitation import TimeSeries
from .gan import GAN, GANConfig, build_gan, discriminate, train_gan
from .neuralnet import load_networks, save_networks

logger = logging.getLogger("nldetect")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
TRAIN_STREAM, SCORE_STREAM, SCALOGRAM_STREAM = 0, 1, 2


class RefusalError(NLDetectError, OSError):
    """An output file exists and ``--force`` was not given."""


# --------------------------------------------------------------------------
# small helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _num(v):
    """Shortest round-trip text for floats; integers and strings unchanged."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


class Run:
    """Shared state of one command invocation."""

    def __init__(self, args):
        self.args = args
        cfg = config_mod.load(args.config)
        if args.seed is not None:
            if not (0 <= args.seed < 2**64):
                raise ConfigError("seed must be an unsigned 64-bit integer", field="--seed")
            cfg.seed = int(args.seed)
        if args.n_windows is not None and args.n_windows < 1:
            raise ConfigError("must be >= 1", field="--n-windows")
        if args.epochs is not None and args.epochs < 1:
            raise ConfigError("must be >= 1", field="--epochs")
        self.cfg = cfg
        self.out = Path(args.out if args.out is not None else cfg.out)

    def path(self, name) -> Path:
        return self.out / name

    def claim(self, *names):
        """Refuse to run when any output exists (unless forced); create the directory."""
        paths = [self.path(n) for n in names]
        if not self.args.force:
            existing = [str(p) for p in paths if p.exists()]
            if existing:
                raise RefusalError(f"refusing to overwrite {', '.join(existing)} (use --force)")
        self.out.mkdir(parents=True, exist_ok=True)
        return paths

    def manifest(self, name, command, outputs, inputs=(), extra=None):
        doc = {
            "command": command,
            "version": __version__,
            "overrides": {
                "seed": self.args.seed,
                "n_windows": self.args.n_windows,
                "epochs": self.args.epochs,
            },
            "config": self.cfg.summary(),
            "config_raw": self.cfg.raw,
            "seeds": self.cfg.seeds(),
            "inputs": {str(p): sha256_file(p) for p in inputs},
            "outputs": {Path(p).name: sha256_file(p) for p in outputs},
        }
        doc.update(extra or {})
        path = self.path(name)
        path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
        return path


# --------------------------------------------------------------------------
# datasets


def _parse_levels(text):
    try:
        levels = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated fractions, got {text!r}", field="--levels") from None
    if not levels:
        raise ConfigError("no levels given", field="--levels")
    for lv in levels:
        if not (0 <= lv < 1):
            raise ConfigError(f"damage level {lv} outside [0, 1)", field="--levels")
    return levels


def _measured(cfg, level):
    if level not in cfg.data.external:
        raise ConfigError(f"no measured file for damage level {level}", field="data.external")
    return ds.ingest_external(cfg.data.external[level], cfg.data.window_len, cfg.data.rate, damage=level,
                              source=cfg.name)


def _first(dataset, k):
    """First ``k`` windows of each DOF."""
    if k is None:
        return dataset
    keep, seen = [], {}
    for i, w in enumerate(dataset.windows):
        d = w.meta.get("dof", 0)
        if seen.get(d, 0) < k:
            keep.append(i)
            seen[d] = seen.get(d, 0) + 1
    return dataset.subset(keep)


def train_corpus(cfg, n_windows=None):
    """Undamaged windows split into "train" and "val"."""
    if cfg.system is None:
        base = _first(_measured(cfg, 0.0), n_windows)
    else:
        base = ds.build_benchmark(
            cfg.model(), [0.0], n_windows or cfg.data.n_train, cfg.data.amplitude,
            seed=cfg.derived_seed("data"), stream=TRAIN_STREAM, noise_level=cfg.data.noise_level,
            window_len=cfg.data.window_len, output_rate=cfg.data.rate, dt_int=cfg.data.dt_int,
        )
    return ds.split(base, cfg.data.train_fraction, seed=cfg.derived_seed("split"))


def score_corpus(cfg, levels=None, n_windows=None):
    """Windows per damage level labelled "score".

    Measured data has no independent undamaged recording, so its baseline
    is the held-out validation part of the training corpus.
    """
    levels = list(cfg.data.levels if levels is None else levels)
    if cfg.system is not None:
        return ds.build_benchmark(
            cfg.model(), levels, n_windows or cfg.data.n_score, cfg.data.amplitude,
            seed=cfg.derived_seed("data"), stream=SCORE_STREAM, noise_level=cfg.data.noise_level,
            window_len=cfg.data.window_len, output_rate=cfg.data.rate, dt_int=cfg.data.dt_int,
            split_label="score",
        )
    parts = []
    for lv in levels:
        if lv == 0.0:
            tr = train_corpus(cfg, n_windows)
            part = tr.subset(tr.indices("val"))
        else:
            part = _first(_measured(cfg, lv), n_windows)
        parts.append(ds.Dataset(part.windows, part.window_len, part.rate, ["score"] * len(part), part.attrs))
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out


def cmd_simulate(run: Run):
    args, cfg = run.args, run.cfg
    name = f"{args.corpus}.nlds"
    path, _ = run.claim(name, f"{args.corpus}.manifest.json")
    if args.corpus == "train":
        if args.levels is not None:
            raise ConfigError("the training corpus is undamaged; --levels applies to --corpus score", field="--levels")
        data = train_corpus(cfg, args.n_windows)
        levels = [0.0]
    else:
        levels = _parse_levels(args.levels) if args.levels is not None else list(cfg.data.levels)
        data = score_corpus(cfg, levels, args.n_windows)
    data.attrs.update({"corpus": args.corpus, "config": cfg.name, "seed": int(cfg.seed)})
    ds.save(data, path)
    counts = {split: data.splits.count(split) for split in sorted(set(data.splits))}
    run.manifest(f"{args.corpus}.manifest.json", "simulate", [path], extra={
        "corpus": args.corpus,
        "levels": levels,
        "stream": TRAIN_STREAM if args.corpus == "train" else SCORE_STREAM,
        "n_windows": args.n_windows,
        "counts": counts,
    })
    print(f"wrote {path} ({len(data)} windows, {counts})")
    return path


# --------------------------------------------------------------------------
# models


def _load_dataset(path, cfg):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    data = ds.load(path)
    if data.window_len != cfg.data.window_len:
        raise DomainError(f"dataset window length {data.window_len} != configured {cfg.data.window_len}")
    return data


def cmd_train(run: Run):
    args, cfg = run.args, run.cfg
    dpath = Path(args.dataset) if args.dataset else run.path("train.nlds")
    data = _load_dataset(dpath, cfg)
    kind = args.kind
    model_path, hist_path, _ = run.claim(f"{kind}.nlnn", f"{kind}_history.csv", f"{kind}.manifest.json")
    train = data.array(data.indices("train"))
    if len(train) == 0:
        raise DomainError(f"{dpath} has no windows in the train split")
    if kind == "ae":
        acfg = replace(cfg.ae, max_epochs=args.epochs) if args.epochs else cfg.ae
        val = data.array(data.indices("val"))
        if len(val) == 0:
            raise DomainError(f"{dpath} has no windows in the val split")
        ae = build_ae(acfg, seed=cfg.derived_seed("ae"))
        report = train_ae(ae, train, val, seed=cfg.derived_seed("ae_train"))
        nets = list(ae)
        net_cfg = acfg.to_dict()
        write_csv(hist_path, ["epoch", "train_loss", "val_loss"],
                  [(i + 1, a, b) for i, (a, b) in enumerate(zip(report.train_loss, report.val_loss))])
        summary = {"best_epoch": report.best_epoch, "best_val_loss": report.best_val_loss,
                   "stopped_epoch": report.stopped_epoch}
    else:
        gcfg = replace(cfg.gan, epochs=args.epochs) if args.epochs else cfg.gan
        gan = build_gan(gcfg, seed=cfg.derived_seed("gan"))
        hist = train_gan(gan, train, seed=cfg.derived_seed("gan_train"))
        nets = list(gan)
        net_cfg = gcfg.to_dict()
        keys = ("d_loss", "g_loss", "d_real", "d_fake")
        write_csv(hist_path, ["epoch", *keys],
                  [(i + 1, *(hist[k][i] for k in keys)) for i in range(len(hist["d_loss"]))])
        summary = {"d_updates": hist["d_updates"], "g_updates": hist["g_updates"]}
    meta = {"kind": kind, "config": net_cfg, "seed": cfg.derived_seed(kind),
            "train_seed": cfg.derived_seed(f"{kind}_train"), "dataset_sha256": sha256_file(dpath),
            "summary": summary}
    save_networks(model_path, nets, _jsonable(meta))
    run.manifest(f"{kind}.manifest.json", "train", [model_path, hist_path], inputs=[dpath],
                 extra={"kind": kind, "summary": summary})
    print(f"wrote {model_path} and {hist_path}")
    return model_path


def load_model(path):
    """Return ``(kind, model)`` from a model file written by ``train``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model not found: {path}")
    nets, meta = load_networks(path)
    kind = meta.get("kind")
    if kind == "ae" and len(nets) == 2:
        return kind, AutoEncoder(nets[0], nets[1], AEConfig.from_dict(meta["config"]))
    if kind == "gan" and len(nets) == 2:
        return kind, GAN(nets[0], nets[1], GANConfig.from_dict(meta["config"]))
    raise FileFormatError(f"{path}: not an autoencoder or GAN model file")


def score_dataset(kind, model, data):
    """``{level: [(window_id, dof, score), ...]}`` over every window."""
    if data.window_len != model.window_len:
        raise DomainError(f"dataset window length {data.window_len} != model window length {model.window_len}")
    x = data.array()
    scores = score_ae(model, x) if kind == "ae" else discriminate(model.discriminator, x).tolist()
    out = {}
    seen = {}
    for w, s in zip(data.windows, scores):
        level = float(w.meta.get("damage", 0.0))
        dof = int(w.meta.get("dof", 0))
        wid = w.meta.get("index")
        if wid is None:
            wid = seen.get((level, dof), 0)
            seen[(level, dof)] = wid + 1
        out.setdefault(level, []).append((int(wid), dof, float(s)))
    return out


def cmd_detect(run: Run):
    args, cfg = run.args, run.cfg
    mpath = Path(args.model) if args.model else run.path(f"{args.kind}.nlnn")
    kind, model = load_model(mpath)
    dpath = Path(args.dataset) if args.dataset else run.path("score.nlds")
    data = _load_dataset(dpath, cfg)
    names = [f"{kind}_scatter.csv", f"{kind}_trend.csv", f"{kind}_detection.svg", f"{kind}_detect.manifest.json"]
    report = build_report(score_dataset(kind, model, data), kind)
    if report.per_dof:
        names.insert(2, f"{kind}_dof_trend.csv")
    paths = run.claim(*names)
    scatter, trend = paths[0], paths[1]
    write_csv(scatter, ["kind", "level", "window_id", "dof", "score"], report.scatter_rows())
    write_csv(trend, ["kind", "level", "mean", "rel_variation"], report.trend_rows())
    outputs = [scatter, trend]
    if report.per_dof:
        write_csv(paths[2], ["kind", "dof", "level", "mean", "rel_variation"], report.dof_trend_rows())
        outputs.append(paths[2])
    fig = run.path(f"{kind}_detection.svg")
    per_dof = {d: [s.mean for s in st] for d, st in report.per_dof.items()}
    fig.write_text(svg.detection_figure(report.levels, [(r[1], r[4]) for r in report.scatter_rows()],
                                        report.means, report.rel_variations, kind, per_dof))
    outputs.append(fig)
    rho = report.spearman() if len(report.levels) > 1 else float("nan")
    run.manifest(f"{kind}_detect.manifest.json", "detect", outputs, inputs=[mpath, dpath],
                 extra={"kind": kind, "spearman": rho, "levels": report.levels,
                        "rel_variation": report.rel_variations})
    for s in report.stats:
        print(f"{kind} level {s.level:g}: mean {s.mean:.6g} rel_variation {100 * s.rel_variation:+.2f}%")
    print(f"spearman(level, {'DI' if kind == 'gan' else 'mean'}) = {rho:.3f}")
    return report


# --------------------------------------------------------------------------
# diagnostics


def cmd_frc(run: Run):
    cfg = run.cfg
    frc = cfg.frc
    if not frc.amplitudes:
        raise ConfigError("no FRC amplitudes configured", field="frc.amplitudes")
    freqs = frc.freqs()
    csv_path, fig_path, _ = run.claim("frc.csv", "frc.svg", "frc.manifest.json")
    model = cfg.model()
    rows, curves = [], []
    for amp in frc.amplitudes:
        A = amp / GRAVITY
        for d in frc.damage:
            for direction in frc.directions:
                pts = frc_sweep(model, A, freqs, direction, frc.settle_cycles, frc.measure_cycles,
                                damage=d, dof=frc.dof)
                pts = sorted(pts, key=lambda p: p.freq)
                rows += [(round(A, 12), d, direction, p.freq, p.amplitude) for p in pts]
                curves.append((f"{A:g} g, d={d:g}, {direction}", [p.freq for p in pts],
                               [1e3 * p.amplitude for p in pts]))
                peak = max(pts, key=lambda p: p.amplitude)
                print(f"A={A:g} g d={d:g} {direction}: peak {peak.freq:.4g} Hz, {1e3 * peak.amplitude:.4g} mm")
    write_csv(csv_path, ["A_g", "damage", "direction", "freq_hz", "amplitude_m"], rows)
    fig_path.write_text(svg.line_plot(curves, "frequency response", "frequency (Hz)", "amplitude (mm)"))
    run.manifest("frc.manifest.json", "frc", [csv_path, fig_path], extra={"n_freqs": len(freqs)})
    return csv_path


def cmd_scalogram(run: Run):
    args, cfg = run.args, run.cfg
    csv_path, fig_path, _ = run.claim("scalogram.csv", "scalogram.svg", "scalogram.manifest.json")
    level = float(args.level)
    if cfg.system is None:
        win = _measured(cfg, level).windows[0]
    else:
        win = ds.build_benchmark(
            cfg.model(), [level], 1, cfg.data.amplitude, seed=cfg.derived_seed("data"),
            stream=SCALOGRAM_STREAM, noise_level=cfg.data.noise_level, window_len=cfg.data.window_len,
            output_rate=cfg.data.rate, dt_int=cfg.data.dt_int,
        ).windows[0]
    rate = cfg.data.rate
    f_max = min(args.f_max, 0.45 * rate)
    freqs = np.round(np.linspace(args.f_min, f_max, args.n_freqs), 9)
    series = TimeSeries(win.values - win.values.mean(), 1.0 / rate)
    sc = cwt_scalogram(series, freqs)
    rows = [(f, *mag) for f, mag in zip(sc.freqs, sc.magnitude)]
    write_csv(csv_path, ["freq_hz", *(_num(round(float(t), 9)) for t in sc.times)], rows)
    fig_path.write_text(svg.heatmap(sc.magnitude, sc.times, sc.freqs, f"scalogram, damage {level:g}",
                                    "time (s)", "frequency (Hz)", max_cols=125))
    run.manifest("scalogram.manifest.json", "scalogram", [csv_path, fig_path],
                 extra={"level": level, "stream": SCALOGRAM_STREAM})
    return csv_path


def cmd_run(run: Run):
    """Simulate both corpora, train both models and write both reports."""
    args = run.args
    levels = args.levels
    for corpus in ("train", "score"):
        args.corpus = corpus
        args.levels = levels if corpus == "score" else None
        cmd_simulate(run)
    args.dataset = None
    for kind in args.kinds:
        args.kind = kind
        cmd_train(run)
    args.model = None
    reports = {}
    for kind in args.kinds:
        args.kind = kind
        reports[kind] = cmd_detect(run)
    return reports


# --------------------------------------------------------------------------
# entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="duffing1", help="TOML config file or preset name (default: duffing1)")
    common.add_argument("--seed", type=int, default=None, help="root seed overriding the config")
    common.add_argument("--out", default=None, help="output directory (default: output.dir of the config)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--n-windows", type=int, default=None, help="windows per level (desk-scale override)")
    common.add_argument("--epochs", type=int, default=None, help="training epochs override")
    common.add_argument("-v", "--verbose", action="count", default=0, help="log progress (repeat for debug)")

    p = argparse.ArgumentParser(prog="nldetect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"nldetect {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate or ingest a dataset")
    s.add_argument("--corpus", choices=("train", "score"), default="train",
                   help="undamaged training corpus or multi-level scoring corpus (default: train)")
    s.add_argument("--levels", default=None, help="comma-separated damage fractions for --corpus score")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", parents=[common], help="train an autoencoder or a GAN")
    t.add_argument("--kind", choices=("ae", "gan"), required=True, help="model family to train")
    t.add_argument("--dataset", default=None, help="training dataset (default: OUT/train.nlds)")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", parents=[common], help="score a dataset and write the report")
    d.add_argument("--kind", choices=("ae", "gan"), default="ae", help="selects OUT/KIND.nlnn when --model is absent")
    d.add_argument("--model", default=None, help="trained model file (overrides --kind)")
    d.add_argument("--dataset", default=None, help="scoring dataset (default: OUT/score.nlds)")
    d.set_defaults(func=cmd_detect)

    f = sub.add_parser("frc", parents=[common], help="frequency response curves by stepped-sine sweeps")
    f.set_defaults(func=cmd_frc)

    c = sub.add_parser("scalogram", parents=[common], help="Morlet scalogram of one simulated window")
    c.add_argument("--level", type=float, default=0.0, help="damage fraction of the simulated system")
    c.add_argument("--f-min", type=float, default=1.0, help="lowest analysis frequency in Hz")
    c.add_argument("--f-max", type=float, default=25.0, help="highest analysis frequency in Hz")
    c.add_argument("--n-freqs", type=int, default=97, help="number of evenly spaced frequencies")
    c.set_defaults(func=cmd_scalogram)

    r = sub.add_parser("run", parents=[common], help="simulate, train and detect end to end")
    r.add_argument("--kinds", default="ae,gan", type=lambda s: [k for k in s.split(",") if k],
                   help="comma-separated models to train and evaluate (default: ae,gan)")
    r.add_argument("--levels", default=None, help="comma-separated damage fractions of the scoring corpus")
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "kinds", None) is not None:
            bad = set(args.kinds) - {"ae", "gan"}
            if bad or not args.kinds:
                raise ConfigError(f"unknown kinds {sorted(bad)}", field="--kinds")
        args.func(Run(args))
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, FileFormatError, ParseError, RefusalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, DomainError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NLDetectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
