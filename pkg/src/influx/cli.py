"""Command-line pipelines.

Every subcommand resolves its options as flags > ``INFLUX_<NAME>``
environment variables > ``--config`` file > defaults, writes its outputs
plus a run manifest, and prints the effective seed. Rerunning a command
with ``--config <manifest>`` reproduces its outputs byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import analytics, datastore, estimation, prediction, simulator, unpredictability
from .errors import ConfigError, InfluxError

# options left out of manifests: they change where results go or how fast
# they are computed, never what they are
NOT_RECORDED = {"out", "jobs", "config", "figures"}


def _opt(flag, type=str, default=None, help=None, choices=None):
    return (flag, type, default, help, choices)


COMMON = [_opt("--seed", int, 0, "master seed (default 0)"), _opt("--jobs", int, 1, "worker processes")]

SUBCOMMANDS = {
    "simulate": (
        "simulate a cohort under the consensus model",
        COMMON + [
            _opt("--participants", int, 60),
            _opt("--games", int, 30),
            _opt("--group-size", int, 6),
            _opt("--task", str, "gauging", choices=("gauging", "counting")),
            _opt("--noise", float, 3.0, "revision noise std"),
            _opt("--initial-spread", float, 10.0),
            _opt("--initial-bias", float, 0.0),
            _opt("--missing-rate", float, 0.0),
            _opt("--means", str, "0.05,0.02;0.32,0.2", "mixture means 'a1,a2;a1,a2'"),
            _opt("--spread", float, 0.03, "component std"),
            _opt("--weights", str, "", "comma separated component weights"),
            _opt("--format", str, "csv", choices=("csv", "json")),
            _opt("--out", str, None, "output directory"),
        ],
    ),
    "ingest": (
        "validate a dataset and write it in canonical form",
        COMMON + [
            _opt("--data", str, None),
            _opt("--group-size", int, 6),
            _opt("--format", str, "csv", choices=("csv", "json")),
            _opt("--out", str, None, "output dataset file"),
        ],
    ),
    "filter": (
        "apply the completion and trustworthiness filters",
        COMMON + [
            _opt("--data", str, None),
            _opt("--min-full-games", int, 15),
            _opt("--corr-threshold", str, "auto", "'auto', a task preset or a number"),
            _opt("--out", str, None, "filtered dataset file"),
        ],
    ),
    "fit": (
        "fit individual influenceabilities",
        COMMON + [
            _opt("--data", str, None),
            _opt("--linearity", int, 0, "1 to also run the linearity test"),
            _opt("--out", str, None, "couples CSV"),
        ],
    ),
    "cluster": (
        "fit Gaussian mixtures to influenceability couples",
        COMMON + [
            _opt("--couples", str, None, "couples CSV written by fit"),
            _opt("--k", str, "1,2", "comma separated component counts"),
            _opt("--restarts", int, 5),
            _opt("--out", str, None, "mixtures JSON"),
        ],
    ),
    "predict": (
        "predict later-round judgments from round-1 judgments",
        COMMON + [
            _opt("--data", str, None),
            _opt("--couples", str, None, "couples CSV (individual_alpha, typical_K)"),
            _opt("--mixtures", str, None, "mixtures JSON (typical_K)"),
            _opt("--method", str, "individual_alpha"),
            _opt("--target-round", int, 3),
            _opt("--others-mode", str, "simulated_typical", choices=prediction.OTHERS_MODES),
            _opt("--out", str, None, "predictions CSV"),
        ],
    ),
    "crossval": (
        "crossvalidate predictors over training sizes",
        COMMON + [
            _opt("--data", str, None),
            _opt("--methods", str, "null,individual_alpha,typical_1,typical_2"),
            _opt("--training-sizes", str, "1-15", "e.g. '1-15' or '1,5,10'"),
            _opt("--iterations", int, 300),
            _opt("--target-round", int, 3),
            _opt("--others-mode", str, "simulated_typical", choices=prediction.OTHERS_MODES),
            _opt("--restarts", int, 5),
            _opt("--resamples", int, 2000),
            _opt("--floor", float, None, "intrinsic floor added to the figure files"),
            _opt("--figures", str, None, "directory for plot-ready figure CSVs"),
            _opt("--out", str, None, "report CSV (or .json)"),
        ],
    ),
    "control": (
        "simulate a control cohort of replicate pairs and its session schedule",
        COMMON + [
            _opt("--n-pairs", int, 500),
            _opt("--task", str, "gauging", choices=("gauging", "counting")),
            _opt("--lam", float, 0.7),
            _opt("--noise", float, 5.0),
            _opt("--shift-std", float, 12.0),
            _opt("--picture-std", float, 5.0),
            _opt("--replicated", int, 10, "replicated games per session"),
            _opt("--fillers", int, 10, "filler games per session"),
            _opt("--out", str, None, "output directory"),
        ],
    ),
    "unpredictability": (
        "estimate the intrinsic unpredictability from replicate pairs",
        COMMON + [
            _opt("--pairs", str, None, "control dataset with a replicate_of column"),
            _opt("--out", str, None, "estimate JSON; lambda curves written alongside"),
        ],
    ),
    "analyze": (
        "descriptive statistics of a dataset",
        COMMON + [
            _opt("--data", str, None),
            _opt("--couples", str, None, "couples CSV for the influence/performance correlations"),
            _opt("--bins", int, 20),
            _opt("--out", str, None, "output directory"),
        ],
    ),
}

INPUT_KEYS = ("data", "couples", "mixtures", "pairs")
REQUIRED = {
    "simulate": ("out",),
    "ingest": ("data", "out"),
    "filter": ("data", "out"),
    "fit": ("data", "out"),
    "cluster": ("couples", "out"),
    "predict": ("data", "out"),
    "crossval": ("data", "out"),
    "control": ("out",),
    "unpredictability": ("pairs", "out"),
    "analyze": ("data", "out"),
}


def _dest(flag):
    return flag.lstrip("-").replace("-", "_")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="influx", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"influx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_, opts) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", default=None, help="key=value file or a run manifest")
        for flag, _type, default, h, choices in opts:
            text = h or ""
            if default is not None:
                text = f"{text} [{default}]".strip()
            # defaults are applied after config and environment lookups
            p.add_argument(flag, default=None, help=text, choices=choices)
    return parser


def read_config(path) -> dict:
    """Parse a ``key=value`` file or a manifest JSON into a flat dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        cfg = dict(doc.get("config", doc))
        if "command" in doc:
            cfg["__command__"] = doc["command"]
        return cfg
    cfg = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        cfg[k.strip().replace("-", "_")] = v.strip()
    return cfg


def resolve(command: str, args: argparse.Namespace, environ=None) -> dict:
    """Resolved option values for ``command``."""
    environ = os.environ if environ is None else environ
    cfg = read_config(args.config) if args.config else {}
    recorded = cfg.pop("__command__", command)
    if recorded != command:
        raise ConfigError(f"manifest was written by '{recorded}', not '{command}'")
    known = {_dest(o[0]) for o in SUBCOMMANDS[command][1]}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {unknown}")
    out = {}
    for flag, typ, default, _, choices in SUBCOMMANDS[command][1]:
        key = _dest(flag)
        raw = getattr(args, key)
        if raw is None:
            raw = environ.get("INFLUX_" + key.upper())
        if raw is None:
            raw = cfg.get(key)
        if raw is None:
            out[key] = default
            continue
        try:
            val = typ(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{flag}: cannot parse {raw!r} as {typ.__name__}") from None
        if choices and val not in choices:
            raise ConfigError(f"{flag}: {val!r} not in {list(choices)}")
        out[key] = val
    missing = [k for k in REQUIRED[command] if out.get(k) in (None, "")]
    if missing:
        raise ConfigError(f"{command}: missing required option(s) " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return out


# --- helpers ---------------------------------------------------------------------


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _clean(obj):
    """Replace non-finite floats with None so the JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write(path: Path, text: str, written: list):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    written.append(path)


def _manifest_path(out: str) -> Path:
    p = Path(out)
    return p / "manifest.json" if not p.suffix else p.with_name(p.stem + ".manifest.json")


def write_manifest(command: str, cfg: dict, written: list) -> Path:
    out = cfg["out"]
    mpath = _manifest_path(out)
    base = Path(out) if not Path(out).suffix else Path(out).parent
    doc = {
        "command": command,
        "config": {k: v for k, v in sorted(cfg.items()) if k not in NOT_RECORDED},
        "seed": cfg["seed"],
        "versions": {
            "influx": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "inputs": {
            cfg[k]: _sha256(cfg[k]) for k in INPUT_KEYS if cfg.get(k)
        },
        "outputs": {
            os.path.relpath(p, base): _sha256(p) for p in sorted(written)
        },
    }
    mpath.parent.mkdir(parents=True, exist_ok=True)
    mpath.write_text(_dump_json(doc), encoding="utf-8")
    return mpath


def parse_means(text: str) -> list:
    try:
        return [[float(v) for v in part.split(",")] for part in text.split(";") if part.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse mixture means {text!r}") from None


def parse_sizes(text: str) -> list:
    sizes = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            sizes.extend(range(int(a), int(b) + 1))
        else:
            sizes.append(int(part))
    if not sizes:
        raise ConfigError("no training size given")
    return sorted(set(sizes))


def _csv_text(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([datastore.format_number(v) if isinstance(v, float) else v for v in row])
    return out.getvalue()


def read_couples(path) -> dict:
    from .core import InfluenceabilityPair

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    try:
        return {
            r["participant_id"]: InfluenceabilityPair(
                float(r["alpha1"]), float(r["alpha2"]),
                r.get("degenerate1", "0") == "1", r.get("degenerate2", "0") == "1",
            )
            for r in rows
        }
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: not a couples file ({exc})") from None


def _load(cfg, key="data"):
    return datastore.load_dataset(cfg[key], group_size=cfg.get("group_size"))


# --- subcommands ---------------------------------------------------------------------


def cmd_simulate(cfg):
    means = parse_means(cfg["means"])
    weights = [float(w) for w in cfg["weights"].split(",")] if cfg["weights"] else None
    spec = simulator.PopulationSpec(
        n_participants=cfg["participants"],
        group_size=cfg["group_size"],
        n_games=cfg["games"],
        task=cfg["task"],
        mixture=estimation.MixtureModel.from_components(means, cfg["spread"], weights),
        initial_bias=cfg["initial_bias"],
        initial_spread=cfg["initial_spread"],
        noise_std=cfg["noise"],
        seed=cfg["seed"],
        missing_rate=cfg["missing_rate"],
    )
    data, truth = simulator.generate_population(spec)
    out, written = Path(cfg["out"]), []
    fmt = cfg["format"]
    text = datastore.dumps_csv(data) if fmt == "csv" else datastore.dumps_json(data)
    _write(out / f"dataset.{fmt}", text, written)
    _write(out / "ground_truth.csv", truth.to_csv(), written)
    return written, {"participants": len(data.participants), "games": len(data.games)}


def cmd_ingest(cfg):
    data = _load(cfg)
    fmt = cfg["format"]
    text = datastore.dumps_csv(data) if fmt == "csv" else datastore.dumps_json(data)
    written = []
    _write(Path(cfg["out"]), text, written)
    return written, {"task": data.task.value, "participants": len(data.participants), "games": len(data.games)}


def cmd_filter(cfg):
    data = datastore.load_dataset(cfg["data"], group_size=None)
    thr = cfg["corr_threshold"]
    if thr not in ("auto",) + tuple(datastore.CORRELATION_PRESETS):
        try:
            thr = float(thr)
        except ValueError:
            raise ConfigError(f"--corr-threshold: {thr!r} is not 'auto', a preset or a number") from None
    filtered, report = datastore.filter_participants(data, cfg["min_full_games"], thr)
    out, written = Path(cfg["out"]), []
    fmt = out.suffix.lstrip(".") if out.suffix in (".csv", ".json") else "csv"
    _write(out, datastore.dumps_csv(filtered) if fmt == "csv" else datastore.dumps_json(filtered), written)
    _write(out.with_name(out.stem + ".report.json"), _dump_json(_clean(report.to_dict())), written)
    return written, {"kept": report.n_kept, "removed": report.n_removed, "threshold": report.corr_threshold}


def cmd_fit(cfg):
    data = datastore.load_dataset(cfg["data"], group_size=None)
    rows = []
    for p in data.participants:
        games = data.full_games(p)
        c = estimation.fit_individual(games)
        rows.append((p, float(c.alpha1), float(c.alpha2), int(c.degenerate1), int(c.degenerate2), len(games)))
    out, written = Path(cfg["out"]), []
    _write(out, _csv_text(("participant_id", "alpha1", "alpha2", "degenerate1", "degenerate2", "n_games"), rows), written)
    summary = {"participants": len(rows)}
    if rows:
        summary["median_alpha1"] = float(np.median([r[1] for r in rows]))
        summary["median_alpha2"] = float(np.median([r[2] for r in rows]))
    if cfg["linearity"]:
        lin = {}
        for r in (1, 2):
            samples = [s for p in data.participants for s in estimation.regression_samples(data.full_games(p), r)]
            res = estimation.linearity_test(samples)
            lin[f"round{r}"] = {
                "gamma_hat": res.gamma_hat, "F": res.F_statistic, "p_value": res.p_value,
                "n": res.n, "linear": res.linear,
            }
        _write(out.with_name(out.stem + ".linearity.json"), _dump_json(_clean(lin)), written)
    return written, summary


def cmd_cluster(cfg):
    couples = read_couples(cfg["couples"])
    pts = [tuple(couples[p]) for p in sorted(couples)]
    Ks = [int(k) for k in cfg["k"].split(",") if k.strip()]
    models = {}
    for K in Ks:
        m = estimation.fit_mixture(pts, K, seed=np.random.SeedSequence(cfg["seed"], spawn_key=(K,)), restarts=cfg["restarts"])
        models[str(K)] = m.to_dict()
    written = []
    _write(Path(cfg["out"]), _dump_json(_clean({"n_couples": len(pts), "models": models})), written)
    return written, {"K": Ks}


def _read_mixtures(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {int(k): estimation.MixtureModel.from_dict(v) for k, v in doc["models"].items()}


def cmd_predict(cfg):
    data = datastore.load_dataset(cfg["data"], group_size=None)
    spec = prediction.PredictorSpec.parse(cfg["method"], others_mode=cfg["others_mode"], target_round=cfg["target_round"])
    couples = read_couples(cfg["couples"]) if cfg["couples"] else {}
    mixtures = _read_mixtures(cfg["mixtures"]) if cfg["mixtures"] else {}
    population = None
    if 1 in mixtures:
        population = tuple(mixtures[1].means[0])
    elif couples:
        population = tuple(np.mean([tuple(c) for c in couples.values()], axis=0))
    if spec.target_round == 3 and spec.others_mode == "simulated_typical" and spec.method != "null" and population is None:
        raise ConfigError("simulated_typical needs --mixtures (with K=1) or --couples")
    if spec.method == "typical" and spec.K not in mixtures:
        raise ConfigError(f"{spec.name} needs --mixtures containing K={spec.K}")
    if spec.method == "individual_alpha" and not couples:
        raise ConfigError("individual_alpha needs --couples")
    rows = []
    for p in data.participants:
        games = data.full_games(p)
        if spec.method == "individual_alpha":
            if p not in couples:
                continue
            couple = tuple(couples[p])
        elif spec.method == "typical":
            cand = mixtures[spec.K].means
            couple = tuple(cand[estimation.assign_typical(games, cand)])
        else:
            couple = None
        for g, k in games:
            try:
                pred = prediction.predict(g, p, spec, couple=couple, population=population)
            except InfluxError:
                continue
            target = float(g.judgments[k, spec.target_round - 1])
            rows.append((g.game_id, p, target, float(pred)))
    written = []
    _write(Path(cfg["out"]), _csv_text(("game_id", "participant_id", "observed", "predicted"), rows), written)
    scale = data.task.report_scale
    err = np.array([r[2] - r[3] for r in rows])
    rmse = float(np.sqrt(np.mean(err * err)) / scale) if err.size else None
    return written, {"method": spec.name, "predictions": len(rows), "rmse_pooled": rmse}


def cmd_crossval(cfg):
    data = datastore.load_dataset(cfg["data"], group_size=None)
    methods = [m.strip() for m in cfg["methods"].split(",") if m.strip()]
    report = prediction.crossvalidate(
        data,
        methods=methods,
        training_sizes=parse_sizes(cfg["training_sizes"]),
        iterations=cfg["iterations"],
        seed=cfg["seed"],
        target_round=cfg["target_round"],
        others_mode=cfg["others_mode"],
        restarts=cfg["restarts"],
        resamples=cfg["resamples"],
        jobs=cfg["jobs"],
    )
    out, written = Path(cfg["out"]), []
    _write(out, report.to_json() if out.suffix == ".json" else report.to_csv(), written)
    _write(out.with_name(out.stem + ".participants.csv"), report.per_participant_csv(), written)
    summary = {"rmse_at_largest_size": {m: float(report.series(m)[-1]) for m in report.methods}}
    if cfg["figures"]:
        # plot data is a side product, kept out of the manifest's outputs
        figs = prediction.write_figure_files(report, cfg["figures"], cfg["floor"])
        summary["figures"] = [str(f) for f in figs]
    return written, summary


def cmd_control(cfg):
    spec = simulator.ControlSpec(
        n_pairs=cfg["n_pairs"], task=cfg["task"], lam=cfg["lam"], noise_std=cfg["noise"],
        shift_std=cfg["shift_std"], picture_std=cfg["picture_std"], seed=cfg["seed"],
    )
    pairs = simulator.generate_control_cohort(spec)
    out, written = Path(cfg["out"]), []
    _write(out / "control.csv", datastore.dumps_csv(unpredictability.control_dataset(pairs), replicate_column=True), written)
    sched = unpredictability.schedule_control_session(cfg["replicated"], cfg["fillers"])
    _write(out / "schedule.txt", unpredictability.format_schedule(sched) + "\n", written)
    return written, {"pairs": len(pairs), "clamped": sum(p.clamped for p in pairs)}


def cmd_unpredictability(cfg):
    data = datastore.load_dataset(cfg["pairs"], group_size=None)
    est = unpredictability.estimate_unpredictability(unpredictability.pairs_from_dataset(data))
    scale = data.task.report_scale
    doc = est.to_dict()
    doc["task"] = data.task.value
    doc["std_eta_round2_reported"] = est.std_eta_round2 / scale
    doc["std_eta_round3_reported"] = est.std_eta_round3 / scale
    out, written = Path(cfg["out"]), []
    _write(out, _dump_json(_clean(doc)), written)
    for r, curve in ((2, est.lambda_curve), (3, est.lambda_curve_round3)):
        rows = [(float(lam), float(v)) for lam, v in curve]
        _write(out.with_name(f"{out.stem}.lambda_round{r}.csv"), _csv_text(("lambda", "rms"), rows), written)
    return written, {"lambda_star": est.lambda_star, "std_eta_round2": est.std_eta_round2}


def cmd_analyze(cfg):
    data = datastore.load_dataset(cfg["data"], group_size=None)
    out, written = Path(cfg["out"]), []
    doc = {"task": data.task.value, "success": analytics.success_summary(data)}
    dist = analytics.distance_to_mean_stats(data)
    doc["distance_to_mean"] = {str(k): v for k, v in dist.items()}
    rows = [(r, s["median"], s["q1"], s["q3"], s["mean"], s["n"]) for r, s in ((r, dist[r]) for r in (1, 2, 3))]
    _write(out / "fig4_distance_to_mean.csv", _csv_text(("round", "median", "q1", "q3", "mean", "n"), rows), written)
    groups = analytics.group_errors(data)
    _write(out / "fig5_group_error.csv", _csv_text(("session_id", "round1", "round2", "round3"), groups), written)
    for r in (1, 2):
        bins = analytics.pooled_regression_bins(data, r, cfg["bins"])
        _write(out / f"figS3_round{r}.csv", _csv_text(("d_lo", "d_hi", "y_lo", "y_hi", "count"), bins), written)
    wisdom = [analytics.wisdom_decomposition(g.judgments[:, 0], g.truth) for g in data.games]
    scale = data.task.report_scale
    wrows = [
        (g.game_id, w.D_plus / scale, w.D_minus / scale, w.mean_abs_error / scale, w.mean_to_truth / scale)
        for g, w in zip(data.games, wisdom)
    ]
    _write(out / "wisdom.csv", _csv_text(("game_id", "D_plus", "D_minus", "mean_abs_error", "mean_to_truth"), wrows), written)
    if cfg["couples"]:
        couples = read_couples(cfg["couples"])
        a = np.array([tuple(couples[p]) for p in sorted(couples)])
        ks = analytics.ks_two_sample(a[:, 0], a[:, 1])
        doc["alpha"] = {
            "median_alpha1": float(np.median(a[:, 0])),
            "median_alpha2": float(np.median(a[:, 1])),
            "ks_D": ks.D,
            "ks_p": ks.p,
        }
        try:
            doc["alpha"]["wilcoxon_p_alpha1_gt_alpha2"] = analytics.wilcoxon_signed_rank(a[:, 0] - a[:, 1], "greater")
        except InfluxError as exc:
            doc["alpha"]["wilcoxon_p_alpha1_gt_alpha2"] = str(exc)
        doc["partial_correlations"] = analytics.influence_performance_correlations(data, couples)
    _write(out / "summary.json", _dump_json(_clean(doc)), written)
    return written, {"files": len(written) + 1}


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "filter": cmd_filter,
    "fit": cmd_fit,
    "cluster": cmd_cluster,
    "predict": cmd_predict,
    "crossval": cmd_crossval,
    "control": cmd_control,
    "unpredictability": cmd_unpredictability,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    try:
        cfg = resolve(command, args)
        print(f"seed: {cfg['seed']}", flush=True)
        written, summary = COMMANDS[command](cfg)
        manifest = write_manifest(command, cfg, written)
    except (InfluxError, OSError, ValueError, KeyError) as exc:
        err = {"command": command, "error": type(exc).__name__, "message": str(exc)}
        diags = getattr(exc, "diagnostics", None)
        if diags:
            err["diagnostics"] = [{"line": ln, "message": m} for ln, m in diags]
        line = getattr(exc, "line", None)
        if line is not None:
            err["line"] = line
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 2 if isinstance(exc, ConfigError) else 1
    for p in written:
        print(f"wrote {p}")
    print(f"wrote {manifest}")
    print(json.dumps(_clean(summary), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
