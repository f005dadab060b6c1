"""Command-line interface: corpus synthesis, grid and adaptive runs,
count sweeps, comparison statistics, and reports.

Configuration is INI-style (configparser) with sections [scenario],
[corpus], [mel], [gabor], [topology], [darf], and [grid]; every key has a
default and all effective values are echoed into the run manifest.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import audio, bench
from .audio import CorpusParams, MaskerSpec, SceneLayout
from .budget import budget_total
from .darf import DarfConfig, run_darf
from .devices import DeviceDescriptor
from .fade import GridConfig, run_grid, srt_from_map
from .frontend import AudiogramProfile, MelParams, SgbfbParams, load_audiogram
from .pipeline import AcousticPipeline, Scenario
from .recognizer import Topology

CACHE_ENV = "SRTLAB_CACHE"
RESULTS_HEADER = ("scenario,seed,srt_db,srt_pre_multicondition_db,"
                  "budget_s,iterations,wall_s")


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, "~/.cache/srtlab")).expanduser()


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _coerce(cls, section) -> dict:
    """Read the keys of one config section into kwargs for a parameter
    dataclass, using the default values to pick the type."""
    out = {}
    for f in dataclasses.fields(cls):
        if section is None or f.name not in section:
            continue
        default = f.default
        if isinstance(default, bool):
            out[f.name] = section.getboolean(f.name)
        elif isinstance(default, int):
            out[f.name] = section.getint(f.name)
        elif isinstance(default, float):
            out[f.name] = section.getfloat(f.name)
        elif isinstance(default, tuple):
            out[f.name] = tuple(float(x) for x in section[f.name].split(","))
        else:
            out[f.name] = section[f.name]
    return out


def load_config(path: str | None) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    if path:
        if not cfg.read(path):
            raise FileNotFoundError(f"config file {path!r} not found")
    return cfg


def _profile_from_name(name: str) -> AudiogramProfile:
    if name == "normal":
        return AudiogramProfile.normal()
    if name == "n3":
        return AudiogramProfile.n3()
    return load_audiogram(name)


def build_scenario(cfg: configparser.ConfigParser, args) -> Scenario:
    sc = cfg["scenario"] if cfg.has_section("scenario") else None

    def pick(flag, key, default):
        if flag is not None:
            return flag
        if sc is not None and key in sc:
            return sc[key]
        return default

    masker_kind = pick(args.masker, "masker", "stationary")
    level = float(pick(None, "masker_level", 65.0))
    layout = pick(args.layout, "layout", "S0N0")
    profile = _profile_from_name(pick(args.profile, "profile", "normal"))
    device = DeviceDescriptor.parse(pick(args.device, "device", "identity"))
    corpus = CorpusParams(**_coerce(
        CorpusParams, cfg["corpus"] if cfg.has_section("corpus") else None))
    mel = MelParams(**_coerce(
        MelParams, cfg["mel"] if cfg.has_section("mel") else None))
    gabor = SgbfbParams(**_coerce(
        SgbfbParams, cfg["gabor"] if cfg.has_section("gabor") else None))
    topology = Topology(**_coerce(
        Topology, cfg["topology"] if cfg.has_section("topology") else None))
    return Scenario(
        masker=MaskerSpec(kind=masker_kind, level_dbspl=level),
        layout=SceneLayout(tag=layout),
        profile=profile,
        device=device,
        corpus_seed=int(pick(None, "corpus_seed", 1)),
        corpus=corpus, mel=mel, gabor=gabor, topology=topology,
        masker_duration_s=float(pick(None, "masker_duration_s", 20.0)),
        name=pick(None, "name", "scenario"))


def darf_config(cfg: configparser.ConfigParser, args=None) -> DarfConfig:
    kwargs = _coerce(DarfConfig, cfg["darf"] if cfg.has_section("darf") else None)
    return DarfConfig(**kwargs)


def grid_config(cfg: configparser.ConfigParser) -> GridConfig:
    kwargs = _coerce(GridConfig, cfg["grid"] if cfg.has_section("grid") else None)
    return GridConfig(**kwargs)


def _echo_config(cfg: configparser.ConfigParser, scenario: Scenario) -> str:
    lines = [f"scenario_hash = {scenario.scenario_hash()}"]
    for obj, tag in ((scenario.masker, "masker"), (scenario.layout, "layout"),
                     (scenario.profile, "profile"), (scenario.device, "device"),
                     (scenario.corpus, "corpus"), (scenario.mel, "mel"),
                     (scenario.gabor, "gabor"), (scenario.topology, "topology")):
        for f in dataclasses.fields(obj):
            lines.append(f"{tag}.{f.name} = {getattr(obj, f.name)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# results and manifests
# ---------------------------------------------------------------------------

def append_result(path: Path, scenario: Scenario, seed: int, srt: float,
                  srt_pre: float, budget_s: float, iterations: int,
                  wall_s: float) -> None:
    new = not path.exists()
    with open(path, "a") as f:
        if new:
            f.write(RESULTS_HEADER + "\n")
        f.write(f"{scenario.scenario_hash()},{seed},{srt:.6f},{srt_pre:.6f},"
                f"{budget_s:.3f},{iterations},{wall_s:.3f}\n")


def write_manifest(path: Path, scenario: Scenario, cfg, seed: int,
                   result) -> None:
    lines = ["# run manifest", f"seed = {seed}", _echo_config(cfg, scenario), ""]
    lines.append("# budget (s by role)")
    for k, v in sorted(budget_total(result.ledger).items()):
        lines.append(f"{k} = {v:.3f}")
    lines.append("")
    lines.append("# phase log")
    for entry in result.log.entries:
        ts, kind, *payload = entry
        lines.append(f"{ts:.3f} {kind} {payload}")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth_corpus(args) -> int:
    cfg = load_config(args.config)
    params = CorpusParams(**_coerce(
        CorpusParams, cfg["corpus"] if cfg.has_section("corpus") else None))
    corpus = audio.synthesize_corpus(args.seed, params)
    out = Path(args.out) if args.out else cache_dir() / "corpus"
    out.mkdir(parents=True, exist_ok=True)
    audio.export_corpus(corpus, out)
    print(f"corpus written to {out}")
    return 0


def cmd_fade_grid(args) -> int:
    cfg = load_config(args.config)
    scenario = build_scenario(cfg, args)
    gc = grid_config(cfg)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    pipeline = AcousticPipeline(scenario, seed=args.seed, retain_train_sets=False)
    rec_map = run_grid(pipeline, config=gc)
    est = srt_from_map(rec_map)
    rec_map.to_csv(out / "fade_map.csv")
    rec_map.to_figure(out / "fade_map.svg")
    append_result(out / "results.csv", scenario, args.seed, est.srt, est.srt,
                  pipeline.ledger.total_seconds(), len(rec_map.rates),
                  pipeline.ledger.wall_s)
    print(f"srt_db = {est.srt:.2f}")
    return 0


def cmd_darf_run(args) -> int:
    cfg = load_config(args.config)
    scenario = build_scenario(cfg, args)
    dc = darf_config(cfg)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    pipeline = AcousticPipeline(scenario, seed=args.seed)
    result = run_darf(pipeline, dc)
    result.rec_map.to_csv(out / "darf_map.csv")
    result.multi_map.to_csv(out / "darf_multi_map.csv")
    iterations = result.approx_iterations + result.region_updates
    append_result(out / "results.csv", scenario, args.seed, result.srt,
                  result.srt_pre_multicondition,
                  result.ledger.total_seconds(), iterations, result.wall_s)
    write_manifest(out / "manifest.txt", scenario, cfg, args.seed, result)
    print(f"srt_db = {result.srt:.2f} "
          f"(pre-multicondition {result.srt_pre_multicondition:.2f}, "
          f"budget {result.ledger.total_seconds():.0f} s)")
    return 0


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    scenario = build_scenario(cfg, args)
    dc = darf_config(cfg)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    if args.reference is not None:
        reference = args.reference
    else:
        pipeline = AcousticPipeline(scenario, seed=args.seed,
                                    retain_train_sets=False)
        reference = srt_from_map(run_grid(pipeline, config=grid_config(cfg))).srt
        print(f"fade reference srt_db = {reference:.2f}")

    def make_pipeline(seed):
        return AcousticPipeline(scenario, seed=seed)

    cells = bench.sweep_counts(make_pipeline, reference,
                               _int_list(args.train), _int_list(args.test),
                               reps=args.reps, base_seed=args.seed,
                               darf_config=dc)
    bench.sweep_to_csv(cells, out / "sweep.csv")
    bench.sweep_to_figure(cells, out / "sweep.svg")
    best = bench.best_cell(cells)
    print(f"{len(cells)} cells; lowest AST {best.ast:.1f} at "
          f"{best.n_train}/{best.n_test}")
    return 0


def _read_column(path) -> np.ndarray:
    vals = []
    with open(path) as f:
        for ln in f:
            ln = ln.split("#")[0].strip()
            if ln:
                vals.append(float(ln.split(",")[-1]))
    return np.asarray(vals)


def cmd_compare(args) -> int:
    stats = bench.compare(_read_column(args.pred), _read_column(args.ref))
    r2 = "NA" if stats.r2 is None else f"{stats.r2:.6f}"
    print(f"rmse_db = {stats.rmse:.6f}")
    print(f"bias_db = {stats.bias:.6f}")
    print(f"r2 = {r2}")
    print(f"n = {stats.n}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out or ".")
    cells = bench.sweep_from_csv(out / "sweep.csv")
    best = bench.best_cell(cells)
    lines = [
        "# sweep report",
        "# durations include the approximation-stage audio",
        f"cells = {len(cells)}",
        f"lowest_ast = {best.ast:.6f}",
        f"lowest_ast_train = {best.n_train}",
        f"lowest_ast_test = {best.n_test}",
        f"lowest_ast_bias_db = {best.bias:.6f}",
        f"lowest_ast_sd_db = {best.srt_sd:.6f}",
        f"lowest_ast_duration_s = {best.mean_duration_s:.3f}",
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srtlab",
                                description="simulated SRT laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="INI configuration file")
        sp.add_argument("--seed", type=int, default=1)
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--device", default=None,
                        help="identity | gain:DB | compressor:R:KNEE | "
                             "beamformer | external:tcp:HOST:PORT")
        sp.add_argument("--masker", default=None,
                        help="silence | stationary | fluctuating | babble")
        sp.add_argument("--profile", default=None,
                        help="normal | n3 | audiogram file")
        sp.add_argument("--layout", default=None, choices=["S0", "S0N0", "S0N90"])

    sp = sub.add_parser("synth-corpus", help="synthesize and export the corpus")
    common(sp)
    sp.set_defaults(func=cmd_synth_corpus)

    sp = sub.add_parser("fade-grid", help="exhaustive recognition-map run")
    common(sp)
    sp.set_defaults(func=cmd_fade_grid)

    sp = sub.add_parser("darf-run", help="adaptive data-reduced run")
    common(sp)
    sp.set_defaults(func=cmd_darf_run)

    sp = sub.add_parser("sweep", help="sentence-count sweep vs grid reference")
    common(sp)
    sp.add_argument("--reps", type=int, default=8)
    sp.add_argument("--train", default="120,240", help="comma list of counts")
    sp.add_argument("--test", default="20,40", help="comma list of counts")
    sp.add_argument("--reference", type=float, default=None,
                    help="skip the grid run and use this reference SRT")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("compare", help="rmse/bias/r2 between two value files")
    sp.add_argument("pred")
    sp.add_argument("ref")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("report", help="summarize a finished sweep")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # CLI contract: non-zero exit on any error
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
