"""``ecosom`` command line: ingest | train | cluster | advise | emulate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import accelemu, advisor, fuelmodel, pipeline
from .features import as_matrix, read_windows, write_windows
from .fuelmodel import VehicleParams
from .somanalysis import ClusterMap, cluster_scheme
from .somcore import SomModel, quantization_error
from .telemetry import read_sessions, resample

log = logging.getLogger("ecosom")

CONFIG_ENV = "ECOSOM_CONFIG"


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    input: str | None = None
    model: str | None = None
    clusters: str | None = None
    vehicle: str | None = None
    out: str | None = None
    trace_dir: str | None = None
    seed: int = 0
    scheme: int = 5
    threshold: float | None = None
    interval_s: float = advisor.DEFAULT_INTERVAL_S
    min_speed: float = advisor.DEFAULT_MIN_SPEED
    window: int = 256
    shift: int = 128
    rate: float = 32.0
    grid: str = "11x11"
    iterations: int | None = None
    n_random: int = 1000

    def validate(self) -> None:
        if self.window < 1:
            raise UsageError("--window must be positive")
        if not 0 < self.shift <= self.window:
            raise UsageError("--shift must lie in (0, window]")
        if self.rate <= 0:
            raise UsageError("--rate must be positive")
        if self.interval_s <= 0:
            raise UsageError("--interval-s must be positive")
        if self.min_speed < 0:
            raise UsageError("--min-speed must be non-negative")
        if self.scheme not in (3, 5):
            raise UsageError("--scheme must be 3 or 5")
        if self.threshold is not None and not 0 < self.threshold <= 1:
            raise UsageError("--threshold must lie in (0, 1]")
        if self.iterations is not None and self.iterations < 0:
            raise UsageError("--iterations must be non-negative")
        self.grid_shape()

    def grid_shape(self) -> tuple[int, int]:
        try:
            rows, cols = (int(v) for v in self.grid.lower().split("x"))
        except ValueError:
            raise UsageError(f"--grid must look like ROWSxCOLS, got {self.grid!r}") from None
        if rows < 1 or cols < 1:
            raise UsageError("--grid needs at least one row and one column")
        return rows, cols

    def params(self) -> VehicleParams:
        return VehicleParams.load(self.need("vehicle")) if self.vehicle else VehicleParams()

    def need(self, name: str) -> str:
        value = getattr(self, name)
        if not value:
            raise UsageError(f"--{name.replace('_', '-')} is required for this command")
        return value

    def existing(self, name: str) -> Path:
        path = Path(self.need(name))
        if not path.exists():
            raise UsageError(f"{name} file not found: {path}")
        return path


def load_config(path: str | None) -> dict:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    return data


def resolve(args: argparse.Namespace) -> RunConfig:
    """Built-in defaults, overridden by the config file, overridden by flags."""
    merged = load_config(args.config)
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            merged[f.name] = value
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


def cmd_ingest(cfg: RunConfig) -> int:
    src = cfg.existing("input")
    out = cfg.need("out")
    params = cfg.params()
    sessions = read_sessions(src)
    if not sessions:
        raise UsageError(f"{src}: no telemetry rows")
    windows = []
    for s in sessions:
        kept = pipeline.session_windows(s, params, cfg.window, cfg.shift, cfg.min_speed, cfg.rate)
        log.info("%s/%s: %d samples, %d windows kept", s.driver_id, s.session_id, len(s), len(kept))
        if cfg.trace_dir:
            Path(cfg.trace_dir).mkdir(parents=True, exist_ok=True)
            trace = fuelmodel.simulate_session(resample(s, cfg.rate), params, window_size=cfg.window,
                                               shift=cfg.shift)
            trace.write_csv(Path(cfg.trace_dir) / f"fuel_{s.driver_id}_{s.session_id}.csv")
        windows.extend(kept)
    n = write_windows(windows, out)
    log.info("wrote %d windows to %s", n, out)
    return 0


def cmd_train(cfg: RunConfig) -> int:
    windows = read_windows(cfg.existing("input"), cfg.rate, cfg.window)
    rows, cols = cfg.grid_shape()
    if len(windows) < 2:
        raise UsageError(f"training needs at least 2 windows, got {len(windows)}")
    model = pipeline.fit_som(windows, rows, cols, cfg.seed, cfg.iterations)
    model.save(cfg.need("out"))
    qe = quantization_error(model, model.scaler.transform(as_matrix(w.vector for w in windows)))
    log.info("trained %dx%d map on %d windows, T=%d, quantization error %.4f",
             rows, cols, len(windows), model.schedule.T, qe)
    return 0


def cmd_cluster(cfg: RunConfig) -> int:
    model = SomModel.load(cfg.existing("model"))
    windows = read_windows(cfg.existing("input"), cfg.rate, cfg.window)
    cmap = cluster_scheme(model, windows, cfg.scheme, cfg.threshold)
    cmap.save(cfg.need("out"))
    for c in cmap.clusters:
        log.info("cluster %d %-12s avg %.2f var %.3f max %.2f L/100km (%d windows, %d neurons)",
                 c.id, c.label, c.avg, c.var, c.max, c.n_windows, len(c.members))
    return 0


def cmd_advise(cfg: RunConfig) -> int:
    model = SomModel.load(cfg.existing("model"))
    cmap = ClusterMap.load(cfg.existing("clusters"))
    params = cfg.params()
    reports = []
    for s in read_sessions(cfg.existing("input")):
        r = advisor.session_report(resample(s, cfg.rate), model, cmap, params, interval_s=cfg.interval_s,
                                   min_speed=cfg.min_speed, window_size=cfg.window, shift=cfg.shift)
        if r.status != "ok":
            log.warning("%s/%s: %s", s.driver_id, s.session_id, r.status)
        reports.append(r)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            n = advisor.write_reports(reports, fh)
    else:
        n = advisor.write_reports(reports, sys.stdout)
    log.info("%d interval report(s) for %d session(s)", n, len(reports))
    return 0


def emulation_inputs(cfg: RunConfig, model: SomModel) -> np.ndarray:
    """Stored weights, the supplied feature windows, then seeded random points."""
    parts = [model.weights]
    if cfg.input:
        windows = read_windows(cfg.existing("input"), cfg.rate, cfg.window)
        if windows and model.scaler is not None:
            z = model.scaler.transform(as_matrix(w.vector for w in windows))
            parts.append(np.clip(z, 0.0, accelemu.Q_MAX / accelemu.SCALE))
    rng = np.random.default_rng(cfg.seed)
    parts.append(rng.uniform(0.0, 1.0, size=(cfg.n_random, model.n_inputs)))
    return np.vstack(parts)


def cmd_emulate(cfg: RunConfig) -> int:
    model = SomModel.load(cfg.existing("model"))
    cmap = ClusterMap.load(cfg.existing("clusters"))
    out = Path(cfg.need("out"))
    out.mkdir(parents=True, exist_ok=True)
    core = accelemu.load_model(model, cmap)
    (out / "accel.rom").write_bytes(core.rom_image())
    traced = accelemu.load_model(model, cmap, trace=True)
    accelemu.run_inference(traced, model.weights[0])
    traced.write_trace(out / "trace.csv")
    report = accelemu.crosscheck_float(core, model, cmap, emulation_inputs(cfg, model))
    summary = report.summary()
    summary["expected_cycles"] = accelemu.latency_cycles(model.n_inputs, model.n_neurons)
    (out / "emulate.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    log.info("%d inputs, cycles %s, agreement above bound %.4f, %d disagreement(s) (bound %.5f)",
             summary["inputs"], summary["cycles"], summary["agreement_above_bound"],
             len(summary["disagreements"]), summary["bound"])
    if summary["agreement_above_bound"] < 1.0:
        log.error("fixed-point and float classification disagree above the quantization bound")
        return 1
    return 0


COMMANDS = {
    "ingest": (cmd_ingest, "telemetry CSV -> fuel-labeled feature windows CSV"),
    "train": (cmd_train, "feature windows -> trained map (JSON)"),
    "cluster": (cmd_cluster, "map + labeled windows -> labeled cluster map (JSON)"),
    "advise": (cmd_advise, "telemetry + map + clusters -> JSON-lines advice reports"),
    "emulate": (cmd_emulate, "map + clusters -> ROM image, cycle trace and agreement report"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    common.add_argument("--input")
    common.add_argument("--model")
    common.add_argument("--clusters")
    common.add_argument("--vehicle", help="vehicle parameter JSON")
    common.add_argument("--out")
    common.add_argument("--trace-dir", dest="trace_dir")
    common.add_argument("--seed", type=int)
    common.add_argument("--scheme", type=int, choices=(3, 5))
    common.add_argument("--threshold", type=float, help="U-matrix threshold as a fraction of max U")
    common.add_argument("--interval-s", dest="interval_s", type=float)
    common.add_argument("--min-speed", dest="min_speed", type=float)
    common.add_argument("--window", type=int)
    common.add_argument("--shift", type=int)
    common.add_argument("--rate", type=float)
    common.add_argument("--grid", help="map shape ROWSxCOLS")
    common.add_argument("--iterations", type=int, help="training iterations (default 200 per window)")
    common.add_argument("--n-random", dest="n_random", type=int, help="random inputs for emulate")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="ecosom", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="ecosom: %(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = resolve(args)
        return COMMANDS[args.command][0](cfg)
    except (ValueError, OSError, KeyError, accelemu.ProtocolError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
