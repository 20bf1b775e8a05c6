"""Command-line front end.

    fcir --config experiment.toml --out results/ [--workers N] [--seed S]
    fcir --preset figure-4.1 --out results/
    fcir --verify-manifest results/manifest.json
    fcir --list-presets

Each run writes its CSV outputs plus ``manifest.json`` (package version,
resolved configuration, wall-clock duration and SHA-256 of every output).
Exit status is 0 only if every output was written and re-validated.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from . import __version__, csvio
from . import fbm as fbm_mod
from . import montecarlo as mc
from . import sde as sde_mod
from .config import ConfigError, ExperimentConfig, parse_config, preset_names, preset_text
from .drift import builtin, check_conditions

__all__ = ["RunManifest", "run", "verify_manifest", "main"]

MANIFEST = "manifest.json"
STUDY_HEADER = ["h", "dt", "median_sup_residual", "diagnostic"]


@dataclass
class RunManifest:
    version: str
    command: str
    config: dict
    duration_s: float
    outputs: dict[str, str]  # file name -> sha256

    def write(self, dest: Path) -> Path:
        dest.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", "utf-8")
        return dest


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _hursts(cfg: ExperimentConfig) -> list[float]:
    h = cfg["hurst"]
    return list(h) if isinstance(h, list) else [h]


def _ensemble_config(cfg: ExperimentConfig, hurst: float, grid=None) -> mc.EnsembleConfig:
    grid = grid or cfg.grid()
    return mc.EnsembleConfig(
        n_paths=cfg["n_paths"],
        master_seed=cfg["seed"],
        grid=grid,
        spec=cfg.drift_spec(grid.horizon),
        sigma=cfg["sigma"],
        z0=cfg["z0"],
        hurst=hurst,
        fbm_method=cfg["fbm_method"],
    )


# each runner returns {file name: expected CSV header (None for JSON)}


def _run_fbm(cfg, out, workers):
    path = fbm_mod.generate(cfg.grid(), cfg["hurst"], cfg["seed"], cfg["fbm_method"])
    fbm_mod.write_path_csv(path, out / "fbm.csv")
    return {"fbm.csv": ["t", "w"]}


def _run_simulate(cfg, out, workers):
    driver = fbm_mod.generate(cfg.grid(), cfg["hurst"], cfg["seed"], cfg["fbm_method"])
    spec = cfg.drift_spec()
    if cfg["solver"] == "picard":
        result = sde_mod.picard_solve(
            spec, cfg["sigma"], cfg["z0"], driver, cfg["level"], cfg["tol"], cfg["max_iter"]
        )
        path = result.path
    else:
        path = sde_mod.euler_maruyama(spec, cfg["sigma"], cfg["z0"], driver)
    fbm_mod.write_path_csv(driver, out / "fbm.csv")
    sde_mod.write_path_csv(path, out / "path.csv")
    return {"fbm.csv": ["t", "w"], "path.csv": ["t", "z", "x"]}


def _run_ensemble(cfg, out, workers):
    stats = mc.run_ensemble(_ensemble_config(cfg, cfg["hurst"]), workers)
    mc.write_stats_csv(stats, out / "stats.csv")
    prob = mc.HitProbability(stats.n_paths, stats.hit_count, stats.p_hat, stats.ci95)
    mc.write_hitprob_csv([(cfg["hurst"], prob)], out / "hitprob.csv")
    return {"stats.csv": mc.STATS_HEADER, "hitprob.csv": mc.HITPROB_HEADER}


def _run_hitprob(cfg, out, workers):
    rows = [(h, mc.hitting_probability(_ensemble_config(cfg, h), workers)) for h in _hursts(cfg)]
    mc.write_hitprob_csv(rows, out / "hitprob.csv")
    return {"hitprob.csv": mc.HITPROB_HEADER}


def _run_sweep(cfg, out, workers):
    grid = cfg.grid()
    base = mc.EnsembleConfig(
        cfg["n_paths"],
        cfg["seed"],
        grid,
        builtin("level_sequence", {"k": cfg["ks"][0], "a": cfg["a"]}, grid.horizon),
        cfg["sigma"],
        cfg["z0"],
        cfg["hurst"],
        cfg["fbm_method"],
    )
    rows = mc.drift_sweep(base, cfg["ks"], cfg["a"], cfg["coupled"], workers)
    mc.write_hitprob_csv([(r.k, r) for r in rows], out / "hitprob.csv")
    return {"hitprob.csv": mc.HITPROB_HEADER}


def _run_verify(cfg, out, workers):
    dts = cfg["dt"]
    studies = []
    for h in _hursts(cfg):
        base = _ensemble_config(cfg, h, cfg.grid(dts[0]))
        studies.append((h, mc.convergence_study(base, dts, cfg["n_paths"], workers)))
    mc.write_residual_csv(studies, out / "residuals.csv")
    summary = (
        (h, row.dt, row.median_sup_residual, row.diagnostic) for h, rows in studies for row in rows
    )
    csvio.write_rows(out / "study.csv", STUDY_HEADER, summary)
    return {"residuals.csv": mc.RESIDUAL_HEADER, "study.csv": STUDY_HEADER}


def _run_conditions(cfg, out, workers):
    horizon = cfg["horizon"]
    report = check_conditions(
        cfg.drift_spec(horizon), horizon, cfg["t_res"], cfg["x_res"], cfg["x_max"]
    )
    doc = {
        "drift": cfg.drift,
        "x_star": report.x_star,
        "x_max": report.x_max,
        "audited_region": {
            "horizon": report.audited_region[0],
            "t_res": report.audited_region[1],
            "x_res": report.audited_region[2],
        },
        "d1_ok": report.d1_ok,
        "d1_violations": [list(v) for v in report.d1_violations],
        "d2_ok": report.d2_ok,
        "d2_witness": report.d2_witness,
        "d2_min_f": report.d2_min_f,
    }
    (out / "conditions.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")
    return {"conditions.json": None}


RUNNERS = {
    "fbm": _run_fbm,
    "simulate": _run_simulate,
    "ensemble": _run_ensemble,
    "hitprob": _run_hitprob,
    "sweep": _run_sweep,
    "verify": _run_verify,
    "conditions": _run_conditions,
}


def _validate_output(path: Path, header: list[str] | None) -> None:
    if not path.is_file():
        raise RuntimeError(f"output {path} was not written")
    if header is None:
        json.loads(path.read_text("utf-8"))
        return
    got, rows = csvio.read_rows(path)
    if got != list(header):
        raise RuntimeError(f"{path.name}: header {got} != {header}")
    if not rows or any(len(r) != len(header) for r in rows):
        raise RuntimeError(f"{path.name}: empty or ragged rows")


def run(config: ExperimentConfig, out_dir: str | Path, workers: int | None = None) -> RunManifest:
    """Execute ``config``, writing outputs and ``manifest.json`` into ``out_dir``.

    Outputs are produced in a staging directory inside ``out_dir`` and moved
    into place only after all of them validate, so a failed run leaves no
    partial files behind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    start = time.perf_counter()
    try:
        expected = RUNNERS[config.command](config, staging, workers)
        digests = {}
        for name, header in expected.items():
            _validate_output(staging / name, header)
            digests[name] = sha256(staging / name)
        manifest = RunManifest(
            version=__version__,
            command=config.command,
            config=config.resolved(),
            duration_s=round(time.perf_counter() - start, 3),
            outputs=digests,
        )
        for name in digests:
            os.replace(staging / name, out / name)
        manifest.write(out / MANIFEST)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return manifest


def verify_manifest(manifest_path: str | Path) -> list[str]:
    """Names of outputs whose current digest differs from the manifest."""
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text("utf-8"))
    bad = []
    for name, digest in doc["outputs"].items():
        target = manifest_path.parent / name
        if not target.is_file() or sha256(target) != digest:
            bad.append(name)
    return bad


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcir", description="Generalised fractional CIR simulation experiments."
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", type=Path, help="TOML experiment file")
    source.add_argument("--preset", help="name of a shipped experiment (see --list-presets)")
    source.add_argument(
        "--verify-manifest", type=Path, metavar="MANIFEST", help="re-check output digests"
    )
    source.add_argument("--list-presets", action="store_true")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument(
        "--workers", type=int, default=None, help="worker processes (default: CPU count)"
    )
    parser.add_argument("--seed", type=int, help="override the configured master seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.list_presets:
        print("\n".join(preset_names()))
        return 0
    if args.verify_manifest is not None:
        bad = verify_manifest(args.verify_manifest)
        for name in bad:
            print(f"digest mismatch: {name}", file=sys.stderr)
        return 1 if bad else 0

    try:
        if args.config is not None:
            text, label = args.config.read_text("utf-8"), args.config.stem
        else:
            text, label = preset_text(args.preset), args.preset
        cfg = parse_config(text)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except (ConfigError, OSError) as exc:
        print(f"fcir: configuration error: {exc}", file=sys.stderr)
        return 2
    out = args.out or Path(cfg.get("output") or Path("out") / label)

    try:
        manifest = run(cfg, out, args.workers)
    except Exception as exc:
        print(f"fcir: {cfg.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for name, digest in manifest.outputs.items():
        print(f"{out / name}  sha256={digest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
