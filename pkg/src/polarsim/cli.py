"""Command-line entry points: localize, optimize, and sweep runs.

Configs are JSON files; every command writes results.csv / summary.json /
manifest.json into the output directory and exits nonzero with a
stage-tagged message on failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from .fast_opt import PddConfig, pdd_solve
from .harness import (
    LOCALIZE_COLUMNS,
    SCHEMES,
    SWEEP_COLUMNS,
    Scenario,
    _stream,
    build_channel_instance,
    export_results,
    generate_scenario,
    run_localization,
    run_two_timescale,
    three_sector_poses,
    write_manifest,
    write_summary,
)
from .localization import build_music_grid, build_pilot_pattern
from .slow_opt import PsoConfig


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise StageError("config", f"cannot read config {path}: {exc}") from exc


def _scenario_from_config(config: dict, seed: int | None) -> Scenario:
    params = dict(config.get("scenario", {}))
    known = {f.name for f in dataclasses.fields(Scenario)}
    unknown = set(params) - known
    if unknown:
        raise StageError("config", f"unknown scenario keys: {sorted(unknown)}")
    if seed is not None:
        params["seed"] = seed
    if "rho_weights" in params and params["rho_weights"] is not None:
        params["rho_weights"] = tuple(params["rho_weights"])
    try:
        return Scenario(**params)
    except (TypeError, ValueError) as exc:
        raise StageError("config", str(exc)) from exc


def _pdd_from_config(config: dict) -> PddConfig:
    try:
        return PddConfig(**config.get("pdd", {}))
    except (TypeError, ValueError) as exc:
        raise StageError("config", f"bad pdd section: {exc}") from exc


def _pso_from_config(config: dict) -> PsoConfig:
    try:
        return PsoConfig(**config.get("pso", {}))
    except (TypeError, ValueError) as exc:
        raise StageError("config", f"bad pso section: {exc}") from exc


def cmd_localize(config: dict, out: Path, seed: int) -> None:
    scn = _scenario_from_config(config, seed)
    section = config.get("localize", {})
    snrs = section.get("snr_db", [0, 5, 10, 15, 20])
    trials = int(section.get("trials", 50))
    calibration = section.get("calibration", "genie")

    pattern = build_pilot_pattern(
        scn.n_users, scn.pilot_len, scn.pilot_blocks, scn.n_poses, scn.cube_side,
        wavelength=scn.wavelength,
    )
    grid = build_music_grid(pattern.poses, scn.layout(), scn.wavelength, scn.pattern())
    rows = []
    per_snr: dict[float, list] = {float(s): [] for s in snrs}
    for snr in snrs:
        for trial in range(trials):
            trial_seed = scn.seed + trial
            inst = generate_scenario(
                dataclasses.replace(scn, seed=trial_seed)
            )
            rng = _stream(trial_seed, "pilot-noise")
            try:
                loc = run_localization(inst, rng, calibration=calibration, grid=grid, snr_db=snr)
            except Exception as exc:
                raise StageError("localize", str(exc)) from exc
            for k, user in enumerate(inst.users):
                true_p = user.position
                est_p = loc.positions[k]
                rows.append(
                    {
                        "seed": trial_seed,
                        "snr_db": float(snr),
                        "trial": trial,
                        "user_id": k,
                        "true_x": true_p[0],
                        "true_y": true_p[1],
                        "true_z": true_p[2],
                        "est_x": est_p[0],
                        "est_y": est_p[1],
                        "est_z": est_p[2],
                        "error_m": loc.errors[k],
                    }
                )
                per_snr[float(snr)].append(float(loc.errors[k]))
    export_results(rows, LOCALIZE_COLUMNS, out / "results.csv")
    summary = {
        "metric": "position_error_m",
        "per_snr": {
            str(snr): {
                "median": float(np.median(errs)),
                "mean": float(np.mean(errs)),
                "count": len(errs),
            }
            for snr, errs in per_snr.items()
        },
    }
    write_summary(out / "summary.json", summary)
    write_manifest(out / "manifest.json", config, scn.seed)


def cmd_optimize(config: dict, out: Path, seed: int) -> None:
    scn = _scenario_from_config(config, seed)
    pdd_cfg = _pdd_from_config(config)
    inst = generate_scenario(scn)
    poses, layout = three_sector_poses(scn)
    rng = _stream(scn.seed, "rotations")
    rotations = rng.uniform(0.0, 2.0 * math.pi, size=(scn.n_users, 3))
    directions = [(u.theta, u.phi, u.distance) for u in inst.users]
    try:
        channel = build_channel_instance(scn, poses, directions, rotations, layout)
        state, diag = pdd_solve(channel, scn.codebook(), pdd_cfg)
    except Exception as exc:
        raise StageError("optimize", str(exc)) from exc
    payload = {
        "converged": diag.converged,
        "outer_iterations": diag.outer_iterations,
        "weighted_sum_rate": diag.weighted_sum_rate,
        "rates": [float(r) for r in diag.rates],
        "al_trace": [[float(v) for v in sweep] for sweep in diag.al_trace],
        "violations": [[float(a), float(b)] for a, b in diag.violations],
    }
    write_summary(out / "summary.json", payload)
    write_manifest(out / "manifest.json", config, scn.seed)


def cmd_sweep(config: dict, out: Path, seed: int) -> None:
    scn = _scenario_from_config(config, seed)
    section = config.get("sweep", {})
    axis = section.get("axis", "power")
    values = section.get("values", [scn.zeta])
    n_seeds = int(section.get("seeds", 5))
    schemes = section.get("schemes", list(SCHEMES))
    genie = bool(section.get("genie_location", True))
    pso_cfg = _pso_from_config(config)
    fitness_pdd = PddConfig(**config.get("fitness_pdd", {"eps_in": 1e-3, "max_inner": 6, "max_outer": 2}))
    final_pdd = _pdd_from_config(config)

    axis_fields = {
        "power": "zeta",
        "users": "n_users",
        "antennas": "n_antennas",
        "bits": None,  # value is [q_rho, q_theta]
        "batch": None,  # value feeds the PSO batch size
        "snr": "snr_db",
    }
    if axis not in axis_fields:
        raise StageError("config", f"unknown sweep axis {axis!r}")
    for scheme in schemes:
        if scheme not in SCHEMES:
            raise StageError("config", f"unknown scheme {scheme!r}")

    rows = []
    for value in values:
        for trial in range(n_seeds):
            trial_seed = scn.seed + trial
            params = {"seed": trial_seed}
            cfg_pso = pso_cfg
            if axis == "bits":
                params["q_rho"], params["q_theta"] = int(value[0]), int(value[1])
                sweep_value = f"{int(value[0])}-{int(value[1])}"
            elif axis == "batch":
                cfg_pso = dataclasses.replace(pso_cfg, batch=int(value), total_samples=None)
                cfg_pso.__post_init__()
                sweep_value = int(value)
            else:
                params[axis_fields[axis]] = value
                sweep_value = value
            trial_scn = dataclasses.replace(scn, **params)
            inst = generate_scenario(trial_scn)
            loc = None
            for scheme in schemes:
                try:
                    result = run_two_timescale(
                        inst,
                        scheme,
                        genie_location=genie,
                        pso_cfg=cfg_pso,
                        fitness_pdd=fitness_pdd,
                        final_pdd=final_pdd,
                        localization=loc,
                    )
                except Exception as exc:
                    raise StageError(f"sweep:{scheme}", str(exc)) from exc
                if result.localization is not None:
                    loc = result.localization  # reuse sensing across schemes
                rows.append(
                    {
                        "sweep": axis,
                        "sweep_value": sweep_value,
                        "scheme": scheme,
                        "seed": trial_seed,
                        "weighted_rate": result.mean_rate,
                    }
                )
    rows.sort(key=lambda r: (str(r["sweep_value"]), r["scheme"], r["seed"]))
    export_results(rows, SWEEP_COLUMNS, out / "results.csv")
    summary: dict = {"axis": axis, "mean_rate": {}}
    for value in values:
        key = f"{value[0]}-{value[1]}" if axis == "bits" else str(value)
        summary["mean_rate"][key] = {
            scheme: float(
                np.mean(
                    [
                        r["weighted_rate"]
                        for r in rows
                        if r["scheme"] == scheme and str(r["sweep_value"]) == key
                    ]
                )
            )
            for scheme in schemes
        }
    write_summary(out / "summary.json", summary)
    write_manifest(out / "manifest.json", config, scn.seed)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="polarsim",
        description="Polarforming-antenna ISAC simulation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("localize", "run localization trials over an SNR sweep"),
        ("optimize", "run the fast-timescale solver on one scenario"),
        ("sweep", "compare schemes across a sweep axis"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="JSON config file")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    args = parser.parse_args(argv)

    try:
        config = _load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        handler = {"localize": cmd_localize, "optimize": cmd_optimize, "sweep": cmd_sweep}[
            args.command
        ]
        handler(config, out, args.seed)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error [io] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
