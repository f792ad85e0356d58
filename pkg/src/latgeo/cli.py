"""Command-line orchestration: config ingestion, runs, result persistence.

Every output file starts with one JSON metadata line (tool version, resolved
config hash, seed, wall time); the data section after it is byte-identical
across reruns with the same config and seed, independent of --workers.
Exit codes: 0 ok, 2 config error, 3 numeric/budget error, 4 internal.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import ConfigError, LatgeoError, NumericError, __version__
from . import ergodic, funcspec, heights, limitlaw, torus
from .groups import FlowParams, GroupElement, rotation_to_e1, shear_with_offset

log = logging.getLogger("latgeo")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _expect_keys(data: dict, allowed: set, required: set, where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    missing = required - set(data)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _flow_params(data: dict) -> FlowParams:
    _expect_keys(data, {"kind", "d", "r"}, {"d"}, "flow")
    try:
        return FlowParams(int(data["d"]), int(data.get("r", 1)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _phi_family(data, p: FlowParams) -> funcspec.FuncFamily:
    try:
        return funcspec.FuncFamily(data, p.n_shear)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad phi family: {exc}") from exc


def _observable(data: dict, p: FlowParams | None, phi=None, domain=None):
    _expect_keys(
        data,
        {"kind", "rho", "m", "level", "nu", "eps", "t_step"},
        {"kind"},
        "observable",
    )
    kind = data["kind"]
    if kind == "siegel":
        return ergodic.SiegelBump(float(data.get("rho", 0.5)), data.get("m", [1]))
    if kind == "inv_height":
        return ergodic.InverseHeight(float(data.get("eps", 0.01)), float(data.get("nu", 0.25)))
    if kind == "beta_level":
        if p is None:
            raise ConfigError("beta_level observable requires flow parameters")
        params = _height_params(data, p, phi=phi, domain=domain, m=data.get("m"))
        return ergodic.BetaLevel(data["m"], float(data["level"]), params)
    raise ConfigError(f"unknown observable kind {kind!r}")


def _height_params(data: dict, p: FlowParams, phi=None, domain=None, m=None) -> heights.MixedHeightParams:
    nu = float(data.get("nu", heights.default_nu(p)))
    eps = float(data.get("eps", 0.01))
    if "t_step" in data and data["t_step"] is not None:
        t_step = float(data["t_step"])
    else:
        if phi is None or domain is None or m is None:
            raise ConfigError("t_step not given and no phi/domain/m to derive the default from")
        t_step, _sigma = heights.default_t_step(phi, domain[0], domain[1], m, p)
    return heights.MixedHeightParams(p, nu, eps, t_step)


class _Output:
    """Writes the metadata line plus a deterministic data section."""

    def __init__(self, out_dir: str, name: str, config: dict, seed: int, workers: int, t0: float):
        self.path = Path(out_dir) / name
        digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()
        self.meta = {
            "tool": "latgeo",
            "version": __version__,
            "config_sha256": digest,
            "seed": seed,
            "workers": workers,
            "wall_time_s": round(time.time() - t0, 3),
        }

    def write_csv(self, header: list, rows) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as fh:
            fh.write(json.dumps(self.meta, sort_keys=True) + "\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
        log.info("wrote %s", self.path)

    def write_json(self, data: dict) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w") as fh:
            fh.write(json.dumps(self.meta, sort_keys=True) + "\n")
            fh.write(json.dumps(data, sort_keys=True) + "\n")
        log.info("wrote %s", self.path)


def _resolved(config: dict, seed: int, workers: int) -> dict:
    # workers affect scheduling only and live in the metadata line, so the
    # data section stays byte-identical across --workers choices
    echo = {k: v for k, v in config.items() if k != "workers"}
    echo["seed"] = seed
    echo["version"] = echo.get("version", __version__)
    return echo


# ---------------------------------------------------------------------------
# commands


def cmd_simulate_hits(config: dict, seed: int, workers: int, out: str, oracle: bool, t0: float) -> int:
    _expect_keys(config, {"version", "seed", "workers", "scene", "hits"}, {"scene", "hits"}, "config")
    scene = torus.scene_from_dict(config["scene"])
    hits_cfg = config["hits"]
    _expect_keys(hits_cfg, {"s", "l", "t_max_normalized"}, {"s", "l", "t_max_normalized"}, "hits")
    s = np.asarray(hits_cfg["s"], dtype=float)
    l = float(hits_cfg["l"])
    sigma = torus.mean_return_sigma(scene.at(s))
    t_max = float(hits_cfg["t_max_normalized"]) * math.exp((scene.d - 1) * l) * sigma
    series = torus.hit_times(scene, s, l, t_max)
    taus = torus.normalized_times(series, scene, s, l)
    echo = _resolved(config, seed, workers)
    output = _Output(out, "hits.csv", echo, seed, workers, t0)
    rows = []
    for n in range(len(series)):
        rows.append(
            [n + 1, int(series.targets[n]), float(series.times[n]), float(taus[n])]
            + [int(v) for v in series.kvecs[n]]
        )
    output.write_csv(["n", "j", "t_abs", "tau"] + [f"k{i + 1}" for i in range(scene.d)], rows)
    summary = {
        "config_echo": echo,
        "events": len(series),
        "sigma": sigma,
        "t_max": t_max,
        "mean_normalized_spacing": float(np.diff(taus).mean()) if len(series) > 1 else None,
    }
    if oracle:
        reference = torus.hit_times_stepping(scene, s, l, t_max)
        primary = {(int(j), tuple(int(v) for v in k)) for j, k in zip(series.targets, series.kvecs)}
        shadow = {(int(j), tuple(int(v) for v in k)) for j, k in zip(reference.targets, reference.kvecs)}
        time_gap = (
            float(np.abs(series.times - reference.times).max())
            if len(series) == len(reference) and len(series)
            else None
        )
        summary["oracle"] = {
            "events": len(reference),
            "missing_in_oracle": sorted(primary - shadow),
            "extra_in_oracle": sorted(shadow - primary),
            "max_time_diff": time_gap,
        }
        if primary != shadow:
            raise NumericError("oracle event set differs from enumeration")
    _Output(out, "summary.json", echo, seed, workers, t0).write_json(summary)
    return 0


def cmd_birkhoff(config: dict, seed: int, workers: int, out: str, t0: float) -> int:
    _expect_keys(
        config,
        {"version", "seed", "workers", "flow", "base", "observable", "horizon", "dt", "richardson"},
        {"flow", "base", "observable", "horizon", "dt"},
        "config",
    )
    flow_cfg = config["flow"]
    kind = flow_cfg.get("kind", "diag")
    base_cfg = config["base"]
    if kind == "diag":
        p = _flow_params(flow_cfg)
        _expect_keys(base_cfg, {"s", "phi"}, {"s", "phi"}, "base")
        phi = _phi_family(base_cfg["phi"], p)
        s = np.asarray(base_cfg["s"], dtype=float)
        base = shear_with_offset(p, s, phi(s))
        spec = ergodic.TrajectorySpec(base, "diag", float(config["horizon"]), float(config["dt"]), params=p)
    elif kind == "dilation":
        _expect_keys(flow_cfg, {"kind", "d"}, {"d"}, "flow")
        d = int(flow_cfg["d"])
        _expect_keys(base_cfg, {"s", "phi", "direction"}, {"s", "phi", "direction"}, "base")
        s = np.asarray(base_cfg["s"], dtype=float)
        direction = funcspec.vector_family(base_cfg["direction"], d - 1, normalize=True)
        phi = funcspec.FuncFamily(base_cfg["phi"], d - 1)
        rot = rotation_to_e1(direction.vector(s))
        base = GroupElement(rot, rot @ phi(s))
        p = None
        spec = ergodic.TrajectorySpec(base, "dilation", float(config["horizon"]), float(config["dt"]))
    else:
        raise ConfigError(f"unknown flow kind {kind!r}")
    obs = _observable(config["observable"], p)
    reference = None
    if isinstance(obs, ergodic.SiegelBump):
        reference = ergodic.siegel_reference(obs, base.d)
    result = ergodic.birkhoff_average(spec, obs, reference=reference, richardson=bool(config.get("richardson", False)))
    echo = _resolved(config, seed, workers)
    output = _Output(out, "birkhoff.csv", echo, seed, workers, t0)
    output.write_csv(
        ["t", "value", "running_average"],
        [[float(t), float(v), float(r)] for t, v, r in zip(result.times, result.values, result.running)],
    )
    summary = {
        "config_echo": echo,
        "final": result.final,
        "reference": reference,
        "deviation": None if reference is None else result.final - reference,
        "stderr_batch": ergodic.batch_standard_error(result.values),
        "richardson_delta": result.richardson_delta,
    }
    _Output(out, "birkhoff_summary.json", echo, seed, workers, t0).write_json(summary)
    return 0


def cmd_limit_law(config: dict, seed: int, workers: int, out: str, t0: float) -> int:
    _expect_keys(
        config,
        {
            "version", "seed", "workers", "scene", "s", "thresholds", "t_grid", "methods",
            "l_horizon", "l_step", "l_fixed", "s_grid_count", "mc_samples",
        },
        {"scene", "s", "thresholds", "t_grid", "methods"},
        "config",
    )
    scene = torus.scene_from_dict(config["scene"])
    spec = limitlaw.LimitLawSpec(
        scene=scene,
        s=np.asarray(config["s"], dtype=float),
        thresholds=np.asarray(config["thresholds"], dtype=float),
        t_grid=np.asarray(config["t_grid"], dtype=float),
        l_horizon=float(config.get("l_horizon", 8.0)),
        l_step=float(config.get("l_step", limitlaw.DEFAULT_L_STEP)),
        l_fixed=float(config.get("l_fixed", 3.0)),
        mc_samples=int(config.get("mc_samples", 10**4)),
        seed=seed,
    )
    methods = config["methods"]
    estimates = {}
    for method in methods:
        if method == "birkhoff_l":
            estimates[method] = limitlaw.empirical_birkhoff_cdf(spec, workers)
        elif method == "s_average":
            count = int(config.get("s_grid_count", 32 ** (scene.d - 1)))
            per_axis = max(2, round(count ** (1.0 / (scene.d - 1))))
            axes = [np.linspace(a, b, per_axis + 2)[1:-1] for a, b in zip(scene.lo, scene.hi)]
            mesh = np.meshgrid(*axes, indexing="ij")
            s_grid = np.stack([g.ravel() for g in mesh], axis=1)
            estimates[method] = limitlaw.estimate_limit_cdf_s_average(spec, s_grid, workers)
        elif method == "haar_mc":
            estimates[method] = limitlaw.estimate_limit_cdf_mc(spec, workers)
        else:
            raise ConfigError(f"unknown method {method!r}")
    names = list(estimates)
    ks_table = {
        f"{a}|{b}": limitlaw.ks_distance(estimates[a], estimates[b])
        for i, a in enumerate(names)
        for b in names[i + 1 :]
    }
    echo = _resolved(config, seed, workers)
    payload = {
        "config_echo": echo,
        "ks": ks_table,
        "estimates": {
            name: {
                "method": est.method,
                "T_grid": est.t_grid.tolist(),
                "joint_prob": est.joint_prob,
                "joint_stderr": est.joint_stderr,
                "marginals": est.marginals.tolist(),
                "stderr": est.stderr.tolist(),
                "n_samples": est.n_samples,
                "meta": est.meta,
            }
            for name, est in estimates.items()
        },
    }
    _Output(out, "limitlaw.json", echo, seed, workers, t0).write_json(payload)
    return 0


def cmd_genericity_check(config: dict, seed: int, workers: int, out: str, t0: float) -> int:
    _expect_keys(
        config,
        {
            "version", "seed", "workers", "mode", "flow", "phi", "domain", "m", "tol",
            "grid_per_axis", "scene", "t_bound", "k_bound",
        },
        {"mode", "m", "tol"},
        "config",
    )
    mode = config["mode"]
    echo = _resolved(config, seed, workers)
    if mode == "resonance":
        p = _flow_params(config["flow"])
        phi = _phi_family(config["phi"], p)
        dom = config["domain"]
        _expect_keys(dom, {"lo", "hi"}, {"lo", "hi"}, "domain")
        frac, witnesses, bound = heights.resonance_scan(
            phi, dom["lo"], dom["hi"], config["m"], p, float(config["tol"]), int(config.get("grid_per_axis", 1024))
        )
        payload = {
            "config_echo": echo,
            "mode": mode,
            "flagged_fraction": frac,
            "m": list(config["m"]),
            "m1_constant": bound.value,
            "sup_partial": bound.sup_partial,
            "witnesses": witnesses[:100],
        }
    elif mode == "direction":
        scene = torus.scene_from_dict(config["scene"])
        frac, witnesses = funcspec.theta_genericity_scan(
            scene.theta,
            scene.f,
            list(scene.phi),
            config["m"],
            scene.lo,
            scene.hi,
            float(config.get("t_bound", 5.0)),
            int(config.get("k_bound", 3)),
            float(config["tol"]),
            int(config.get("grid_per_axis", 32)),
        )
        payload = {
            "config_echo": echo,
            "mode": mode,
            "flagged_fraction": frac,
            "m": list(config["m"]),
            "t_bound": float(config.get("t_bound", 5.0)),
            "k_bound": int(config.get("k_bound", 3)),
            "witnesses": witnesses[:100],
        }
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    _Output(out, "genericity.json", echo, seed, workers, t0).write_json(payload)
    return 0


def cmd_contraction_test(config: dict, seed: int, workers: int, out: str, t0: float) -> int:
    _expect_keys(
        config,
        {
            "version", "seed", "workers", "flow", "phi", "interval", "m", "nu", "eps", "t_step",
            "n_max", "n_fresh", "pilot_size", "scan_size", "quad_per_axis",
        },
        {"flow", "phi", "interval", "m"},
        "config",
    )
    p = _flow_params(config["flow"])
    phi = _phi_family(config["phi"], p)
    dom = config["interval"]
    _expect_keys(dom, {"lo", "hi"}, {"lo", "hi"}, "interval")
    lo = np.asarray(dom["lo"], dtype=float)
    hi = np.asarray(dom["hi"], dtype=float)
    if lo.size == 0:
        raise ConfigError("empty interval list")
    m = config["m"]
    params = _height_params(config, p, phi=phi, domain=(lo, hi), m=m)
    n_max = int(config.get("n_max", 6))
    quad = int(config.get("quad_per_axis", 8))
    b, pilot = ergodic.calibrate_contraction_offset(
        phi, lo, hi, m, params, n_max,
        pilot_size=int(config.get("pilot_size", 10)),
        scan_size=int(config.get("scan_size", 2048)),
        seed=seed,
        quad_per_axis=quad,
    )
    rng = np.random.default_rng([seed, 99])
    rows = []
    for _ in range(int(config.get("n_fresh", 50))):
        n = int(rng.integers(0, n_max + 1))
        box_lo, box_hi = ergodic.admissible_box(rng, n, lo, hi, params)
        res = ergodic.contraction_check(phi, lo, hi, m, params, n, box_lo, box_hi, b, quad)
        rows.append([n, float(box_lo[0]), float(box_hi[0]), res.lhs, res.rhs, res.margin])
    echo = _resolved(config, seed, workers)
    _Output(out, "contraction.csv", echo, seed, workers, t0).write_csv(
        ["n", "lo0", "hi0", "lhs", "rhs", "margin"], rows
    )
    _Output(out, "contraction_summary.json", echo, seed, workers, t0).write_json(
        {
            "config_echo": echo,
            "b": b,
            "t_step": params.t_step,
            "nu": params.nu,
            "eps": params.eps,
            "pilot": pilot,
            "min_margin": min(r[5] for r in rows),
        }
    )
    return 0


def cmd_correlation(config: dict, seed: int, workers: int, out: str, t0: float) -> int:
    _expect_keys(
        config,
        {
            "version", "seed", "workers", "flow", "phi", "interval", "psi", "t", "offsets",
            "n_samples", "s_prime",
        },
        {"flow", "phi", "interval", "psi", "t", "offsets"},
        "config",
    )
    p = _flow_params(config["flow"])
    phi = _phi_family(config["phi"], p)
    dom = config["interval"]
    _expect_keys(dom, {"lo", "hi"}, {"lo", "hi"}, "interval")
    psi = _observable(config["psi"], p)
    t = float(config["t"])
    rows = []
    for offset in config["offsets"]:
        est, err, n = ergodic.correlation_estimate(
            phi, dom["lo"], dom["hi"], psi, t, t + float(offset),
            int(config.get("n_samples", 10**4)), p, seed=seed, s_prime=float(config.get("s_prime", 1.0)),
        )
        rows.append([float(offset), est, err, n])
    echo = _resolved(config, seed, workers)
    _Output(out, "correlation.csv", echo, seed, workers, t0).write_csv(
        ["l_minus_t", "estimate", "stderr", "n_samples"], rows
    )
    return 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="latgeo", description=__doc__)
    parser.add_argument("command", choices=[
        "simulate-hits", "birkhoff", "limit-law", "genericity-check", "contraction-test", "correlation",
    ])
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--workers", type=int, default=None, help="worker count (scheduling only)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--oracle", action="store_true", help="also run the independent oracle and diff")
    args = parser.parse_args(argv)

    logging.basicConfig(level=os.environ.get("LATGEO_LOG", "WARNING").upper(), format="%(name)s %(levelname)s %(message)s")
    t0 = time.time()
    try:
        config = _load_config(args.config)
        if not isinstance(config, dict):
            raise ConfigError("top-level config must be a JSON object")
        seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        workers = args.workers if args.workers is not None else int(config.get("workers", 1))
        if args.command == "simulate-hits":
            return cmd_simulate_hits(config, seed, workers, args.out, args.oracle, t0)
        if args.command == "birkhoff":
            return cmd_birkhoff(config, seed, workers, args.out, t0)
        if args.command == "limit-law":
            return cmd_limit_law(config, seed, workers, args.out, t0)
        if args.command == "genericity-check":
            return cmd_genericity_check(config, seed, workers, args.out, t0)
        if args.command == "contraction-test":
            return cmd_contraction_test(config, seed, workers, args.out, t0)
        if args.command == "correlation":
            return cmd_correlation(config, seed, workers, args.out, t0)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        log.error("config error: %s", exc)
        print(f"latgeo: config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        log.error("numeric error: %s", exc)
        print(f"latgeo: numeric error: {exc}", file=sys.stderr)
        return 3
    except LatgeoError as exc:
        print(f"latgeo: error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # internal
        log.exception("internal error")
        print(f"latgeo: internal error: {exc!r}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
