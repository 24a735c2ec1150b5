"""Command-line entry point: ``multires <group> <command> [options]``.

Every command accepts ``--config FILE`` (flat ``key = value`` lines, ``#``
comments), ``--seed`` and ``--out DIR``.  Each config key is also a flag
(``hidden_width`` -> ``--hidden-width``); flags override the file.  Outputs
land in ``--out`` together with ``run.json``, the run manifest.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import bridge, data, transport, wavelet
from .hvae import HvaeConfig, collapsed_fraction, forward, init_params, kl_cumsum, residual_norm_probe, sample
from .hvae.train import TrainSettings, load_checkpoint, save_checkpoint, train, write_history_csv

REQUIRED = object()


class UsageError(Exception):
    pass


# -- typed config ----------------------------------------------------------


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _tuple_of(kind):
    def convert(text):
        if isinstance(text, (list, tuple)):
            return tuple(kind(v) for v in text)
        t = str(text).strip().strip("()[]")
        return tuple(kind(v) for v in t.split(",") if v.strip())

    return convert


def _optional_str(text):
    return None if text is None or str(text).strip().lower() in ("", "none") else str(text)


_CONVERTERS = {int: int, float: float, bool: _bool, str: str, tuple: _tuple_of(float)}

DATA_KEYS = {
    "data": (_optional_str, None),
    "n_images": (int, 1000),
    "alpha": (float, 0.5),
    "eta": (float, 0.5),
    "data_seed": (int, 0),
}


def _dataclass_schema(cls, overrides=None):
    out = {}
    for f in fields(cls):
        conv = _CONVERTERS[type(f.default)]
        out[f.name] = (conv, f.default)
    out.update(overrides or {})
    return out


HVAE_MODEL_KEYS = _dataclass_schema(HvaeConfig, {"resolutions": (_tuple_of(int), (16, 4, 1))})
TRAIN_KEYS = _dataclass_schema(TrainSettings)

SCHEMAS = {
    ("wavelet", "analyze"): {"input": (str, REQUIRED)},
    ("wavelet", "verify"): {"n": (int, 1000), "len": (int, 64), "ndim": (int, 1)},
    ("transport", "gap"): {"measure": (str, REQUIRED), "maps": (str, REQUIRED), "ndim": (int, 1)},
    ("bridge", "simulate"): {
        "schedule": (_optional_str, None),
        "coeffs": (_optional_str, None),
        "levels": (int, 3),
        "horizon": (float, 0.9),
        "ndim": (int, 1),
        "paths": (int, 100),
        "steps": (int, 50),
        "cell": (str, "em"),
    },
    ("hvae", "train"): {**HVAE_MODEL_KEYS, **TRAIN_KEYS, **DATA_KEYS, "iters": (int, 1000)},
    ("hvae", "probe"): {"checkpoint": (str, REQUIRED), **DATA_KEYS, "batches": (int, 10), "probe_batch": (int, 50)},
    ("hvae", "sample"): {"checkpoint": (str, REQUIRED), "n": (int, 16), "temperature": (float, 1.0)},
    ("hvae", "kl-cumsum"): {"checkpoint": (str, REQUIRED), **DATA_KEYS, "n_eval": (int, 500)},
    ("data", "gen"): {"n": (int, 1000), "size": (int, 16), "alpha": (float, 1.0), "eta": (float, 0.0), "pgm": (_bool, True)},
}


def parse_config_text(text):
    """``key = value`` lines to a dict of raw strings."""
    out = {}
    for num, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {num}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise UsageError(f"config line {num}: duplicate key {key!r}")
        out[key] = value
    return out


def resolve_config(schema, file_values, flag_values):
    """Typed config: schema defaults, then file values, then flags."""
    unknown = set(file_values) - set(schema)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = {}
    for key, (conv, default) in schema.items():
        raw = flag_values.get(key)
        if raw is None:
            raw = file_values.get(key)
        if raw is None:
            if default is REQUIRED:
                raise UsageError(f"missing required setting {key!r}")
            cfg[key] = default
            continue
        try:
            cfg[key] = conv(raw)
        except ValueError as exc:
            raise UsageError(f"bad value for {key!r}: {exc}") from None
    return cfg


# -- run bookkeeping -------------------------------------------------------


def write_json(path, obj):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, default=_jsonable))
    os.replace(tmp, path)
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


class Run:
    def __init__(self, out):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts = []

    def path(self, name):
        self.artifacts.append(name)
        return self.out / name


# -- commands --------------------------------------------------------------


def cmd_wavelet_analyze(cfg, seed, run):
    x = wavelet.read_csv_signal(cfg["input"])
    pyr = wavelet.haar_analyze(x)
    wavelet.save_pyramid(run.path("pyramid.json"), pyr)
    frac = wavelet.subspace_energy(pyr)
    result = {"level": pyr.level, "ndim": pyr.ndim, "energy": pyr.energy(), "fractions": frac}
    write_json(run.path("energy.json"), result)
    from .plotting import plot_band_energies

    plot_band_energies(run.path("energy.png"), frac)
    return result


def cmd_wavelet_verify(cfg, seed, run):
    n, length, ndim = cfg["n"], cfg["len"], cfg["ndim"]
    if ndim not in (1, 2):
        raise wavelet.ShapeError("ndim must be 1 or 2")
    rng = np.random.default_rng(seed)
    shape = (length,) if ndim == 1 else (length, length)
    worst_rel = worst_abs = 0.0
    for _ in range(n):
        x = rng.standard_normal(shape)
        res = wavelet.verify_conjugacy(x)
        scale = np.linalg.norm(wavelet.haar_analyze(x).to_vector())
        worst_abs = max(worst_abs, res)
        worst_rel = max(worst_rel, res / scale if scale > 0 else res)
    result = {"n": n, "len": length, "ndim": ndim, "max_residual": worst_rel, "max_abs_residual": worst_abs}
    write_json(run.path("verify.json"), result)
    return result


def cmd_transport_gap(cfg, seed, run):
    mu = transport.load_measure(cfg["measure"])
    fwd, bwd, hierarchy = transport.load_maps(cfg["maps"])
    report = transport.truncation_gap(mu, fwd, bwd, hierarchy, ndim=cfg["ndim"])
    result = report.to_dict()
    write_json(run.path("gap.json"), result)
    return result


def cmd_bridge_simulate(cfg, seed, run):
    if cfg["schedule"]:
        schedule = bridge.load_schedule(cfg["schedule"])
    else:
        schedule = bridge.BridgeSchedule.uniform(cfg["levels"], cfg["horizon"], cfg["ndim"])
    if cfg["coeffs"]:
        coeffs = bridge.load_coefficients(cfg["coeffs"], schedule)
    else:
        ou = bridge.CellCoefficients(
            drift1=bridge.FunctionSpec("linear", matrix=-1.0), diffusion=bridge.FunctionSpec("constant", value=1.0)
        )
        coeffs = bridge.coefficients_for(schedule, {lv: ou for lv in set(schedule.levels)}, homogeneous=True)
    trajs = bridge.simulate_bridge(schedule, coeffs, cfg["steps"], cfg["paths"], cfg["cell"], seed)
    bridge.write_trajectories_csv(run.path("trajectories.csv"), trajs)
    summary = bridge.ensemble_summary(trajs)
    write_json(run.path("summary.json"), summary)
    if "times" in summary:
        from .plotting import plot_bridge_norms

        plot_bridge_norms(run.path("norms.png"), summary)
    return {k: summary[k] for k in ("n_paths", "n_diverged")}


def _pick(cfg, keys):
    return {k: cfg[k] for k in keys}


def _dataset(cfg, size):
    if cfg["data"]:
        ds = data.load_dataset(cfg["data"])
    else:
        ds = data.gen_haar_sparse(cfg["n_images"], size, cfg["alpha"], cfg["eta"], seed=cfg["data_seed"])
    if ds.size != size:
        raise data.DataError(f"dataset images are {ds.size}x{ds.size}, model expects {size}x{size}")
    return ds if ds.normalized else data.normalize(ds)


def cmd_hvae_train(cfg, seed, run):
    config = HvaeConfig(**_pick(cfg, HVAE_MODEL_KEYS))
    settings = TrainSettings(**_pick(cfg, TRAIN_KEYS))
    ds = _dataset(cfg, config.image_size)
    res = train(config, ds.split("train"), ds.split("val"), cfg["iters"], settings, seed=seed)
    save_checkpoint(run.path("checkpoint.json"), res.ema_params, res.iterations, seed, {"settings": settings.to_dict()})
    run.artifacts.append("checkpoint.json.bin")
    write_history_csv(run.path("history.csv"), res.history)
    if res.history:
        from .plotting import plot_history

        plot_history(run.path("history.png"), res.history)
    result = {
        "iterations": res.iterations,
        "skipped": res.skipped,
        "n_params": res.params.n_params,
        "final_val_nll": res.final_val_nll if res.history else None,
    }
    write_json(run.path("metrics.json"), result)
    return result


def cmd_hvae_probe(cfg, seed, run):
    params, _ = load_checkpoint(cfg["checkpoint"])
    val = _dataset(cfg, params.config.image_size).split("val")
    b = cfg["probe_batch"]
    batches = [val[i * b : (i + 1) * b] for i in range(cfg["batches"]) if len(val[i * b : (i + 1) * b])]
    probe = residual_norm_probe(params, batches, seed)
    write_json(run.path("probe.json"), probe.to_dict())
    from .plotting import plot_norm_probe

    plot_norm_probe(run.path("probe.png"), probe)
    return {"blocks": len(probe.backward_mean)}


def cmd_hvae_sample(cfg, seed, run):
    params, _ = load_checkpoint(cfg["checkpoint"])
    imgs = sample(params, cfg["temperature"], cfg["n"], seed)
    np.save(run.path("samples.npy"), imgs)
    from .plotting import plot_samples

    plot_samples(run.path("samples.png"), imgs)
    return {"n": cfg["n"], "temperature": cfg["temperature"]}


def cmd_hvae_kl_cumsum(cfg, seed, run):
    params, _ = load_checkpoint(cfg["checkpoint"])
    val = _dataset(cfg, params.config.image_size).split("val")[: cfg["n_eval"]]
    kl = forward(params, val, seed)[0].kl_per_layer
    series = kl_cumsum(params, val, seed)
    with open(run.path("kl_cumsum.csv"), "w") as fh:
        fh.write("layer,kl,cumsum\n")
        for i, (k, c) in enumerate(zip(kl, series)):
            fh.write(f"{i},{float(k)!r},{float(c)!r}\n")
    result = {"collapsed_fraction": collapsed_fraction(kl), "total_kl": float(series[-1])}
    write_json(run.path("kl.json"), result)
    from .plotting import plot_kl_cumsum

    plot_kl_cumsum(run.path("kl_cumsum.png"), series)
    return result


def cmd_data_gen(cfg, seed, run):
    ds = data.gen_haar_sparse(cfg["n"], cfg["size"], cfg["alpha"], cfg["eta"], seed=seed)
    data.save_dataset(run.out, ds, write_pgm=cfg["pgm"])
    run.artifacts += ["manifest.json", "images.npy"] + (["pgm/"] if cfg["pgm"] else [])
    J = cfg["size"].bit_length() - 1
    coeffs = ds.images.reshape(len(ds.images), -1) @ data.synthesis_matrix(J)
    energy = np.array([np.sum(coeffs[:, sl] ** 2) for sl in data.level_slices(J)])
    frac = energy / energy.sum()
    from .plotting import plot_band_energies

    plot_band_energies(run.path("spectrum.png"), frac, title="mean Haar energy by level")
    return {"n": cfg["n"], "fractions": frac}


COMMANDS = {
    ("wavelet", "analyze"): cmd_wavelet_analyze,
    ("wavelet", "verify"): cmd_wavelet_verify,
    ("transport", "gap"): cmd_transport_gap,
    ("bridge", "simulate"): cmd_bridge_simulate,
    ("hvae", "train"): cmd_hvae_train,
    ("hvae", "probe"): cmd_hvae_probe,
    ("hvae", "sample"): cmd_hvae_sample,
    ("hvae", "kl-cumsum"): cmd_hvae_kl_cumsum,
    ("data", "gen"): cmd_data_gen,
}


# -- argument parsing ------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="multires", description=__doc__.split("\n")[0])
    groups = parser.add_subparsers(dest="group", metavar="GROUP")
    subs = {}
    for group, command in SCHEMAS:
        if group not in subs:
            subs[group] = groups.add_parser(group).add_subparsers(dest="command", metavar="COMMAND")
            subs[group].required = True
        p = subs[group].add_parser(command)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=".", help="output directory")
        for key in SCHEMAS[group, command]:
            p.add_argument("--" + key.replace("_", "-"), dest="cfg_" + key, default=None, metavar="VALUE")
    return parser


def dispatch(argv):
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.group is None:
        parser.print_usage(sys.stderr)
        return 2

    key = (args.group, args.command)
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    try:
        file_values = parse_config_text(Path(args.config).read_text()) if args.config else {}
        seed_raw = file_values.pop("seed", None)
        seed = args.seed if args.seed is not None else int(seed_raw or 0)
        cfg = resolve_config(SCHEMAS[key], file_values, flags)
    except (UsageError, ValueError, OSError) as exc:
        print(f"multires: error: {exc}", file=sys.stderr)
        return 2

    run = Run(args.out)
    start = time.perf_counter()
    status, result = 0, None
    try:
        result = COMMANDS[key](cfg, seed, run)
    except (ValueError, ArithmeticError, OSError, KeyError) as exc:
        print(f"multires: {type(exc).__name__}: {exc}", file=sys.stderr)
        status = 1
    manifest = {
        "subcommand": " ".join(key),
        "config": cfg,
        "seed": seed,
        "artifacts": run.artifacts,
        "wall_clock": time.perf_counter() - start,
        "exit_status": status,
    }
    if result is not None:
        manifest["result"] = result
        print(json.dumps(result, default=_jsonable))
    write_json(run.out / "run.json", manifest)
    return status


def main(argv=None):
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
