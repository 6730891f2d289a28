"""Command-line pipeline: ``tbg {dataset,train,sample,evaluate,tica}``.

Each subcommand reads one JSON config, writes its outputs plus the fully
resolved config into the output directory and logs ``key=value`` records
to stderr.  Exit codes: 0 ok, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .analysis import (
    WassersteinConfig, free_energy_difference, free_energy_projection, ramachandran_wasserstein,
    tica_fit, tica_transform, torsion_features, write_table,
)
from .cnf import BoltzmannGenerator
from .dataio import (
    Trajectory, file_hash, load_manifest, read_ensemble, read_topology, read_trajectory, topology_hash,
    write_checkpoint, write_ensemble, write_manifest, write_topology, write_trajectory,
)
from .dataio.atomic import atomic_write_text
from .dataio.checkpoint import read_checkpoint
from .errors import ConfigError, IntegrityError, TbgError
from .fmtrain import TrainingConfig, format_log, load_model, train
from .molkit import torsion, validate_samples
from .numcore.ode import RK4, DormandPrince
from .reweight import WeightedEnsemble, compute_weights, ess_report, vonmises_bias_weights
from .targets import DEFAULT_CAP, McmcConfig, reference_sampler, resolve_target, target_coordinates
from .targets.registry import canonical_spec
from .vecfield import PRESETS, EgnnConfig, EgnnField, build_embedding, embedding_width, generate_class_table

log = logging.getLogger("tbg")

__all__ = ["main", "build_parser", "config_hash", "DEFAULTS"]

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "dataset": {"seed": 0, "mcmc": None, "truncation": 1.0},
    "train": {"model": {}, "training": {}, "init": None},
    "sample": {"seed": 0, "count": 1000, "solver": {"method": "rk4", "steps": 100}, "with_logprob": True,
               "chunk": 16},
    "evaluate": {"reference": None, "checkpoint": None, "coordinates": None, "bins": 50,
                 "wasserstein": None, "tica": None, "nll_frames": 0,
                 "solver": {"method": "rk4", "steps": 100}},
    "tica": {"lag": 1, "n_components": 2, "features": "backbone", "torsions": None},
}

REQUIRED = {
    "dataset": ("output", "molecules"),
    "train": ("dataset", "output"),
    "sample": ("checkpoint", "target", "output"),
    "evaluate": ("ensemble", "target", "output"),
    "tica": ("trajectory", "topology", "output"),
}

INPUT_PATHS = {
    "train": ("dataset", "init"),
    "sample": ("checkpoint",),
    "evaluate": ("ensemble", "reference", "checkpoint"),
    "tica": ("trajectory", "topology"),
}


class UsageError(TbgError):
    """Bad invocation or config; maps to exit code 2."""


# logging ----------------------------------------------------------------

class _KeyValueFormatter(logging.Formatter):
    def format(self, record):
        fields = getattr(record, "fields", {})
        parts = [f"level={record.levelname.lower()}", f"event={record.getMessage()}"]
        parts += [f"{k}={_kv(v)}" for k, v in fields.items()]
        return " ".join(parts)


class _HumanFormatter(logging.Formatter):
    def format(self, record):
        fields = getattr(record, "fields", {})
        tail = ", ".join(f"{k}: {v}" for k, v in fields.items())
        return f"[{record.levelname.lower()}] {record.getMessage()}" + (f" ({tail})" if tail else "")


def _kv(v):
    s = str(v)
    return json.dumps(s) if (" " in s or "=" in s or not s) else s


def _setup_logging(fmt: str, verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_KeyValueFormatter() if fmt == "kv" else _HumanFormatter())
    root = logging.getLogger("tbg")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


def _emit(event: str, **fields):
    log.info(event, extra={"fields": fields})


# config -----------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical resolved config, output location excluded
    so the same run written elsewhere carries the same hash."""
    body = {k: v for k, v in config.items() if k != "output"}
    return hashlib.sha256(_canonical(body).encode()).hexdigest()


def _load_config(command: str, path: str, output: str | None) -> dict:
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(user, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    cfg.update(user)
    if output is not None:
        cfg["output"] = output
    missing = [k for k in REQUIRED[command] if cfg.get(k) in (None, "", [])]
    if missing:
        raise UsageError(f"config is missing required keys: {', '.join(missing)}")
    base = os.path.dirname(os.path.abspath(path))
    for key in INPUT_PATHS.get(command, ()) + ("output",):
        if isinstance(cfg.get(key), str):
            cfg[key] = os.path.normpath(os.path.join(base, cfg[key]))
    for key in INPUT_PATHS.get(command, ()):
        p = cfg.get(key)
        if p is not None and not os.path.exists(p):
            raise UsageError(f"{key} path does not exist: {p}")
    return cfg


def _write_resolved(cfg: dict, extra: dict | None = None) -> str:
    h = config_hash(cfg)
    doc = {"config": cfg, "config_sha256": h, "version": __version__}
    doc.update(extra or {})
    atomic_write_text(os.path.join(cfg["output"], "config.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return h


def _solver(spec: dict):
    spec = dict(spec)
    method = spec.pop("method", "rk4")
    try:
        if method == "rk4":
            return RK4(**spec)
        if method == "dopri5":
            return DormandPrince(**spec)
    except TypeError as exc:
        raise ConfigError(f"bad solver options: {exc}") from None
    raise ConfigError(f"unknown solver {method!r} (rk4 or dopri5)")


def _json_dump(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


# dataset ----------------------------------------------------------------

def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def cmd_dataset(cfg: dict) -> int:
    """Sample every listed target, optionally attach von Mises bias
    weights, and write topology, trajectory and manifest files."""
    out = cfg["output"]
    mcmc = McmcConfig(**cfg["mcmc"]) if cfg["mcmc"] is not None else None
    entries = []
    for k, mol in enumerate(cfg["molecules"]):
        target = resolve_target(mol["target"])
        frames = int(mol.get("frames", 1000))
        seed = int(cfg["seed"]) + k
        x = reference_sampler(target, frames, seed, mcmc)
        bias = None
        if mol.get("bias"):
            b = dict(mol["bias"])
            coords = target_coordinates(target)
            name = b.pop("coordinate", "phi")
            if name not in coords or not coords[name].periodic:
                raise ConfigError(f"bias needs a torsion coordinate; {target.name} has {sorted(coords)}")
            bias = vonmises_bias_weights(coords[name].fn(x), **b)
        top = target.topology
        stem = _safe_name(top.name)
        write_topology(os.path.join(out, stem + ".top"), top)
        write_trajectory(os.path.join(out, stem + ".traj"), Trajectory.for_topology(top, x, bias))
        entries.append({"topology": stem + ".top", "trajectory": stem + ".traj",
                        "split": mol.get("split", "train"), "target": canonical_spec(mol["target"])})
        _emit("molecule", name=top.name, frames=frames, split=mol.get("split", "train"),
              biased=bias is not None)
    write_manifest(os.path.join(out, "manifest.json"), entries, float(cfg["truncation"]))
    _write_resolved(cfg)
    _emit("dataset-written", path=os.path.join(out, "manifest.json"), molecules=len(entries))
    return EXIT_OK


# train ------------------------------------------------------------------

def _model_config(spec: dict, table) -> EgnnConfig:
    spec = dict(spec)
    preset = spec.pop("preset", None)
    if preset and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
    base = asdict(PRESETS[preset]) if preset else {}
    base.update(spec)
    base["variant"] = table.variant
    base.setdefault("n_embedding", embedding_width(table))
    try:
        return EgnnConfig.from_dict(base)
    except TypeError as exc:
        raise ConfigError(f"bad model options: {exc}") from None


def cmd_train(cfg: dict) -> int:
    dataset = load_manifest(cfg["dataset"])
    training = TrainingConfig.from_dict(cfg["training"])
    data = dataset.subset("train")
    variant = cfg["model"].get("variant") or (PRESETS[cfg["model"]["preset"]].variant
                                                if cfg["model"].get("preset") in PRESETS else "tbg")
    table = generate_class_table(variant, [m.topology for m in data.molecules])
    model = _model_config(cfg["model"], table)
    init = None
    if cfg.get("init"):
        init, *_ = load_model(cfg["init"])
    out = cfg["output"]
    cfg = dict(cfg, model=model.to_dict(), training=training.to_dict())
    h = _write_resolved(cfg)

    def on_record(rec):
        if rec.step == 1 or rec.step % 100 == 0:
            _emit("train-step", step=rec.step, stage=rec.stage, lr=rec.lr, loss=f"{rec.loss:.6g}")

    result = train(dataset, training, model, table, init=init, on_record=on_record)
    ckpt = result.checkpoint()
    ckpt.extra = {
        "config_sha256": h,
        "dataset_sha256": file_hash(cfg["dataset"]),
        "topologies": {m.name: topology_hash(m.topology) for m in data.molecules},
        "version": __version__,
    }
    ckpt_path = os.path.join(out, "checkpoint.tbgc")
    write_checkpoint(ckpt_path, ckpt)
    atomic_write_text(os.path.join(out, "train.log"), format_log(result.records, wall=False))
    losses = result.losses
    _emit("train-done", steps=len(losses), first_loss=f"{losses[0]:.6g}", final_loss=f"{losses[-1]:.6g}",
          checkpoint=ckpt_path)
    return EXIT_OK


# sample -----------------------------------------------------------------

def _has_bonds(target) -> bool:
    return target.topology is not None and len(target.topology.bonds) > 0


def cmd_sample(cfg: dict, workers: int = 1) -> int:
    """Generate, validate, reorder, evaluate energies, weight and report."""
    ck = read_checkpoint(cfg["checkpoint"])
    params, model, table, training = load_model(ck)
    target = resolve_target(cfg["target"])
    top = target.topology
    expected = (ck.extra or {}).get("topologies", {}).get(top.name)
    if expected is not None and expected != topology_hash(top):
        raise IntegrityError(f"checkpoint was trained on a different topology named {top.name!r}")
    emb = build_embedding(top, table)
    solver = _solver(cfg["solver"])
    chunk = int(cfg["chunk"])
    gen = BoltzmannGenerator(EgnnField(params, model, emb, chunk=chunk), top.n_atoms, top.dim,
                             training.length_scale, solver, chunk=chunk)
    count, seed = int(cfg["count"]), int(cfg["seed"])
    with_logprob = bool(cfg["with_logprob"])
    _emit("sample-start", count=count, seed=seed, workers=workers, target=top.name)
    x, logp = gen.sample(count, seed, with_logprob=with_logprob, workers=workers)
    if _has_bonds(target):
        val = validate_samples(x, top)
        x, valid, counts = val.x, val.valid, val.counts()
    else:
        valid, counts = np.ones(count, dtype=bool), {"valid": count}
    energies = np.full(count, DEFAULT_CAP)
    if valid.any():
        energies[valid] = target.energy(x[valid])
    h = config_hash(cfg)
    provenance = {
        "config_sha256": h,
        "checkpoint_sha256": file_hash(cfg["checkpoint"]),
        "class_table_sha256": ck.class_table_hash,
        "topology_sha256": topology_hash(top),
        "target": canonical_spec(cfg["target"]),
        "seed": seed,
        "version": __version__,
    }
    ens = WeightedEnsemble(x, logp if with_logprob else np.full(count, np.nan), energies, valid,
                           provenance=provenance)
    report = {"n": count, "n_valid": int(valid.sum()), "valid_fraction": float(valid.mean()),
              "status_counts": dict(sorted(counts.items())), "ess_relative": None}
    out = cfg["output"]
    _write_resolved(cfg)
    if with_logprob and valid.any():
        ens = compute_weights(ens)
        report.update(ess_report(ens))
    write_ensemble(os.path.join(out, "ensemble.tbge"), ens)
    report["provenance"] = provenance
    _json_dump(os.path.join(out, "report.json"), report)
    _emit("sample-done", n=count, valid_fraction=f"{report['valid_fraction']:.4f}",
          ess_relative=report["ess_relative"] if report["ess_relative"] is None else f"{report['ess_relative']:.4f}")
    if not valid.any():
        log.error("no-valid-samples", extra={"fields": {"n": count}})
        return EXIT_FAILURE
    return EXIT_OK


# evaluate ---------------------------------------------------------------

@dataclass
class _Series:
    values: dict  # coordinate name -> array
    log_weights: np.ndarray | None


def _coordinate_values(coords, x):
    return {k: np.asarray(c.fn(x), dtype=float).reshape(-1) for k, c in coords.items()}


def cmd_evaluate(cfg: dict) -> int:
    """Free-energy profiles and differences (weighted, unweighted and
    reference), Ramachandran Wasserstein, TICA projections and NLL."""
    ens = read_ensemble(cfg["ensemble"])
    target = resolve_target(cfg["target"])
    top = target.topology
    th = ens.provenance.get("topology_sha256")
    if th is not None and th != topology_hash(top):
        raise IntegrityError(f"ensemble topology does not match target {top.name!r}")
    coords = target_coordinates(target)
    if cfg["coordinates"] is not None:
        unknown = set(cfg["coordinates"]) - set(coords)
        if unknown:
            raise ConfigError(f"unknown coordinates {sorted(unknown)}; {top.name} has {sorted(coords)}")
        coords = {k: coords[k] for k in cfg["coordinates"]}
    out = cfg["output"]
    h = config_hash(cfg)
    meta = {"config_sha256": h, "ensemble_sha256": file_hash(cfg["ensemble"]), "version": __version__}

    ok = ens.valid
    xs = ens.samples[ok]
    lw = ens.log_weights[ok] if ens.log_weights is not None else None
    series = {"unweighted": _Series(_coordinate_values(coords, xs), None)}
    if lw is not None:
        series["weighted"] = _Series(series["unweighted"].values, lw)
    ref_x = None
    if cfg["reference"] is not None:
        ref_x = read_trajectory(cfg["reference"], top).frames
        series["reference"] = _Series(_coordinate_values(coords, ref_x), None)
        meta["reference_sha256"] = file_hash(cfg["reference"])

    summary = {"n": len(ens), "n_valid": ens.n_valid, "valid_fraction": ens.valid_fraction,
               "ess_relative": ess_report(ens)["ess_relative"] if lw is not None else None,
               "delta_f": {}, "provenance": meta}
    for name, c in coords.items():
        rng_ = (-np.pi, np.pi) if c.periodic else None
        if rng_ is None:
            allv = np.concatenate([s.values[name] for s in series.values()])
            rng_ = (float(allv.min()), float(allv.max()))
        cols = {}
        summary["delta_f"][name] = {}
        for label, s in series.items():
            prof = free_energy_projection(s.values[name], s.log_weights, bins=int(cfg["bins"]), range=rng_)
            cols.setdefault("center", prof.centers)
            cols[f"F_{label}"] = prof.free_energy
            try:
                summary["delta_f"][name][label] = free_energy_difference(s.values[name], s.log_weights, c.boundary)
            except TbgError:
                summary["delta_f"][name][label] = None
        write_table(os.path.join(out, f"profile_{name}.tsv"), cols, dict(meta, coordinate=name, units="kT"))
        _emit("profile", coordinate=name, **{f"dF_{k}": v for k, v in summary["delta_f"][name].items()})

    if cfg["wasserstein"] is not None and ref_x is not None and {"phi", "psi"} <= set(coords):
        wc = WassersteinConfig(**cfg["wasserstein"])
        ref = series["reference"].values
        res = {}
        for label in ("unweighted", "weighted"):
            if label in series:
                s = series[label]
                p = (s.values["phi"], s.values["psi"]) + ((s.log_weights,) if s.log_weights is not None else ())
                res[label] = ramachandran_wasserstein(p, (ref["phi"], ref["psi"]), wc).as_dict()
                _emit("wasserstein", series=label, distance=f"{res[label]['distance']:.6g}")
        summary["wasserstein"] = res

    if cfg["tica"] is not None and ref_x is not None:
        periodic = [k for k, c in coords.items() if c.periodic]
        if not periodic:
            raise ConfigError("TICA needs torsion coordinates")
        tc = dict(cfg["tica"])
        lag, ncomp = int(tc.get("lag", 1)), int(tc.get("n_components", 2))
        feats = lambda s: torsion_features(np.stack([s.values[k] for k in periodic], axis=1))
        model = tica_fit(feats(series["reference"]), lag)
        cols = {}
        for label in ("unweighted", "reference"):
            proj = tica_transform(model, feats(series[label]), ncomp)
            write_table(os.path.join(out, f"tica_{label}.tsv"), {f"tic{k}": proj[:, k] for k in range(proj.shape[1])},
                        dict(meta, lag=lag))
        if "weighted" in series:
            write_table(os.path.join(out, "tica_weights.tsv"), {"log_weight": series["weighted"].log_weights}, meta)
        summary["tica"] = {"lag": lag, "eigenvalues": model.eigenvalues[:ncomp].tolist(),
                           "timescales": model.timescales[:ncomp].tolist()}

    if cfg["checkpoint"] is not None and ref_x is not None and int(cfg["nll_frames"]) > 0:
        params, model, table, training = load_model(cfg["checkpoint"])
        gen = BoltzmannGenerator(EgnnField(params, model, build_embedding(top, table)), top.n_atoms, top.dim,
                                 training.length_scale, _solver(cfg["solver"]))
        frames = ref_x[: int(cfg["nll_frames"])]
        lp = gen.log_prob(frames)
        summary["nll"] = {"mean": float(-lp.mean()), "frames": len(frames),
                          "checkpoint_sha256": file_hash(cfg["checkpoint"])}
        _emit("nll", mean=f"{-lp.mean():.6g}", frames=len(frames))

    _write_resolved(cfg)
    _json_dump(os.path.join(out, "summary.json"), summary)
    _emit("evaluate-done", output=out)
    return EXIT_OK


# tica -------------------------------------------------------------------

def cmd_tica(cfg: dict) -> int:
    top = read_topology(cfg["topology"])
    traj = read_trajectory(cfg["trajectory"], top)
    if cfg["torsions"] is not None:
        quads = [tuple(int(i) for i in q) for q in cfg["torsions"]]
    elif cfg["features"] == "backbone":
        from .targets import backbone_torsions

        try:
            tor = backbone_torsions(top)
        except KeyError as exc:
            raise ConfigError(f"no backbone torsions in {top.name}: {exc}") from None
        quads = [tor["phi"], tor["psi"]]
    else:
        raise ConfigError("give 'torsions' (list of atom quadruples) or features='backbone'")
    angles = np.stack([torsion(traj.frames, *q) for q in quads], axis=1)
    model = tica_fit(torsion_features(angles), int(cfg["lag"]))
    ncomp = int(cfg["n_components"])
    proj = tica_transform(model, torsion_features(angles), ncomp)
    out = cfg["output"]
    h = _write_resolved(cfg)
    meta = {"config_sha256": h, "trajectory_sha256": file_hash(cfg["trajectory"]), "version": __version__}
    write_table(os.path.join(out, "projections.tsv"), {f"tic{k}": proj[:, k] for k in range(ncomp)}, meta)
    _json_dump(os.path.join(out, "tica.json"), {
        "lag": model.lag, "torsions": [list(q) for q in quads], "features": model.features,
        "eigenvalues": model.eigenvalues.tolist(), "timescales": model.timescales.tolist(),
        "mean": model.mean.tolist(), "eigenvectors": model.eigenvectors.tolist(), "provenance": meta,
    })
    _emit("tica-done", lag=model.lag, eigenvalue0=f"{model.eigenvalues[0]:.6g}")
    return EXIT_OK


# entry point ------------------------------------------------------------

COMMANDS = {
    "dataset": (cmd_dataset, "sample reference data from targets and write a dataset manifest"),
    "train": (cmd_train, "train a vector field by conditional flow matching"),
    "sample": (cmd_sample, "draw, validate and reweight samples from a checkpoint"),
    "evaluate": (cmd_evaluate, "free-energy profiles, Wasserstein, TICA and NLL for an ensemble"),
    "tica": (cmd_tica, "fit TICA on torsion features of a trajectory"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tbg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"tbg {__version__}")
    p.add_argument("--log-format", choices=("kv", "human"), default="kv",
                   help="stderr log style: key=value records (default) or readable lines")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, helptext) in COMMANDS.items():
        s = sub.add_parser(name, help=helptext, description=helptext)
        s.add_argument("--config", required=True, help="JSON config file (see README)")
        s.add_argument("--output", help="output directory (overrides the config)")
        if name == "sample":
            s.add_argument("--workers", type=int, default=1,
                           help="processes for sampling; output does not depend on it")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"tbg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    _setup_logging(args.log_format, args.verbose)
    fn = COMMANDS[args.command][0]
    try:
        cfg = _load_config(args.command, args.config, args.output)
        if args.command == "sample":
            if args.workers < 1:
                raise UsageError("--workers must be at least 1")
            return fn(cfg, workers=args.workers)
        return fn(cfg)
    except (UsageError, ConfigError) as exc:
        log.error("usage-error", extra={"fields": {"type": type(exc).__name__, "message": str(exc)}})
        return EXIT_USAGE
    except (TbgError, OSError, ValueError, ArithmeticError) as exc:
        log.error("failure", extra={"fields": {"type": type(exc).__name__, "message": str(exc)}})
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
