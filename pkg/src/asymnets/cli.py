"""Command-line entry point: ``asymnets {train,interp,rebasin,symcheck,uafit,data-fetch}``.

Exit codes: 0 success, 1 usage or config error, 2 incompatible inputs, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import urllib.request
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import CheckpointError, IncompatibleCheckpoints, ModelCheckpoint, load_checkpoint, save_checkpoint
from .interp import barrier, curve, mli_metrics
from .nn import ConfigError, InfeasibleMaskError, ModelConfig, build_model
from .rebasin import align
from .symmetry import report_json, symmetry_report
from .train import DivergenceError, TrainConfig, train
from .universal import InadmissibleMasks, fit_report_json, uafit

log = logging.getLogger("asymnets")

EXIT_OK, EXIT_CONFIG, EXIT_INCOMPATIBLE, EXIT_NUMERIC = 0, 1, 2, 3

MNIST_URL = "https://storage.googleapis.com/cvdf-datasets/mnist/"
CHECKSUM_FILE = "SHA256SUMS"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- experiment config

DATA_KEYS = {"source", "dir", "train_split", "eval_split", "limit",
             "num_classes", "n_per_class", "d", "separation", "seed"}
ANALYSIS_KEYS = {"n_points", "probe_count", "search_limit", "max_sweeps"}


@dataclass
class DataConfig:
    source: str = "mnist"  # mnist | blobs
    dir: str | None = None
    train_split: str = "train"
    eval_split: str = "test"
    limit: int | None = None
    num_classes: int = 3
    n_per_class: int = 50
    d: int = 4
    separation: float = 3.0
    seed: int = 0


@dataclass
class AnalysisConfig:
    n_points: int = 25
    probe_count: int = 100
    search_limit: int = 100_000
    max_sweeps: int = 50


@dataclass
class ExperimentConfig:
    model: ModelConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {"model", "train", "data", "analysis"}
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        if "model" not in d:
            raise ConfigError("missing 'model' section")
        for name, keys in (("data", DATA_KEYS), ("analysis", ANALYSIS_KEYS)):
            bad = set(d.get(name, {})) - keys
            if bad:
                raise ConfigError(f"unknown {name} keys: {sorted(bad)}")
        try:
            tcfg = TrainConfig.from_dict(d.get("train", {}))
            tcfg.validate()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"train section: {e}") from e
        try:
            mcfg = ModelConfig.from_dict(d["model"])
        except TypeError as e:
            raise ConfigError(f"model section: {e}") from e
        mcfg.validate()
        dcfg = DataConfig(**d.get("data", {}))
        if dcfg.source not in ("mnist", "blobs"):
            raise ConfigError("data.source must be mnist or blobs")
        return cls(mcfg, tcfg, dcfg, AnalysisConfig(**d.get("analysis", {})))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": self.train.to_dict(),
                "data": asdict(self.data), "analysis": asdict(self.analysis)}


def load_split(dcfg: DataConfig, split: str) -> D.Dataset:
    if dcfg.source == "blobs":
        seed = dcfg.seed if split == "train" else dcfg.seed + 1
        return D.gaussian_blobs(dcfg.num_classes, dcfg.n_per_class, dcfg.d, dcfg.separation, seed)
    ds = D.load_mnist(dcfg.dir, split)
    if dcfg.limit is not None:
        ds = ds.subset(slice(0, dcfg.limit))
    return ds


# ---------------------------------------------------------------- commands

def _train_one(cfg_dict: dict, out: str, seed_override: int | None) -> dict:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    if seed_override is not None:
        cfg.model.init_seed = seed_override
        cfg.train.shuffle_seed = seed_override
    ds = load_split(cfg.data, cfg.data.train_split)
    model = build_model(cfg.model)
    out_path = Path(out)
    ckpt, report = train(model, ds, cfg.train, report_path=out_path.with_suffix(".jsonl"))
    ckpt.provenance["data"] = asdict(cfg.data)
    save_checkpoint(ckpt, out_path)
    return {"checkpoint": str(out_path), "n_trainable": ckpt.n_trainable, "asym_hash": ckpt.asym_hash,
            "final_train_loss": report.train_loss[-1] if report.train_loss else None}


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if not args.seeds:
        print(json.dumps(_train_one(cfg.to_dict(), args.out, None)))
        return EXIT_OK
    out = Path(args.out)
    jobs = [(cfg.to_dict(), str(out.with_name(f"{out.stem}-s{s}{out.suffix}")), s) for s in args.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_train_one, *zip(*jobs)))
    else:
        results = [_train_one(*j) for j in jobs]
    for r in results:
        print(json.dumps(r))
    return EXIT_OK


def _eval_data(args) -> D.Dataset:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        return load_split(cfg.data, args.split or cfg.data.eval_split)
    return D.load_mnist(args.data_dir, args.split or "test")


def cmd_interp(args) -> int:
    a, b = load_checkpoint(args.ckpt_a), load_checkpoint(args.ckpt_b)
    ds = _eval_data(args)
    c = curve(a, b, ds, args.n_points)
    rep = mli_metrics(c)
    bar = barrier(a, b, ds)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "curve.csv").write_text(c.to_csv())
    (out / "mli.json").write_text(rep.to_json() + "\n")
    summary = {"barrier": bar, "n_points": args.n_points, "asym_hash": a.asym_hash}
    (out / "barrier.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_rebasin(args) -> int:
    a, b = load_checkpoint(args.ckpt_a), load_checkpoint(args.ckpt_b)
    try:
        aligned, res = align(a, b, args.max_sweeps)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    x = np.random.default_rng(0).normal(size=(args.probes, b.config.widths[0]))
    dev = float(np.max(np.abs(aligned.to_model().predict(x) - b.to_model().predict(x))))
    if dev > 1e-10:
        print(f"error: aligned model deviates from input by {dev:.3e}", file=sys.stderr)
        return EXIT_NUMERIC
    aligned.provenance["aligned_to"] = str(args.ckpt_a)
    save_checkpoint(aligned, args.out)
    Path(args.out).with_suffix(".alignment.json").write_text(res.to_json() + "\n")
    print(json.dumps({"out": str(args.out), "sweeps": res.sweeps, "converged": res.converged,
                      "objective": res.objective[-1] if res.objective else None, "probe_deviation": dev}))
    return EXIT_OK


def cmd_symcheck(args) -> int:
    if bool(args.ckpt) == bool(args.config):
        raise UsageError("give exactly one of --ckpt or --config")
    if args.ckpt:
        ckpt = load_checkpoint(args.ckpt)
    else:
        raw = json.loads(Path(args.config).read_text())
        mcfg = ModelConfig.from_dict(raw.get("model", raw))
        ckpt = ModelCheckpoint.from_model(build_model(mcfg))
    rep = symmetry_report(ckpt, args.limit, args.probes)
    text = report_json(rep)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if rep["status"] == "ok" else EXIT_NUMERIC


def read_matrix(path, shape=None) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 8:
        raise ConfigError("matrix file length is not a multiple of 8 bytes")
    vals = np.frombuffer(raw, dtype="<f8")
    if shape is None:
        n = int(round(np.sqrt(vals.size)))
        if n * n != vals.size:
            raise ConfigError("non-square matrix file needs --shape")
        shape = (n, n)
    if int(np.prod(shape)) != vals.size:
        raise ConfigError(f"matrix file holds {vals.size} values, shape {tuple(shape)} needs {int(np.prod(shape))}")
    return vals.reshape(shape).astype(np.float64)


def cmd_uafit(args) -> int:
    W = read_matrix(args.w, args.shape)
    try:
        fit = uafit(W, args.n_fix, args.kappa, args.seed, args.retries, args.probes)
    except InadmissibleMasks as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if args.out:
        save_checkpoint(fit.to_checkpoint(), args.out)
    print(fit_report_json(fit))
    if not fit.residual <= fit.meta["tolerance"]:
        print(f"error: residual {fit.residual:.3e} above tolerance {fit.meta['tolerance']:.3e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_data_fetch(args) -> int:
    """Download the four gzipped IDX files and check them against ``SHA256SUMS``.

    Digests come from ``--checksums`` (a JSON object) or an existing ``SHA256SUMS`` in the
    target directory; when neither exists the fetched digests are recorded there so later
    fetches and ``--verify-only`` runs are checked against them.
    """
    target = D.data_dir(args.dir)
    target.mkdir(parents=True, exist_ok=True)
    sums_path = target / CHECKSUM_FILE
    expected: dict[str, str] = {}
    if args.checksums:
        expected = json.loads(Path(args.checksums).read_text())
    elif sums_path.exists():
        for line in sums_path.read_text().splitlines():
            digest, name = line.split()
            expected[name] = digest
    got = {}
    for stem in D.MNIST_FILES.values():
        name = stem + ".gz"
        path = target / name
        if not args.verify_only and not path.exists():
            log.info("fetching %s", name)
            with urllib.request.urlopen(args.base_url + name, timeout=60) as resp:
                path.write_bytes(resp.read())
        if not path.exists():
            print(f"error: {path} missing", file=sys.stderr)
            return EXIT_CONFIG
        got[name] = D.sha256_file(path)
        if name in expected and expected[name] != got[name]:
            print(f"error: checksum mismatch for {name}: {got[name]} != {expected[name]}", file=sys.stderr)
            return EXIT_INCOMPATIBLE
    if not expected:
        sums_path.write_text("".join(f"{d}  {n}\n" for n, d in sorted(got.items())))
    print(json.dumps({"dir": str(target), "sha256": got, "verified": bool(expected)}))
    return EXIT_OK


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="asymnets", description="Train, interpolate, align and check Asymmetric MLPs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from an experiment config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="checkpoint manifest path")
    t.add_argument("--seeds", type=int, nargs="*", help="train one model per seed (init and batch order)")
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("interp", help="interpolation curve, MLI statistics and barrier")
    i.add_argument("ckpt_a")
    i.add_argument("ckpt_b")
    i.add_argument("--n-points", type=int, default=25)
    i.add_argument("--config", help="experiment config whose data section selects the evaluation set")
    i.add_argument("--data-dir")
    i.add_argument("--split")
    i.add_argument("--out-dir", default=".")
    i.set_defaults(fn=cmd_interp)

    r = sub.add_parser("rebasin", help="align ckpt_b to ckpt_a by weight matching")
    r.add_argument("ckpt_a")
    r.add_argument("ckpt_b")
    r.add_argument("--out", required=True)
    r.add_argument("--max-sweeps", type=int, default=50)
    r.add_argument("--probes", type=int, default=100)
    r.set_defaults(fn=cmd_rebasin)

    s = sub.add_parser("symcheck", help="automorphism count or FiGLU falsifier report")
    s.add_argument("--ckpt")
    s.add_argument("--config")
    s.add_argument("--limit", type=int, default=100_000)
    s.add_argument("--probes", type=int, default=100)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_symcheck)

    u = sub.add_parser("uafit", help="exactly fit a linear map with two masked layers")
    u.add_argument("--w", required=True, help="little-endian float64 matrix, row-major")
    u.add_argument("--shape", type=int, nargs=2)
    u.add_argument("--n-fix", type=int, required=True)
    u.add_argument("--kappa", type=float, default=1.0)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--retries", type=int, default=100)
    u.add_argument("--probes", type=int, default=500)
    u.add_argument("--out")
    u.set_defaults(fn=cmd_uafit)

    f = sub.add_parser("data-fetch", help="download MNIST IDX files and verify SHA-256")
    f.add_argument("--dir")
    f.add_argument("--base-url", default=MNIST_URL)
    f.add_argument("--checksums", help="JSON object mapping file name to SHA-256")
    f.add_argument("--verify-only", action="store_true")
    f.set_defaults(fn=cmd_data_fetch)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, InfeasibleMaskError, FileNotFoundError, D.IdxFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except IncompatibleCheckpoints as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
