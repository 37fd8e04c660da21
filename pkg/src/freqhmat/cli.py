"""Command-line driver: assemble, compact, reconstruct and verify.

All wavenumbers on the command line are dimensionless, ``kappa * diam``;
they are divided by the mesh diameter before use.  Every JSON report embeds
the full run configuration and the package version.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import VARIANTS, build_block_tree, build_cluster_tree, tree_fingerprint
from .compact import CompactFormatError, build_compact, deserialize, serialize
from .hmatrix import assemble, save_hmatrix
from .kernel import GalerkinKernel, KernelKind
from .mesh import gen_blob, gen_sphere, load_off
from .metrics import KernelOracle, error_report, subset_blocks, time_call
from .rational import SampleGrid
from .reconstruct import reconstruct_hmatrix

DENSE_LIMIT = 4096
CSV_FIELDS = ("kappa_dimless", "memory_bytes", "seconds", "mean_rank", "max_rank")


class ConfigError(ValueError):
    """Invalid run configuration."""


def version_string():
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunConfig:
    """Validated parameters of one CLI run."""

    mesh: str = None
    sphere_level: int = None
    blob_level: int = None
    kernel: str = "slp"
    kappa: list = None  # None: 8 for assemble/verify, 0.9 b for reconstruct
    range: tuple = (10.0, 100.0)
    eta: float = 2.0
    adm: str = "min"
    n_min: int = 32
    q: int = 5
    aca_tol: float = 1e-5
    tensor_tol: float = 1e-4
    recompress_tol: float = None
    nodes: int = 16
    heldout: int = 7
    max_degree: int = 8
    threads: int = None
    seed: int = 0
    out: str = None
    extracted: bool = False
    with_nearfield: bool = False
    subset_fraction: float = 1.0
    repeats: int = 5

    def validate(self):
        sources = [v is not None for v in (self.mesh, self.sphere_level, self.blob_level)]
        if sum(sources) != 1:
            raise ConfigError("give exactly one of --mesh, --sphere-level, --blob-level")
        if self.mesh is not None and not Path(self.mesh).is_file():
            raise ConfigError(f"mesh file not found: {self.mesh}")
        for name in ("sphere_level", "blob_level"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 6:
                raise ConfigError(f"{name} must be in 0..6")
        try:
            KernelKind.parse(self.kernel)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.kappa is not None and (not self.kappa or any(not (np.isfinite(k) and k > 0)
                                                             for k in self.kappa)):
            raise ConfigError("--kappa values must be positive")
        a, b = self.range
        if not 0 < a < b:
            raise ConfigError("--range needs 0 < a < b")
        if self.adm not in VARIANTS:
            raise ConfigError(f"--adm must be one of {VARIANTS}")
        if self.eta <= 0 or self.n_min < 1:
            raise ConfigError("--eta must be > 0 and --n-min >= 1")
        if not 1 <= self.q <= 12:
            raise ConfigError("--q must be in 1..12")
        for name in ("aca_tol", "tensor_tol", "recompress_tol"):
            v = getattr(self, name)
            if v is not None and not 0 < v < 1:
                raise ConfigError(f"--{name.replace('_', '-')} must lie in (0, 1)")
        if self.nodes < 2 or self.heldout < 1 or self.max_degree < 0:
            raise ConfigError("--nodes >= 2, --heldout >= 1 and --max-degree >= 0 required")
        if not 0 < self.subset_fraction <= 1:
            raise ConfigError("--subset-fraction must lie in (0, 1]")
        if self.repeats < 1:
            raise ConfigError("--repeats must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("--threads must be >= 1")
        self.range = (float(a), float(b))
        if self.kappa is not None:
            self.kappa = [float(k) for k in self.kappa]
        return self

    def kappas(self, default):
        return list(self.kappa) if self.kappa is not None else [float(default)]

    def to_dict(self):
        d = asdict(self)
        d["range"] = list(self.range)
        return d


class Context:
    """Mesh, trees and kernel derived from a :class:`RunConfig`."""

    def __init__(self, cfg):
        self.cfg = cfg
        if cfg.mesh is not None:
            self.mesh = load_off(cfg.mesh)
        elif cfg.sphere_level is not None:
            self.mesh = gen_sphere(cfg.sphere_level)
        else:
            self.mesh = gen_blob(cfg.blob_level, seed=cfg.seed)
        self.diameter = self.mesh.diameter
        tree = build_cluster_tree(self.mesh, cfg.n_min)
        self.block_tree = build_block_tree(tree, tree, cfg.eta, cfg.adm)
        self.kernel = GalerkinKernel(self.mesh, cfg.kernel, cfg.q)

    def kappa(self, dimless):
        return float(dimless) / self.diameter

    def grid(self):
        a, b = self.cfg.range
        return SampleGrid.chebyshev(a / self.diameter, b / self.diameter, self.cfg.nodes, self.cfg.heldout)

    def subset(self):
        return subset_blocks(self.block_tree, self.cfg.subset_fraction, self.cfg.seed)

    def describe(self):
        return {
            "n_panels": self.mesh.n_panels,
            "diameter": self.diameter,
            "h": self.mesh.h,
            "mesh_fingerprint": self.mesh.fingerprint,
            "tree_fingerprint": tree_fingerprint(self.block_tree),
            "n_far_blocks": len(list(self.block_tree.far_field())),
            "n_near_blocks": len(list(self.block_tree.near_field())),
        }


def _header(cfg, ctx):
    return {"version": version_string(), "config": cfg.to_dict(), "mesh": ctx.describe()}


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    return text


def strip_timings(obj):
    """Copy of a report with every timing field removed (for determinism checks)."""
    if isinstance(obj, dict):
        return {k: strip_timings(v) for k, v in obj.items()
                if not (k.startswith("seconds") or k in ("timing", "timings", "time"))}
    if isinstance(obj, list):
        return [strip_timings(v) for v in obj]
    return obj


def _out(cfg, name):
    return None if cfg.out is None else str(Path(cfg.out) / name)


# ---------------------------------------------------------------------------
# subcommands


def cmd_assemble(cfg):
    """Assemble at every ``--kappa``; JSON stats, CSV sweep and optional container."""
    ctx = Context(cfg)
    report = _header(cfg, ctx)
    runs = []
    A = None
    for kd in cfg.kappas(8.0):
        A = assemble(ctx.mesh, ctx.block_tree, cfg.kernel, ctx.kappa(kd), cfg.aca_tol, cfg.extracted,
                     cfg.q, cfg.recompress_tol, nearfield=cfg.with_nearfield, kernel=ctx.kernel)
        st = A.stats()
        st["kappa_dimless"] = kd
        st["seconds"] = st["seconds_far"] + st["seconds_near"]
        runs.append(st)
    report["runs"] = runs
    if cfg.out is not None:
        _mkdir(cfg)
        with open(_out(cfg, "sweep.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
            w.writeheader()
            for st in runs:
                w.writerow({k: st[k] for k in CSV_FIELDS})
        save_hmatrix(A, _out(cfg, "hmatrix.bin"))
    write_json(report, _out(cfg, "assemble.json"))
    return report


def _mkdir(cfg):
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    return True


def cmd_compact(cfg):
    """Compact representation of the extracted far field over ``--range``."""
    ctx = Context(cfg)
    grid = ctx.grid()
    blocks = ctx.subset()
    rep, timing = time_call(lambda: build_compact(
        ctx.kernel, ctx.block_tree, grid, cfg.tensor_tol, cfg.aca_tol, cfg.max_degree, blocks=blocks,
        seed=cfg.seed, config=cfg.to_dict()), repeats=1)
    err = error_report(rep, KernelOracle(ctx.kernel, ctx.block_tree), seed=cfg.seed)
    # single-kappa extracted H-matrix at b on the same blocks, for Mem/Mem(b)
    ref = assemble(ctx.mesh, ctx.block_tree, cfg.kernel, grid.b, cfg.aca_tol, True, cfg.q,
                   cfg.recompress_tol, nearfield=False, kernel=ctx.kernel, blocks=blocks)
    mem_b = ref.stats()["farfield_bytes"]
    report = _header(cfg, ctx)
    report["compact"] = dict(rep.summary(), seconds=timing.median, n_blocks_total=ctx.describe()["n_far_blocks"])
    report["compact"]["mem_over_mem_b"] = rep.nbytes / mem_b if mem_b else None
    report["compact"]["memory_b_bytes"] = mem_b
    report["error"] = err.to_dict(kernel=cfg.kernel, extracted=True, interval=[grid.a, grid.b],
                                  nodes=grid.nodes.tolist(), tol=cfg.tensor_tol)
    if cfg.out is not None:
        _mkdir(cfg)
        serialize(rep, _out(cfg, "compact.cbr"))
    write_json(report, _out(cfg, "compact.json"))
    report["_rep"] = rep
    return report


def cmd_reconstruct(cfg, container):
    """Reconstruct at ``--kappa`` (default ``0.9 b``) and compare timings."""
    ctx = Context(cfg)
    try:
        hrep = deserialize(container, ctx.mesh.fingerprint, tree_fingerprint(ctx.block_tree))
    except CompactFormatError as exc:
        raise ConfigError(f"container does not match this run: {exc}") from None
    kd = cfg.kappas(0.9 * cfg.range[1])[0]
    kappa = ctx.kappa(kd)
    blocks = sorted(hrep.blocks)

    def recon():
        return reconstruct_hmatrix(hrep, ctx.mesh, ctx.block_tree, cfg.kernel, kappa, cfg.aca_tol,
                                   with_nearfield=False, kernel=ctx.kernel)

    def direct(extracted):
        return lambda: assemble(ctx.mesh, ctx.block_tree, cfg.kernel, kappa, cfg.aca_tol, extracted,
                                cfg.q, cfg.recompress_tol, nearfield=False, kernel=ctx.kernel,
                                blocks=blocks)

    A, t_r = time_call(recon, cfg.repeats)
    E, t_e = time_call(direct(True), cfg.repeats)
    _, t_o = time_call(direct(False), cfg.repeats)
    report = _header(cfg, ctx)
    report["kappa_dimless"] = kd
    report["reconstruction"] = A.report.to_dict()
    report["stats"] = A.stats()
    report["timing"] = {"reconstruct": t_r.to_dict(), "extracted": t_e.to_dict(), "plain": t_o.to_dict(),
                        "speedup_extracted": t_e.median / t_r.median, "speedup_plain": t_o.median / t_r.median}
    if cfg.with_nearfield:
        _, t_n = time_call(lambda: reconstruct_hmatrix(hrep, ctx.mesh, ctx.block_tree, cfg.kernel, kappa,
                                                       cfg.aca_tol, with_nearfield=True, kernel=ctx.kernel), 1)
        report["timing"]["with_nearfield"] = t_n.to_dict()
    # sampled agreement with the direct extracted assembly
    rng = np.random.default_rng(cfg.seed)
    diffs, norms = [], []
    for bid in blocks:
        la, le = A.leaf(bid), E.leaf(bid)
        li = rng.integers(0, la.shape[0], 64)
        lj = rng.integers(0, la.shape[1], 64)
        diffs.append(A.block_entries(la, li, lj) - E.block_entries(le, li, lj))
        norms.append(E.block_entries(le, li, lj))
    d, n = np.concatenate(diffs), np.concatenate(norms)
    report["sampled_rel_error"] = float(np.linalg.norm(d) / np.linalg.norm(n))
    if cfg.out is not None:
        _mkdir(cfg)
        save_hmatrix(A, _out(cfg, "reconstructed.bin"))
    write_json(report, _out(cfg, "reconstruct.json"))
    return report


def cmd_verify(cfg, container=None):
    """Dense-oracle checks; returns a report with ``passed`` per check."""
    ctx = Context(cfg)
    if ctx.mesh.n_panels > DENSE_LIMIT:
        raise ConfigError(f"verify needs N <= {DENSE_LIMIT}, mesh has {ctx.mesh.n_panels}")
    checks = {}
    kd = cfg.kappas(8.0)[0]
    kappa = ctx.kappa(kd)
    dense = ctx.kernel.dense(kappa)
    A = assemble(ctx.mesh, ctx.block_tree, cfg.kernel, kappa, cfg.aca_tol, False, cfg.q,
                 cfg.recompress_tol, kernel=ctx.kernel)
    err = np.linalg.norm(A.to_dense(force=True) - dense) / np.linalg.norm(dense)
    checks["hmatrix_vs_dense"] = {"value": float(err), "bound": 10 * cfg.aca_tol,
                                  "passed": bool(err <= 10 * cfg.aca_tol)}
    E = assemble(ctx.mesh, ctx.block_tree, cfg.kernel, kappa, cfg.aca_tol, True, cfg.q,
                 cfg.recompress_tol, kernel=ctx.kernel)
    errE = np.linalg.norm(E.to_dense(force=True, with_phase=True) - dense) / np.linalg.norm(dense)
    checks["hadamard_identity"] = {"value": float(errE), "bound": 20 * cfg.aca_tol,
                                   "passed": bool(errE <= 20 * cfg.aca_tol)}
    far = [b for b in ctx.block_tree.far_field()]
    if far:
        grid = ctx.grid()
        blocks = subset_blocks(ctx.block_tree, min(cfg.subset_fraction, 1.0), cfg.seed)[:8]
        rep = build_compact(ctx.kernel, ctx.block_tree, grid, cfg.tensor_tol, cfg.aca_tol, cfg.max_degree,
                            blocks=blocks, seed=cfg.seed)
        er = error_report(rep, KernelOracle(ctx.kernel, ctx.block_tree), seed=cfg.seed)
        checks["compact_heldout"] = {"err_f": er.err_f, "err_inf": er.err_inf, "bound_f": 5e-4,
                                     "bound_inf": 1e-3,
                                     "passed": bool(er.err_f <= 5e-4 and er.err_inf <= 1e-3)}
    if container is not None:
        try:
            deserialize(container, ctx.mesh.fingerprint, tree_fingerprint(ctx.block_tree))
            checks["container"] = {"passed": True}
        except (CompactFormatError, OSError) as exc:
            checks["container"] = {"passed": False, "error": str(exc)}
    report = _header(cfg, ctx)
    report["checks"] = checks
    report["passed"] = all(c["passed"] for c in checks.values())
    write_json(report, _out(cfg, "verify.json"))
    return report


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    p = argparse.ArgumentParser(prog="freqhmat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--mesh", help="OFF triangle mesh")
    src.add_argument("--sphere-level", type=int, help="icosphere refinement level")
    src.add_argument("--blob-level", type=int, help="non-symmetric blob at this refinement level")
    common.add_argument("--kernel", default="slp", choices=["slp", "dlp"])
    common.add_argument("--kappa", type=float, nargs="+", default=None, help="dimensionless kappa*diam")
    common.add_argument("--range", type=float, nargs=2, default=(10.0, 100.0), metavar=("A", "B"),
                        help="dimensionless interval for the compact representation")
    common.add_argument("--eta", type=float, default=2.0)
    common.add_argument("--adm", default="min", choices=list(VARIANTS))
    common.add_argument("--n-min", type=int, default=32, help="cluster leaf size")
    common.add_argument("--q", type=int, default=5, help="Gauss points per direction")
    common.add_argument("--aca-tol", type=float, default=1e-5)
    common.add_argument("--tensor-tol", type=float, default=1e-4)
    common.add_argument("--recompress-tol", type=float, default=None)
    common.add_argument("--nodes", type=int, default=16, help="Chebyshev sample nodes")
    common.add_argument("--heldout", type=int, default=7, help="held-out test wavenumbers")
    common.add_argument("--max-degree", type=int, default=8)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--with-nearfield", action="store_true")
    common.add_argument("--subset-fraction", type=float, default=1.0)
    common.add_argument("--repeats", type=int, default=5, help="timing repetitions (median reported)")

    a = sub.add_parser("assemble", parents=[common], help="assemble an H-matrix")
    a.add_argument("--extracted", action="store_true", help="frequency-extracted far field")
    sub.add_parser("compact", parents=[common], help="build the compact representation")
    r = sub.add_parser("reconstruct", parents=[common], help="reconstruct from a container")
    r.add_argument("--container", required=True)
    v = sub.add_parser("verify", parents=[common], help="dense-oracle verification suite")
    v.add_argument("--container", default=None)
    return p


def config_from_args(ns):
    keys = RunConfig.__dataclass_fields__
    cfg = RunConfig(**{k: getattr(ns, k) for k in keys if hasattr(ns, k)})
    return cfg.validate()


def _set_threads(n):
    if n is None:
        return
    os.environ["NUMBA_NUM_THREADS"] = str(n)
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except (ImportError, ValueError):
        pass


def main(argv=None):
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
        _set_threads(cfg.threads)
        if ns.command == "assemble":
            report = cmd_assemble(cfg)
        elif ns.command == "compact":
            report = cmd_compact(cfg)
            report.pop("_rep")
        elif ns.command == "reconstruct":
            report = cmd_reconstruct(cfg, ns.container)
        else:
            report = cmd_verify(cfg, ns.container)
    except ConfigError as exc:
        print(f"freqhmat: error: {exc}", file=sys.stderr)
        return 2
    print(write_json(report, None))
    if ns.command == "verify" and not report["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
