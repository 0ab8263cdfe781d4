"""Command-line experiment runner.

``python -m quenched_asip run --config exp.json`` executes the full
pipeline (density, decay, covariance, blocks, simulation, diagnostics) and
writes one report per stage into the output directory.  Exit codes: 0 on
success, 1 for configuration or usage errors, 2 when a hypothesis of the
limit theorem fails (the pipeline stops at the first failed hypothesis).
"""

import argparse
import datetime
import json
import math
import os
import sys

import numpy as np

from . import __version__
from . import blocks as blk
from . import config as cf
from . import covariance as cv
from . import maps as mp
from . import simulate as sm
from . import transfer as tr

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS = 0, 1, 2


class HypothesisFailure(Exception):
    def __init__(self, hypothesis, message, details=None):
        super().__init__(message)
        self.hypothesis = hypothesis
        self.details = details or {}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj):
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


class Pipeline:
    """Stage runner sharing one configuration; outputs are buffered until :meth:`write`."""

    def __init__(self, cfg, threads=1):
        self.cfg = cfg
        self.threads = max(1, int(threads))
        self.hash = cf.config_hash(cfg)
        self.exp = cf.build(cfg)
        self.k = cfg["grid_k"]
        self.i0 = cfg["fiber_index"]
        self.seed = cfg["simulation"]["seed"]
        self.outputs = {}
        self._decay = self._sigma = self._g = None

    # -- shared objects ------------------------------------------------------
    @property
    def stamp(self):
        return {"config_hash": self.hash, "version": __version__}

    def _json(self, name, payload):
        body = dict(payload)
        body.update(self.stamp)
        text = dumps(body)
        self.outputs[name] = lambda path: _write_text(path, text)

    @property
    def cocycle(self):
        t = self.cfg["tolerances"]
        return tr.cocycle(self.exp.family, self.exp.system, self.k, t["density_tol"], t["density_n_max"])

    @property
    def centered(self):
        if self._g is None:
            self._g = cv.center_observable(self.exp.observable, self.cocycle)
        return self._g

    # -- stages ---------------------------------------------------------------
    def expansion(self):
        try:
            c = mp.family_constants(self.exp.family)
        except mp.NotExpandingError as exc:
            raise HypothesisFailure("uniform expansion", str(exc)) from None
        return c

    def density(self):
        try:
            h = self.cocycle.pullback(self.i0)
        except tr.DensityConvergenceError as exc:
            raise HypothesisFailure("equivariant density", str(exc),
                                    {"residuals": exc.residuals[-10:]}) from None
        fd = tr.FiberDensity(self.k, h[0], self.i0, h[1], h[2])
        extra = f",config_hash={self.hash},version={__version__}"
        self.outputs["density.csv"] = lambda path: tr.export_density_csv(fd, path, extra)
        return fd

    def decay(self):
        if self._decay is None:
            d = self.cfg["decay"]
            self._decay = tr.verify_decay(self.exp.family, self.exp.system, self.i0, d["N"], d["trials"],
                                          self.k, seed=self.seed)
        est = self._decay
        payload = est.to_dict()
        payload["message"] = est.message()
        self._json("decay.json", payload)
        if not est.holds:
            raise HypothesisFailure("exponential decay", est.message(), est.to_dict())
        return est

    def sigma(self):
        if self._sigma is None:
            s = self.cfg["sigma"]
            self._sigma = cv.sigma_matrix(self.exp.family, self.exp.system, self.centered, self.i0,
                                          s["N_max"], self.k, s["window"], self._decay, self.threads)
        rep = self._sigma
        self._json("sigma.json", rep.to_dict())
        if rep.degenerate:
            raise HypothesisFailure(
                "nondegenerate covariance",
                f"covariance matrix is degenerate (min eigenvalue {rep.min_eigenvalue:.3e}); "
                "the observable is a coboundary along the reported direction",
                {"degenerate_direction": rep.degenerate_direction, "min_eigenvalue": rep.min_eigenvalue})
        return rep

    def blocks(self, level=None):
        b = self.cfg["blocks"]
        levels = [level] if level is not None else range(b["N"] + 1)
        decs = []
        for n in levels:
            try:
                decs.append(blk.build_blocks(n, b["beta"], b["eps"]))
            except blk.BlockParameterError:
                if level is not None:
                    raise
        extra = f"config_hash={self.hash},version={__version__}"
        self.outputs["blocks.csv"] = lambda path: blk.export_blocks_csv(decs, path, extra)
        return decs

    def simulate(self, sigma_report):
        s, b = self.cfg["simulation"], self.cfg["blocks"]
        cps = sm.diagnostic_checkpoints(s["n_steps"], b["N"], b["beta"], b["eps"], s["grain"])
        paths = sm.birkhoff_paths(self.exp.family, self.exp.system, self.centered, self.i0, s["n_steps"],
                                  s["n_paths"], cps, self.seed, jitter=s["jitter"], threads=self.threads,
                                  k=self.k)
        extra = f",config_hash={self.hash},version={__version__}"
        self.outputs["paths.csv"] = lambda path: sm.export_paths_csv(paths, path, extra)
        levels = range(max(0, b["N"] - 3), b["N"] + 1)
        r = self.cfg["rates"]
        diag = sm.asip_diagnostics(paths, sigma_report, r["p"], b["beta"], b["eps"], levels, r["deltas"],
                                   mixing_fit=None if sigma_report.degenerate else self.mixing_fit())
        self._json("diagnostics.json", diag.to_dict())
        return paths, diag

    def mixing_fit(self, gaps=range(2, 13), block_len=1, t_norm=0.3):
        g = self.centered
        t = np.full(g.d, t_norm / np.sqrt(g.d))
        fit = tr.mixing_fit(self.exp.family, self.exp.system, g, [(0, block_len, t)],
                            [(block_len, 2 * block_len, t)], gaps, self.k, self.i0)
        return fit.to_dict()

    # -- output ---------------------------------------------------------------
    def write(self, out_dir, command, failure=None):
        os.makedirs(out_dir, exist_ok=True)
        if failure is not None:
            self._json("failure.json", {"hypothesis": failure.hypothesis, "message": str(failure),
                                        "details": failure.details})
        for name in sorted(self.outputs):
            self.outputs[name](os.path.join(out_dir, name))
        meta = {"timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                "command": command, "threads": self.threads,
                "files": sorted(self.outputs) + ["metadata.json"]}
        meta.update(self.stamp)
        _write_text(os.path.join(out_dir, "metadata.json"), dumps(meta))


def _write_text(path, text):
    with open(path, "w") as fh:
        fh.write(text)


# -- verification suite -------------------------------------------------------

def verify_suite(pipe, n_random=1000, n_fibers=20, n_directions=5):
    """Invariant checks; returns a list of ``(name, passed, detail)``."""
    fam, sys_, k = pipe.exp.family, pipe.exp.system, pipe.k
    rng = np.random.default_rng(pipe.seed)
    results = []

    worst = 0.0
    for name in sorted(set(sys_.alphabet)):
        P = tr.ulam_matrix(fam[name], k).matrix
        V = rng.random((k, n_random))
        W = P.T @ V
        worst = max(worst, float(np.max(np.abs(tr.integral(W) - tr.integral(V)))),
                    float(np.max(np.abs(np.asarray(P.sum(axis=1)).ravel() - 1.0))))
        if P.data.min() < 0 or W.min() < 0:
            worst = float("inf")
    results.append(("mass_conservation", worst <= 1e-12, f"max defect {worst:.2e}"))

    coc = pipe.cocycle
    dens = np.stack([coc.pullback(pipe.i0 + j)[0] for j in range(n_fibers + 1)])
    eq = max(float(tr.weak_norm(coc.step(dens[j], pipe.i0 + j) - dens[j + 1])) for j in range(n_fibers))
    results.append(("equivariance", eq <= 1e-8, f"max L1 defect {eq:.2e} over {n_fibers} fibers"))

    b = pipe.cfg["blocks"]
    bad = []
    for n in range(b["N"] + 1):
        if not blk.is_valid_level(n, b["beta"], b["eps"]):
            continue
        dec = blk.build_blocks(n, b["beta"], b["eps"])
        pos = 2 ** n
        for iv in dec.intervals:
            if iv.start != pos or iv.length < 1:
                bad.append(n)
                break
            pos = iv.end
        if pos != 2 ** (n + 1) or dec.gap_length() != blk.total_gap_length(n, b["beta"], b["eps"]):
            bad.append(n)
    results.append(("tiling", not bad, f"levels 0..{b['N']}" + (f", failing {sorted(set(bad))}" if bad else "")))

    rep = pipe._sigma or cv.sigma_matrix(fam, sys_, pipe.centered, pipe.i0, pipe.cfg["sigma"]["N_max"], k,
                                         pipe.cfg["sigma"]["window"], pipe._decay, pipe.threads)
    d = pipe.centered.d
    gaps = []
    for _ in range(n_directions):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        s, tail = cv.sigma_scalar(fam, sys_, pipe.centered.dot(v), pipe.i0, rep.truncation_N, k, rep.window,
                                  pipe._decay)
        gaps.append((abs(s - v @ rep.sigma2 @ v), tail + rep.tail_bound + 1e-9))
    ok = all(g <= tol for g, tol in gaps)
    results.append(("polarization", ok, f"max |scalar - quadratic form| {max(g for g, _ in gaps):.2e}"))
    return results


# -- argument handling --------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


COMMANDS = {
    "run": "full pipeline: density, decay, covariance, blocks, simulation",
    "density": "equivariant density at the configured fiber",
    "decay": "check uniform expansion and fit projection decay",
    "sigma": "Green-Kubo covariance matrix",
    "blocks": "big/small block decomposition",
    "simulate": "Birkhoff-sum paths and invariance-principle diagnostics",
    "verify": "invariant checks (mass, equivariance, tiling, polarization)",
}


def make_parser():
    p = _Parser(prog="quenched-asip", description="Quenched invariance-principle experiments.")
    p.add_argument("--init", metavar="PATH", help="write a config template with all defaults and exit")
    sub = p.add_subparsers(dest="command")
    for name, summary in COMMANDS.items():
        s = sub.add_parser(name, help=summary)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--seed", type=int, help="override simulation.seed")
        s.add_argument("--out", help="override output_dir")
        s.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        s.add_argument("--k", type=int, help="override grid_k")
        if name == "blocks":
            s.add_argument("--level", type=int, help="export a single level")
    init = sub.add_parser("init", help="write a config template")
    init.add_argument("path", nargs="?", help="destination (stdout if omitted)")
    return p


def _load(args):
    with open(args.config) as fh:
        text = fh.read()
    raw_cfg = cf.loads(text)
    if args.seed is not None:
        raw_cfg["simulation"]["seed"] = args.seed
    if args.k is not None:
        raw_cfg["grid_k"] = args.k
    if args.out is not None:
        raw_cfg["output_dir"] = args.out
    return cf.validate(raw_cfg)


def _write_template(path):
    if path is None:
        sys.stdout.write(cf.template_text())
    else:
        _write_text(path, cf.template_text())
    return EXIT_OK


def main(argv=None):
    args = make_parser().parse_args(argv)
    if args.init:
        return _write_template(args.init)
    if args.command is None:
        make_parser().print_usage(sys.stderr)
        return EXIT_CONFIG
    if args.command == "init":
        return _write_template(args.path)
    try:
        cfg = _load(args)
        if args.threads < 1:
            raise cf.ConfigError("must be a positive integer", "--threads")
        pipe = Pipeline(cfg, args.threads)
    except cf.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG

    failure, code = None, EXIT_OK
    try:
        code = _dispatch(pipe, args)
    except HypothesisFailure as exc:
        failure, code = exc, EXIT_HYPOTHESIS
        print(f"hypothesis failed [{exc.hypothesis}]: {exc}", file=sys.stderr)
    except blk.BlockParameterError as exc:
        print(f"config error: blocks: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    pipe.write(cfg["output_dir"], args.command, failure)
    return code


def _dispatch(pipe, args):
    cmd = args.command
    if cmd == "density":
        pipe.density()
    elif cmd == "decay":
        pipe.expansion()
        pipe.decay()
    elif cmd == "sigma":
        pipe.expansion()
        pipe.decay()
        pipe.outputs.pop("decay.json")
        pipe.sigma()
    elif cmd == "blocks":
        pipe.blocks(args.level)
    elif cmd == "simulate":
        pipe.expansion()
        pipe.decay()
        pipe.outputs.pop("decay.json")
        rep = pipe.sigma()
        pipe.outputs.pop("sigma.json")
        pipe.simulate(rep)
    elif cmd == "verify":
        pipe.expansion()
        results = verify_suite(pipe)
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        pipe._json("verify.json", {"results": [{"property": n, "passed": ok, "detail": d}
                                               for n, ok, d in results]})
        return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_HYPOTHESIS
    else:
        pipe.expansion()
        pipe.density()
        pipe.decay()
        rep = pipe.sigma()
        pipe.blocks()
        pipe.simulate(rep)
    return EXIT_OK
