"""Command-line driver: ``winterbottom <subcommand> --config run.ini [--set section.key=value ...]``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import glob
import sys
from pathlib import Path

import numpy as np

from . import coarse, estimators, fk, geometry
from .config import ConfigError, RunConfig, chain_rng, load_config
from .lattice import HalfSpaceBox, LatticeError, build_bond_graph
from .spins import BoundaryCondition, SpinChain, energy, magnetization, random_spins, read_snapshot, write_snapshot

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 1, 2, 3


class InvariantViolation(RuntimeError):
    pass


class Outputs:
    """Tracks written files so that a failed run leaves nothing behind."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.paths: list[Path] = []

    def path(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.root / name
        self.paths.append(p)
        return p

    def remove(self) -> None:
        for p in self.paths:
            p.unlink(missing_ok=True)


def _write_csv(path: Path, cfg: RunConfig, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        for line in cfg.header_lines():
            f.write(f"# {line}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(x) for x in r])


def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (list, tuple, np.ndarray)):
        return " ".join(_cell(v) for v in x)
    return str(x)


def _graph(cfg: RunConfig):
    m = cfg.model
    return build_bond_graph(HalfSpaceBox(m.N, m.d, m.r), cfg.coupling_set(), m.eta)


def _snapshot_files(cfg: RunConfig) -> list[str]:
    pattern = cfg.output.input or str(Path(cfg.output.dir) / "snap_*")
    files = sorted(glob.glob(pattern))
    if not files:
        raise ConfigError("output.input", f"no snapshot files match {pattern!r}")
    return files


def cmd_sample(cfg: RunConfig, out: Outputs) -> int:
    g = _graph(cfg)
    bc = BoundaryCondition(cfg.model.boundary)
    dyn = cfg.dynamics
    ext = "bin" if dyn.format == "binary" else "txt"
    rows = []
    for c in range(dyn.chains):
        rng = chain_rng(dyn.seed, c)
        if dyn.algorithm.startswith("kawasaki"):
            s0 = random_spins(g.n_sites, rng, 0.0 if dyn.magnetization is None else dyn.magnetization)
        else:
            s0 = np.full(g.n_sites, -1 if bc.kind == "minus" else 1, dtype=np.int8)
        chain = SpinChain(g, bc, cfg.model.beta, s0, rng)
        step = {
            "sw": chain.swendsen_wang,
            "heatbath": chain.heat_bath,
            "kawasaki": lambda n: chain.kawasaki(n, "local"),
            "kawasaki-nonlocal": lambda n: chain.kawasaki(n, "nonlocal"),
        }[dyn.algorithm]
        step(dyn.therm) if dyn.therm else None
        done = 0
        while done < dyn.sweeps:
            k = min(dyn.every, dyn.sweeps - done)
            step(k)
            done += k
            p = out.path(f"snap_c{c:03d}_s{done:07d}.{ext}")
            write_snapshot(p, chain.sigma, cfg.model.d, cfg.model.N, cfg.model.r, dyn.seed, done,
                           binary=dyn.format == "binary", comments=[f"chain {c}"] + cfg.header_lines())
            rows.append([c, done, p.name, magnetization(chain.sigma), energy(chain.sigma, g, bc)])
    _write_csv(out.path("sample.csv"), cfg, ["chain", "sweep", "file", "magnetization", "energy"], rows)
    return EXIT_OK


def _m_star(cfg: RunConfig) -> float:
    if cfg.analysis.m_star is not None:
        return cfg.analysis.m_star
    est = estimators.estimate_m_star(cfg.model.beta, cfg.coupling_set(), min(cfg.model.N, 16), method="mc",
                                     sweeps=2000, seed=cfg.dynamics.seed)
    return est.value


def cmd_labels(cfg: RunConfig, out: Outputs) -> int:
    g = _graph(cfg)
    bc = BoundaryCondition(cfg.model.boundary)
    ms = _m_star(cfg)
    an = cfg.analysis
    rows = []
    bad = []
    for idx, f in enumerate(_snapshot_files(cfg)):
        snap = read_snapshot(f, binary=f.endswith(".bin"))
        rng = chain_rng(cfg.dynamics.seed, 10_000 + idx)
        omega = fk.sample_bonds_given_spins(snap.sigma, g, bc, cfg.model.beta, rng)
        for K in an.K:
            part = coarse.MesoPartition(cfg.model.N, K, cfg.model.d)
            field = coarse.phase_labels(snap.sigma, omega, g, part, ms, an.alpha, an.zeta)
            stem = Path(f).stem
            coarse.write_jsonl(out.path(f"labels_{stem}_K{K}.jsonl"), field, {"source": Path(f).name, "K": K})
            sep = coarse.separation_violations(field.u)
            ok = coarse.coarse_graining_bound_holds(field)
            rows.append([Path(f).name, K, coarse.zero_block_fraction(field.u), sep, int(ok),
                         len(coarse.contour_components(field.u))])
            if sep or not ok:
                bad.append((f, K))
    _write_csv(out.path("labels.csv"), cfg, ["file", "K", "zero_fraction", "separation_violations", "bound_ok",
                                             "zero_components"], rows)
    if bad:
        raise InvariantViolation(f"coarse-graining invariants violated in {bad}")
    return EXIT_OK


def build_tau(cfg: RunConfig) -> tuple[geometry.SupportFunction, np.ndarray]:
    d = cfg.model.d
    gc = cfg.geometry
    if gc.tau == "isotropic":
        tau = geometry.SupportFunction.isotropic(d)
        K, _, _ = geometry.polyhedral_approx(tau, gc.accuracy)
        return tau, K.A
    if d != 2:
        raise ConfigError("geometry.tau", "tabulated surface tensions are supported in d = 2")
    normals = geometry.circle_normals(gc.tau_normals)
    return geometry.SupportFunction.from_values(normals, gc.tau_values), normals


def build_droplet(cfg: RunConfig, m_star: float, domain: str | None = None):
    tau, normals = build_tau(cfg)
    d = cfg.model.d
    ed = np.zeros(d)
    ed[-1] = 1
    K = geometry.wulff_shape(tau, normals)
    W = geometry.winterbottom_truncate(K, cfg.geometry.delta, tau(ed))
    dom = domain or cfg.geometry.domain
    if dom == "unit":
        box = geometry.unit_box(d)
    else:
        box = (np.array([-1.0] * (d - 1) + [0.0]), np.ones(d))
    vs = float(np.prod(box[1] - box[0]))
    v = geometry.v_of_m(cfg.geometry.m, m_star) * vs
    P = geometry.scale_to_volume(W, v) if v > 0 else None
    return tau, normals, W, P, box, vs


def cmd_shape(cfg: RunConfig, out: Outputs) -> int:
    if cfg.analysis.m_star is None:
        raise ConfigError("analysis.m_star", "the shape subcommand needs m_star")
    ms = cfg.analysis.m_star
    tau, normals, W, P, box, vs = build_droplet(cfg, ms)
    w_star = estimators.predict_rate(cfg.geometry.m, ms, tau, cfg.geometry.delta, normals, vs)
    mbar = geometry.m_bar(W, ms, box, vs)
    if P is not None:
        geometry.write_shape_json(out.path("shape.json"), P, {"regime": W.regime, "delta": W.delta})
        for K in cfg.analysis.K:
            part = coarse.MesoPartition(cfg.model.N, K, cfg.model.d)
            if cfg.geometry.domain == "box":
                coarse.write_grid_csv(out.path(f"shape_raster_K{K}.csv"), geometry.rasterize(P, part), part,
                                      cfg.header_lines())
    rows = [
        ["regime", W.regime],
        ["volume", 0.0 if P is None else P.volume],
        ["w_star", w_star],
        ["energy", 0.0 if P is None else geometry.functional_energy(P, tau, cfg.geometry.delta)],
        ["m_bar", mbar],
        ["fits", int(P is None or geometry.fits(P, box))],
    ]
    _write_csv(out.path("shape.csv"), cfg, ["quantity", "value"], rows)
    return EXIT_OK


def cmd_estimate(cfg: RunConfig, out: Outputs) -> int:
    J = cfg.coupling_set()
    ec = cfg.estimate
    b = cfg.model.beta
    seed = cfg.dynamics.seed
    rows = []
    for q in ec.quantities:
        if q == "m_star":
            e = estimators.estimate_m_star(b, J, ec.size, ec.method, seed=seed, sweeps=cfg.dynamics.sweeps,
                                           therm=cfg.dynamics.therm)
        elif q == "delta":
            e = estimators.estimate_delta(b, cfg.model.eta, ec.size, ec.method, J=J, relax_eps=ec.relax_eps,
                                          seed=seed, sweeps=cfg.dynamics.sweeps, therm=cfg.dynamics.therm)
        elif q == "tau":
            e = estimators.estimate_surface_tension(b, ec.normals, ec.L, ec.M, ec.method, J=J, relax_eps=ec.relax_eps,
                                                    seed=seed, sweeps=cfg.dynamics.sweeps, therm=cfg.dynamics.therm)
        else:
            raise ConfigError("estimate.quantities", f"unknown quantity {q!r}")
        size = " ".join(f"{k}={v}" for k, v in sorted(e.size.items()))
        rows.append([q, b, cfg.model.eta, size, e.method, e.value, e.stderr, seed])
    _write_csv(out.path("estimate.csv"), cfg, ["quantity", "beta", "eta", "size", "method", "value", "stderr", "seed"],
               rows)
    return EXIT_OK


def cmd_compare(cfg: RunConfig, out: Outputs) -> int:
    if cfg.analysis.m_star is None:
        raise ConfigError("analysis.m_star", "the compare subcommand needs m_star")
    ms = cfg.analysis.m_star
    _, _, W, P, _, _ = build_droplet(cfg, ms, domain="box")
    if P is None:
        raise ConfigError("geometry.m", "zero droplet volume")
    rows = []
    for f in _snapshot_files(cfg):
        snap = read_snapshot(f, binary=f.endswith(".bin"))
        for K in cfg.analysis.K:
            part = coarse.MesoPartition(cfg.model.N, K, cfg.model.d)
            prof = coarse.local_profile(snap.sigma, part)
            dist, x = coarse.best_shift_l1(prof, P, part, ms, vertical=cfg.analysis.shifts == "all")
            plus = coarse.l1_distance(prof, np.full(part.shape, ms))
            rows.append([Path(f).name, K, dist, x, plus])
    _write_csv(out.path("compare.csv"), cfg, ["file", "K", "best_l1", "shift", "plus_l1"], rows)
    return EXIT_OK


def selftest_checks() -> list[tuple[str, bool, str]]:
    """Enumeration-oracle checks on tiny systems."""
    from .lattice import CouplingSet
    from .spins import PLUS

    res = []
    J3 = CouplingSet.nearest_neighbor(3)
    g = build_bond_graph(HalfSpaceBox(1, 3, 1), J3, [0.3])
    err = np.max(np.abs(fk.es_spin_marginal(g, PLUS, 0.6) - estimators.gibbs_law(g, PLUS, 0.6)))
    res.append(("edwards-sokal marginal", err < 1e-12, f"{err:.2e}"))
    gn = g.with_field([-0.3])
    pi = estimators.gibbs_law(gn, PLUS, 0.6)
    T = fk.sw_transition_matrix(gn, PLUS, 0.6)
    err = np.max(np.abs(pi @ T - pi))
    res.append(("swendsen-wang stationarity", err < 1e-10, f"{err:.2e}"))
    J2 = CouplingSet.nearest_neighbor(2)
    a = estimators.estimate_delta(0.6, [0.4], 2, J=J2).value
    b = estimators.estimate_delta(0.6, [0.4], 2, J=J2, route="fk").value
    res.append(("wall free energy spin/fk", abs(a - b) < 1e-9, f"{abs(a - b):.2e}"))
    z = estimators.estimate_delta(0.6, [0.0], 2, J=J2).value
    res.append(("wall free energy at zero field", z == 0.0, f"{z!r}"))
    a = estimators.estimate_m_star(0.7, J2, 1).value
    b = estimators.estimate_m_star(0.7, J2, 1, route="fk").value
    res.append(("m* spin/fk", abs(a - b) < 1e-9, f"{abs(a - b):.2e}"))
    a = estimators.estimate_surface_tension(0.7, [0, 1], 3, 2, J=J2).value
    b = estimators.estimate_surface_tension(0.7, [0, 1], 3, 2, J=J2, route="fk").value
    res.append(("surface tension spin/fk", abs(a - b) < 1e-9 and a > 0, f"{abs(a - b):.2e}"))
    rng = np.random.default_rng(0)
    errs = [abs(geometry.volume_via_support(P) - P.volume) for P in (geometry.random_hull(rng, d) for d in (2, 3) * 5)]
    res.append(("volume via support", max(errs) < 1e-9, f"{max(errs):.2e}"))
    return res


def cmd_selftest(cfg: RunConfig, out: Outputs) -> int:
    checks = selftest_checks()
    for name, ok, info in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({info})")
    if not all(ok for _, ok, _ in checks):
        raise InvariantViolation("selftest failed")
    return EXIT_OK


COMMANDS = {
    "sample": cmd_sample,
    "labels": cmd_labels,
    "shape": cmd_shape,
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "selftest": cmd_selftest,
}


def run(subcommand: str, cfg: RunConfig) -> int:
    out = Outputs(cfg.output.dir)
    try:
        return COMMANDS[subcommand](cfg, out)
    except ConfigError as e:
        out.remove()
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, coarse.InconsistentLabels, AssertionError) as e:
        out.remove()
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (geometry.GeometryError, geometry.NonConvergence, estimators.RareEvent, estimators.EnumerationCap,
            estimators.EmptyEvent, fk.RejectionOverflow, LatticeError, FloatingPointError) as e:
        out.remove()
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="winterbottom", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=sorted(COMMANDS))
    ap.add_argument("--config", "-c", help="INI configuration file")
    ap.add_argument("--set", "-s", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override a configuration field")
    ap.add_argument("--out", "-o", help="output directory (overrides output.dir)")
    ap.add_argument("--input", "-i", help="snapshot glob (overrides output.input)")
    args = ap.parse_args(argv)
    sets = list(args.set)
    if args.out:
        sets.append(f"output.dir={args.out}")
    if args.input:
        sets.append(f"output.input={args.input}")
    try:
        cfg = load_config(args.config, sets)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run(args.subcommand, cfg)


if __name__ == "__main__":
    sys.exit(main())
