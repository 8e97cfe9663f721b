"""Experiment harness: configuration, h-sweeps, reports, CSV and plot data.

A configuration is a flat ``key = value`` text file::

    experiment = cofe
    h_list = 0.1, 0.05, 0.025, 0.0125
    symbol = gauss
    seed = 0

Each experiment returns named series of ``(h, residual, normalizer)`` rows
plus a few scalars; pass/fail is then decided by a judge that reads only
those recorded numbers.  Rows are rounded to the ``%.12e`` representation
when they are recorded, so a report survives a CSV round trip bit for bit.
"""

from __future__ import annotations

import io
import json
import math
import platform
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .errors import ConfigurationError, FbiLabError, HypothesisError
from .numgrid import PhaseSpaceGrid, slope_fit

__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "ExperimentReport",
    "Series",
    "Check",
    "parse_config",
    "load_config",
    "run",
    "emit",
    "read_csv",
    "run_suite",
    "main",
]

EXPERIMENTS = ("isometry", "projector", "cofe", "sja", "t2", "wproj", "deform", "g2ph", "qmode")
SLOPE_EXPERIMENTS = frozenset({"cofe", "sja", "t2", "wproj", "deform", "qmode"})
DEFAULT_HS = (0.1, 0.05, 0.025, 0.0125)
SHORT_HS = (0.1, 0.05)
FAMILIES = ("bump", "xi_bump", "zero")
CSV_HEADER = "h,residual,normalizer,slope,r2,pass"
FMT = "%.12e"

# criterion -> experiment that runs it
CRITERIA = {1: "isometry", 2: "projector", 3: "cofe", 4: "sja", 5: "t2", 6: "wproj",
            7: "wproj", 8: "deform", 9: "deform", 10: "g2ph", 11: "qmode"}


def _canon(x: float) -> float:
    return float(FMT % float(x))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one experiment; ``None`` fields take experiment defaults."""

    experiment: str
    hs: Optional[tuple] = None
    symbol: Optional[str] = None
    family: str = "bump"
    eps: float = 0.05
    K: Optional[int] = None
    J: int = 1
    seed: int = 0
    flavor: str = "standard"
    out: Optional[str] = None

    def resolved(self) -> "ExperimentConfig":
        """Copy with experiment defaults filled in, validated."""
        name = self.experiment
        if name not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
        hs = self.hs
        if hs is None:
            hs = SHORT_HS if name in ("isometry", "projector") else DEFAULT_HS
        symbol = self.symbol or ("qm_beta" if name == "qmode" else "gauss")
        K = self.K if self.K is not None else {"wproj": 3, "qmode": 6}.get(name, 0)
        cfg = replace(self, hs=tuple(float(h) for h in hs), symbol=symbol, K=int(K))
        cfg.validate()
        return cfg

    def validate(self):
        from .symbols import library

        hs = self.hs
        if any(not (0 < h <= 1) for h in hs):
            raise ConfigurationError(f"h_list entries must lie in (0, 1]: {hs}")
        if any(a <= b for a, b in zip(hs, hs[1:])):
            raise ConfigurationError(f"h_list must be strictly descending: {hs}")
        if self.experiment in SLOPE_EXPERIMENTS and len(hs) < 4:
            raise ConfigurationError(
                f"experiment {self.experiment} fits a slope and needs at least 4 h values, got {len(hs)}")
        if self.symbol not in library():
            raise ConfigurationError(f"unknown symbol {self.symbol!r}; choose from {sorted(library())}")
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.flavor not in ("standard", "weyl"):
            raise ConfigurationError(f"unknown flavor {self.flavor!r}")

    def to_text(self) -> str:
        lines = [f"experiment = {self.experiment}"]
        if self.hs is not None:
            lines.append("h_list = " + ", ".join(repr(h) for h in self.hs))
        for key in ("symbol", "family", "eps", "K", "J", "seed", "flavor", "out"):
            v = getattr(self, key)
            if v is not None:
                lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


_KEYS = {"experiment": str, "h_list": None, "symbol": str, "family": str, "eps": float,
         "K": int, "J": int, "seed": int, "flavor": str, "out": str}


def parse_hs(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.replace(" ", "").split(",") if t)
    except ValueError as e:
        raise ConfigurationError(f"cannot parse h list {text!r}") from e


def parse_config(text: str) -> ExperimentConfig:
    """Parse the ``key = value`` format; ``#`` starts a comment."""
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigurationError(f"line {n}: unknown key {key!r}")
        if key == "h_list":
            values["hs"] = parse_hs(val)
            continue
        try:
            values[key] = _KEYS[key](val)
        except ValueError as e:
            raise ConfigurationError(f"line {n}: bad value for {key}: {val!r}") from e
    if "experiment" not in values:
        raise ConfigurationError("configuration names no experiment")
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# reports


@dataclass
class Series:
    """Rows ``(h, residual, normalizer)`` with their log-log fit."""

    name: str
    rows: list = field(default_factory=list)

    def add(self, h, residual, normalizer=1.0):
        self.rows.append((_canon(h), _canon(residual), _canon(normalizer)))

    @property
    def hs(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    def fit(self) -> tuple[float, float]:
        """Slope and ``r^2``; ``nan`` when fewer than 4 positive rows exist."""
        if len(self.rows) < 4 or not np.all(self.residuals > 0):
            return math.nan, math.nan
        return slope_fit((r[0], r[1]) for r in self.rows)


@dataclass(frozen=True)
class Check:
    criterion: int
    label: str
    value: float
    passed: bool


@dataclass
class ExperimentReport:
    name: str
    config: ExperimentConfig
    series: dict
    scalars: dict
    checks: list = field(default_factory=list)
    wall_time: float = 0.0
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def criterion_passed(self, k: int) -> bool:
        cs = [c for c in self.checks if c.criterion == k]
        return bool(cs) and all(c.passed for c in cs)

    def summary(self) -> str:
        out = io.StringIO()
        out.write(f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({self.wall_time:.1f} s)\n")
        for s in self.series.values():
            slope, r2 = s.fit()
            out.write(f"  series {s.name}: " + ", ".join(f"{h:g}:{r:.3e}" for h, r, _ in s.rows))
            if not math.isnan(slope):
                out.write(f"  slope {slope:.3f} r2 {r2:.4f}")
            out.write("\n")
        for k, v in self.scalars.items():
            out.write(f"  {k} = {v:.6g}\n")
        for c in self.checks:
            out.write(f"  [{'pass' if c.passed else 'FAIL'}] criterion {c.criterion}: "
                      f"{c.label} (value {c.value:.6g})\n")
        return out.getvalue()


def _provenance(cfg: ExperimentConfig, grids: Sequence[PhaseSpaceGrid]) -> dict:
    import scipy

    try:
        import numba
        nb = numba.__version__
    except ImportError:  # pragma: no cover
        nb = "absent"
    return {
        "config": cfg.to_text(),
        "fbilab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": nb,
        "grids": [g.describe() for g in grids],
        "resolution_ok": all(g.resolution_ok() for g in grids),
    }


# ---------------------------------------------------------------------------
# experiments


class _Ctx:
    """Collects grids so the provenance block can report their resolution checks."""

    def __init__(self):
        self.grids = []

    def grid(self, g: PhaseSpaceGrid) -> PhaseSpaceGrid:
        self.grids.append(g)
        return g


def _weight(cfg: ExperimentConfig):
    from .weights import bump_weight, xi_bump_weight, zero_weight

    if cfg.family == "zero" or cfg.eps == 0:
        return zero_weight()
    return {"bump": bump_weight, "xi_bump": xi_bump_weight}[cfg.family](cfg.eps)


def _hermite_family(g: PhaseSpaceGrid, center=(0.3, 0.2)):
    from .fbi import hermite_function

    return [hermite_function(k, g.y, g.h, *center) for k in range(5)]


def _exp_isometry(cfg, ctx):
    from .weights import operator_for

    s = Series("defect")
    for h in cfg.hs:
        g = ctx.grid(PhaseSpaceGrid.around(h, rho=1.5))
        T = operator_for(g)
        worst, nrm = 0.0, 1.0
        for u in _hermite_family(g):
            nu = np.sqrt(np.sum(np.abs(u) ** 2) * g.dy)
            nT = np.sqrt(np.sum(np.abs(T.forward(u)) ** 2) * g.phase_weight)
            d = abs(nT - nu) / nu
            if d >= worst:
                worst, nrm = d, nu
        s.add(h, worst, nrm)
    return {"defect": s}, {}


ZJ_KAPPAS = (0.2, 0.14, 0.1, 0.07, 0.05)


def _exp_projector(cfg, ctx):
    from .fbi import Pi0Kernel, coherent_state, zj_residual
    from .weights import operator_for

    idem, adj, kern = Series("idempotency"), Series("adjoint"), Series("kernel")
    rng = np.random.default_rng(cfg.seed)
    for h in cfg.hs:
        g = ctx.grid(PhaseSpaceGrid.around(h, rho=1.5))
        T = operator_for(g)
        w = g.phase_weight
        F = rng.standard_normal((g.n_phase, 32)) + 1j * rng.standard_normal((g.n_phase, 32))
        G = rng.standard_normal((g.n_phase, 32)) + 1j * rng.standard_normal((g.n_phase, 32))
        nF = np.sqrt(np.sum(np.abs(F) ** 2, axis=0) * w)
        nG = np.sqrt(np.sum(np.abs(G) ** 2, axis=0) * w)
        PF, PG = T.project(F), T.project(G)
        d = np.sqrt(np.sum(np.abs(T.project(PF) - PF) ** 2, axis=0) * w) / nF
        idem.add(h, d.max())
        a = np.abs(np.sum(PF * G.conj(), axis=0) - np.sum(F * PG.conj(), axis=0)) * w / (nF * nG)
        adj.add(h, a.max())
        # closed-form kernel against the discrete projector at interior nodes
        X, XI = g.phase_nodes()
        idx = np.flatnonzero(np.hypot(X, XI) < 1.0)[:: 7][:24]
        k = Pi0Kernel(h).apply_at(g, F[:, 0], np.stack([X[idx], XI[idx]]))
        ref = PF[idx, 0]
        kern.add(h, np.max(np.abs(k - ref)) / np.max(np.abs(ref)))
    zj = Series("zj")
    h = cfg.hs[0]
    for kappa in ZJ_KAPPAS:
        g = ctx.grid(PhaseSpaceGrid(h=h, Lx=3.0, Lxi=3.0, kappa=kappa))
        T = operator_for(g)
        Fu = g.phase_function(T.forward(coherent_state(g.y, h, 0.3, 0.2)))
        zj.add(g.dx, zj_residual(Fu))
    return {"idempotency": idem, "adjoint": adj, "kernel": kern, "zj": zj}, {}


def _pairs_cofe(g, h):
    from .fbi import coherent_state

    s = np.sqrt(h)
    uA = coherent_state(g.y, h, 0.7, 0.2)
    uB = coherent_state(g.y, h, 0.5, 0.5)
    vB = coherent_state(g.y, h, 0.5, 0.5 + s)
    return (uA, uA), (uB, vB)


def _exp_cofe(cfg, ctx, sja: bool = False):
    from .symbols import get_symbol
    from .weights import cofe_residual, sjostrand_residual

    p = get_symbol(cfg.symbol)
    out = {"A": Series("A"), "B": Series("B")} if not sja else {"sja": Series("sja"), "cofe": Series("cofe")}
    for h in cfg.hs:
        g = ctx.grid(PhaseSpaceGrid.around(h, rho=1.5))
        (uA, vA), (uB, vB) = _pairs_cofe(g, h)
        if sja:
            out["sja"].add(h, sjostrand_residual(p, uA, g, cfg.flavor))
            out["cofe"].add(h, cofe_residual(p, uA, vA, g, cfg.flavor))
        else:
            out["A"].add(h, cofe_residual(p, uA, vA, g, cfg.flavor))
            out["B"].add(h, cofe_residual(p, uB, vB, g, cfg.flavor))
    return out, {}


def _exp_sja(cfg, ctx):
    return _exp_cofe(cfg, ctx, sja=True)


def _exp_t2(cfg, ctx):
    from .fbi import coherent_state
    from .symbols import get_symbol
    from .weights import t2_residual

    p = get_symbol(cfg.symbol)
    phi = _weight(cfg)
    dfm, ctl = Series("deformed"), Series("control")
    for h in cfg.hs:
        g = ctx.grid(PhaseSpaceGrid.around(h, rho=2.0))
        u = coherent_state(g.y, h, 0.9, 0.4)
        dfm.add(h, t2_residual(p, phi, u, u, g, cfg.flavor))
        ctl.add(h, t2_residual(p, phi, u, u, g, cfg.flavor, deformed=False))
    return {"deformed": dfm, "control": ctl}, {}


EIKONAL_RADII = (0.02, 0.04, 0.08, 0.16)
EIKONAL_PAIRS = (((0.5, 0.3), (1.0, 0.5)), ((-0.8, 0.9), (0.3, -1.0)))


def _exp_wproj(cfg, ctx):
    from .weights import zero_weight
    from .wproj import build_bergman, build_weighted_phase, oracle_projector, projector_gap

    phi = _weight(cfg)
    phase = build_weighted_phase(phi, K=cfg.K)
    scal = {}
    pts = np.linspace(-1.8, 1.8, 13)
    scal["diagonal_defect"] = phase.diagonal_defect(pts, pts[::-1])
    c0, _, _ = phase.positivity(seed=cfg.seed)
    scal["c0"] = c0
    orders = []
    for a, d in EIKONAL_PAIRS:
        e = phase.eikonal_residuals(a, d, EIKONAL_RADII)
        for col in range(2):
            if np.all(e[:, col] > 0):
                orders.append(slope_fit(zip(EIKONAL_RADII, e[:, col]))[0])
            else:
                orders.append(math.inf)
    scal["eikonal_order"] = min(orders)
    gap = Series("gap")
    for h in cfg.hs:
        g = ctx.grid(PhaseSpaceGrid.around(h, rho=2.0, kappa=0.25))
        B = build_bergman(phi, g, K=cfg.K)
        O = oracle_projector(phi, g, B.T)
        gap.add(h, projector_gap(B, O, n=32, seed=cfg.seed))
    g = ctx.grid(PhaseSpaceGrid.around(cfg.hs[0], rho=2.0, kappa=0.25))
    z = zero_weight()
    B0 = build_bergman(z, g, K=cfg.K)
    scal["gap_eps0"] = projector_gap(B0, oracle_projector(z, g, B0.T), n=32, seed=cfg.seed)
    return {"gap": gap}, scal


KDIAG_H = 0.005
KDIAG_POINTS = ((0.5, 0.9, -0.4, 1.2), (0.3, -0.6, 0.8, 0.4))


def _exp_deform(cfg, ctx):
    from .deform import (Deformation, DeformedPair, build_deformation, kernel_diagonal_ratio,
                         psi_lambda_constant, t3_residual)
    from .fbi import coherent_state
    from .symbols import get_symbol

    p = get_symbol(cfg.symbol)
    G = _weight(cfg)
    rt, ts, dh, t3 = Series("roundtrip"), Series("ts_norm"), Series("dH"), Series("t3")
    for h in cfg.hs:
        g = ctx.grid(PhaseSpaceGrid.around(h, rho=2.0))
        d = build_deformation(G, g)
        pair = DeformedPair(d)
        fam = _hermite_family(g) + [coherent_state(g.y, h, 0.5, 0.3)]
        rt.add(h, pair.roundtrip_defect(fam))
        ts.add(h, pair.ts_norm(seed=cfg.seed))
        dh.add(h, d.dH_defect())
        u = coherent_state(g.y, h, 0.7, 0.2)
        t3.add(h, t3_residual(p, u, u, pair, cfg.flavor))
        del pair, d
    g = ctx.grid(PhaseSpaceGrid(h=KDIAG_H, Lx=2.5, Lxi=2.5, kappa=0.25))
    pts = np.array(KDIAG_POINTS)
    kr = kernel_diagonal_ratio(p, G, g, pts, cfg.flavor)
    z, zeta, _, _ = Deformation.fields(G, *pts)
    scal = {"kernel_diagonal_rel": float(np.max(np.abs(kr / p(z, zeta) - 1))),
            "psi_lambda_C": psi_lambda_constant(G, seed=cfg.seed)}
    return {"roundtrip": rt, "ts_norm": ts, "dH": dh, "t3": t3}, scal


def _g2ph_family(g):
    from .fbi import coherent_state

    return _hermite_family(g) + [coherent_state(g.y, g.h, 0.5, 0.3),
                                 coherent_state(g.y, g.h, -1.0, 0.8)]


def _exp_g2ph(cfg, ctx):
    from .deform import g2ph_equivalence, g2ph_weight
    from .weights import zero_weight

    G = _weight(cfg)
    w = g2ph_weight(G, strict=False)

    def factory(h):
        return ctx.grid(PhaseSpaceGrid.around(h, rho=2.0))

    R = g2ph_equivalence(G, w, cfg.hs, _g2ph_family, factory)
    lo, hi = Series("ratio_min"), Series("ratio_max")
    for h, row in zip(cfg.hs, R):
        lo.add(h, row.min())
        hi.add(h, row.max())
    R0 = g2ph_equivalence(zero_weight(), lambda x, xi: 0.0 * x, cfg.hs[:2], _g2ph_family, factory)
    scal = {"gap": w.gap, "gap_tolerance": 1e-3 * max(cfg.eps, 0.0), "outside_max": w.outside_max(),
            "zero_ratio_deviation": float(np.max(np.abs(R0 - 1)))}
    return {"ratio_min": lo, "ratio_max": hi}, scal


QMODE_KS = (2, 3, 4, 5, 6)


def _exp_qmode(cfg, ctx):
    from .qmode import build_quasimode, darboux_normal_form, residual_certify
    from .symbols import get_symbol

    p = get_symbol(cfg.symbol)
    series, scal = {}, {}
    im2 = []
    for K in sorted(set(QMODE_KS) | {cfg.K}):
        st = build_quasimode(p, K=K, J=cfg.J, flavor=cfg.flavor)
        rep = residual_certify(st, cfg.hs, with_concentration=(K == cfg.K))
        s = Series(f"K{K}")
        for h, r, n in rep.rows():
            s.add(h, r, n)
        series[s.name] = s
        im2.append(rep.im_psi2)
        if K == cfg.K:
            scal["envelope_min"] = float(np.min(rep.envelope))
            scal["outside_mass_R1"] = float(rep.outside_mass[-1])
            scal["concentration_exponent"] = rep.concentration_exponent
    scal["im_psi2_min"] = min(im2)
    exact = build_quasimode(get_symbol("qm_linear"), K=cfg.K, J=cfg.J, flavor=cfg.flavor)
    scal["exact_residual_h005"] = residual_certify(exact, [0.05], with_concentration=False).residuals[0]
    try:
        darboux_normal_form(get_symbol("qm_wrong"))
        scal["hypothesis_error"] = 0.0
    except HypothesisError:
        scal["hypothesis_error"] = 1.0
    return series, scal


_RUNNERS: dict[str, Callable] = {
    "isometry": _exp_isometry, "projector": _exp_projector, "cofe": _exp_cofe,
    "sja": _exp_sja, "t2": _exp_t2, "wproj": _exp_wproj, "deform": _exp_deform,
    "g2ph": _exp_g2ph, "qmode": _exp_qmode,
}


# ---------------------------------------------------------------------------
# judges: acceptance thresholds applied to recorded numbers only


def _judge(name, series, scal, cfg) -> list:
    C = []

    def chk(k, label, value, ok):
        C.append(Check(k, label, float(value), bool(ok)))

    def fit(s):
        return series[s].fit()

    if name == "isometry":
        m = series["defect"].residuals.max()
        chk(1, "max relative isometry defect < 1e-6", m, m < 1e-6)
    elif name == "projector":
        for s, tol in (("idempotency", 1e-6), ("adjoint", 1e-6), ("kernel", 1e-4)):
            m = series[s].residuals.max()
            chk(2, f"{s} defect < {tol:g}", m, m < tol)
        r = series["zj"].residuals
        order = fit("zj")[0]
        chk(2, "Z annihilation residual decreases under refinement with order >= 2", order,
            order >= 2 and np.all(np.diff(r) < 0))
    elif name == "cofe":
        for s in ("A", "B"):
            slope, r2 = fit(s)
            chk(3, f"pair {s}: slope in [0.9, 1.2]", slope, 0.9 <= slope <= 1.2)
            chk(3, f"pair {s}: r2 >= 0.98", r2, r2 >= 0.98)
    elif name == "sja":
        s, _ = fit("sja")
        c, _ = fit("cofe")
        chk(4, "slope in [0.4, 0.65]", s, 0.4 <= s <= 0.65)
        chk(4, "below the cofe slope by >= 0.25", c - s, c - s >= 0.25)
    elif name == "t2":
        s, _ = fit("deformed")
        chk(5, "slope >= 0.9", s, s >= 0.9)
        ratio = series["control"].residuals[-1] / series["deformed"].residuals[-1]
        chk(5, "control residual >= 3x at the smallest h", ratio, ratio >= 3)
    elif name == "wproj":
        eps = cfg.eps
        chk(6, "psi(a, a) = -2i phi(a)", scal["diagonal_defect"], scal["diagonal_defect"] <= 1e-13)
        chk(6, f"c0 in [1/4 - 5 eps, 1/4 + 5 eps]", scal["c0"],
            0.25 - 5 * eps <= scal["c0"] <= 0.25 + 5 * eps)
        chk(6, f"eikonal residual order >= K - 0.5", scal["eikonal_order"],
            scal["eikonal_order"] >= cfg.K - 0.5)
        s, _ = fit("gap")
        chk(7, "gap slope >= 0.8", s, s >= 0.8)
        chk(7, "gap at eps = 0 <= 1e-10", scal["gap_eps0"], scal["gap_eps0"] <= 1e-10)
    elif name == "deform":
        m = series["roundtrip"].residuals.max()
        chk(8, "||S T u - u|| / ||u|| < 1e-4", m, m < 1e-4)
        m = series["ts_norm"].residuals.max()
        chk(8, "||T S|| <= 2 on L2_Lambda", m, m <= 2)
        m = series["dH"].residuals.max()
        chk(8, "dH = -Im(zeta dz) nodewise < 1e-6", m, m < 1e-6)
        s, _ = fit("t3")
        chk(9, "t3 slope >= 0.9", s, s >= 0.9)
        chk(9, "kernel diagonal matches p|_Lambda to 1e-2", scal["kernel_diagonal_rel"],
            scal["kernel_diagonal_rel"] <= 1e-2)
    elif name == "g2ph":
        chk(10, "phi_max - phi_min gap < 1e-3 eps", scal["gap"], scal["gap"] < scal["gap_tolerance"])
        lo = series["ratio_min"].residuals.min()
        hi = series["ratio_max"].residuals.max()
        chk(10, "all norm ratios >= 0.5", lo, lo >= 0.5)
        chk(10, "all norm ratios <= 2", hi, hi <= 2)
        chk(10, "ratios at G = 0 equal 1", scal["zero_ratio_deviation"],
            scal["zero_ratio_deviation"] <= 1e-12)
    elif name == "qmode":
        from .qmode import s_expected

        chk(11, "exact model residual <= 1e-8 at h = 0.05", scal["exact_residual_h005"],
            scal["exact_residual_h005"] <= 1e-8)
        slope, r2 = fit(f"K{cfg.K}")
        target = s_expected(cfg.symbol, cfg.K, cfg.J)
        chk(11, f"slope >= s_expected = {target:g}", slope, slope >= target)
        chk(11, "r2 >= 0.95", r2, r2 >= 0.95)
        slopes = [fit(f"K{K}")[0] for K in QMODE_KS]
        inc = min(np.diff(slopes))
        chk(11, "slope strictly increasing in K", inc, inc > 0)
        chk(11, "Im Psi''(0) > 0 in every run", scal["im_psi2_min"], scal["im_psi2_min"] > 0)
        chk(11, "hypothesis error on xi + i x", scal["hypothesis_error"], scal["hypothesis_error"] == 1)
    return C


def run(config: ExperimentConfig) -> ExperimentReport:
    """Run one experiment and judge it.

    Module errors are re-raised with the experiment and its parameters named.
    """
    cfg = config.resolved()
    ctx = _Ctx()
    t0 = time.perf_counter()
    try:
        series, scal = _RUNNERS[cfg.experiment](cfg, ctx)
    except FbiLabError as e:
        params = f"symbol={cfg.symbol}, family={cfg.family}, eps={cfg.eps}"
        if cfg.experiment in ("wproj", "qmode"):
            params += f", K={cfg.K}, J={cfg.J}"
        raise type(e)(f"experiment {cfg.experiment} ({params}): {e}") from e
    wall = time.perf_counter() - t0
    scal = {k: float(v) for k, v in scal.items()}
    checks = _judge(cfg.experiment, series, scal, cfg)
    return ExperimentReport(cfg.experiment, cfg, series, scal, checks, wall,
                            _provenance(cfg, ctx.grids))


# ---------------------------------------------------------------------------
# output


def _csv_text(series: Series, passed: bool) -> str:
    slope, r2 = series.fit()
    lines = [CSV_HEADER]
    for h, r, n in series.rows:
        lines.append(",".join([FMT % h, FMT % r, FMT % n, FMT % slope, FMT % r2, str(int(passed))]))
    return "\n".join(lines) + "\n"


def _plot_text(report: ExperimentReport) -> str:
    out = []
    for s in report.series.values():
        out.append(f"# series {s.name}: log10(h) log10(residual)")
        for h, r, _ in s.rows:
            if h > 0 and r > 0:
                out.append(f"{math.log10(h):.12e} {math.log10(r):.12e}")
        out.append("")
    return "\n".join(out) + "\n"


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as e:
        raise ConfigurationError(f"cannot write {path}: {e}") from e


def emit(report: ExperimentReport, out_dir, formats=("csv", "plot-data")) -> list[Path]:
    """Write the report's files; returns their paths.

    ``csv``: one file per series, ``<name>.csv`` for the first and
    ``<name>.<series>.csv`` for the others.  ``plot-data``: ``<name>.plot.dat``
    with one block of ``log10 h, log10 residual`` pairs per series.  A JSON
    file with scalars, checks, wall time and provenance is always written.
    """
    out = Path(out_dir)
    paths = []
    if "csv" in formats:
        for i, s in enumerate(report.series.values()):
            p = out / (f"{report.name}.csv" if i == 0 else f"{report.name}.{s.name}.csv")
            _write(p, _csv_text(s, report.passed))
            paths.append(p)
    if "plot-data" in formats:
        p = out / f"{report.name}.plot.dat"
        _write(p, _plot_text(report))
        paths.append(p)
    meta = {
        "name": report.name,
        "passed": report.passed,
        "scalars": report.scalars,
        "checks": [c.__dict__ for c in report.checks],
        "wall_time": report.wall_time,
        "provenance": report.provenance,
    }
    p = out / f"{report.name}.json"
    _write(p, json.dumps(meta, indent=2, default=float) + "\n")
    paths.append(p)
    return paths


def read_csv(path) -> list[tuple[float, float, float]]:
    """Numeric ``(h, residual, normalizer)`` rows of an emitted CSV."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ConfigurationError(f"{path} does not start with the header {CSV_HEADER!r}")
    return [tuple(float(t) for t in line.split(",")[:3]) for line in lines[1:] if line]


# ---------------------------------------------------------------------------
# suite


def _run_quiet(cfg: ExperimentConfig):
    try:
        return run(cfg), None
    except FbiLabError as e:
        return None, f"{type(e).__name__}: {e}"


def harness_check(seed: int = 0) -> tuple[bool, str]:
    """Run ``cofe`` twice with one config and compare the CSV bytes."""
    cfg = ExperimentConfig("cofe", seed=seed)
    blobs = []
    with tempfile.TemporaryDirectory() as d:
        for k in range(2):
            rep = run(cfg)
            paths = emit(rep, Path(d) / str(k), formats=("csv",))
            blobs.append(b"".join(p.read_bytes() for p in paths if p.suffix == ".csv"))
    same = blobs[0] == blobs[1]
    return same, "bit-identical" if same else "CSV bytes differ"


def run_suite(out_dir=None, seed: int = 0, jobs: int = 1, hs=None, log=print,
              reports: Optional[dict] = None) -> dict:
    """Run criteria 1 to 11 and the harness check; returns ``{criterion: passed}``.

    When ``reports`` is a dict it receives ``{experiment: (report, error)}``.
    """
    names = list(dict.fromkeys(CRITERIA.values()))
    cfgs = [ExperimentConfig(n, seed=seed, hs=hs if hs and n not in ("isometry", "projector") else None)
            for n in names]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_quiet, cfgs))
    else:
        results = [_run_quiet(c) for c in cfgs]
    reports = {} if reports is None else reports
    for n, (rep, err) in zip(names, results):
        reports[n] = (rep, err)
        if rep is not None:
            log(rep.summary().rstrip())
            if out_dir is not None:
                emit(rep, out_dir)
        else:
            log(f"{n}: ERROR {err}")
    table = {}
    for k, n in CRITERIA.items():
        rep, _ = reports[n]
        table[k] = rep is not None and rep.criterion_passed(k)
    ok, msg = harness_check(seed)
    table[12] = ok and all(k in table for k in range(1, 12))
    lines = ["criterion,experiment,pass"]
    for k in sorted(table):
        lines.append(f"{k},{CRITERIA.get(k, 'harness')},{int(table[k])}")
    text = "\n".join(lines) + "\n"
    if out_dir is not None:
        _write(Path(out_dir) / "suite.csv", text)
    for k in sorted(table):
        log(f"criterion {k:2d} ({CRITERIA.get(k, 'harness')}): {'PASS' if table[k] else 'FAIL'}"
            + (f" [{msg}]" if k == 12 else ""))
    return table


# ---------------------------------------------------------------------------
# CLI


def _list_text() -> str:
    from .symbols import library

    return ("experiments: " + ", ".join(EXPERIMENTS) + "\n"
            + "symbols: " + ", ".join(sorted(library())) + "\n"
            + "families: " + ", ".join(FAMILIES) + "\n")


def main(argv=None) -> int:
    import argparse

    ap = argparse.ArgumentParser(prog="fbilab", description="FBI transform experiments")
    ap.add_argument("verb", choices=("run", "suite", "list"))
    ap.add_argument("target", nargs="?", help="config file, or an experiment name for run")
    ap.add_argument("--config", help="config file (key = value lines)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int, help="PRNG seed")
    ap.add_argument("--h-list", help="comma separated h values, descending")
    ap.add_argument("--jobs", type=int, default=1, help="parallel experiments in suite")
    args = ap.parse_args(argv)
    try:
        if args.verb == "list":
            sys.stdout.write(_list_text())
            return 0
        hs = parse_hs(args.h_list) if args.h_list else None
        if args.verb == "suite":
            table = run_suite(args.out, seed=args.seed or 0, jobs=args.jobs, hs=hs)
            return 0 if all(table.values()) else 1
        src = args.config or args.target
        if src is None:
            raise ConfigurationError("run needs a config file or an experiment name")
        if Path(src).is_file():
            cfg = load_config(src)
        elif src in EXPERIMENTS:
            cfg = ExperimentConfig(src)
        else:
            raise ConfigurationError(f"{src!r} is neither a config file nor an experiment")
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if hs is not None:
            cfg = replace(cfg, hs=hs)
        rep = run(cfg)
        sys.stdout.write(rep.summary())
        out = args.out or cfg.out
        if out:
            for p in emit(rep, out):
                sys.stdout.write(f"wrote {p}\n")
        return 0 if rep.passed else 1
    except FbiLabError as e:
        sys.stderr.write(f"error: {type(e).__name__}: {e}\n")
        return 2
