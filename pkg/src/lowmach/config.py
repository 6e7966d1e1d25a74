"""INI-style run configuration.

Sections and keys (all optional, defaults in brackets)::

    [grid]    cells [64], dim [2], length [1.0], bc [periodic]
    [params]  gamma_plus [4], gamma_minus [2], mu [0.01], lam [0], eps [0.1], c0 [2]
    [ic]      kind [well_prepared], mode [exact], alpha_amp [0.25], u_amp [1.0],
              pulse_amp [1e-3], pulse_width [0.05]
    [solver]  cfl [0.4], floor [1e-8], t_end [0.5], cadence [0.01],
              limiter [none], flux [low_mach]
    [sweep]   eps [0.2, 0.1, 0.05]
    [output]  dir [out], snapshot_times []
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .compressible import SolverConfig
from .errors import DomainError
from .fields import FluidParams, Grid

IC_KINDS = ("well_prepared", "rest", "pulse", "shear")


def _floats(text: str) -> list:
    return [float(x) for x in text.replace(",", " ").split()]


@dataclass
class RunConfig:
    cells: int = 64
    dim: int = 2
    length: float = 1.0
    bc: str = "periodic"
    params: FluidParams = field(default_factory=lambda: FluidParams(4.0, 2.0, 1e-2, 0.0, 0.1, 2.0))
    ic_kind: str = "well_prepared"
    ic_mode: str = "exact"
    alpha_amp: float = 0.25
    u_amp: float = 1.0
    pulse_amp: float = 1e-3
    pulse_width: float = 0.05
    solver: SolverConfig = field(default_factory=SolverConfig)
    eps_list: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    out_dir: str = "out"
    snapshot_times: list = field(default_factory=list)

    def grid(self) -> Grid:
        return Grid((self.cells,) * self.dim, (self.length,) * self.dim, self.bc)


def load_config(path=None) -> RunConfig:
    """Read an INI file; a missing ``path`` gives the default desk-scale setup."""
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read(path)
    g = cp["grid"] if cp.has_section("grid") else {}
    cfg.cells = int(g.get("cells", cfg.cells))
    cfg.dim = int(g.get("dim", cfg.dim))
    cfg.length = float(g.get("length", cfg.length))
    cfg.bc = str(g.get("bc", cfg.bc)).strip().lower()

    p = cp["params"] if cp.has_section("params") else {}
    d = cfg.params
    cfg.params = FluidParams(
        float(p.get("gamma_plus", d.gamma_plus)), float(p.get("gamma_minus", d.gamma_minus)),
        float(p.get("mu", d.mu)), float(p.get("lam", d.lam)),
        float(p.get("eps", d.eps)), float(p.get("c0", d.c0)))

    ic = cp["ic"] if cp.has_section("ic") else {}
    cfg.ic_kind = str(ic.get("kind", cfg.ic_kind)).strip()
    if cfg.ic_kind not in IC_KINDS:
        raise DomainError(f"[ic] kind must be one of {IC_KINDS}, got {cfg.ic_kind!r}")
    cfg.ic_mode = str(ic.get("mode", cfg.ic_mode)).strip()
    cfg.alpha_amp = float(ic.get("alpha_amp", cfg.alpha_amp))
    cfg.u_amp = float(ic.get("u_amp", cfg.u_amp))
    cfg.pulse_amp = float(ic.get("pulse_amp", cfg.pulse_amp))
    cfg.pulse_width = float(ic.get("pulse_width", cfg.pulse_width))

    s = cp["solver"] if cp.has_section("solver") else {}
    ds = cfg.solver
    cfg.solver = SolverConfig(
        cfl=float(s.get("cfl", ds.cfl)), floor=float(s.get("floor", ds.floor)),
        t_end=float(s.get("t_end", ds.t_end)), cadence=float(s.get("cadence", ds.cadence)),
        limiter=str(s.get("limiter", ds.limiter)).strip(), flux=str(s.get("flux", ds.flux)).strip(),
        checkpoint_dir=s.get("checkpoint_dir", ds.checkpoint_dir))

    sw = cp["sweep"] if cp.has_section("sweep") else {}
    if "eps" in sw:
        cfg.eps_list = _floats(sw["eps"])

    o = cp["output"] if cp.has_section("output") else {}
    cfg.out_dir = str(o.get("dir", cfg.out_dir))
    if "snapshot_times" in o:
        cfg.snapshot_times = _floats(o["snapshot_times"])
    cfg.grid()  # validate
    return cfg


DEFAULT_INI = """\
[grid]
cells = 64
dim = 2
length = 1.0
bc = periodic

[params]
gamma_plus = 4
gamma_minus = 2
mu = 0.01
lam = 0
eps = 0.1
c0 = 2

[ic]
kind = well_prepared
mode = exact
alpha_amp = 0.25
u_amp = 1.0

[solver]
cfl = 0.4
floor = 1e-8
t_end = 0.5
cadence = 0.01
limiter = none
flux = low_mach

[sweep]
eps = 0.2, 0.1, 0.05

[output]
dir = out
snapshot_times = 0.0 0.5
"""
