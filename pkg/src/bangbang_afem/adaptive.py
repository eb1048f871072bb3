"""Solve, estimate, mark, refine: the adaptive loop and its uniform twin."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .benchmarks import ProblemSpec, effectivity, error_p_linf, error_u_l1, error_y_l2
from .estimators import IndicatorField, compute_indicators, efficiency_ratios
from .fem import FeFunction
from .mesh import TriangleMesh, bisect, prolongate
from .ocp import OcpSolution, fixed_point_solve

log = logging.getLogger(__name__)

COLUMNS = ("dofs", "error_y", "error_p", "error_u", "est_y", "est_p_2", "est_p_inf",
           "eff_index", "iota", "fp_iters")


class FixedPointError(RuntimeError):
    """The fixed-point iteration did not converge on some refinement level."""

    def __init__(self, level: int, ndofs: int, result: "LoopResult"):
        super().__init__(f"fixed-point iteration did not converge on level {level} "
                         f"({ndofs} dofs)")
        self.level = level
        self.result = result


@dataclass(frozen=True)
class LevelRow:
    dofs: int
    error_y: float
    error_p: float
    error_u: float
    est_y: float
    est_p_2: float
    est_p_inf: float
    eff_index: float
    iota: float
    fp_iters: int

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in COLUMNS)


@dataclass
class ConvergenceRecord:
    """One row per refinement level, ``dofs`` strictly increasing."""

    rows: list = field(default_factory=list)

    def append(self, row: LevelRow) -> None:
        if self.rows and row.dofs <= self.rows[-1].dofs:
            raise ValueError("dofs must increase strictly across rows")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        if name not in COLUMNS:
            raise KeyError(name)
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_text(self) -> str:
        lines = [" ".join(COLUMNS)]
        for r in self.rows:
            vals = []
            for name, v in zip(COLUMNS, r.as_tuple()):
                if name in ("dofs", "fp_iters"):
                    vals.append(str(int(v)))
                elif math.isnan(v):
                    vals.append("nan")
                else:
                    vals.append(f"{v:.10e}")
            lines.append(" ".join(vals))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path) -> "ConvergenceRecord":
        text = Path(path).read_text().split("\n")
        lines = [ln.split() for ln in text if ln.strip()]
        if not lines:
            raise ValueError(f"{path}: empty file")
        header, body = lines[0], lines[1:]
        if tuple(header) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {' '.join(header)!r}")
        rec = cls()
        for i, vals in enumerate(body, start=2):
            if len(vals) != len(COLUMNS):
                raise ValueError(f"{path}:{i}: expected {len(COLUMNS)} columns, got {len(vals)}")
            nums = [float(v) for v in vals]
            nums[0], nums[-1] = int(nums[0]), int(nums[-1])
            rec.append(LevelRow(*nums))
        return rec


@dataclass(frozen=True)
class LoopConfig:
    mark_fraction: float = 0.5
    cg_tol: float = 1e-12
    fp_tol: float = 1e-10
    fp_max_iter: int = 100
    damping: object = "auto"
    warm_start: bool = True
    efficiency: bool = False

    def __post_init__(self):
        if not 0 < self.mark_fraction < 1:
            raise ValueError("mark_fraction must lie in (0, 1)")


@dataclass
class LevelData:
    """What one level leaves behind besides its record row."""

    mesh: TriangleMesh
    indicators: IndicatorField
    efficiency_max: float = float("nan")


@dataclass
class LoopResult:
    record: ConvergenceRecord
    solution: OcpSolution | None
    levels: list

    @property
    def meshes(self) -> list:
        return [lv.mesh for lv in self.levels]


def mark(totals, fraction: float = 0.5) -> np.ndarray:
    """Elements with ``E_T > fraction * max E``; the maximizers if none qualify."""
    e = np.asarray(getattr(totals, "total", totals), dtype=float)
    if e.size == 0:
        raise ValueError("empty indicator field")
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    top = e.max()
    out = np.flatnonzero(e > fraction * top)
    if out.size == 0:
        out = np.flatnonzero(e == top)
    return out


def fit_rate(record, column: str, k: int = 5) -> float:
    """Least-squares slope of ``log(column)`` against ``log(dofs)`` over the last ``k`` rows."""
    if isinstance(record, ConvergenceRecord):
        dofs, vals = record.column("dofs"), record.column(column)
    else:
        dofs, vals = (np.asarray(a, dtype=float) for a in record)
    if len(dofs) < 3:
        raise ValueError("at least three rows are needed to fit a rate")
    dofs, vals = dofs[-k:], vals[-k:]
    if np.any(~(vals > 0)):
        raise ValueError(f"column {column!r} has non-positive or missing values")
    return float(np.polyfit(np.log(dofs), np.log(vals), 1)[0])


def _level(problem: ProblemSpec, mesh: TriangleMesh, cfg: LoopConfig, initial):
    sol = fixed_point_solve(problem, mesh, tol=cfg.fp_tol, max_iter=cfg.fp_max_iter,
                            cg_tol=cfg.cg_tol, damping=cfg.damping, initial=initial)
    field_, est = compute_indicators(sol, problem)
    nan = float("nan")
    ey = ep = eu = eff = nan
    eff_max = nan
    if problem.exact is not None:
        ey, ep, eu = error_y_l2(sol, problem), error_p_linf(sol, problem), error_u_l1(sol, problem)
        eff = effectivity(est.total_E, eu, ey, ep)
        if cfg.efficiency:
            eff_max = float(efficiency_ratios(sol, problem, field_).max())
    row = LevelRow(mesh.ndofs, ey, ep, eu, est.eta_st2, est.eta_adj2, est.eta_adj_inf,
                   eff, est.iota, sol.iterations)
    return sol, field_, row, eff_max


def _run(problem, mesh, max_ndofs, cfg, refine) -> LoopResult:
    if max_ndofs <= mesh.ndofs:
        raise ValueError(f"max_ndofs={max_ndofs} does not exceed the initial {mesh.ndofs} dofs")
    record = ConvergenceRecord()
    levels = []
    result = LoopResult(record, None, levels)
    initial = "a"
    level = 0
    while True:
        sol, field_, row, eff_max = _level(problem, mesh, cfg, initial)
        levels.append(LevelData(mesh, field_, eff_max))
        result.solution = sol
        if not sol.converged:
            raise FixedPointError(level, mesh.ndofs, result)
        if record.rows and row.dofs <= record.rows[-1].dofs:
            # refinement touched only boundary edges: no new unknowns, no new row
            log.info("level %d adds no degrees of freedom; not recorded", level)
        else:
            record.append(row)
        log.info("level %d: %d dofs, E=%.3e, %d sweeps", level, mesh.ndofs,
                 math.sqrt(row.est_y ** 2 + row.est_p_2 ** 2 + row.est_p_inf ** 2),
                 sol.iterations)
        new_mesh, parents = refine(mesh, field_)
        if new_mesh.ndofs > max_ndofs:
            break
        if cfg.warm_start:
            carrier = sol.adjoint.coefficients
            for pa in parents:
                carrier = prolongate(carrier, pa)
            initial = FeFunction(new_mesh, carrier)
        mesh = new_mesh
        level += 1
    return result


def adaptive_loop(problem: ProblemSpec, mesh: TriangleMesh, max_ndofs: int,
                  config: LoopConfig | None = None) -> LoopResult:
    """Adaptive loop with maximum marking and longest-edge bisection.

    Levels are solved as long as their mesh has at most ``max_ndofs``
    degrees of freedom.  A level whose fixed-point iteration fails raises
    :class:`FixedPointError` carrying the partial result.
    """
    cfg = config or LoopConfig()

    def refine(m, field_):
        new, parents = bisect(m, mark(field_, cfg.mark_fraction), return_parents=True)
        return new, [parents]

    return _run(problem, mesh, max_ndofs, cfg, refine)


def uniform_loop(problem: ProblemSpec, mesh: TriangleMesh, max_ndofs: int,
                 config: LoopConfig | None = None) -> LoopResult:
    """Same as :func:`adaptive_loop` with uniform refinement (h halves per level)."""
    cfg = config or LoopConfig()

    def refine(m, field_):
        parents = []
        for _ in range(2):
            m, pa = bisect(m, np.arange(m.n_elements), return_parents=True)
            parents.append(pa)
        return m, parents

    return _run(problem, mesh, max_ndofs, cfg, refine)


__all__ = [
    "COLUMNS", "FixedPointError", "LevelRow", "ConvergenceRecord", "LoopConfig",
    "LevelData", "LoopResult", "mark", "fit_rate", "adaptive_loop", "uniform_loop",
]
