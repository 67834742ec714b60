"""Run reports (JSON) and scaling tables (CSV).

A RunReport is the durable record of one solve: convergence data, the
exact config it ran under, phase timings, and error norms when an
analytical solution exists. Reports round-trip losslessly through JSON so
the scaling helper can consume them later.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field

from .krylov import ConvergenceReport

__all__ = ["RunReport", "compute_scaling", "write_scaling_csv",
           "ReportError"]


class ReportError(ValueError):
    pass


@dataclass
class RunReport:
    convergence: ConvergenceReport
    config: dict = dc_field(default_factory=dict)
    workers: int = 1
    fabric: str = "none"
    error_max: float | None = None
    error_l2: float | None = None
    coarsest_flags: list = dc_field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        d = json.loads(text)
        conv = ConvergenceReport(**d.pop("convergence"))
        return cls(convergence=conv, **d)

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())
            f.write("\n")

    @classmethod
    def load(cls, path) -> "RunReport":
        with open(path) as f:
            return cls.from_json(f.read())


def _comparable_config(cfg: dict) -> dict:
    """Config with worker-layout keys removed (those may legitimately vary)."""
    out = {k: dict(v) for k, v in cfg.items()}
    out.pop("topology", None)
    out.pop("output", None)
    return out


def compute_scaling(reports, reference: RunReport | None = None):
    """Speedup/efficiency rows: S_p = t_ref / t_p, E_p = S_p / np.

    Reports must share everything but the worker layout; the reference
    defaults to the report with the fewest workers.
    """
    if not reports:
        raise ReportError("no reports given")
    if reference is None:
        reference = min(reports, key=lambda r: r.workers)
    base = _comparable_config(reference.config)
    for r in reports:
        if _comparable_config(r.config) != base:
            raise ReportError(
                "reports differ in more than the worker layout; "
                "scaling numbers would be meaningless")
    t_ref = reference.convergence.wall_time
    rows = []
    for r in sorted(reports, key=lambda r: r.workers):
        t_p = r.convergence.wall_time
        if t_p <= 0:
            raise ReportError(f"non-positive wall time {t_p} in report")
        s_p = t_ref / t_p
        rows.append({"np": r.workers, "wall_time": t_p,
                     "speedup": s_p, "efficiency": s_p / r.workers})
    return rows


def write_scaling_csv(path, rows) -> None:
    with open(path, "w") as f:
        f.write("np,wall_time,speedup,efficiency\n")
        for row in rows:
            f.write(f"{row['np']},{row['wall_time']!r},"
                    f"{row['speedup']!r},{row['efficiency']!r}\n")
