"""Handover scoring: delivery location, efficiency, delivered mass, grasp and delivery success."""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path

MASS_TOLERANCE_G = 1.0
SCORES = ("delta", "gamma", "mu", "G", "D")


@dataclass(frozen=True)
class ScoreConfig:
    rho: float = 500.0  # mm
    eta: float = 1.0    # s
    tau: float = 15.0   # s

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if not 0 < self.eta < self.tau:
            raise ValueError("need 0 < eta < tau")


@dataclass(frozen=True)
class EpisodeResult:
    object_id: str
    distance_mm: float
    elapsed_s: float
    delivered_mass: float
    initial_mass: float
    grasp_held: bool
    is_container: bool
    spilled_mass: float = 0.0
    delivered: bool = True

    def __post_init__(self):
        if self.distance_mm < 0 or self.elapsed_s < 0:
            raise ValueError("distance and time must be non-negative")
        if not 0 <= self.delivered_mass <= self.initial_mass + MASS_TOLERANCE_G:
            raise ValueError(f"delivered mass {self.delivered_mass} g outside [0, {self.initial_mass}] g")

    def to_dict(self) -> dict:
        return asdict(self)


def score_delta(d: float, rho: float = 500.0) -> float:
    if d < 0:
        raise ValueError("distance must be non-negative")
    return 1.0 - d / rho if d < rho else 0.0


def score_gamma(t: float, eta: float = 1.0, tau: float = 15.0) -> float:
    if t < 0:
        raise ValueError("time must be non-negative")
    return 1.0 - (max(t, eta) - eta) / (tau - eta) if t < tau else 0.0


def score_mu(m: float, m_hat: float) -> float:
    if m_hat <= 0:
        raise ValueError("initial mass must be positive")
    err = abs(m - m_hat)
    return 1.0 - err / m_hat if err < m_hat else 0.0


def score_G_D(result: EpisodeResult, config: ScoreConfig = ScoreConfig()) -> tuple[int, int]:
    g = int(result.grasp_held)
    if not result.delivered:
        return g, 0
    ok = result.distance_mm < config.rho
    if result.is_container:
        ok = ok and abs(result.delivered_mass - result.initial_mass) <= MASS_TOLERANCE_G
    return g, int(ok)


def score_episode(result: EpisodeResult, config: ScoreConfig = ScoreConfig()) -> dict[str, float | None]:
    """All five scores; mu is None for non-containers, delta/gamma/mu are 0 if nothing was delivered."""
    g, d = score_G_D(result, config)
    if result.delivered:
        delta = score_delta(result.distance_mm, config.rho)
        gamma = score_gamma(result.elapsed_s, config.eta, config.tau)
        mu = score_mu(result.delivered_mass, result.initial_mass) if result.is_container else None
    else:
        delta = gamma = 0.0
        mu = 0.0 if result.is_container else None
    return {"delta": delta, "gamma": gamma, "mu": mu, "G": float(g), "D": float(d)}


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def aggregate(results: list[EpisodeResult], config: ScoreConfig = ScoreConfig()) -> dict[str, dict[str, float | None]]:
    """Per-object and overall ("Avg") means of each score; mu averages containers only."""
    if not results:
        raise ValueError("cannot aggregate zero episodes")
    per: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    overall: dict[str, list[float]] = defaultdict(list)
    for r in sorted(results, key=lambda r: (r.object_id, sorted(r.to_dict().items()))):
        for k, v in score_episode(r, config).items():
            if v is None:
                continue
            per[r.object_id][k].append(v)
            overall[k].append(v)
    report = {oid: {k: _mean(vals[k]) for k in SCORES} for oid, vals in sorted(per.items())}
    report["Avg"] = {k: _mean(overall[k]) for k in SCORES}
    return report


def report_csv(report: dict[str, dict[str, float | None]]) -> str:
    """Rows are scores, columns are object ids then Avg; missing entries are '-'."""
    cols = [c for c in report if c != "Avg"] + ["Avg"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["score"] + cols)
    for k in SCORES:
        w.writerow([k] + ["-" if report[c][k] is None else f"{report[c][k]:.6f}" for c in cols])
    return buf.getvalue()


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(report_csv(report))
