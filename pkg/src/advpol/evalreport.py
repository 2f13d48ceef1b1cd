"""Evaluation reports, bound sweeps, and dependency-free SVG plots.

Everything here is deterministic given the RNG: reports from the same seed
serialize to identical JSON, and the plot writer formats coordinates to a
fixed precision so re-rendering the same CSV reproduces the SVG bytes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .game import MarkovGame, discounted_return
from .oracle import (
    BoundReport,
    drift_bound_check,
    imitation_gap_constant,
    retrain_radius_probe,
)
from .policy import MixedPolicy, state_blind_mask
from .rollout import rollout_batch

log = logging.getLogger("advpol.evalreport")

_RATE_TOL = 1e-12


# ---------------------------------------------------------------------------
# fingerprints
# ---------------------------------------------------------------------------

def policy_fingerprint(*policies) -> str:
    """SHA-256 over the byte content of every parameter array, in order."""
    h = hashlib.sha256()
    for p in policies:
        if p is None:
            h.update(b"\x00none")
        elif isinstance(p, MixedPolicy):
            h.update(b"\x00mix")
            h.update(np.float64(p.p_new).tobytes())
            h.update(policy_fingerprint(p.new, p.base).encode())
        else:
            h.update(np.ascontiguousarray(p.params).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# win/tie reports
# ---------------------------------------------------------------------------

def _rate_ci(p: float, n: int) -> float:
    return 1.96 * math.sqrt(p * (1.0 - p) / n) if n else 0.0


@dataclass
class WinTieReport:
    """Outcome statistics of an evaluation run, adversary perspective."""

    episodes: int
    wins: int
    ties: int
    losses: int
    win_rate: float
    tie_rate: float
    loss_rate: float
    ci95: dict
    mean_adv_return: float
    mean_vic_return: float
    mean_length: float
    fingerprint: str
    outcomes: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.wins + self.ties + self.losses != self.episodes:
            raise ValueError("outcome counts do not sum to the episode count")
        total = self.win_rate + self.tie_rate + self.loss_rate
        if self.episodes and abs(total - 1.0) > _RATE_TOL:
            raise ValueError(f"rates sum to {total!r}, not 1")

    @classmethod
    def from_outcomes(cls, outcomes, adv_returns, vic_returns, lengths,
                      fingerprint: str) -> "WinTieReport":
        outcomes = np.asarray(outcomes)
        n = len(outcomes)
        wins = int((outcomes == 1).sum())
        ties = int((outcomes == 0).sum())
        losses = int((outcomes == -1).sum())
        w, t, l = (wins / n, ties / n, losses / n) if n else (0.0, 0.0, 0.0)
        return cls(
            episodes=n, wins=wins, ties=ties, losses=losses,
            win_rate=w, tie_rate=t, loss_rate=l,
            ci95={"win": _rate_ci(w, n), "tie": _rate_ci(t, n), "loss": _rate_ci(l, n)},
            mean_adv_return=float(np.mean(adv_returns)) if n else 0.0,
            mean_vic_return=float(np.mean(vic_returns)) if n else 0.0,
            mean_length=float(np.mean(lengths)) if n else 0.0,
            fingerprint=fingerprint,
            outcomes=outcomes,
        )

    def to_json(self) -> dict:
        return {
            "episodes": self.episodes,
            "wins": self.wins,
            "ties": self.ties,
            "losses": self.losses,
            "win_rate": self.win_rate,
            "tie_rate": self.tie_rate,
            "loss_rate": self.loss_rate,
            "ci95": dict(self.ci95),
            "mean_adv_return": self.mean_adv_return,
            "mean_vic_return": self.mean_vic_return,
            "mean_length": self.mean_length,
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_json(cls, data: dict) -> "WinTieReport":
        return cls(**data)


def write_report(report: WinTieReport, path) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


_OUTCOME_SIGN = {"adv_win": 1, "tie": 0, "vic_win": -1}


def evaluate(
    game: MarkovGame,
    adv_policy,
    vic_policy,
    *,
    imitator=None,
    episodes: int = 1000,
    rng=None,
    seed=None,
    blind_mask=None,
    workers: int = 1,
    pred_mode: str = "sample",
) -> WinTieReport:
    """Roll out ``episodes`` evaluation games and summarize the outcomes.

    Never mutates the policies (checked by parameter fingerprint). Two runs
    with the same seed and episode count consume identical random numbers
    step for step, so paired comparisons across conditions are exact:
    episode i sees the same draws in both runs wherever the conditions
    agree.
    """
    if episodes <= 0:
        raise ValueError("episodes must be positive")
    fp_before = policy_fingerprint(adv_policy, vic_policy, imitator)
    if rng is None:
        rng = np.random.default_rng(seed)
    trajs = rollout_batch(
        game, adv_policy, vic_policy, episodes,
        imitator=imitator, rng=rng, blind_mask=blind_mask,
        workers=workers, pred_mode=pred_mode,
    )
    if policy_fingerprint(adv_policy, vic_policy, imitator) != fp_before:
        raise AssertionError("evaluation mutated a policy")
    outcomes = np.array([_OUTCOME_SIGN[t.outcome] for t in trajs], dtype=np.int64)
    adv_ret = [discounted_return(t.adv_rewards, game.gamma, t.absorbed) for t in trajs]
    vic_ret = [discounted_return(t.vic_rewards, game.gamma, t.absorbed) for t in trajs]
    lengths = [len(t) for t in trajs]
    return WinTieReport.from_outcomes(outcomes, adv_ret, vic_ret, lengths, fp_before)


def paired_difference(rep_a: WinTieReport, rep_b: WinTieReport, metric: str = "win") -> dict:
    """Paired comparison of two same-seed evaluations: rate(a) - rate(b).

    Uses the per-episode outcome indicators; the CI is 1.96 times the
    standard error of the mean pairwise difference, which credits the
    common-random-number correlation.
    """
    if rep_a.outcomes is None or rep_b.outcomes is None:
        raise ValueError("paired_difference needs reports with per-episode outcomes")
    if len(rep_a.outcomes) != len(rep_b.outcomes):
        raise ValueError("paired reports must have equal episode counts")
    target = {"win": 1, "tie": 0, "loss": -1}[metric]
    a = (rep_a.outcomes == target).astype(np.float64)
    b = (rep_b.outcomes == target).astype(np.float64)
    d = a - b
    n = len(d)
    se = float(d.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    diff = float(d.mean())
    return {
        "metric": metric,
        "diff": diff,
        "ci95": 1.96 * se,
        "episodes": n,
        "significant": bool(abs(diff) > 2 * 1.96 * se and se > 0.0),
    }


# ---------------------------------------------------------------------------
# bound sweeps
# ---------------------------------------------------------------------------

DEFAULT_SWEEP = {
    "pairs": 200,
    "samples": 100,
    "epsilons": (0.005, 0.02, 0.08),
    "victims": 1,
    "pinsker": "verbatim",
}


def _random_policy_matrix(game: MarkovGame, n_actions: int, rng, scale=1.5) -> np.ndarray:
    """Random softmax policy: Gaussian logits on live rows, uniform absorbing."""
    S = game.n_states
    logits = rng.normal(0.0, scale, size=(S, n_actions))
    logits[game.absorbing] = 0.0
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _perturbed(probs: np.ndarray, game: MarkovGame, rng, sigma: float) -> np.ndarray:
    out = probs.copy()
    live = ~game.absorbing
    logits = np.log(np.maximum(probs[live], 1e-300))
    logits = logits + rng.normal(0.0, sigma, size=logits.shape)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    out[live] = e / e.sum(axis=1, keepdims=True)
    return out


def verify_bounds(game: MarkovGame, options: dict | None = None, rng=None,
                  out_path=None):
    """Run the bound sweep; returns (reports, out_path).

    Checks: the value-drift bound over random adversary pairs (half nearby
    perturbations, half independent draws), a positivity/monotonicity grid
    for the imitation-gap constant, and the best-response drift probe over
    the epsilon grid. When ``out_path`` is given every report is written as
    one JSON line, followed by a summary line; a size-zero sweep writes the
    summary line alone.
    """
    opts = dict(DEFAULT_SWEEP)
    opts.update(options or {})
    if rng is None:
        rng = np.random.default_rng(0)
    pinsker = opts["pinsker"]
    reports: list[BoundReport] = []

    n_adv, n_vic = game.n_adv_actions, game.n_vic_actions
    for i in range(int(opts["pairs"])):
        vic = _random_policy_matrix(game, n_vic, rng)
        adv_a = _random_policy_matrix(game, n_adv, rng)
        if i % 2 == 0:
            adv_b = _perturbed(adv_a, game, rng, sigma=0.1)
        else:
            adv_b = _random_policy_matrix(game, n_adv, rng)
        reports.append(drift_bound_check(game, vic, adv_a, adv_b, pinsker=pinsker))

    if int(opts["pairs"]) > 0:
        reports.extend(_gap_constant_grid(game, pinsker))
        _log_interpolation_trend(game, rng, pinsker)

    for eps in opts["epsilons"]:
        for _ in range(int(opts["victims"])):
            vic = _random_policy_matrix(game, n_vic, rng)
            reports.append(
                retrain_radius_probe(
                    game, vic, float(eps), int(opts["samples"]), rng, pinsker=pinsker
                )
            )

    summary = {
        "summary": {
            "total": len(reports),
            "passed": sum(r.passed for r in reports),
            "failed": sum(not r.passed for r in reports),
            "degenerate": sum(r.degenerate for r in reports),
            "options": {k: list(v) if isinstance(v, tuple) else v for k, v in opts.items()},
        }
    }
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            for r in reports:
                fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
            fh.write(json.dumps(summary, sort_keys=True) + "\n")
    log.info("bound sweep: %s", summary["summary"])
    return reports, out_path


def _gap_constant_grid(game: MarkovGame, pinsker: str) -> list:
    """Sanity grid for the gap constant: positive, monotone in each knob."""
    reports = []
    r_max = float(np.max(game.vic_reward))
    gammas = [0.5, game.gamma] if game.gamma != 0.5 else [0.5, 0.9]
    clamps = [(0.01, 0.99), (0.05, 0.95), (0.2, 0.8)]
    prev_by_gamma = {}
    for g in sorted(gammas):
        for d_low, d_high in clamps:
            k = imitation_gap_constant(g, r_max, d_low, d_high, pinsker=pinsker)
            reports.append(
                BoundReport.make(
                    "gap_constant_positive", 0.0, k,
                    gamma=g, d_low=d_low, d_high=d_high, max_vic_reward=r_max,
                )
            )
        k_tight = imitation_gap_constant(g, r_max, 0.01, 0.99, pinsker=pinsker)
        k_loose = imitation_gap_constant(g, r_max, 0.2, 0.8, pinsker=pinsker)
        reports.append(
            BoundReport.make(
                "gap_constant_monotone_clamp", k_loose, k_tight, gamma=g,
            )
        )
        prev_by_gamma[g] = k_tight
    gs = sorted(prev_by_gamma)
    if len(gs) == 2:
        reports.append(
            BoundReport.make(
                "gap_constant_monotone_gamma",
                prev_by_gamma[gs[0]],
                prev_by_gamma[gs[1]],
                gammas=gs,
            )
        )
    return reports


def _log_interpolation_trend(game: MarkovGame, rng, pinsker: str):
    """Drift vs. interpolation distance between two adversaries (logged only)."""
    n_adv, n_vic = game.n_adv_actions, game.n_vic_actions
    vic = _random_policy_matrix(game, n_vic, rng)
    a = _random_policy_matrix(game, n_adv, rng)
    b = _random_policy_matrix(game, n_adv, rng)
    trend = []
    for t in (0.25, 0.5, 0.75, 1.0):
        mid = (1.0 - t) * a + t * b
        rep = drift_bound_check(game, vic, a, mid, pinsker=pinsker)
        trend.append({"t": t, "measured": rep.measured, "margin": rep.margin})
    log.info("interpolation margin trend: %s", trend)
    return trend


# ---------------------------------------------------------------------------
# SVG plots
# ---------------------------------------------------------------------------

_VIEW_W, _VIEW_H = 640, 360
_ML, _MR, _MT, _MB = 62, 16, 30, 42
_PLOT_W = _VIEW_W - _ML - _MR
_PLOT_H = _VIEW_H - _MT - _MB


def _num(x: float) -> str:
    return f"{x:.6g}"


def _read_metrics(csv_path):
    with open(csv_path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{csv_path} line 1: empty metrics file")
    header = lines[0].split(",")
    if len(header) < 2 or header[0] != "step":
        raise ValueError(f"{csv_path} line 1: expected a 'step,...' header")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise ValueError(
                f"{csv_path} line {i}: {len(parts)} fields, expected {len(header)}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ValueError(f"{csv_path} line {i}: {exc}") from None
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def _rolling_mean(y: np.ndarray, window: int) -> np.ndarray:
    out = np.empty_like(y)
    c = np.concatenate([[0.0], np.cumsum(y)])
    for i in range(len(y)):
        lo = max(0, i - window + 1)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def _axis_ticks(lo: float, hi: float, n: int = 5):
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def _svg_header(title: str) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_VIEW_W} {_VIEW_H}" '
        f'font-family="monospace" font-size="11">',
        f'<rect x="0" y="0" width="{_VIEW_W}" height="{_VIEW_H}" fill="#ffffff"/>',
        f'<text x="{_ML}" y="18" font-size="13">{title}</text>',
    ]


def _polyline(xs, ys, color: str, width: str) -> str:
    pts = " ".join(f"{_num(x)},{_num(y)}" for x, y in zip(xs, ys))
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="{width}" '
        f'points="{pts}"/>'
    )


def _render_metric_svg(title, steps, values, window: int) -> str:
    parts = _svg_header(title)
    x0, y0 = _ML, _MT + _PLOT_H  # origin: bottom-left of the plot area
    if len(steps):
        x_lo, x_hi = float(steps.min()), float(steps.max())
        y_lo, y_hi = float(values.min()), float(values.max())
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        pad = max(abs(y_lo) * 0.1, 0.5)
        y_lo, y_hi = y_lo - pad, y_hi + pad
    else:
        pad = (y_hi - y_lo) * 0.05
        y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(x):
        return x0 + (x - x_lo) / (x_hi - x_lo) * _PLOT_W

    def py(y):
        return y0 - (y - y_lo) / (y_hi - y_lo) * _PLOT_H

    parts.append(
        f'<rect x="{x0}" y="{_MT}" width="{_PLOT_W}" height="{_PLOT_H}" '
        f'fill="none" stroke="#000000" stroke-width="1"/>'
    )
    for t in _axis_ticks(x_lo, x_hi):
        x = px(t)
        parts.append(
            f'<line x1="{_num(x)}" y1="{y0}" x2="{_num(x)}" y2="{y0 + 5}" '
            f'stroke="#000000" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_num(x)}" y="{y0 + 18}" text-anchor="middle">{_num(t)}</text>'
        )
    for t in _axis_ticks(y_lo, y_hi):
        y = py(t)
        parts.append(
            f'<line x1="{x0 - 5}" y1="{_num(y)}" x2="{x0}" y2="{_num(y)}" '
            f'stroke="#000000" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x0 - 8}" y="{_num(y + 4)}" text-anchor="end">{_num(t)}</text>'
        )
    if len(steps):
        xs = [px(v) for v in steps]
        parts.append(_polyline(xs, [py(v) for v in values], "#b0c4de", "1"))
        smooth = _rolling_mean(values, window)
        parts.append(_polyline(xs, [py(v) for v in smooth], "#1f4e8c", "1.5"))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plots(csv_path, out_dir, *, window: int = 5) -> list:
    """Write one SVG per metric column; returns the paths in header order.

    The output bytes depend only on the CSV content: coordinates are
    formatted to six significant digits and the layout is fixed. An empty
    body yields axes-only plots.
    """
    header, rows = _read_metrics(csv_path)
    os.makedirs(out_dir, exist_ok=True)
    steps = rows[:, 0] if len(rows) else np.empty(0)
    paths = []
    for col in range(1, len(header)):
        name = header[col]
        values = rows[:, col] if len(rows) else np.empty(0)
        svg = _render_metric_svg(name, steps, values, window)
        safe = "".join(c if c.isalnum() or c == "_" else "_" for c in name)
        path = os.path.join(out_dir, f"plot_{safe}.svg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(svg)
        paths.append(path)
    return paths


__all__ = [
    "WinTieReport",
    "evaluate",
    "paired_difference",
    "write_report",
    "policy_fingerprint",
    "verify_bounds",
    "emit_plots",
    "state_blind_mask",
    "DEFAULT_SWEEP",
]
