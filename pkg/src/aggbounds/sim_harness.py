"""Monte Carlo simulation of the patrol system under a fixed policy.

Disturbances are drawn per time step from the exact categorical law
(p_0, ..., p_m) using numpy's PCG64 generator seeded with the given seed, so
the whole alert sequence is fixed before the first step and is identical for
every policy given the same seed. The simulator carries the capped MDP state
(what the policy sees) and the uncapped true delays (what the metrics use).
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import PolicyError, ValidationError
from .mdp_core import Mdp, Policy
from .patrol_model import (PatrolConfig, PatrolState, StateSpace, admissible_actions, alert_probabilities,
                           enumerate_states, reward, step_scalar)


def alert_sequence(config: PatrolConfig, horizon: int, seed: int) -> np.ndarray:
    """Disturbance indices l(0..horizon-1); 0 = no alert, j = alert at station j."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.choice(config.m + 1, size=horizon, p=alert_probabilities(config))


@dataclass
class AlertRecord:
    station: int
    arrival_t: int
    service_delay: int
    dwell: int


@dataclass
class SimResult:
    seed: int
    horizon: int
    records: list = field(default_factory=list)
    unserviced_count: int = 0
    absorbed_count: int = 0
    worst_capped_delay: int = 0
    worst_true_delay: int = 0
    discounted_return: float = 0.0

    @property
    def delays(self) -> np.ndarray:
        return np.array([r.service_delay for r in self.records], dtype=np.int64)

    @property
    def dwells(self) -> np.ndarray:
        return np.array([r.dwell for r in self.records], dtype=np.int64)

    def hist_delay(self) -> dict:
        return dict(sorted(Counter(self.delays.tolist()).items()))

    def hist_dwell(self) -> dict:
        return dict(sorted(Counter(self.dwells.tolist()).items()))

    def summary(self) -> dict:
        n = len(self.records)
        return {
            "seed": self.seed,
            "horizon": self.horizon,
            "serviced_count": n,
            "unserviced_count": self.unserviced_count,
            "absorbed_count": self.absorbed_count,
            "mean_service_delay": float(self.delays.mean()) if n else None,
            "worst_service_delay": int(self.delays.max()) if n else None,
            "mean_dwell": float(self.dwells.mean()) if n else None,
            "worst_capped_delay": self.worst_capped_delay,
            "worst_true_delay": self.worst_true_delay,
            "discounted_return": self.discounted_return,
        }

    def write(self, outdir) -> list:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "alerts.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["station", "arrival_t", "service_delay", "dwell"])
            for r in self.records:
                w.writerow([r.station, r.arrival_t, r.service_delay, r.dwell])
        with open(out / "summary.json", "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
        for name, hist in (("hist_delay.csv", self.hist_delay()), ("hist_dwell.csv", self.hist_dwell())):
            with open(out / name, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["value", "count"])
                for k, v in hist.items():
                    w.writerow([k, v])
        return [out / n for n in ("alerts.csv", "summary.json", "hist_delay.csv", "hist_dwell.csv")]


def as_state_policy(policy, config: PatrolConfig, space: StateSpace | None = None) -> Callable:
    """Wrap an indexed :class:`Policy` as a function of :class:`PatrolState`."""
    if isinstance(policy, Policy):
        space = space or enumerate_states(config)
        if len(policy) != space.size:
            raise PolicyError(f"policy covers {len(policy)} states, the model has {space.size}")
        return lambda s: int(policy.actions[space.index(s)])
    if callable(policy):
        return policy
    raise PolicyError("policy must be a Policy or a callable on patrol states")


def simulate(config: PatrolConfig, policy, horizon: int, seed: int,
             start: PatrolState | None = None, space: StateSpace | None = None,
             alerts: np.ndarray | None = None) -> SimResult:
    """Run one trajectory of ``horizon`` steps.

    A service is recorded at the first loiter step at a station whose true
    delay is positive; its dwell is recorded when the UAV leaves (or at the
    horizon if still loitering). Alerts that land on the station the UAV is
    loitering at are cleared on arrival and counted as ``absorbed``.
    """
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    act = as_state_policy(policy, config, space)
    if alerts is None:
        alerts = alert_sequence(config, horizon, seed)
    start = start or PatrolState(0, 1, 0, (0,) * config.m)
    loc, w, d = start.loc, start.direction, start.dwell
    tau = list(start.delays)
    true = list(start.delays)
    res = SimResult(seed=seed, horizon=horizon)
    open_rec = None
    lam_t = 1.0
    for t in range(horizon):
        s = PatrolState(loc, w, d, tuple(tau))
        try:
            u = act(s)
        except (KeyError, IndexError, ValueError) as exc:
            raise PolicyError(f"policy undefined on state {s}: {exc}") from None
        if u not in admissible_actions(s, config):
            raise PolicyError(f"policy chose inadmissible action {u} in state {s}")
        res.discounted_return += lam_t * reward(s, u, config)
        lam_t *= config.discount
        l = int(alerts[t])
        if u == 0:
            j = config.stations.index(loc)
            if d == 0 and true[j] > 0:
                open_rec = AlertRecord(loc, t - true[j], true[j], 0)
                res.records.append(open_rec)
            if l == j + 1:
                res.absorbed_count += 1
        elif open_rec is not None:
            open_rec.dwell = d
            open_rec = None
        loc2, w2, d2, tau = step_scalar(config, loc, w, d, tau, u, l)
        _, _, _, true = step_scalar(config, loc, w, d, true, u, l, cap=False)
        loc, w, d = loc2, w2, d2
        if open_rec is not None:
            open_rec.dwell = d
        res.worst_capped_delay = max(res.worst_capped_delay, max(tau))
        res.worst_true_delay = max(res.worst_true_delay, max(true))
    res.unserviced_count = sum(1 for t_ in true if t_ > 0)
    return res


def compare_policies(config: PatrolConfig, policies: Sequence, horizon: int, seed: int,
                     start: PatrolState | None = None, space: StateSpace | None = None) -> list:
    """Simulate every policy against one shared alert sequence."""
    alerts = alert_sequence(config, horizon, seed)
    return [simulate(config, p, horizon, seed, start=start, space=space, alerts=alerts) for p in policies]


def discounted_returns(mdp: Mdp, policy: Policy, start: int, episodes: int, steps: int,
                       seed: int) -> np.ndarray:
    """Truncated discounted returns of ``episodes`` independent runs from ``start``.

    Runs on the MDP's disturbance table, vectorized over episodes. The
    truncation bias is at most ``lambda**steps * max|R| / (1 - lambda)``.
    """
    if not mdp.has_disturbances:
        raise ValidationError("discounted_returns needs an MDP with a disturbance table")
    rng = np.random.Generator(np.random.PCG64(seed))
    probs = mdp.disturbance_probs
    x = np.full(episodes, start, dtype=np.int64)
    total = np.zeros(episodes)
    disc = 1.0
    for _ in range(steps):
        k = policy.pairs[x]
        total += disc * mdp.rewards[k]
        disc *= mdp.discount
        l = rng.choice(probs.size, size=episodes, p=probs)
        x = mdp.successors[k, l]
    return total


def truncation_bias(mdp: Mdp, steps: int) -> float:
    return mdp.discount ** steps * np.max(np.abs(mdp.rewards)) / (1 - mdp.discount)
