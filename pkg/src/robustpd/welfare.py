"""Primal-dual welfare maximization with convex production costs.

Requests ``(c_t, a_t)`` arrive online; the algorithm picks a fulfillment
level in ``[0,1]`` per request to maximize
``sum_t c_t*x_t - cost(sum_t a_t*x_t)``.  Against the current dual the
fake profit ``c*x - L(y, a*x)`` is linear in ``x``, so the virtual play is
0/1: accept exactly when ``c > <y, a>`` (ties decline).  The committed
play is the virtual play scaled by 1/64; the scaling is what turns the
additive regret of the dual learner into a multiplicative profit
guarantee, via the at-least-quadratic growth of the cost.

Costs with a linear part are reduced up front: rewards become
``c_t - <slopes, a_t>`` and the run uses the pure power part.  The linear
part cancels exactly in the profit of any play, so the reported profit on
the original instance equals the reduced run's profit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from robustpd.oco import CheckReport, ConfigError, OcoState, normalized_slack

__all__ = [
    "PLAY_SCALE",
    "Request",
    "WelfareTrace",
    "virtual_best_response",
    "run_welfare",
    "check_profit_chain_step",
    "greedy_marginal_profit",
    "mixture_wrapper",
]

# Committed fraction of an accepted request: 1/8**2, load-bearing in the
# profit guarantee (cost((1/64)w) <= (1/64) cost((1/8)w) needs the square).
PLAY_SCALE = 1.0 / 64.0


@dataclass
class Request:
    """One customer: reward ``c`` (any sign), consumption ``a in [0,1]^m``."""

    c: float
    a: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        if np.any(self.a < -1e-12) or np.any(self.a > 1.0 + 1e-12):
            raise ValueError("consumption coordinates must lie in [0, 1]")


def virtual_best_response(y, req, gamma, f):
    """Maximizer of ``c*x - L(y, a*x)`` over ``x in [0,1]``: 0 or 1.

    The objective is ``(c - <y,a>)*x + gamma*conj(y)``; accept iff the
    linear coefficient is strictly positive.
    """
    c, a = (req.c, req.a) if isinstance(req, Request) else req
    return 1.0 if c - float(np.dot(np.asarray(y), a)) > 0.0 else 0.0


@dataclass
class WelfareTrace:
    """Per-step log of a welfare run, in the reduced (pure-power) view."""

    y: np.ndarray  # (n, m) duals
    x_virtual: np.ndarray  # (n,) virtual plays, each 0 or 1
    conj_y: np.ndarray  # (n,) conjugate values at the duals
    c_reduced: np.ndarray  # (n,) rewards after the linear-part reduction
    a: np.ndarray  # (n, m) consumption vectors
    gamma: float  # 1/n
    labels: np.ndarray | None
    state: OcoState  # dual state of the reduced run
    profit: float  # on the original instance == reduced profit
    reward_total: float  # sum c_t * x~_t (original rewards)
    cost_total: float  # cost(sum a_t * x~_t) (original cost)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def x_played(self):
        return PLAY_SCALE * self.x_virtual

    @property
    def virtual_loads(self):
        return self.a * self.x_virtual[:, None]

    def fake_costs(self):
        """Per-step ``L(y_t, v_t)`` on the virtual loads."""
        inner = np.einsum("tm,tm->t", self.y, self.virtual_loads)
        return inner - self.gamma * self.conj_y

    def to_json(self) -> dict:
        fake = self.fake_costs()
        return {
            "kind": "welfare_trace",
            "gamma": self.gamma,
            "steps": [
                {
                    "t": t + 1,
                    "y": self.y[t].tolist(),
                    "x_virtual": float(self.x_virtual[t]),
                    "x_played": float(self.x_virtual[t]) * PLAY_SCALE,
                    "fake": float(fake[t]),
                    "origin": (
                        None
                        if self.labels is None
                        else ("stoch" if self.labels[t] else "adv")
                    ),
                }
                for t in range(self.n)
            ],
            "profit": self.profit,
            "reward_total": self.reward_total,
            "cost_total": self.cost_total,
            "ledger": self.state.ledger.snapshot(),
        }


def _reduce(requests, f):
    """Split off the linear part; returns (reduced rewards, run cost)."""
    c = np.array([r.c if isinstance(r, Request) else r[0] for r in requests])
    a = np.stack(
        [np.asarray(r.a if isinstance(r, Request) else r[1], dtype=np.float64) for r in requests]
    )
    slopes = f.linear_slopes
    if slopes is None or not np.any(slopes > 0):
        high = f.power_part()
        run_f = high if high is not None else f
        return c, a, run_f
    high = f.power_part()
    if high is None:
        raise ConfigError("cost has a linear part but no power remainder to run on")
    return c - a @ slopes, a, high


def run_welfare(requests, f, labels=None, *, disable_shift=False, disable_regularizer=False):
    """Run the scaled primal-dual welfare loop over realized requests.

    Needs ``n >= 4p`` and a cost whose power part grows at least
    quadratically (checked by sampling when not certain from the family).
    """
    n = len(requests)
    if n < 4.0 * f.p:
        raise ConfigError(f"need n >= 4p, got n={n} with p={f.p}")
    c_red, a, run_f = _reduce(requests, f)
    certain = run_f.family == "sum_of_powers" and run_f.p >= 2.0
    if not certain and not run_f.grows_at_least_quadratically():
        raise ConfigError("cost must grow at least quadratically after reduction")
    gamma = 1.0 / n
    state = OcoState(
        run_f, gamma, disable_shift=disable_shift, disable_regularizer=disable_regularizer
    )
    y_hist = np.empty((n, run_f.m))
    x_virtual = np.empty(n)
    conj_y = np.empty(n)
    for t in range(n):
        y = state.next_iterate()
        x = 1.0 if c_red[t] - float(np.dot(y, a[t])) > 0.0 else 0.0
        rec = state.observe(a[t] * x, gamma)
        y_hist[t] = y
        x_virtual[t] = x
        conj_y[t] = rec.conj_y
    x_played = PLAY_SCALE * x_virtual
    c_orig = np.array([r.c if isinstance(r, Request) else r[0] for r in requests])
    reward_total = float(np.dot(c_orig, x_played))
    cost_total = f.eval(a.T @ x_played)
    if labels is not None:
        labels = np.asarray(labels, dtype=bool)
        if labels.shape != (n,):
            raise ValueError("labels must mark each of the n steps")
    return WelfareTrace(
        y=y_hist,
        x_virtual=x_virtual,
        conj_y=conj_y,
        c_reduced=c_red,
        a=a,
        gamma=gamma,
        labels=labels,
        state=state,
        profit=reward_total - cost_total,
        reward_total=reward_total,
        cost_total=cost_total,
    )


def check_profit_chain_step(trace, beta=None, opt_selector=None, drawn=None) -> CheckReport:
    """Per-realization links of the profit guarantee.

    * accept-or-decline dominance: at every step the virtual fake profit
      is at least ``gamma*conj(y_t)`` (the value of declining) and, at
      stochastic steps, at least the fake profit of playing the offline
      selector's level scaled down by ``beta = n/|Stoch|``;
    * the committed profit is at least ``1/64`` of the virtual fake profit
      minus ``1/64`` of the additive unit ``cost(p*ones)`` (this is where
      the quadratic growth and the 1/64 scaling pay).

    ``opt_selector`` maps support index to the offline fractional level,
    ``drawn`` gives the support index drawn at each step (-1 where
    adversarial).
    """
    fake = trace.fake_costs()
    step_gain = trace.c_reduced * trace.x_virtual - fake
    virtual_profit = float(step_gain.sum())
    worst = math.inf
    detail = {}
    # Declining is always available: c*x - L(y, a*x) >= -L(y, 0) >= 0.
    decline = trace.gamma * trace.conj_y
    slacks = (step_gain - decline) / np.maximum(1.0, np.abs(decline))
    detail["decline_dominance"] = float(slacks.min())
    worst = min(worst, detail["decline_dominance"])
    if opt_selector is not None:
        stoch = trace.labels
        x_cand = np.array(
            [opt_selector[j] if j >= 0 else 0.0 for j in drawn], dtype=np.float64
        ) / beta
        inner = np.einsum("tm,tm->t", trace.y, trace.a)
        cand_gain = (trace.c_reduced - inner) * x_cand + decline
        slacks = (step_gain - cand_gain)[stoch] / np.maximum(1.0, np.abs(cand_gain[stoch]))
        detail["selector_dominance"] = float(slacks.min(initial=0.0))
        worst = min(worst, detail["selector_dominance"])
        s_w2 = normalized_slack(virtual_profit, float(cand_gain[stoch].sum()))
        detail["virtual_vs_scaled_offline"] = s_w2
        worst = min(worst, s_w2)
    rhs_scaled = PLAY_SCALE * (virtual_profit - trace.state.ledger.cost_at_p_ones)
    s_scale = normalized_slack(trace.profit, rhs_scaled)
    detail["scaled_profit"] = s_scale
    worst = min(worst, s_scale)
    return CheckReport("profit_chain", worst, detail)


def greedy_marginal_profit(requests, f):
    """Baseline full-acceptance strategy: take a request whenever its
    reward beats the marginal cost ``<grad(load + a), a>`` at the current
    load.  Returns the play vector in ``{0,1}^n``.
    """
    n = len(requests)
    load = np.zeros(f.m)
    x = np.zeros(n)
    for t, r in enumerate(requests):
        c, a = (r.c, r.a) if isinstance(r, Request) else r
        a = np.asarray(a, dtype=np.float64)
        if c > float(np.dot(f.grad(load + a), a)):
            x[t] = 1.0
            load += a
    return x


@dataclass
class MixtureOutcome:
    arm: str  # "primal_dual" | "plugin"
    profit: float
    plays: np.ndarray
    trace: WelfareTrace | None


def mixture_wrapper(requests, f, adversarial_strategy=None, coin_seed=0, force_arm=None):
    """Fair-coin mixture of the scaled primal-dual run and a plug-in.

    The plug-in receives the whole request sequence and the cost function
    and returns plays in ``[0,1]^n``; the shipped default is
    :func:`greedy_marginal_profit`, a naive baseline rather than a
    guaranteed adversarial algorithm.  ``force_arm`` pins the coin for
    tests ("primal_dual" or "plugin").
    """
    strategy = adversarial_strategy or greedy_marginal_profit
    if force_arm is None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(coin_seed))))
        arm = "primal_dual" if rng.integers(2) == 0 else "plugin"
    else:
        arm = force_arm
    if arm == "primal_dual":
        trace = run_welfare(requests, f)
        return MixtureOutcome(arm, trace.profit, trace.x_played, trace)
    x = np.clip(np.asarray(strategy(requests, f), dtype=np.float64), 0.0, 1.0)
    c = np.array([r.c if isinstance(r, Request) else r[0] for r in requests])
    A = np.stack([np.asarray(r.a if isinstance(r, Request) else r[1]) for r in requests])
    profit = float(np.dot(c, x)) - f.eval(A.T @ x)
    return MixtureOutcome(arm, profit, x, None)
