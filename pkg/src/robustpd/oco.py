"""Shifted, regularized follow-the-leader updates for Lagrangian duals.

The online game: at step t the learner posts a nonnegative dual vector
``y_t``, then a load ``v_t in [0,1]^m`` and a multiplier ``gamma_t`` in
``{0, gamma_bar}`` are revealed and the learner banks the fake gain
``L_gamma(y, v) = <y, v> - gamma * conj(y)``.  The multipliers sum to 1
over a complete run.

The iterate is follow-the-regularized-leader over the scaled gains
``<y, v_t> - 4*gamma_t*conj(y)`` plus a fake time-0 gain
``<y, 4p*ones> - 4*conj(y)``, which shifts the argument away from the
origin so consecutive gradients stay within a factor 2 of each other.
In closed form::

    y_t   = grad( (4p*ones + v_{1:t-1}) / (4*(1 + gamma_{1:t-1} + gamma_bar)) )
    y~_t  = grad( (4p*ones + v_{1:t-1}) / (4*(1 + gamma_{1:t-1})) )   # leader

The second, unregularized iterate is the follow-the-leader companion used
by the gain-accounting checks.  Everything a post-run check needs is kept
in the state's history and a running :class:`RegretLedger`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfigError",
    "OcoState",
    "RegretLedger",
    "StepRecord",
    "CheckReport",
    "check_be_the_leader",
    "check_stability",
    "check_oco_guarantees",
    "dominating_set",
    "normalized_slack",
]


class ConfigError(ValueError):
    """Raised when a run is configured outside the guarantee regime."""


def normalized_slack(lhs, rhs):
    """Slack of the claim ``lhs >= rhs``, normalized by ``max(1, |rhs|)``.

    Negative values are violations; checks pass at ``>= -1e-8``.
    """
    return (lhs - rhs) / max(1.0, abs(rhs))


@dataclass
class RegretLedger:
    """Running aggregates that the inequality checks consume.

    ``fake_half_sum`` accumulates ``L_gamma(y_t, v_t/2)``, ``fake_sum`` the
    unhalved ``L_gamma(y_t, v_t)``, ``leader_gain_sum`` the scaled gains of
    the follow-the-leader companion (including the fake time-0 gain), and
    ``y_max`` the coordinate-wise running maximum of the iterates.
    """

    cost_at_p_ones: float
    fake_half_sum: float = 0.0
    fake_sum: float = 0.0
    inner_sum: float = 0.0
    leader_gain_sum: float = 0.0
    conj_max: float = 0.0
    y_max: np.ndarray = None

    def snapshot(self) -> dict:
        return {
            "cost_at_p_ones": self.cost_at_p_ones,
            "fake_half_sum": self.fake_half_sum,
            "fake_sum": self.fake_sum,
            "inner_sum": self.inner_sum,
            "leader_gain_sum": self.leader_gain_sum,
            "conj_max": self.conj_max,
            "y_max": None if self.y_max is None else self.y_max.tolist(),
        }


@dataclass
class StepRecord:
    """Per-step quantities returned by :meth:`OcoState.observe`."""

    y: np.ndarray
    conj_y: float
    fake: float  # <y, v> - gamma * conj(y)
    fake_half: float  # <y, v/2> - gamma * conj(y)
    inner: float  # <y, v>
    leader_gain: float  # scaled gain of the next leader iterate on this step


class OcoState:
    """Single-owner mutable state of one dual-learning run.

    Parameters
    ----------
    f : CostFunction
        The cost whose gradient generates the iterates.
    gamma_bar : float
        The nonzero multiplier value; must be at most ``1/(4p)``.
    disable_shift, disable_regularizer : bool
        Test-only mutations that break the guarantees (remove the ``4p``
        shift from the numerator, or the extra ``gamma_bar`` from the
        denominator).  Never set in production runs.
    """

    def __init__(self, f, gamma_bar, *, disable_shift=False, disable_regularizer=False):
        cap = 1.0 / (4.0 * f.p)
        if gamma_bar > cap * (1.0 + 1e-12):
            raise ConfigError(
                f"gamma_bar={gamma_bar} exceeds 1/(4p)={cap} for p={f.p}"
            )
        if gamma_bar <= 0.0:
            raise ConfigError("gamma_bar must be positive")
        self.f = f
        self.gamma_bar = float(gamma_bar)
        self.shift = np.full(f.m, 0.0 if disable_shift else 4.0 * f.p)
        self._regularizer = 0.0 if disable_regularizer else self.gamma_bar
        self.cum_v = np.zeros(f.m)
        self.cum_gamma = 0.0
        self.t = 1
        self.history: list[tuple[np.ndarray, np.ndarray, float]] = []
        self.ledger = RegretLedger(cost_at_p_ones=f.cost_at_p_ones())
        self.ledger.y_max = np.zeros(f.m)
        # Fake time-0 gain of the first leader iterate; equals
        # 4 * cost(p*ones) when the shift is in place.
        y1 = self._leader(self.cum_v, self.cum_gamma)
        self.ledger.leader_gain_sum = float(
            np.dot(y1, self.shift) - 4.0 * f.conjugate_value(y1)
        )
        self._cached_y = None

    # -- iterates -----------------------------------------------------------

    def _argument(self, cum_v, cum_gamma, extra):
        return (self.shift + cum_v) / (4.0 * (1.0 + cum_gamma + extra))

    def _leader(self, cum_v, cum_gamma):
        return self.f.grad(self._argument(cum_v, cum_gamma, 0.0))

    def next_iterate(self) -> np.ndarray:
        """The dual to post at the current step.  Does not mutate state."""
        if self._cached_y is None:
            self._cached_y = self.f.grad(
                self._argument(self.cum_v, self.cum_gamma, self._regularizer)
            )
        return self._cached_y

    def ftl_iterate(self) -> np.ndarray:
        """Unregularized companion iterate at the current step."""
        return self._leader(self.cum_v, self.cum_gamma)

    # -- update ---------------------------------------------------------------

    def observe(self, v, gamma) -> StepRecord:
        """Reveal ``(v_t, gamma_t)``, bank the gains, advance to step t+1."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.f.m,):
            raise ValueError(f"load has shape {v.shape}, expected ({self.f.m},)")
        if np.any(v < -1e-12) or np.any(v > 1.0 + 1e-12):
            raise ValueError("load coordinates must lie in [0, 1]")
        if not (gamma == 0.0 or abs(gamma - self.gamma_bar) <= 1e-15 * self.gamma_bar):
            raise ValueError(f"gamma={gamma} must be 0 or gamma_bar={self.gamma_bar}")
        if self.cum_gamma + gamma > 1.0 + self.gamma_bar + 1e-9:
            raise ValueError("multipliers would exceed their total budget of 1")

        y = self.next_iterate()
        conj_y = self.f.conjugate_value(y)
        inner = float(np.dot(y, v))
        fake = inner - gamma * conj_y
        fake_half = 0.5 * inner - gamma * conj_y

        self.history.append((y, v, gamma))
        self.cum_v = self.cum_v + v
        self.cum_gamma += gamma
        self.t += 1
        self._cached_y = None

        y_next = self._leader(self.cum_v, self.cum_gamma)
        leader_gain = float(np.dot(y_next, v)) - 4.0 * gamma * self.f.conjugate_value(
            y_next
        )

        led = self.ledger
        led.fake_half_sum += fake_half
        led.fake_sum += fake
        led.inner_sum += inner
        led.leader_gain_sum += leader_gain
        if conj_y > led.conj_max:
            led.conj_max = conj_y
        np.maximum(led.y_max, y, out=led.y_max)
        return StepRecord(y, conj_y, fake, fake_half, inner, leader_gain)

    @property
    def complete(self) -> bool:
        return abs(self.cum_gamma - 1.0) <= 1e-9


# -- post-run checks ---------------------------------------------------------


@dataclass
class CheckReport:
    """Outcome of one named inequality check."""

    name: str
    worst_slack: float
    detail: dict = field(default_factory=dict)

    def passed(self, tol=1e-8) -> bool:
        return self.worst_slack >= -tol


def _replay(state):
    """Prefix sums reconstructed from history: yields per-step context."""
    cum_v = np.zeros(state.f.m)
    cum_gamma = 0.0
    for t, (y, v, gamma) in enumerate(state.history, start=1):
        prev_v, prev_gamma = cum_v, cum_gamma
        cum_v = cum_v + v
        cum_gamma += gamma
        yield t, y, v, gamma, prev_v, prev_gamma, cum_v, cum_gamma


def check_be_the_leader(state) -> CheckReport:
    """Leader-gain dominance at every prefix.

    The banked gains of the one-step-ahead leader iterates must dominate
    the best fixed dual in hindsight, whose value has the closed form
    ``4*(1+gamma_{1:t}) * cost((shift + v_{1:t}) / (4*(1+gamma_{1:t})))``.
    Evaluated against the state's actual shift, so it holds for mutated
    runs too (it is a property of leader optimality, not of the shift).
    """
    f = state.f
    y1 = state.f.grad(state.shift / 4.0)
    lhs = float(np.dot(y1, state.shift) - 4.0 * f.conjugate_value(y1))
    worst = math.inf
    detail = {}
    if np.array_equal(state.shift, np.full(f.m, 4.0 * f.p)):
        # With the shift in place the fake time-0 gain is exactly
        # 4 * cost(p * ones).
        scale = max(1.0, 4.0 * state.ledger.cost_at_p_ones)
        time0_ok = abs(lhs - 4.0 * state.ledger.cost_at_p_ones) <= 1e-9 * scale
        detail["time0_gain_matches"] = time0_ok
        if not time0_ok:
            worst = -1.0
    for t, y, v, gamma, _, _, cum_v, cum_gamma in _replay(state):
        y_next = f.grad((state.shift + cum_v) / (4.0 * (1.0 + cum_gamma)))
        lhs += float(np.dot(y_next, v)) - 4.0 * gamma * f.conjugate_value(y_next)
        rhs = 4.0 * (1.0 + cum_gamma) * f.eval(
            (state.shift + cum_v) / (4.0 * (1.0 + cum_gamma))
        )
        worst = min(worst, normalized_slack(lhs, rhs))
    return CheckReport("be_the_leader", worst, detail)


def check_stability(state) -> CheckReport:
    """Sandwich of each iterate by the next leader iterate.

    Coordinate-wise ``y_t <= y~_{t+1} <= 2*y_t``, plus the per-step window
    on the gradient arguments: each coordinate ratio of the arguments lies
    in ``[1, 2**(1/p)]``.
    """
    f = state.f
    worst = math.inf
    arg_lo, arg_hi = math.inf, -math.inf
    for t, y, v, gamma, prev_v, prev_gamma, cum_v, cum_gamma in _replay(state):
        w_bar = (state.shift + prev_v) / (4.0 * (1.0 + prev_gamma + state._regularizer))
        w_tilde = (state.shift + cum_v) / (4.0 * (1.0 + cum_gamma))
        y_next = f.grad(w_tilde)
        for lhs, rhs in ((y_next, y), (2.0 * y, y_next)):
            diff = lhs - rhs
            i = int(np.argmin(diff / np.maximum(1.0, np.abs(rhs))))
            worst = min(worst, normalized_slack(lhs[i], rhs[i]))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(w_bar > 0, w_tilde / w_bar, np.inf)
        arg_lo = min(arg_lo, float(ratio.min()))
        arg_hi = max(arg_hi, float(ratio.max()))
    window_ok = arg_lo >= 1.0 - 1e-12 and arg_hi <= 2.0 ** (1.0 / f.p) * (1.0 + 1e-12)
    if not window_ok:
        worst = min(worst, -1.0)
    return CheckReport(
        "stability", worst, {"arg_ratio_range": (arg_lo, arg_hi)}
    )


def check_oco_guarantees(state) -> CheckReport:
    """Regret and size control of a complete run.

    1. ``sum_t L_gamma(y_t, v_t/2) >= cost(sum_t v_t / 8) - cost(p*ones)``,
       with the intermediate prefix form
       ``... >= cost((4p*ones + v_{1:t}) / (4*(1+gamma_{1:t}))) - cost(p*ones)``
       at every t.
    2. ``max_t conj(y_t) / p <= sum_t <y_t, v_t> + cost(p*ones)``.
    3. Separable costs: the same with ``conj`` of the coordinate-wise max
       iterate in place of the max of ``conj``.

    The right-hand sides use the nominal ``4p`` shift regardless of
    mutations: these are the guarantees being falsified, not internal
    identities.
    """
    f = state.f
    if not state.complete:
        raise ValueError("guarantee check requires multipliers summing to 1")
    base = f.cost_at_p_ones()
    nominal_shift = 4.0 * f.p
    worst = math.inf
    fake_half = 0.0
    inner_sum = 0.0
    conj_max = 0.0
    y_max = np.zeros(f.m)
    detail = {}
    for t, y, v, gamma, _, _, cum_v, cum_gamma in _replay(state):
        conj_y = f.conjugate_value(y)
        fake_half += 0.5 * float(np.dot(y, v)) - gamma * conj_y
        inner_sum += float(np.dot(y, v))
        conj_max = max(conj_max, conj_y)
        np.maximum(y_max, y, out=y_max)
        prefix_rhs = f.eval((nominal_shift + cum_v) / (4.0 * (1.0 + cum_gamma))) - base
        worst = min(worst, normalized_slack(fake_half, prefix_rhs))
    detail["regret_prefix"] = worst
    s1 = normalized_slack(fake_half, f.eval(state.cum_v / 8.0) - base)
    detail["regret_final"] = s1
    s2 = normalized_slack(inner_sum + base, conj_max / f.p)
    detail["size_control"] = s2
    worst = min(worst, s1, s2)
    if f.separable:
        s3 = normalized_slack(inner_sum + base, f.conjugate_value(y_max) / f.p)
        detail["size_control_separable"] = s3
        worst = min(worst, s3)
    return CheckReport("oco_guarantees", worst, detail)


def dominating_set(state):
    """Small set of iterates that e-dominates every iterate of the run.

    Returns ``(indices, witness, report)``: 1-based time indices (at most
    ``ceil(p)`` of them), the witness index for every step (the smallest
    chosen index at or after it), and a :class:`CheckReport` whose slack
    certifies ``y_t <= e * y_witness(t)`` coordinate-wise.

    The i-th index is the first time the cumulative multiplier enters
    ``[2**(i/p) - 1, 2**(i/p) - 1 + gamma_bar]``; the last one is the final
    step, whose cumulative multiplier is exactly 1 and therefore lies in
    the last interval.  (Taking the first time in the last interval instead
    would orphan any steps played after the multiplier budget is spent.)
    """
    f = state.f
    if not state.complete:
        raise ValueError("dominating set requires a complete run")
    n = len(state.history)
    k = max(1, math.ceil(f.p))
    cum = 0.0
    thresholds = [2.0 ** (i / f.p) - 1.0 for i in range(1, k)]
    indices = []
    ti = 0
    cum_gammas = []
    for t, (_, _, gamma) in enumerate(state.history, start=1):
        cum += gamma
        cum_gammas.append(cum)
        while ti < len(thresholds) and cum >= thresholds[ti] - 1e-12:
            indices.append(t)
            ti += 1
    if ti < len(thresholds):
        raise AssertionError("multiplier schedule never crossed an interval")
    indices.append(n)
    for i, t in zip(range(1, k + 1), indices):
        lo = 2.0 ** (i / f.p) - 1.0
        if i < k and not (lo - 1e-12 <= cum_gammas[t - 1] <= lo + state.gamma_bar + 1e-12):
            raise AssertionError("chosen index fell outside its interval")
    indices = sorted(set(indices))
    witness = np.empty(n, dtype=np.int64)
    j = 0
    for t in range(1, n + 1):
        while indices[j] < t:
            j += 1
        witness[t - 1] = indices[j]
    worst = math.inf
    e = math.e
    for t, (y, _, _) in enumerate(state.history, start=1):
        yw = state.history[witness[t - 1] - 1][0]
        diff = e * yw - y
        i = int(np.argmin(diff / np.maximum(1.0, np.abs(e * yw))))
        worst = min(worst, normalized_slack(e * yw[i], y[i]))
    report = CheckReport("dominating_set", worst, {"indices": indices})
    return indices, witness, report
