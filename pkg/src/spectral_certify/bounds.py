"""Closed-form concentration, second-order and Berry-Esseen bounds, and a planner.

All constants are used verbatim in double precision.  Every bound returns a
:class:`BoundReport` carrying both the raw value and the value capped at 1;
an inapplicable bound is reported as the trivial value 1 with the reason.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

from .kernel import GapCertificate

__all__ = [
    "Condition",
    "BoundReport",
    "BoundQuery",
    "PlanningError",
    "threshold_n",
    "concentration_bound",
    "second_order_bound",
    "u_min",
    "berry_esseen_bound",
    "berry_esseen_coefficient",
    "plan_sample_size",
    "reports_to_csv",
    "reports_from_csv",
]

LOG100 = math.log(100.0)


class PlanningError(ValueError):
    pass


@dataclass(frozen=True)
class Condition:
    name: str
    value: float
    limit: float
    ok: bool


@dataclass
class BoundReport:
    """Outcome of one bound evaluation.

    ``theorem`` is one of ``A_gauss``, ``A_exp``, ``B``, ``C``, ``plan`` or
    ``bernoulli``.  For the planner ``value`` is the planned ``n`` and
    ``regime`` names the winning bound.
    """

    theorem: str
    regime: str
    raw_value: float
    value: float
    applicable: bool
    conditions: list = field(default_factory=list)
    certified: bool = True
    inputs: dict = field(default_factory=dict)
    reason: str = ""

    def to_dict(self):
        d = asdict(self)
        d["conditions"] = [asdict(c) for c in self.conditions]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["conditions"] = [Condition(**c) for c in d.get("conditions", [])]
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


CSV_COLUMNS = ("theorem", "regime", "inputs", "raw_value", "capped_value", "conditions",
               "certified", "applicable", "reason")


def reports_to_csv(reports, fh=None):
    """Write reports as CSV; nested fields are JSON strings."""
    out = fh if fh is not None else io.StringIO()
    w = csv.writer(out)
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([r.theorem, r.regime, json.dumps(r.inputs, sort_keys=True), repr(r.raw_value),
                    repr(r.value), json.dumps([asdict(c) for c in r.conditions]),
                    str(r.certified).lower(), str(r.applicable).lower(), r.reason])
    if fh is None:
        return out.getvalue()


def reports_from_csv(fh):
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    out = []
    for row in csv.DictReader(fh):
        out.append(BoundReport(
            theorem=row["theorem"],
            regime=row["regime"],
            raw_value=float(row["raw_value"]),
            value=float(row["capped_value"]),
            applicable=row["applicable"] == "true",
            conditions=[Condition(**c) for c in json.loads(row["conditions"])],
            certified=row["certified"] == "true",
            inputs=json.loads(row["inputs"]),
            reason=row["reason"],
        ))
    return out


@dataclass(frozen=True)
class BoundQuery:
    delta0: object
    phi_norm: Optional[float] = None
    a: Optional[float] = None
    n: Optional[int] = None
    S: Optional[float] = None
    phi_tilde_norm: Optional[float] = None
    beta: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "delta0", GapCertificate.coerce(self.delta0))
        for name in ("phi_norm", "a", "S", "phi_tilde_norm"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.n is not None and (int(self.n) != self.n or self.n < 1):
            raise ValueError("n must be a positive integer")
        if self.beta is not None and not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")

    @property
    def d(self) -> float:
        return self.delta0.delta0

    def echo(self):
        out = {"delta0": self.d, "provenance": self.delta0.provenance}
        for name in ("phi_norm", "a", "n", "S", "phi_tilde_norm", "beta"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        return out


def _need(q, *names):
    missing = [n for n in names if getattr(q, n) is None]
    if missing:
        raise ValueError(f"missing inputs: {', '.join(missing)}")


def threshold_n(delta0) -> int:
    """Least integer ``n >= 1 + log 100 / -log(1 - delta0/13)``."""
    d = GapCertificate.coerce(delta0).delta0
    return int(math.ceil(1.0 + LOG100 / -math.log1p(-d / 13.0)))


def _report(theorem, regime, raw, conditions, q, extra=None):
    applicable = all(c.ok for c in conditions)
    reason = "" if applicable else "; ".join(
        f"{c.name} violated ({c.value:g} vs {c.limit:g})" for c in conditions if not c.ok)
    inputs = q.echo()
    if extra:
        inputs.update(extra)
    return BoundReport(theorem, regime, float(raw), min(float(raw), 1.0) if applicable else 1.0,
                       applicable, conditions, q.delta0.certified, inputs, reason)


def _n_condition(q):
    n0 = threshold_n(q.d)
    return Condition("sample_size_threshold", q.n, n0, q.n >= n0)


def gaussian_rate(d) -> float:
    """``d / (13.44 d + 8.324)``."""
    return d / (13.44 * d + 8.324)


def exponential_rate(d) -> float:
    """``0.98 d^2 / (12 + 13 d)``."""
    return 0.98 * d * d / (12.0 + 13.0 * d)


def concentration_bound(q: BoundQuery) -> BoundReport:
    """Tail bound for ``|mean - mu0(phi)| >= a``.

    ``2.488 exp(-n d/(13.44 d + 8.324) a^2/||phi||^2)`` when
    ``a/||phi|| <= d/3`` (boundary included), otherwise
    ``2.624 exp(-n 0.98 d^2/(12 + 13 d) (a/||phi|| - 0.254 d))``.
    """
    _need(q, "phi_norm", "a", "n")
    d, x = q.d, q.a / q.phi_norm
    if x <= d / 3.0:
        theorem, raw = "A_gauss", 2.488 * math.exp(-q.n * gaussian_rate(d) * x * x)
    else:
        theorem, raw = "A_exp", 2.624 * math.exp(-q.n * exponential_rate(d) * (x - 0.254 * d))
    regime = "gaussian" if theorem == "A_gauss" else "exponential"
    return _report(theorem, regime, raw, [_n_condition(q)], q)


def _b_log(d):
    return math.log1p(d * d / (12.0 + 13.0 * d))


def u_min(q: BoundQuery) -> float:
    """Minimiser of the second-order bound over admissible ``U``.

    ``max(S, sqrt(a) sqrt(60) (1 + 1/d) ||phi||^1.5, a ||phi|| / log(1 + d^2/(12 + 13 d)))``.
    """
    _need(q, "phi_norm", "a", "S")
    d = q.d
    return max(q.S,
               math.sqrt(q.a) * math.sqrt(60.0) * (1.0 + 1.0 / d) * q.phi_norm ** 1.5,
               q.a * q.phi_norm / _b_log(d))


def second_order_bound(q: BoundQuery, U: Optional[float] = None) -> BoundReport:
    """``2.637 exp(-n (a^2/(2U) - 10 (1 + 1/d)^2 ||phi||^3 a^3 / U^3))``.

    ``U`` must dominate the variance bound ``S`` and satisfy
    ``a <= U/||phi|| log(1 + d^2/(12 + 13 d))``; it defaults to :func:`u_min`.
    """
    _need(q, "phi_norm", "a", "n")
    d, s, a = q.d, q.phi_norm, q.a
    if U is None:
        U = u_min(q)
    conds = [_n_condition(q)]
    if q.S is not None:
        conds.append(Condition("variance_dominated", U, q.S, U >= q.S))
    cap = U / s * _b_log(d)
    conds.append(Condition("deviation_within_range", a, cap, a <= cap))
    expo = a * a / (2.0 * U) - 10.0 * (1.0 + 1.0 / d) ** 2 * s ** 3 * a ** 3 / U ** 3
    raw = 2.637 * math.exp(-q.n * expo)
    return _report("B", "second_order", raw, conds, q, {"U": U})


def berry_esseen_coefficient(d) -> float:
    return 148.0 + 285.0 / d + 123.0 / d ** 2


def berry_esseen_bound(q: BoundQuery) -> BoundReport:
    """``(148 + 285/d + 123/d^2) max(||phi~||, ||phi~||^3) / sqrt(n)``.

    The caller attests that the variance is positive.  A normalised norm
    below ``sqrt(d/2)`` is impossible and raises.
    """
    _need(q, "phi_tilde_norm", "n")
    if q.a is not None:
        raise ValueError("contradictory inputs: the Berry-Esseen bound takes no deviation a")
    d, p = q.d, q.phi_tilde_norm
    floor = math.sqrt(d / 2.0)
    if p < floor:
        raise ValueError(
            f"inconsistent inputs: violates the normalised-norm lower bound ({p:g} < sqrt(d/2) = {floor:g})")
    raw = berry_esseen_coefficient(d) * max(p, p ** 3) / math.sqrt(q.n)
    return _report("C", "berry_esseen", raw, [Condition("norm_lower_bound", p, floor, True)], q)


def _min_n_for(rate, log_ratio, n0):
    """Least ``n >= n0`` with ``rate * n >= log_ratio`` (``rate > 0``)."""
    if log_ratio <= 0:
        return n0
    return max(n0, int(math.ceil(log_ratio / rate)))


def plan_sample_size(q: BoundQuery) -> BoundReport:
    """Smallest ``n`` whose bound is at most ``beta``.

    Inverts the applicable regime of the concentration bound and, when a
    variance bound ``S`` is given, the second-order bound at ``U_min``;
    the smaller ``n`` wins.  The result always meets the sample-size
    threshold and is checked by forward evaluation at ``n`` and ``n - 1``.
    """
    _need(q, "phi_norm", "a", "beta")
    d, x, beta = q.d, q.a / q.phi_norm, q.beta
    n0 = threshold_n(d)
    candidates = []
    if x <= d / 3.0:
        candidates.append(("A_gauss", _min_n_for(gaussian_rate(d) * x * x, math.log(2.488 / beta), n0)))
    else:
        lin = x - 0.254 * d
        if lin <= 0:
            raise PlanningError(
                f"exponential regime needs a/||phi|| > 0.254 delta0 (got {x:g} <= {0.254 * d:g})")
        candidates.append(("A_exp", _min_n_for(exponential_rate(d) * lin, math.log(2.624 / beta), n0)))
    if q.S is not None:
        U = u_min(BoundQuery(q.delta0, q.phi_norm, q.a, 1, q.S))
        expo = q.a ** 2 / (2.0 * U) - 10.0 * (1.0 + 1.0 / d) ** 2 * q.phi_norm ** 3 * q.a ** 3 / U ** 3
        if expo > 0:
            candidates.append(("B", _min_n_for(expo, math.log(2.637 / beta), n0)))
    evaluate = {
        "A_gauss": lambda n: concentration_bound(BoundQuery(q.delta0, q.phi_norm, q.a, n)),
        "A_exp": lambda n: concentration_bound(BoundQuery(q.delta0, q.phi_norm, q.a, n)),
        "B": lambda n: second_order_bound(BoundQuery(q.delta0, q.phi_norm, q.a, n, q.S)),
    }

    def meets(name, n):
        rep = evaluate[name](n)
        return rep.applicable and rep.raw_value <= beta

    checked = []
    for name, n in candidates:
        # rounding guard: step to the true least n
        while not meets(name, n):
            n += 1
        while n - 1 >= n0 and meets(name, n - 1):
            n -= 1
        checked.append((n, name))
    n, name = min(checked)
    rep = evaluate[name](n)
    conds = [Condition("bound_le_beta", rep.raw_value, beta, True),
             Condition("sample_size_threshold", n, n0, n >= n0)]
    return BoundReport("plan", name, float(n), float(n), True, conds, q.delta0.certified,
                       dict(q.echo(), bound_at_n=rep.raw_value, threshold=n0), "")
