"""Weighted transfer operators and numerical checks of their perturbation estimates.

``L_phi f(x) = sum_y P[x, y] exp(phi(y)) f(y)``.  For small ``phi`` the
operator keeps a simple leading eigenvalue ``lambda_phi`` and splits as
``L_phi = lambda_phi P_phi + R_phi``.  The ``verify_*`` functions compute
each side of the explicit estimates on a concrete chain and report whether
they hold.

Operator norms in the non-Euclidean spaces are computed by local ascent
(see :func:`operator_norm`), so they are lower bounds.  Since they always
sit on the left of an inequality, an unlucky maximiser can only make a
check less sharp, never produce a false failure.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernel import (
    ConvergenceError,
    FiniteKernel,
    GapCertificate,
    maximize_ratio,
    stationary_measure,
)
from .norms import FunctionSpace, norm, normalize_observable, sup_norm
from .variance import correlation_sum, dynamical_variance_exact

__all__ = [
    "TransferOperator",
    "EigenData",
    "LemmaRecord",
    "LemmaReport",
    "build_transfer",
    "leading_eigen",
    "operator_norm",
    "smallness_radius",
    "smallness_condition",
    "persistence_radius",
    "threshold_steps",
    "verify_lemma_estimates",
    "verify_iterated_estimates",
    "verify_gap_persistence",
    "characteristic_function_exact",
    "verify_charfn_estimates",
]

log = logging.getLogger(__name__)

HOLD_SLACK = 1e-9
EXP_LIMIT = 700.0
CHARFN_ALPHA = 0.195


# -- operators --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransferOperator:
    base: FiniteKernel
    weight: np.ndarray
    matrix: np.ndarray

    def apply(self, f):
        return np.asarray(f) @ self.matrix.T

    @property
    def is_averaging(self) -> bool:
        return bool(np.all(self.weight == 1.0))


def build_transfer(kernel: FiniteKernel, phi, scale=1.0) -> TransferOperator:
    """Matrix of ``L_{scale * phi}``; ``scale`` may be complex."""
    phi = np.asarray(phi)
    if phi.shape != (kernel.n,):
        raise ValueError(f"dimension mismatch: kernel has {kernel.n} states, got {phi.shape}")
    z = scale * phi
    if not np.all(np.isfinite(z)):
        raise ValueError("potential must be finite")
    if np.max(np.real(z)) > EXP_LIMIT:
        raise OverflowError("exp(phi) overflows; rescale the potential")
    w = np.exp(z)
    if not np.iscomplexobj(w):
        w = w.astype(float)
    return TransferOperator(kernel, w, kernel.P * w[None, :])


@dataclass(frozen=True)
class EigenData:
    """Leading eigen-triple with ``left @ right = 1``.

    ``right`` is scaled so its largest-modulus entry (lowest index on ties)
    equals 1.
    """

    lam: complex
    right: np.ndarray
    left: np.ndarray
    residual: float
    iterations: int = 0

    def projection(self):
        """``P_phi = right (x) left``."""
        return np.outer(self.right, self.left)


def _scale_by_peak(v):
    k = int(np.argmax(np.abs(v)))  # argmax returns the lowest index on ties
    return v / v[k]


def _power(A, v, tol, max_iter):
    history = []
    v = _scale_by_peak(v)
    lam, res = 0.0, np.inf
    for it in range(1, max_iter + 1):
        w = A @ v
        lam = np.vdot(v, w) / np.vdot(v, v)
        res = float(np.max(np.abs(w - lam * v)))
        history.append(res)
        if res <= tol * max(1.0, abs(lam)):
            return lam, v, res, it, history
        v = _scale_by_peak(w)
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} steps (residual {res:.3e})",
        residual=res, history=history)


def leading_eigen(op, tol=1e-13, max_iter=5000, dominance=1e-9) -> EigenData:
    """Leading eigenvalue and vectors of a transfer operator (or matrix).

    Power iteration on ``A`` and ``A^T``, warm-started from a dense
    eigen-decomposition, with a Rayleigh quotient at each step.  The final
    eigenvalue is ``left A right / left right``.  Raises
    :class:`ConvergenceError` when the leading eigenvalue is not strictly
    dominant or the residual does not fall below ``tol``.
    """
    if isinstance(op, TransferOperator):
        A = op.matrix
        if op.is_averaging:
            mu = stationary_measure(op.base).weights
            one = np.ones(op.base.n)
            res = float(np.max(np.abs(A @ one - one)))
            return EigenData(1.0, one, mu, res, 0)
    else:
        A = np.asarray(op)
    vals, vecs = np.linalg.eig(A)
    order = np.argsort(-np.abs(vals), kind="stable")
    if A.shape[0] > 1 and abs(vals[order[1]]) >= abs(vals[order[0]]) * (1.0 - dominance):
        raise ConvergenceError(
            f"no dominant eigenvalue (|l1|={abs(vals[order[0]]):.6g}, |l2|={abs(vals[order[1]]):.6g})")
    lam_r, u, res_r, it_r, _ = _power(A, vecs[:, order[0]], tol, max_iter)
    lvals, lvecs = np.linalg.eig(A.T)
    k = int(np.argmin(np.abs(lvals - lam_r)))
    lam_l, ell, res_l, it_l, _ = _power(A.T, lvecs[:, k], tol, max_iter)
    ell = ell / (ell @ u)
    lam = (ell @ (A @ u)) / (ell @ u)
    if not np.iscomplexobj(A):
        lam = float(np.real(lam))
        u, ell = np.real(u), np.real(ell)
    residual = float(np.max(np.abs(A @ u - lam * u)))
    return EigenData(lam, u, ell, residual, it_r + it_l)


def operator_norm(M, space: FunctionSpace, restarts=3, steps=80, batch=256, seed=0, subspace=None):
    """Lower bound on ``sup ||M f|| / ||f||`` and its witness.

    Local ascent from random, basis and eigenvector starts, then a batch of
    random witnesses as a second opinion.  ``subspace`` is an optional
    ``(k, n)`` array whose rows span the domain.
    """
    M = np.asarray(M)
    n = M.shape[1]
    rng = np.random.default_rng(seed)
    D = np.eye(n) if subspace is None else np.asarray(subspace)
    coeffs = rng.standard_normal((restarts, D.shape[0]))
    starts = [c @ D for c in coeffs]
    starts += [np.sign(c) @ D for c in coeffs]
    if subspace is None:
        starts += list(np.eye(n))
    project = None
    if subspace is not None:
        Q = np.linalg.qr(D.T)[0]

        def project(F):
            return (F @ Q.conj()) @ Q.T
    r, f = maximize_ratio(M, space, D, np.array(starts), steps=steps, min_step=1e-7, project=project)
    F = np.concatenate([rng.standard_normal((batch, D.shape[0])),
                        rng.choice([-1.0, 1.0], size=(batch, D.shape[0]))]) @ D
    den = norm(space, F)
    ok = den > 0
    if np.any(ok):
        ratios = norm(space, F[ok] @ M.T) / den[ok]
        k = int(np.argmax(ratios))
        if ratios[k] > r:
            r, f = float(ratios[k]), F[ok][k]
    return float(r), f


# -- closed-form radii -------------------------------------------------------


def smallness_radius(delta0) -> float:
    """``log(1 + delta0^2 / (13 + 12 delta0))``."""
    d = GapCertificate.coerce(delta0).delta0
    return math.log1p(d * d / (13.0 + 12.0 * d))


def smallness_condition(delta0, phi_norm) -> bool:
    return bool(phi_norm <= smallness_radius(delta0))


def persistence_radius(delta0, delta, tau0=1.0, pi0_norm=2.0) -> float:
    """Perturbation size below which a gap of size ``delta`` survives."""
    d0 = GapCertificate.coerce(delta0).delta0
    return d0 * (d0 - delta) / (6.0 * (1.0 + d0 - delta) * tau0 * pi0_norm)


def threshold_steps(delta0) -> int:
    """Least ``n`` with ``n >= 1 + log 100 / -log(1 - delta0/13)``."""
    d = GapCertificate.coerce(delta0).delta0
    return int(math.ceil(1.0 + math.log(100.0) / -math.log1p(-d / 13.0)))


# -- reports ----------------------------------------------------------------


@dataclass(frozen=True)
class LemmaRecord:
    lemma_id: str
    inequality_id: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return bool(self.lhs <= self.rhs * (1.0 + HOLD_SLACK))


CSV_COLUMNS = ("lemma_id", "inequality_id", "lhs", "rhs", "margin", "holds")


@dataclass
class LemmaReport:
    records: list = field(default_factory=list)
    advisory: bool = False
    context: dict = field(default_factory=dict)

    def add(self, lemma_id, inequality_id, lhs, rhs):
        self.records.append(LemmaRecord(lemma_id, inequality_id, float(lhs), float(rhs)))

    def extend(self, other: "LemmaReport"):
        self.records.extend(other.records)
        self.advisory = self.advisory or other.advisory

    @property
    def all_hold(self) -> bool:
        return all(r.holds for r in self.records)

    @property
    def failures(self):
        return [r for r in self.records if not r.holds]

    @property
    def min_margin(self) -> float:
        return min((r.margin for r in self.records), default=math.inf)

    def to_csv(self, fh=None):
        out = fh if fh is not None else io.StringIO()
        w = csv.writer(out)
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([r.lemma_id, r.inequality_id, repr(r.lhs), repr(r.rhs), repr(r.margin),
                        str(r.holds).lower()])
        if fh is None:
            return out.getvalue()

    @classmethod
    def from_csv(cls, fh):
        if isinstance(fh, str):
            fh = io.StringIO(fh)
        rep = cls()
        for row in csv.DictReader(fh):
            rep.add(row["lemma_id"], row["inequality_id"], float(row["lhs"]), float(row["rhs"]))
        return rep


# -- lemma checks -----------------------------------------------------------


def _setup(kernel, delta0, phi, space, mu0):
    cert = GapCertificate.coerce(delta0)
    phi = np.asarray(phi, dtype=float)
    if space is None:
        space = cert.space if isinstance(cert.space, FunctionSpace) else FunctionSpace.sup_osc(kernel.n)
    if mu0 is None:
        mu0 = stationary_measure(kernel).weights
    s = float(norm(space, phi))
    return cert, phi, space, np.asarray(mu0, dtype=float), s


def _require_small(cert, s):
    r = smallness_radius(cert)
    if s > r * (1.0 + 1e-12):
        raise ValueError(f"potential too large: ||phi|| = {s:.6g} exceeds the smallness radius {r:.6g}")


def verify_lemma_estimates(kernel: FiniteKernel, delta0, phi, space: Optional[FunctionSpace] = None,
                           mu0=None, n_powers=40, seed=0) -> LemmaReport:
    """Operator, eigenvalue and projection estimates for one small potential.

    Checks, with ``s = ||phi||`` and ``d = delta0``:

    * ``||L_phi - L0|| <= e^s - 1``, ``<= d^2/(13+12d) <= 1/25`` and ``<= 1.02 s``;
      first- and second-order remainders ``0.507 s^2`` and ``0.169 s^3``;
      ``||pi_phi|| <= 2.053``;
    * ``|lambda - 1| <= 0.0524`` and ``<= 1.334 s``; first-order error
      ``(2.43 + 2.081/d) s^2``; second-order error
      ``(7.41 + 17.75/d + 8.49/d^2) s^3``;
    * ``||(R/lambda)^k 1|| <= (6.388 + 4.08/d)(1 - d/13)^(k-1) s`` for
      ``k = 1..n_powers`` and ``||P_phi 1 - 1|| <= (3.77 + 4.08/d) s``.
    """
    cert, phi, space, mu0, s = _setup(kernel, delta0, phi, space, mu0)
    _require_small(cert, s)
    d = cert.delta0
    rep = LemmaReport(advisory=not cert.certified,
                      context={"delta0": d, "phi_norm": s, "space": space.name or space.kind.value})
    P = kernel.P
    n = kernel.n
    op = build_transfer(kernel, phi)
    L = op.matrix
    diff = L - P

    def opn(M, k):
        return operator_norm(M, space, seed=seed + k)[0]

    nd = opn(diff, 0)
    r1 = opn(diff - P * phi[None, :], 1)
    r2 = opn(diff - P * (phi + 0.5 * phi * phi)[None, :], 2)
    lid = "operator_perturbation"
    rep.add(lid, "diff_le_exp", nd, math.expm1(s))
    rep.add(lid, "diff_le_radius", nd, d * d / (13.0 + 12.0 * d))
    rep.add(lid, "radius_le_1/25", d * d / (13.0 + 12.0 * d), 1.0 / 25.0)
    rep.add(lid, "diff_le_1.02s", nd, 1.02 * s)
    rep.add(lid, "first_order_remainder", r1, 0.507 * s * s)
    rep.add(lid, "second_order_remainder", r2, 0.169 * s ** 3)

    eig = leading_eigen(op)
    pi_phi = np.eye(n) - eig.projection()
    rep.add(lid, "projection_norm", opn(pi_phi, 3), 2.053)

    lam = eig.lam
    m1 = float(mu0 @ phi)
    corr = correlation_sum(kernel, phi, mu0)
    second = 1.0 + m1 + 0.5 * float(mu0 @ (phi * phi)) + corr
    lid = "leading_eigenvalue"
    rep.add(lid, "abs_le_0.0524", abs(lam - 1.0), 0.0524)
    rep.add(lid, "abs_le_1.334s", abs(lam - 1.0), 1.334 * s)
    rep.add(lid, "first_order", abs(lam - 1.0 - m1), (2.43 + 2.081 / d) * s * s)
    rep.add(lid, "second_order", abs(lam - second), (7.41 + 17.75 / d + 8.49 / d ** 2) * s ** 3)

    lid = "spectral_projection"
    # R = L pi_phi, and L preserves ker(left), so iterate L on pi_phi 1 and
    # re-project each step to keep the leading direction from leaking back
    def pi(w):
        return w - eig.right * (eig.left @ w)

    c = (6.388 + 4.08 / d) * s
    v = np.zeros(n) if op.is_averaging else pi(np.ones(n))
    for k in range(1, n_powers + 1):
        v = pi(L @ v) / lam
        rep.add(lid, f"remainder_power_{k}", norm(space, v), c * (1.0 - d / 13.0) ** (k - 1))
    off = np.zeros(n) if op.is_averaging else eig.projection() @ np.ones(n) - 1.0
    rep.add(lid, "projection_of_one", norm(space, off), (3.77 + 4.08 / d) * s)
    return rep


def verify_iterated_estimates(kernel: FiniteKernel, delta0, phi, n: int,
                              space: Optional[FunctionSpace] = None, mu0=None) -> LemmaReport:
    """Estimates for ``L_phi^n 1`` and ``lambda_phi^n`` at a fixed ``n``.

    ``||L_phi^n 1 / lambda^n - 1|| <= (3.834 + 4.121/d) s``,
    ``|n log lambda - n mu0(phi)| <= (3.36 + 2.081/d) n s^2`` and
    ``|n log lambda - n mu0(phi) - n sigma^2/2| <= (10.89 + 20.04/d + 8.577/d^2) n s^3``.
    Requires ``n`` above the sample-size threshold.
    """
    cert, phi, space, mu0, s = _setup(kernel, delta0, phi, space, mu0)
    _require_small(cert, s)
    d = cert.delta0
    n0 = threshold_steps(d)
    if n < n0:
        raise ValueError(f"n = {n} is below the sample-size threshold {n0}")
    rep = LemmaReport(advisory=not cert.certified,
                      context={"delta0": d, "phi_norm": s, "n": n})
    op = build_transfer(kernel, phi)
    eig = leading_eigen(op)
    lam = eig.lam
    v = np.ones(kernel.n)
    for _ in range(n):
        v = (op.matrix @ v) / lam
    m1 = float(mu0 @ phi)
    s2 = dynamical_variance_exact(kernel, phi, mu0).sigma2
    nlog = n * math.log(lam)
    lid = "iterated_operator"
    rep.add(lid, "normalized_power_of_one", norm(space, v - 1.0), (3.834 + 4.121 / d) * s)
    rep.add(lid, "log_eigenvalue_first_order", abs(nlog - n * m1), (3.36 + 2.081 / d) * n * s * s)
    rep.add(lid, "log_eigenvalue_second_order", abs(nlog - n * m1 - 0.5 * n * s2),
            (10.89 + 20.04 / d + 8.577 / d ** 2) * n * s ** 3)
    return rep


def verify_gap_persistence(kernel: FiniteKernel, delta0, phi, delta, n_probe=50,
                           space: Optional[FunctionSpace] = None, batch=64, seed=0) -> LemmaReport:
    """Probe ``||L_phi^k f|| <= |lambda|^k (1 - delta)^k ||f||`` on ``ker left``.

    The precondition uses ``e^{||phi||} - 1`` as a rigorous upper bound on
    ``||L_phi - L0||`` and compares it with the persistence radius computed
    with ``tau0 = 1`` and ``||pi0|| <= 2``.  One record per power ``k``
    holds the largest ratio over the probe batch.
    """
    cert, phi, space, _, s = _setup(kernel, delta0, phi, space, None)
    d = cert.delta0
    if not 0 < delta <= d:
        raise ValueError("delta must lie in (0, delta0]")
    radius = persistence_radius(d, delta)
    if math.expm1(s) > radius * (1.0 + 1e-12):
        raise ValueError(
            f"precondition violated: e^||phi|| - 1 = {math.expm1(s):.4g} exceeds radius {radius:.4g}")
    rep = LemmaReport(advisory=not cert.certified,
                      context={"delta0": d, "delta": delta, "phi_norm": s, "radius": radius})
    op = build_transfer(kernel, phi)
    eig = leading_eigen(op)
    rng = np.random.default_rng(seed)
    n = kernel.n
    F = np.concatenate([rng.standard_normal((batch, n)), rng.choice([-1.0, 1.0], size=(batch, n)),
                        np.eye(n)])
    vals, vecs = np.linalg.eig(op.matrix)
    F = np.concatenate([F, vecs.real.T, vecs.imag.T])
    F = F - np.outer(F @ eig.left, eig.right)  # project onto ker(left)
    den = norm(space, F)
    keep = den > 1e-12 * np.max(den)
    F, den = F[keep], den[keep]
    img = F
    lam = abs(eig.lam)
    for k in range(1, n_probe + 1):
        img = img @ op.matrix.T
        img = img - np.outer(img @ eig.left, eig.right)  # rounding re-enters along right
        rep.add("gap_persistence", f"power_{k}", float(np.max(norm(space, img) / den)),
                (lam * (1.0 - delta)) ** k)
    return rep


# -- characteristic functions -----------------------------------------------


def characteristic_function_exact(kernel: FiniteKernel, phi_tilde, mu, n: int, t):
    """``E_mu exp(i t (phi(X_1) + ... + phi(X_n)) / sqrt(n))``.

    ``n`` applications of ``L_{i t phi / sqrt(n)}`` to the constant 1,
    vectorised over ``t``, then integrated against the initial law ``mu``.
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    mu = np.asarray(mu, dtype=float)
    if n == 0:
        out = np.ones(t.shape, dtype=complex)
        return complex(out[0]) if scalar else out
    phi = np.asarray(phi_tilde, dtype=float)
    W = np.exp(1j * np.outer(t, phi) / math.sqrt(n))
    V = np.ones((t.size, kernel.n), dtype=complex)
    PT = kernel.P.T
    for _ in range(n):
        V = (V * W) @ PT
    out = V @ mu
    return complex(out[0]) if scalar else out


def charfn_t_limit(phi_tilde_norm, delta0, n, alpha=CHARFN_ALPHA) -> float:
    """Largest ``|t|`` meeting both smallness conditions on ``i t phi / sqrt(n)``."""
    d = GapCertificate.coerce(delta0).delta0
    c3 = 10.89 + 20.04 / d + 8.577 / d ** 2
    t1 = math.sqrt(n) * smallness_radius(d) / phi_tilde_norm
    t2 = math.sqrt(n) * (0.5 - alpha) / (c3 * phi_tilde_norm ** 3)
    return min(t1, t2)


def verify_charfn_estimates(kernel: FiniteKernel, delta0, phi, n: int, t_grid,
                            space: Optional[FunctionSpace] = None, mu=None,
                            alpha=CHARFN_ALPHA) -> LemmaReport:
    """Envelope and root-distance bounds for the exact characteristic function.

    ``phi`` is standardised first.  With ``root = lambda * A^(1/n)``,
    ``A = phi_n / lambda^n`` (principal branch), each admissible ``t``
    gets three records:

    * ``|root| <= 1.32^(1/n) exp(-alpha t^2 / n)``;
    * ``|phi_n - gamma| <= 1.32 n exp(-0.9999 alpha t^2) |root - gamma^(1/n)|``;
    * ``|root - exp(-t^2/2n)| <= (f ||t phi||^3 + g ||t phi||) / n^1.5 + t^4 / (8 n^2)``
      with ``f = 7.41 + 17.75/d + 8.49/d^2`` and ``g = 4.036 + 4.338/d``.

    Points of ``t_grid`` outside the admissible range are skipped.
    ``mu`` defaults to the point mass at the first state (a cold start).
    """
    cert = GapCertificate.coerce(delta0)
    d = cert.delta0
    if n < 10_000:
        raise ValueError("the characteristic-function estimates assume n >= 10000")
    if space is None:
        space = cert.space if isinstance(cert.space, FunctionSpace) else FunctionSpace.sup_osc(kernel.n)
    mu0 = stationary_measure(kernel).weights
    s2 = dynamical_variance_exact(kernel, phi, mu0).sigma2
    tilde = normalize_observable(phi, mu0, s2, space)
    ptil = tilde.values
    tn = tilde.norm_value
    if mu is None:
        mu = np.zeros(kernel.n)
        mu[0] = 1.0
    tmax = charfn_t_limit(tn, d, n, alpha)
    ts = np.array([t for t in np.atleast_1d(t_grid) if t != 0 and abs(t) <= tmax])
    rep = LemmaReport(advisory=not cert.certified,
                      context={"delta0": d, "n": n, "phi_tilde_norm": tn, "t_max": tmax})
    if ts.size == 0:
        return rep
    phin = characteristic_function_exact(kernel, ptil, mu, n, ts)
    f = 7.41 + 17.75 / d + 8.49 / d ** 2
    g = 4.036 + 4.338 / d
    for t, ph in zip(ts, phin):
        eig = leading_eigen(build_transfer(kernel, ptil, 1j * t / math.sqrt(n)))
        lam = complex(eig.lam)
        A = ph / lam ** n
        root = lam * np.exp(np.log(A) / n)
        gam = math.exp(-t * t / 2.0)
        gam_root = math.exp(-t * t / (2.0 * n))
        tag = f"t={t:.6g}"
        rep.add("charfn_envelope", tag, abs(root), 1.32 ** (1.0 / n) * math.exp(-alpha * t * t / n))
        rep.add("charfn_power_gap", tag, abs(ph - gam),
                1.32 * n * math.exp(-0.9999 * alpha * t * t) * abs(root - gam_root))
        x = abs(t) * tn
        rep.add("charfn_root_distance", tag, abs(root - gam_root),
                (f * x ** 3 + g * x) / n ** 1.5 + t ** 4 / (8.0 * n * n))
    return rep
