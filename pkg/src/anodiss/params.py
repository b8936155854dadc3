"""Recursive parameter system of the multiscale pipe construction.

All geometric quantities decay doubly exponentially in the level ``q``
(``a_q = a_0 ** (1 + delta) ** q``), so every sequence is stored and
manipulated through its natural logarithm.

Two regimes are supported:

``paper``
    The literal initial data ``A_0 = a_0, v_0 = 1, L_0 = B_0 = 1/4`` with a
    feasible ``(eps, delta)`` pair and ``a_0`` small enough for the
    summability condition.  Tables are exact but not buildable on any grid.
``desk``
    Moderate ``delta`` and ``a_0`` so that a few levels can be built.  The
    initial rectangle is the full square ``(A_0, 1 - A_0)^2``, the branch
    count ``n_q`` is rounded to an even integer ``>= 10`` and the
    mollification radii are a fixed fraction of the finest pipe width.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateTableError, DomainError, SearchExhaustedError

LOG2 = math.log(2.0)

COLUMNS = (
    "q",
    "log_a",
    "log_n",
    "log_N",
    "log_A",
    "log_Abar",
    "log_B",
    "log_L",
    "log_v",
    "log_kappa",
    "log_ell",
)

#: desk mollification radius as a fraction of the finest pipe width of a layer
DESK_ELL_FRACTION = 0.25
#: default desk parameters; ``eps`` is large so that the margin term of the
#: L recursion stays positive for a few levels
DESK_DEFAULTS = {"a0": 0.1, "delta": 0.3, "eps": 0.3}


# ---------------------------------------------------------------------------
# feasibility


@dataclass(frozen=True)
class FeasibilityReport:
    alpha: float
    eps: float
    delta: float
    #: LHS - RHS of the three Hölder inequalities
    margins: tuple
    #: 2 delta^2 + delta^3 - eps (1 + delta)^2 - 2 eps
    margin_eps_delta: float
    #: eps > 0 and delta > 0
    open_condition: bool
    eps_tilde: float

    @property
    def feasible(self):
        return (
            self.open_condition
            and all(m > 0 for m in self.margins)
            and self.margin_eps_delta >= 0
        )


def _holder_margins(alpha, eps, delta):
    d1 = 1.0 + delta
    k = 3 * eps + 3 * delta + d1**2 / (2 + delta)
    m1 = 1 / (2 + delta) - eps - alpha * d1**4 * k
    m2 = 1 - (2 + delta) * eps - (1 + alpha) * d1**5 * k
    m3 = (1 + 2 * d1**5) / (2 + delta) - eps - (2 + alpha) * d1**4 * k
    return (m1, m2, m3)


def check_feasibility(alpha, eps, delta):
    """Evaluate the inequalities constraining ``(eps, delta)`` for a given alpha.

    ``eps = 0`` or ``delta = 0`` is accepted as a boundary case and reported
    with ``open_condition=False``; negative values are a domain error.
    """
    alpha, eps, delta = float(alpha), float(eps), float(delta)
    if not 0.0 <= alpha < 1.0:
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    if eps < 0 or delta < 0 or not (math.isfinite(eps) and math.isfinite(delta)):
        raise DomainError(f"eps and delta must be non-negative, got {eps}, {delta}")
    margins = _holder_margins(alpha, eps, delta)
    d1 = 1.0 + delta
    m_ed = 2 * delta**2 + delta**3 - eps * d1**2 - 2 * eps
    powers = (3, 5, 4)
    if all(m > 0 for m in margins):
        eps_tilde = min(m / d1**p for m, p in zip(margins, powers))
    else:
        eps_tilde = 0.0
    return FeasibilityReport(
        alpha=alpha,
        eps=eps,
        delta=delta,
        margins=margins,
        margin_eps_delta=m_ed,
        open_condition=eps > 0 and delta > 0,
        eps_tilde=eps_tilde,
    )


def find_eps_delta(alpha, max_halvings=64):
    """Return the first pair ``(delta**3, delta)`` with ``delta = 2**-k`` that is feasible."""
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    for k in range(1, max_halvings + 1):
        delta = 2.0**-k
        eps = delta**3
        if check_feasibility(alpha, eps, delta).feasible:
            return eps, delta
    raise SearchExhaustedError(
        f"no feasible (eps, delta) after {max_halvings} halvings for alpha={alpha}"
    )


def summability_log_a0(eps, delta):
    """Largest ``log a_0`` with ``a_0 ** (eps**2 delta) <= 1/2``."""
    return -LOG2 / (eps * eps * delta)


# ---------------------------------------------------------------------------
# table


def _log_sub(lx, ly):
    """``log(x - y)`` from logs, ``nan`` when ``x <= y``."""
    if ly == -math.inf:
        return lx
    d = ly - lx
    if d >= 0:
        return math.nan
    return lx + math.log1p(-math.exp(d))


def _log_add(lx, ly):
    return float(np.logaddexp(lx, ly))


def _round_n(log_n):
    n = math.exp(log_n) if log_n < 700 else math.inf
    if not math.isfinite(n):
        raise DomainError("n_q too large to round to an integer")
    return max(10, 2 * int(round(n / 2)))


@dataclass(frozen=True, eq=False)
class ParamTable:
    eps: float
    delta: float
    log_a0: float
    regime: str
    log_L0: float
    log_B0: float
    eps_tilde: float
    log_a: np.ndarray
    log_n: np.ndarray
    log_n_exact: np.ndarray
    log_N: np.ndarray
    log_A: np.ndarray
    log_Abar: np.ndarray
    log_B: np.ndarray
    log_L: np.ndarray
    log_v: np.ndarray
    log_kappa: np.ndarray
    log_ell: np.ndarray
    alpha: float | None = None
    b1_seed: str = "recursion"
    notes: tuple = field(default=())

    @property
    def q_max(self):
        return len(self.log_a) - 1

    @property
    def a0(self):
        return math.exp(self.log_a0)

    @property
    def rounded_n(self):
        return self.regime == "desk"

    def n(self, q):
        """Integer branch count used at level ``q >= 1`` (exact value in the ``paper`` regime)."""
        if q < 1:
            raise DomainError("n_q is defined for q >= 1")
        val = math.exp(self.log_n[q])
        return int(round(val)) if self.rounded_n else val

    def value(self, name, q):
        """Linear value of a stored sequence, e.g. ``table.value('A', 2)``."""
        return math.exp(getattr(self, "log_" + name)[q])

    def level(self, q):
        """Linear values of level ``q`` as a dict (may underflow to 0 in the ``paper`` regime)."""
        return {c[4:]: math.exp(getattr(self, c)[q]) for c in COLUMNS[1:]}

    def rows(self):
        for q in range(self.q_max + 1):
            yield [q] + [float(getattr(self, c)[q]) for c in COLUMNS[1:]]

    def to_csv(self):
        buf = io.StringIO()
        buf.write(
            f"# regime={self.regime} eps={self.eps!r} delta={self.delta!r} "
            f"log_a0={self.log_a0!r} alpha={self.alpha!r} b1_seed={self.b1_seed}\n"
        )
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in self.rows():
            w.writerow([row[0]] + [format(x, ".17g") for x in row[1:]])
        return buf.getvalue()

    def digest(self):
        return hashlib.sha256(self.to_csv().encode()).hexdigest()[:16]


def build_table(
    a0=None,
    eps=None,
    delta=None,
    q_max=4,
    *,
    log_a0=None,
    regime="paper",
    alpha=None,
    b1_seed="recursion",
):
    """Evaluate the parameter recursion for levels ``0..q_max``.

    ``a0`` may be given directly or through ``log_a0`` (needed in the ``paper``
    regime, where admissible ``a0`` underflows double precision).

    ``b1_seed="closed-form"`` replaces the recursive ``B_1`` by
    ``B_0 a_0^{-p} a_1^{p}``, ``p = (1+delta)/(2+delta)``.  The recursion
    gives ``B_1 ~ a_0^delta / 2`` instead, which is far below that value; the
    seeded variant is a diagnostic for the two-sided bounds only and is not
    geometrically realisable.
    """
    if regime not in ("paper", "desk"):
        raise DomainError(f"unknown regime {regime!r}")
    if b1_seed not in ("recursion", "closed-form"):
        raise DomainError(f"unknown b1_seed {b1_seed!r}")
    if regime == "desk":
        eps = DESK_DEFAULTS["eps"] if eps is None else eps
        delta = DESK_DEFAULTS["delta"] if delta is None else delta
        if a0 is None and log_a0 is None:
            a0 = DESK_DEFAULTS["a0"]
    if eps is None or delta is None:
        raise DomainError("eps and delta are required")
    eps, delta = float(eps), float(delta)
    if eps <= 0 or delta <= 0:
        raise DomainError("eps and delta must be positive")
    if log_a0 is None:
        if a0 is None or not 0.0 < a0 < 1.0:
            raise DomainError(f"a0 must lie in (0, 1), got {a0}")
        log_a0 = math.log(a0)
    log_a0 = float(log_a0)
    if not log_a0 < 0:
        raise DomainError("a0 must be < 1")
    q_max = int(q_max)
    if q_max < 0:
        raise DomainError("q_max must be >= 0")

    notes = []
    rep = check_feasibility(alpha if alpha is not None else 0.0, eps, delta)
    if regime == "paper":
        if alpha is not None and not rep.feasible:
            raise DomainError(f"(eps, delta) = ({eps}, {delta}) infeasible for alpha={alpha}")
        if rep.margin_eps_delta < 0:
            raise DomainError("eps too large relative to delta")
        if log_a0 > summability_log_a0(eps, delta) * (1 - 1e-12):
            raise DomainError("a0 too large: a0**(eps**2 delta) <= 1/2 is required")
        log_L0 = log_B0 = math.log(0.25)
    else:
        if not (0.1 <= delta <= 0.5 and 0.05 <= math.exp(log_a0) <= 0.3):
            notes.append("desk parameters outside the recommended range")
        msg = "desk regime: feasibility conditions are not enforced"
        notes.append(msg)
        warnings.warn(msg, stacklevel=2)
        A0 = math.exp(log_a0)
        if 3 * A0 >= 1:
            raise DomainError(f"desk regime needs a0 < 1/3 (R_0 = (A0, 1-A0)^2), got {A0:g}")
        log_L0 = math.log(1 - 2 * A0)
        log_B0 = math.log(1 - 3 * A0)
    # 40 a0^(eps delta) <= B0 / A0 from the lower bound on B_q
    if math.log(40) + eps * delta * log_a0 > log_B0 - log_a0:
        msg = "40 a0**(eps*delta) <= B0/A0 fails"
        notes.append(msg)
        if regime == "desk":
            warnings.warn(msg, stacklevel=2)

    # levels 0..q_max + 2 are needed for the mollification radii
    qq = q_max + 2
    log_a = log_a0 * (1 + delta) ** np.arange(qq + 1)
    la = np.full(qq + 1, math.nan)
    n_used = la.copy()
    n_exact = la.copy()
    lN = la.copy()
    lA = la.copy()
    lAbar = la.copy()
    lB = la.copy()
    lL = la.copy()
    lv = la.copy()
    la[:] = log_a
    lA[0] = log_a0
    lAbar[0] = log_a0
    lB[0] = log_B0
    lL[0] = log_L0
    lv[0] = 0.0
    lN[0] = 0.0
    n_used[0] = n_exact[0] = 0.0
    last_good = qq
    for q in range(qq):
        ne = log_a[q] - log_a[q + 1] - LOG2
        n_exact[q + 1] = ne
        nu = math.log(_round_n(ne)) if regime == "desk" else ne
        n_used[q + 1] = nu
        lN[q + 1] = lN[q] + LOG2 + nu
        lAbar[q + 1] = lA[q] - LOG2 - nu
        lA[q + 1] = lAbar[q + 1] + (delta * eps - delta / (2 + delta)) * log_a[q]
        sub = _log_add(nu + lA[q + 1], LOG2 + lA[q])
        lB[q + 1] = _log_sub(lL[q], sub) - nu
        if q == 0 and b1_seed == "closed-form":
            p = (1 + delta) / (2 + delta)
            lB[1] = log_B0 + p * (log_a[1] - log_a0)
        margin = math.log(-math.expm1(eps * delta * log_a[q]))
        lL[q + 1] = _log_sub(lB[q] - LOG2 + margin, 2 * LOG2 + lAbar[q + 1])
        lv[q + 1] = lv[q] + lAbar[q + 1] - lA[q + 1]
        if not (math.isfinite(lB[q + 1]) and math.isfinite(lL[q + 1])):
            last_good = q
            break
    if last_good < q_max:
        raise DegenerateTableError(
            f"B_q or L_q is non-positive at q={last_good + 1} (q_max={q_max})"
        )
    lkappa = 2 * lB
    if regime == "paper":
        lell = np.full(qq + 1, math.nan)
        lell[: qq - 1] = eps * la[: qq - 1] + lv[1:qq] - lv[: qq - 1] + lAbar[2 : qq + 1]
    else:
        finest = np.where(np.arange(qq + 1) == 0, lA, lAbar)
        lell = finest + math.log(DESK_ELL_FRACTION)
    sl = slice(0, q_max + 1)
    return ParamTable(
        eps=eps,
        delta=delta,
        log_a0=log_a0,
        regime=regime,
        log_L0=log_L0,
        log_B0=log_B0,
        eps_tilde=rep.eps_tilde,
        log_a=la[sl].copy(),
        log_n=n_used[sl].copy(),
        log_n_exact=n_exact[sl].copy(),
        log_N=lN[sl].copy(),
        log_A=lA[sl].copy(),
        log_Abar=lAbar[sl].copy(),
        log_B=lB[sl].copy(),
        log_L=lL[sl].copy(),
        log_v=lv[sl].copy(),
        log_kappa=lkappa[sl].copy(),
        log_ell=lell[sl].copy(),
        alpha=alpha,
        b1_seed=b1_seed,
        notes=tuple(notes),
    )


def last_positive_level(a0=None, eps=None, delta=None, *, log_a0=None, regime="paper", q_limit=64):
    """Largest ``q_max`` for which :func:`build_table` succeeds."""
    lo = -1
    for q in range(q_limit + 1):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                build_table(a0, eps, delta, q, log_a0=log_a0, regime=regime)
        except DegenerateTableError:
            break
        lo = q
    return lo


def read_table_csv(text):
    """Inverse of :meth:`ParamTable.to_csv`; the recursion is re-run from the header."""
    lines = text.splitlines()
    meta = {}
    if lines and lines[0].startswith("#"):
        for tok in lines[0][1:].split():
            k, _, v = tok.partition("=")
            meta[k] = v
    body = [ln for ln in lines if not ln.startswith("#")]
    rows = list(csv.reader(body))
    if not rows or tuple(rows[0]) != COLUMNS:
        raise DomainError("not a parameter table CSV")
    q_max = int(rows[-1][0])
    alpha = None if meta.get("alpha", "None") == "None" else float(meta["alpha"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table = build_table(
            eps=float(meta["eps"]),
            delta=float(meta["delta"]),
            q_max=q_max,
            log_a0=float(meta["log_a0"]),
            regime=meta.get("regime", "paper"),
            alpha=alpha,
            b1_seed=meta.get("b1_seed", "recursion"),
        )
    stored = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    recomputed = np.array([r[1:] for r in table.rows()])
    if not np.allclose(stored, recomputed, rtol=1e-14, atol=0, equal_nan=True):
        raise DomainError("table CSV does not match its own header parameters")
    return table


# ---------------------------------------------------------------------------
# certification


@dataclass(frozen=True)
class BoundCheck:
    q: int
    name: str
    kind: str  # "eq", "lower", "upper"
    lhs_log: float
    rhs_log: float
    satisfied: bool
    slack_log: float


@dataclass(frozen=True)
class BoundReport:
    checks: tuple
    tol_log: float

    @property
    def ok(self):
        return all(c.satisfied for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.satisfied]

    def by_name(self, name):
        return [c for c in self.checks if c.name == name]


def _eq(q, name, lhs, rhs, tol):
    scale = max(1.0, abs(rhs))
    slack = tol * scale - abs(lhs - rhs)
    return BoundCheck(q, name, "eq", lhs, rhs, slack >= 0, slack)


def _ineq(q, name, kind, value, bound, tol):
    # relative log tolerance as for the equalities
    scale = max(1.0, abs(bound))
    slack = value - bound if kind == "lower" else bound - value
    return BoundCheck(q, name, kind, value, bound, slack >= -tol * scale, slack)


def verify_bounds(table, tol_log=1e-9, n_terms=64):
    """Check the closed forms and two-sided bounds of the parameter recursion.

    Equalities are compared in log-space with a relative tolerance
    ``tol_log * max(1, |log rhs|)``: at admissible ``a0`` the logs are of
    order ``1e12`` and an absolute tolerance would be below one ulp.
    """
    eps, delta = table.eps, table.delta
    la0 = table.log_a0
    lA0 = table.log_A[0]
    lB0 = table.log_B0
    p = (1 + delta) / (2 + delta)
    checks = []
    for q in range(table.q_max + 1):
        la = table.log_a[q]
        if q >= 1:
            lam = table.log_a[q - 1]
            checks.append(_eq(q, "n", table.log_n[q], -delta * lam - LOG2, tol_log))
            checks.append(
                _eq(q, "Abar", table.log_Abar[q], lA0 - (eps + p) * la0 + (eps + delta + p) * lam, tol_log)
            )
        checks.append(_eq(q, "N", table.log_N[q], la0 - la, tol_log))
        checks.append(_eq(q, "A", table.log_A[q], lA0 - (eps + p) * la0 + (eps + p) * la, tol_log))
        checks.append(
            _eq(q, "v", table.log_v[q], (eps - 1 / (2 + delta)) * la0 + (1 / (2 + delta) - eps) * la, tol_log)
        )
        ub = lB0 - p * la0 + p * la
        checks.append(_ineq(q, "B", "lower", table.log_B[q], ub - LOG2, tol_log))
        checks.append(_ineq(q, "B", "upper", table.log_B[q], ub, tol_log))
        kb = 2 * lB0 - 2 * p * la0 + 2 * p * la
        checks.append(_ineq(q, "kappa", "lower", table.log_kappa[q], kb - 2 * LOG2, tol_log))
        checks.append(_ineq(q, "kappa", "upper", table.log_kappa[q], kb, tol_log))
        if q >= 1:
            lb = lB0 - p * la0 + la / (2 + delta)
            checks.append(_ineq(q, "L", "lower", table.log_L[q], lb - 2 * LOG2, tol_log))
            checks.append(_ineq(q, "L", "upper", table.log_L[q], lb - LOG2, tol_log))
        # sum_{k>=q} a_k^{eps^2} <= 2 a_q^{eps^2}
        ks = np.arange(q, q + n_terms)
        terms = eps**2 * la0 * (1 + delta) ** ks
        tail = eps**2 * la0 * (1 + delta) ** (q + n_terms) - math.log(
            -math.expm1(eps**2 * delta * la0)
        )
        total = float(logsumexp(np.append(terms, tail)))
        checks.append(_ineq(q, "summability", "upper", total, LOG2 + eps**2 * la, tol_log))
    return BoundReport(tuple(checks), tol_log)


def perturbed_table(table, delta_factor=1.5):
    """Table whose recursion uses ``delta * delta_factor`` but keeps the nominal ``delta``.

    Used as a negative control for :func:`verify_bounds`.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        other = build_table(
            eps=table.eps,
            delta=table.delta * delta_factor,
            q_max=table.q_max,
            log_a0=table.log_a0,
            regime=table.regime,
            b1_seed=table.b1_seed,
        )
    return replace(other, delta=table.delta)
