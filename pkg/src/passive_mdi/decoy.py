"""Linear programs bounding the single-photon-pair yield and error rate.

The observable gain of every decoy pair constrains the photon-number-resolved
yields through

    <Q>_ij - (1 - sum_cut <P_nm>_ij)  <=  sum_cut <P_nm>_ij Y_nm  <=  <Q>_ij,

where the sum runs over the truncation set n <= N_cut, m <= M_cut and the
slack term absorbs every yield beyond it.  Minimizing Y_11 over the nine
Z-basis pairs gives the key-rate lower bound.  The error-rate objective
max e_11 is bilinear in (e_nm, Y_nm), so it is linearized in two stages:
minimize Y_11 under the X gain constraints, maximize b_11 := e_11 Y_11 as a
free variable under the matching error-gain constraints, and report
min(b_11^U / Y_11^L, 1/2).

Constraint right-hand sides are widened by a relative epsilon before solving;
widening can only loosen the optimum, so the bounds stay valid while small
quadrature round-off in the inputs cannot render the program infeasible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .expectations import GainTable

DECOYS = ("chi", "nu", "omega")

CONSTRAINT_EPS_ABS = 1e-12
CONSTRAINT_EPS_REL = 1e-9


class InfeasibleLPError(RuntimeError):
    """No yield assignment satisfies the gain constraints (inconsistent inputs)."""


class UnboundedLPError(RuntimeError):
    """Objective unbounded; the program is malformed."""


@dataclass(frozen=True)
class DecoyLP:
    """Small dense LP: optimize c.x subject to A x <= b and box bounds."""

    minimize: bool
    c: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    bounds: tuple
    names: tuple
    label: str = "lp"


@dataclass(frozen=True)
class LPSolution:
    value: float
    x: np.ndarray


@dataclass(frozen=True)
class DecoyBounds:
    """Outputs of the decoy analysis feeding the key-rate formula."""

    y11_z_lower: float
    e11_x_upper: float
    y11_x_lower: float
    b11_x_upper: float


def solve_lp(lp: DecoyLP) -> LPSolution:
    """Solve a DecoyLP to optimality.

    Constraint corridors can be only a few ulps wide when a decoy setting is
    near vacuum, which occasionally trips presolve into misreporting
    infeasibility or an unknown status; failed verdicts are retried with
    progressively more conservative solver settings before being raised.
    """
    c = lp.c if lp.minimize else -lp.c
    attempts = (
        {"primal_feasibility_tolerance": 1e-9,
         "dual_feasibility_tolerance": 1e-9},
        {"primal_feasibility_tolerance": 1e-9,
         "dual_feasibility_tolerance": 1e-9, "presolve": False},
        {"presolve": False},
    )
    res = None
    for options in attempts:
        res = linprog(c, A_ub=lp.a_ub, b_ub=lp.b_ub, bounds=list(lp.bounds),
                      method="highs", options=options)
        if res.success:
            break
    if res.status == 2:
        raise InfeasibleLPError(f"{lp.label}: infeasible ({res.message})")
    if res.status == 3:
        raise UnboundedLPError(f"{lp.label}: unbounded ({res.message})")
    if not res.success:
        raise RuntimeError(f"{lp.label}: solver failure ({res.message})")
    value = res.fun if lp.minimize else -res.fun
    return LPSolution(value=float(value), x=np.asarray(res.x))


def check_solution(lp: DecoyLP, x: np.ndarray, tol: float = 1e-8) -> float:
    """Largest constraint violation of x against the LP's own constraints."""
    viol = 0.0
    if lp.a_ub.size:
        viol = float(np.max(lp.a_ub @ x - lp.b_ub, initial=0.0))
    for xi, (lo, hi) in zip(x, lp.bounds):
        viol = max(viol, lo - xi, xi - hi)
    if viol > tol:
        raise AssertionError(f"{lp.label}: constraint violation {viol:.3e}")
    return viol


def _widen(rhs: float) -> float:
    return CONSTRAINT_EPS_ABS + CONSTRAINT_EPS_REL * abs(rhs)


def _gain_constraint_rows(gains: GainTable, basis: str, use_error_gain: bool,
                          n_cut: int, m_cut: int):
    """Two-sided constraint rows for all nine decoy pairs of one basis."""
    nvars = (n_cut + 1) * (m_cut + 1)
    rows = []
    rhs = []
    for di in DECOYS:
        for dj in DECOYS:
            pair = gains.pair(basis, di, dj)
            pnm = pair.pnm[:n_cut + 1, :m_cut + 1].ravel()
            obs = pair.error_gain if use_error_gain else pair.gain
            slack = 1.0 - float(pnm.sum())
            upper = obs
            lower = obs - slack
            rows.append(pnm)
            rhs.append(upper + _widen(upper))
            rows.append(-pnm)
            rhs.append(-(lower - _widen(lower)))
    a = np.vstack(rows)
    assert a.shape == (18, nvars)
    return a, np.asarray(rhs)


def build_yield_lp(gains: GainTable, basis: str, n_cut: int, m_cut: int,
                   use_error_gain: bool = False, minimize: bool = True,
                   objective: tuple[int, int] = (1, 1)) -> DecoyLP:
    """LP over the truncated yield (or error-yield) grid for one basis."""
    if objective[0] > n_cut or objective[1] > m_cut:
        raise ValueError("objective index outside the truncation set")
    a_ub, b_ub = _gain_constraint_rows(gains, basis, use_error_gain, n_cut, m_cut)
    nvars = (n_cut + 1) * (m_cut + 1)
    c = np.zeros(nvars)
    c[objective[0] * (m_cut + 1) + objective[1]] = 1.0
    kind = "b" if use_error_gain else "Y"
    names = tuple(f"{kind}_{n}{m}" for n in range(n_cut + 1)
                  for m in range(m_cut + 1))
    sense = "min" if minimize else "max"
    return DecoyLP(minimize=minimize, c=c, a_ub=a_ub, b_ub=b_ub,
                   bounds=tuple((0.0, 1.0) for _ in range(nvars)),
                   names=names,
                   label=f"{sense}_{kind}{objective[0]}{objective[1]}_{basis}")


def y11_z_lower(gains: GainTable, n_cut: int = 6, m_cut: int = 6) -> float:
    """Lower bound on the single-photon-pair yield in the key basis."""
    lp = build_yield_lp(gains, "Z", n_cut, m_cut, minimize=True)
    return max(0.0, solve_lp(lp).value)


def _x_basis_bounds(gains: GainTable, n_cut: int,
                    m_cut: int) -> tuple[float, float, float]:
    """Two-stage linearization: (y11_x_lower, b11_x_upper, e11_x_upper)."""
    lp_yx = build_yield_lp(gains, "X", n_cut, m_cut, minimize=True)
    y_x = max(0.0, solve_lp(lp_yx).value)
    lp_b = build_yield_lp(gains, "X", n_cut, m_cut, use_error_gain=True,
                          minimize=False)
    b_up = min(1.0, solve_lp(lp_b).value)
    if y_x <= 0.0:
        e_up = 0.5
    else:
        e_up = max(min(b_up / y_x, 0.5), 0.0)
    return y_x, b_up, e_up


def e11_x_upper(gains: GainTable, n_cut: int = 6, m_cut: int = 6) -> float:
    """Upper bound on the single-photon-pair error rate in the check basis."""
    return _x_basis_bounds(gains, n_cut, m_cut)[2]


def decoy_bounds(gains: GainTable, n_cut: int = 6, m_cut: int = 6) -> DecoyBounds:
    """Solve all three programs and assemble the key-rate inputs."""
    y_z = y11_z_lower(gains, n_cut, m_cut)
    y_x, b_up, e_up = _x_basis_bounds(gains, n_cut, m_cut)
    return DecoyBounds(y11_z_lower=y_z, e11_x_upper=e_up,
                       y11_x_lower=y_x, b11_x_upper=b_up)


def lp_format(lp: DecoyLP) -> str:
    """Render the program in the plain-text LP interchange format."""
    lines = ["\\ " + lp.label,
             "Minimize" if lp.minimize else "Maximize"]
    terms = [f"{c:+.17g} {name}" for c, name in zip(lp.c, lp.names) if c != 0.0]
    lines.append(" obj: " + " ".join(terms))
    lines.append("Subject To")
    for k, (row, rhs) in enumerate(zip(lp.a_ub, lp.b_ub)):
        terms = [f"{a:+.17g} {name}" for a, name in zip(row, lp.names)
                 if a != 0.0]
        lines.append(f" c{k}: " + " ".join(terms) + f" <= {rhs:.17g}")
    lines.append("Bounds")
    for name, (lo, hi) in zip(lp.names, lp.bounds):
        lines.append(f" {lo:.17g} <= {name} <= {hi:.17g}")
    lines.append("End")
    return "\n".join(lines) + "\n"
