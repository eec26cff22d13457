"""CRB-rate trade-off: sensing- and communication-centric SDPs and frontier sweeps.

Decision variables are the transmit covariances R0 (BS) and R_k (users),
relaxed from rank one to PSD. The angle CRB comes from the low-SNR FIM
bound, which is linear in the covariances, and the rate from the linear
(trace) low-SNR surrogate. Both programs are solved in normalized units
(covariances divided by their power caps, FIM and rate scaled to O(1)).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import cvxopt  # noqa: F401  (interior-point backend, reached through cvxpy)
import cvxpy as cp
import numpy as np

from .bussgang import (
    AoaFimBound,
    fim_lower_bound,
    rate_lower_bound,
    rate_to_throughput,
    signal_covariance,
    uplink_gram,
)
from .quantizer import adc_dynamic_range_db, design_lloyd_max, min_bits_for_dr
from .scenario import ScenarioConfig, build_channels, default_scenario, uplink_dynamic_range_db

SOLVER = "CVXOPT"
SOLVER_OPTS: dict = {}
FALLBACK_SOLVERS = ("CLARABEL", "SCS")
PARETO_SLACK = 1e-7
OK_STATUSES = (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)


class BoundaryError(RuntimeError):
    pass


class InfeasibleError(BoundaryError):
    pass


class SolverError(BoundaryError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class RankGapWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# queries and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryQuery:
    """One operating point of the trade-off.

    ``mu`` is the rate floor for P0 and ``gamma`` the CRB ceiling for P1
    (``math.inf`` drops the sensing constraint). Rates are in bits per use
    of the trace surrogate.
    """

    scenario: ScenarioConfig
    bits: int = 1
    objective: str = "minimize-crb"
    target_index: int = 0
    mu: float = 0.0
    gamma: float = math.inf
    margin_db: float = 0.0
    apply_dr_mask: bool = True
    per_user_floor: bool = False
    eta: float | None = None

    def __post_init__(self):
        if self.objective not in ("minimize-crb", "maximize-rate"):
            raise ValueError("objective must be 'minimize-crb' or 'maximize-rate'")
        if self.mu < 0 or self.gamma < 0:
            raise ValueError("mu and gamma must be non-negative")
        if not 0 <= self.target_index < self.scenario.num_targets:
            raise ValueError("target_index out of range")

    @property
    def distortion(self) -> float:
        return design_lloyd_max(self.bits).eta if self.eta is None else self.eta

    @property
    def p_bs(self) -> float:
        return self.scenario.bs_power_max_w

    @property
    def p_user(self) -> float:
        return self.scenario.user_power_max_w


@dataclass(frozen=True)
class BoundaryPoint:
    mu: float
    rate_surrogate: float
    rate_bits: float
    rate_kbps: float
    crb_rad2: float
    t_epigraph: float
    bs_covariance: np.ndarray
    user_covariances: tuple[np.ndarray, ...]
    bs_precoder: np.ndarray
    user_precoders: tuple[np.ndarray, ...]
    rank1_gap: tuple[float, ...]
    solver_status: str
    duality_gap: float
    pareto: bool = True


def dynamic_range_mask(scenario: ScenarioConfig, bits: int, margin_db: float = 0.0) -> list[list[bool]]:
    """mask[k][i]: the reflection of user k off target i is within the ADC range."""
    dr_adc = adc_dynamic_range_db(bits)
    mask = [[False] * scenario.num_targets for _ in scenario.users]
    for k, u in enumerate(scenario.users):
        for q, p in enumerate(u.reflected_paths):
            mask[k][p.target_index] = dr_adc >= uplink_dynamic_range_db(scenario, k, q) + margin_db
    return mask


def recover_precoder(R, warn_gap: float = 1e-3) -> tuple[np.ndarray, float]:
    """sqrt(lambda_1) u_1 and lambda_2 / lambda_1 (nan for a zero matrix)."""
    R = np.asarray(R, dtype=complex)
    R = 0.5 * (R + R.conj().T)
    w, V = np.linalg.eigh(R)
    if w[-1] <= 0:
        warnings.warn("zero covariance: no precoder to recover", RankGapWarning)
        return np.zeros(R.shape[0], dtype=complex), float("nan")
    f = math.sqrt(w[-1]) * V[:, -1]
    gap = float(max(w[-2], 0.0) / w[-1]) if len(w) > 1 else 0.0
    if gap > warn_gap:
        warnings.warn(f"covariance is not rank one (lambda2/lambda1 = {gap:.2e})", RankGapWarning)
    return f, gap


# ---------------------------------------------------------------------------
# the two programs
# ---------------------------------------------------------------------------

class BoundaryProblem:
    """Precomputed linear maps shared by every solve on one scenario."""

    def __init__(self, query: BoundaryQuery):
        self.query = query
        sc = query.scenario
        self.eta = query.distortion
        mask = dynamic_range_mask(sc, query.bits, query.margin_db) if query.apply_dr_mask else None
        self.mask = mask
        N = sc.n_bs
        Nks = sc.arrays.user_antennas
        self.bound: AoaFimBound = fim_lower_bound(
            sc, np.zeros((N, N)), [np.zeros((n, n)) for n in Nks], self.eta, mask=mask
        )
        ch = build_channels(sc)
        self.channels = ch
        self.grams = [uplink_gram(ch, sc.frame, k) for k in range(sc.num_users)]
        self.rate_scale = (1 - self.eta) / sc.sigma2
        # normalizations: X0 = R0 / P_bs, Xk = Rk / P_u
        self.p_bs, self.p_u = query.p_bs, query.p_user
        F_iso = self.bound.evaluate(self.p_bs * np.eye(N) / N, [self.p_u * np.eye(n) / n for n in Nks])
        self.f_norm = float(np.max(np.diag(F_iso))) or 1.0
        self.rate_max = self.rate_scale * self.p_u * sum(float(np.linalg.eigvalsh(Q)[-1]) for Q in self.grams)
        self.r_norm = self.rate_max if self.rate_max > 0 else 1.0

    # -- building blocks ---------------------------------------------------
    def _variables(self):
        sc = self.query.scenario
        X0 = cp.Variable((sc.n_bs, sc.n_bs), hermitian=True)
        Xk = [cp.Variable((n, n), hermitian=True) for n in sc.arrays.user_antennas]
        cons = [X0 >> 0, cp.real(cp.trace(X0)) <= 1]
        for X in Xk:
            cons += [X >> 0, cp.real(cp.trace(X)) <= 1]
        return X0, Xk, cons

    def _fim_expr(self, X0, Xk):
        """Normalized FIM (P x P) as a cvxpy expression."""
        b = self.bound
        P = b.bs_blocks.shape[0]
        c0 = b.scale * self.p_bs / self.f_norm
        cu = b.scale * self.p_u / self.f_norm
        rows = []
        for i in range(P):
            row = []
            for j in range(P):
                e = c0 * cp.real(cp.sum(cp.multiply(X0, b.bs_blocks[i, j].T)))
                for X, M in zip(Xk, b.user_blocks):
                    if np.any(M[i, j]):
                        e = e + cu * cp.real(cp.sum(cp.multiply(X, M[i, j].T)))
                row.append(e)
            rows.append(row)
        return rows

    def _rate_exprs(self, Xk):
        c = self.rate_scale * self.p_u / self.r_norm
        return [c * cp.real(cp.sum(cp.multiply(X, Q.T))) for X, Q in zip(Xk, self.grams)]

    def _schur(self, rows, t):
        P = len(rows)
        i = self.query.target_index
        e = [[1.0 if r == i else 0.0] for r in range(P)]
        M = cp.bmat([[*rows[r], e[r][0]] for r in range(P)] + [[*(ei[0] for ei in e), t]])
        return 0.5 * (M + M.T) >> 0

    def _solve(self, prob: cp.Problem):
        # the interior-point CVXOPT path keeps the Schur LMI tight to ~1e-9;
        # fall back to the others only when it breaks down
        errors = []
        for name, opts in ((SOLVER, SOLVER_OPTS), *((f, {}) for f in FALLBACK_SOLVERS)):
            try:
                prob.solve(solver=name, **opts)
            except (cp.error.SolverError, ArithmeticError, ValueError) as exc:
                errors.append(f"{name}: {exc}")
                continue
            if prob.status == cp.OPTIMAL or prob.status in (cp.INFEASIBLE, cp.UNBOUNDED):
                return prob.status
            errors.append(f"{name}: {prob.status}")
            if prob.status == cp.OPTIMAL_INACCURATE and name == FALLBACK_SOLVERS[-1]:
                return prob.status
        if prob.status in OK_STATUSES:
            return prob.status
        raise SolverError("; ".join(errors), status=prob.status)

    # -- public evaluators -------------------------------------------------
    def crb(self, R0, Rks) -> float:
        F = self.bound.evaluate(R0, Rks)
        return float(np.linalg.inv(F)[self.query.target_index, self.query.target_index])

    def surrogate_rate(self, Rks) -> float:
        return float(self.rate_scale * sum(np.real(np.trace(R @ Q)) for R, Q in zip(Rks, self.grams)))

    def logdet_rate(self, R0, Rks) -> float:
        sc = self.query.scenario
        Rxx = signal_covariance(self.channels, R0, Rks, sc.frame)
        return float(rate_lower_bound(Rxx, sc.sigma2, self.eta, model="low-snr"))

    # -- programs ----------------------------------------------------------
    def solve_p0(self, mu: float, pareto_refine: bool = True) -> BoundaryPoint:
        """min CRB s.t. surrogate rate >= mu; then max rate at that CRB."""
        if mu > self.rate_max * (1 + 1e-9):
            raise InfeasibleError(f"rate floor {mu:.4g} exceeds the best achievable rate {self.rate_max:.4g}")
        mu_n = min(mu / self.r_norm, 1.0 - 1e-7) if mu > 0 else 0.0
        X0, Xk, cons = self._variables()
        t = cp.Variable()
        rates = self._rate_exprs(Xk)
        cons = cons + [self._schur(self._fim_expr(X0, Xk), t)] + self._rate_cons(rates, mu_n)
        prob = cp.Problem(cp.Minimize(t), cons)
        status = self._solve(prob)
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            raise InfeasibleError(f"P0 infeasible at mu={mu:.4g}")
        if status not in OK_STATUSES:
            raise SolverError(f"P0 solver status {status}", status)
        t_star = float(t.value)
        if pareto_refine and self.query.scenario.num_users:
            # lexicographic step: best rate among covariances that keep the CRB
            X0b, Xkb, consb = self._variables()
            tb = cp.Variable()
            ratesb = self._rate_exprs(Xkb)
            consb += [self._schur(self._fim_expr(X0b, Xkb), tb), tb <= t_star * (1 + PARETO_SLACK)]
            consb += self._rate_cons(ratesb, mu_n)
            prob_b = cp.Problem(cp.Maximize(cp.sum(cp.hstack(ratesb))), consb)
            try:
                status_b = self._solve(prob_b)
            except SolverError:
                status_b = None
            if status_b == cp.OPTIMAL:
                X0, Xk, t, prob, status = X0b, Xkb, tb, prob_b, status_b
        return self._point(mu, X0, Xk, t, prob, status)

    def solve_p1(self, gamma: float = math.inf) -> BoundaryPoint:
        """max surrogate rate s.t. CRB <= gamma (no sensing constraint at inf)."""
        X0, Xk, cons = self._variables()
        rates = self._rate_exprs(Xk)
        t = cp.Variable()
        if math.isfinite(gamma):
            cons = cons + [self._schur(self._fim_expr(X0, Xk), t), t <= gamma * self.f_norm]
        obj = cp.sum(cp.hstack(rates)) if rates else cp.Constant(0.0)
        prob = cp.Problem(cp.Maximize(obj), cons)
        status = self._solve(prob)
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            raise InfeasibleError(f"P1 infeasible at gamma={gamma:.4g}")
        if status not in OK_STATUSES:
            raise SolverError(f"P1 solver status {status}", status)
        if not math.isfinite(gamma):
            t = None
        return self._point(float("nan"), X0, Xk, t, prob, status)

    def _rate_cons(self, rates, mu_n):
        if not rates or mu_n <= 0:
            return []
        if self.query.per_user_floor:
            return [r >= mu_n / len(rates) for r in rates]
        return [cp.sum(cp.hstack(rates)) >= mu_n]

    def _point(self, mu, X0, Xk, t, prob, status) -> BoundaryPoint:
        sc = self.query.scenario
        R0 = self.p_bs * _herm(X0.value)
        Rks = tuple(self.p_u * _herm(X.value) for X in Xk)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankGapWarning)
            f, g0 = recover_precoder(R0)
            rec = [recover_precoder(R) for R in Rks]
        try:
            crb = self.crb(R0, Rks)
        except np.linalg.LinAlgError:
            crb = math.inf
        t_val = float("nan") if t is None or t.value is None else float(t.value) / self.f_norm
        bits = self.logdet_rate(R0, Rks) if Rks else 0.0
        return BoundaryPoint(
            mu=mu,
            rate_surrogate=self.surrogate_rate(Rks),
            rate_bits=bits,
            rate_kbps=rate_to_throughput(bits, sc.frame),
            crb_rad2=crb,
            t_epigraph=t_val,
            bs_covariance=R0,
            user_covariances=Rks,
            bs_precoder=f,
            user_precoders=tuple(r[0] for r in rec),
            rank1_gap=(g0, *(r[1] for r in rec)),
            solver_status=str(status),
            duality_gap=_duality_gap(prob),
        )


def _herm(X) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    return 0.5 * (X + X.conj().T)


def _duality_gap(prob: cp.Problem) -> float:
    """Complementary slackness sum <dual, slack>, relative to the objective."""
    gap = 0.0
    try:
        for c in prob.constraints:
            lam = c.dual_value
            if lam is None or isinstance(c, (cp.constraints.Zero, cp.constraints.Equality)):
                continue
            val = c.expr.value
            if isinstance(c, cp.constraints.PSD):
                gap += abs(float(np.real(np.vdot(np.asarray(lam), np.asarray(val)))))
            else:
                gap += abs(float(np.sum(np.asarray(lam) * -np.asarray(val))))
    except (TypeError, ValueError, AttributeError):
        return float("nan")
    return gap / max(1.0, abs(float(prob.value)))


def solve_p0(query: BoundaryQuery) -> BoundaryPoint:
    """Sensing-centric program at rate floor ``query.mu``."""
    return BoundaryProblem(query).solve_p0(query.mu)


def solve_p1(query: BoundaryQuery) -> BoundaryPoint:
    """Communication-centric program at CRB ceiling ``query.gamma``."""
    return BoundaryProblem(query).solve_p1(query.gamma)


# ---------------------------------------------------------------------------
# frontier
# ---------------------------------------------------------------------------

@dataclass
class Frontier:
    points: list[BoundaryPoint]
    failures: list[tuple[float, str]] = field(default_factory=list)
    anomalies: list[int] = field(default_factory=list)
    mu_max: float = float("nan")

    @property
    def crb(self) -> np.ndarray:
        return np.array([p.crb_rad2 for p in self.points])

    @property
    def rate(self) -> np.ndarray:
        return np.array([p.rate_surrogate for p in self.points])

    def crb_variation(self) -> float:
        """(max - min) / min of the CRB across the sweep."""
        c = self.crb
        return float((c.max() - c.min()) / c.min())


def mu_grid(mu_lo: float, mu_max: float, n: int = 20) -> np.ndarray:
    """0 followed by n - 1 log-spaced floors up to mu_max."""
    if n < 2:
        raise ValueError("need at least two points")
    lo = mu_lo if mu_lo > 0 else mu_max * 1e-3
    lo = min(lo, mu_max)
    return np.concatenate([[0.0], np.geomspace(lo, mu_max, n - 1)])


def trace_frontier(
    scenario: ScenarioConfig,
    bits: int = 1,
    n_points: int = 20,
    mus: Sequence[float] | None = None,
    **query_kw,
) -> Frontier:
    """Sweep the rate floor between the two endpoints of the trade-off.

    Failed points are recorded and skipped. Points are sorted by rate; a CRB
    decrease larger than 1e-6 relative along increasing rate is flagged as a
    solver anomaly, and points dominated by another are marked non-Pareto.
    """
    prob = BoundaryProblem(BoundaryQuery(scenario, bits=bits, **query_kw))
    top = prob.solve_p1(math.inf)
    mu_max = top.rate_surrogate
    if mus is None:
        lo = prob.solve_p0(0.0).rate_surrogate if scenario.num_users else 0.0
        if lo >= mu_max * (1 - 1e-3):
            lo = 0.0  # the sensing optimum already attains the best rate
        mus = mu_grid(lo, mu_max, n_points) if mu_max > 0 else np.zeros(1)
    pts, fails = [], []
    for mu in mus:
        try:
            pts.append(prob.solve_p0(float(mu)))
        except BoundaryError as exc:
            fails.append((float(mu), str(exc)))
    pts.sort(key=lambda p: (p.rate_surrogate, p.crb_rad2))
    anomalies = [
        i for i in range(1, len(pts)) if pts[i].crb_rad2 < pts[i - 1].crb_rad2 * (1 - 1e-6)
    ]
    marked = []
    for p in pts:
        dominated = any(
            q.rate_surrogate >= p.rate_surrogate * (1 + 1e-9) and q.crb_rad2 <= p.crb_rad2 * (1 + 1e-9)
            for q in pts if q is not p
        )
        marked.append(replace(p, pareto=not dominated))
    return Frontier(marked, fails, anomalies, mu_max)


# ---------------------------------------------------------------------------
# grid oracle for tiny instances
# ---------------------------------------------------------------------------

def brute_force_p0(query: BoundaryQuery, step_deg: float = 1.0) -> float:
    """Best CRB over steered rank-one beams on a 1-degree grid, power on the caps.

    Only for P = 1 and K <= 1 with no rate floor: the angle FIM is then a sum
    of a BS term and a user term, so each beam can be chosen separately.
    """
    sc = query.scenario
    if sc.num_targets != 1 or sc.num_users > 1 or query.mu > 0:
        raise ValueError("grid oracle supports P=1, K<=1 and mu=0 only")
    from .scenario import steering_vector

    prob = BoundaryProblem(query)
    b = prob.bound
    d = sc.arrays.element_spacing_wavelengths
    angles = np.deg2rad(np.arange(-90.0, 90.0 + 1e-9, step_deg))

    def best(M, n, power):
        # tr(f f^H M) = f^H M f for every steered beam f on the grid
        beams = np.sqrt(power / n) * np.array([steering_vector(th, n, d) for th in angles])
        return float(np.max(np.real(np.einsum("gp,pq,gq->g", beams.conj(), M, beams))))

    f0 = best(b.bs_blocks[0, 0], sc.n_bs, prob.p_bs)
    fu = best(b.user_blocks[0][0, 0], sc.arrays.user_antennas[0], prob.p_u) if sc.num_users else 0.0
    return 1.0 / (b.scale * (f0 + fu))


# ---------------------------------------------------------------------------
# minimum ADC resolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MinBitsRow:
    dr_sig_db: float
    min_bits: int


def random_target_scenarios(
    n_placements: int,
    radius_m: float = 200.0,
    seed: int = 0,
    min_separation_m: float = 5.0,
    **kw,
) -> list[ScenarioConfig]:
    """Default user, one target dropped uniformly in a disc around the BS."""
    rng = np.random.default_rng(seed)
    user = np.array([100.0, 0.0])
    out = []
    while len(out) < n_placements:
        r = radius_m * math.sqrt(rng.uniform())
        a = rng.uniform(-math.pi, math.pi)
        p = np.array([r * math.cos(a), r * math.sin(a)])
        if r < min_separation_m or np.linalg.norm(p - user) < min_separation_m:
            continue
        out.append(default_scenario(target_distance_m=r, target_angle_deg=math.degrees(a), **kw))
    return out


def min_bits_scan(
    scenarios: Sequence[ScenarioConfig] | Callable[[], Sequence[ScenarioConfig]] | None = None,
    n_placements: int = 200,
    margin_db: float = 0.0,
    seed: int = 0,
    radius_m: float = 200.0,
) -> list[MinBitsRow]:
    """DR of the first user's first reflection and the bits needed to cover it, sorted by DR."""
    if scenarios is None:
        scenarios = random_target_scenarios(n_placements, radius_m, seed)
    elif callable(scenarios):
        scenarios = scenarios()
    rows = []
    for sc in scenarios:
        dr = uplink_dynamic_range_db(sc, 0, 0)
        rows.append(MinBitsRow(dr, min_bits_for_dr(dr, margin_db)))
    rows.sort(key=lambda r: r.dr_sig_db)
    return rows
