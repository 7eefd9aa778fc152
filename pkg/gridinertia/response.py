""" Modal step responses, overshoot and RoCoF extrema with their parameter
    sensitivities, and a forward integration oracle.

    For a unit step in every disturbance column

        y(t)     = sum_i k_i (1 - exp(lambda_i t)),   k_i = -r_i / lambda_i
        y^(n)(t) = sum_i lambda_i^(n-1) r_i exp(lambda_i t),   n >= 1

    with residues r_i = C u_i l_i B, so that y(t) = C A^-1 (exp(At) - I) B.
"""

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.sparse
from gridinertia import current_cfg
from gridinertia.errors import IntegrationError, ResponseError
from gridinertia.subroutines import log
from gridinertia import spectral


class ResidueSet():
    """ Residues r and step coefficients k of the modes that reach the
        outputs, stacked as (modes, outputs, disturbances).

        modes holds the indices into the ModalData the residues belong to;
        dropped lists near-zero modes whose residues vanish (rigid-body angle
        shift).
    """

    def __init__(self, modal, B, C, modes, eigenvalues, r, k, dropped):
        self.modal = modal
        self.B = B
        self.C = C
        self.modes = modes
        self.eigenvalues = eigenvalues
        self.r = r
        self.k = k
        self.dropped = dropped

    def shape(self):
        return (self.C.shape[0], self.B.shape[1])

    def dc_value(self):
        return np.real(np.sum(self.k, axis=0))


def residues(modal, B, C, zero_tolerance=None):
    if zero_tolerance is None:
        zero_tolerance = current_cfg().zero_eigenvalue_tolerance()
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    CU = C @ modal.U
    LB = modal.L @ B
    r_all = CU.T[:, :, None] * LB[:, None, :]
    lam = modal.eigenvalues
    scale = max(float(np.max(np.abs(r_all), initial=0.0)), 1e-300)

    modes, dropped = [], []
    for i, val in enumerate(lam):
        if abs(val) >= zero_tolerance:
            modes.append(i)
            continue
        size = float(np.max(np.abs(r_all[i]), initial=0.0))
        if size > 1e-8 * scale:
            raise ResponseError(('mode {} has eigenvalue {:.3e} near zero and'
                                 ' a non-negligible residue {:.3e}; step coef'
                                 'ficient undefined').format(i, val, size))
        dropped.append(i)
    if dropped:
        log('dropped {} near-zero mode(s) with vanishing residues'.format(
            len(dropped)))

    r = r_all[modes]
    lam_kept = lam[modes]
    k = -r / lam_kept[:, None, None]
    return ResidueSet(modal, B, C, modes, lam_kept, r, k, dropped)


def _basis(lam, t, n):
    """ Per-mode time functions of the n-th derivative evaluated at t (any
        shape); coefficients are k for n = 0 and r for n >= 1.
    """

    e = np.exp(np.multiply.outer(lam, t))
    if n == 0:
        return 1.0 - e
    powers = lam ** (n - 1)
    return powers.reshape(powers.shape + (1,) * np.ndim(t)) * e


def step_response(res, t, n=0):
    """ n-th time derivative of the unit step response at the time matrix t
        (a scalar applies to all pairs). Returns a real outputs x disturbances
        matrix.
    """

    m, d = res.shape()
    t = np.broadcast_to(np.asarray(t, dtype=float), (m, d))
    if np.any(t < 0):
        raise ResponseError('step response evaluated at negative time')
    if n < 0:
        raise ResponseError('derivative order must be >= 0, got {}'.format(n))
    coef = res.k if n == 0 else res.r
    e = np.exp(res.eigenvalues[:, None, None] * t[None, :, :])
    if n == 0:
        val = np.sum(coef * (1.0 - e), axis=0)
    else:
        val = np.sum(coef * res.eigenvalues[:, None, None] ** (n - 1) * e,
                     axis=0)
    return np.real(val)


def trajectories(res, times, n=0):
    """ n-th derivative of the step response sampled at a vector of times,
        shape (times, outputs, disturbances).
    """

    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ResponseError('step response evaluated at negative time')
    coef = res.k if n == 0 else res.r
    return np.real(np.einsum('kt,kmd->tmd', _basis(res.eigenvalues, times, n),
                             coef))


def _pair_value(lam, coef, n, t):
    e = np.exp(lam * t)
    if n == 0:
        return float(np.real(np.sum(coef[0] * (1.0 - e))))
    return float(np.real(np.sum(lam ** (n - 1) * coef[1] * e)))


def bootstrap_grid(eigenvalues, horizon_cap=None):
    """ Return (times, horizon). The horizon covers ten time constants of the
        slowest mode; spacing is at most half a period of the fastest one.
    """

    if horizon_cap is None:
        horizon_cap = current_cfg().horizon_cap()
    if len(eigenvalues) == 0:
        horizon = min(1.0, horizon_cap)
    else:
        horizon = min(10.0 / np.min(np.abs(eigenvalues.real)), horizon_cap)
    omega_max = np.max(np.abs(eigenvalues.imag), initial=0.0)
    spacing = horizon / 1000.0
    if omega_max > 0:
        spacing = min(np.pi / omega_max, spacing)
    count = int(np.ceil(horizon / spacing)) + 1
    return np.linspace(0.0, horizon, count), horizon


class Extrema():
    """ Extremal values per (output, disturbance) pair of the step response
        (order 0, overshoot) or its slope (order 1, RoCoF).

        value holds magnitudes, sign the sign of the signed extremum, kind is
        one of 'interior', 'initial' (t = 0) and 'final' (t -> infinity).
    """

    def __init__(self, order, value, time, sign, kind, converged, horizon):
        self.order = order
        self.value = value
        self.time = time
        self.sign = sign
        self.kind = kind
        self.converged = converged
        self.horizon = horizon

    def signed(self):
        return self.sign * self.value

    def worst(self):
        if self.value.size == 0:
            return 0.0
        return float(np.max(self.value))

    def mean(self):
        if self.value.size == 0:
            return 0.0
        return float(np.mean(self.value))


def _check_stable(res):
    if len(res.eigenvalues) and np.max(res.eigenvalues.real) >= 0:
        i = int(np.argmax(res.eigenvalues.real))
        raise ResponseError(('mode {} is not strictly stable (lambda = {:.6g}'
                             ')').format(res.modes[i], res.eigenvalues[i]))


def _newton(lam, coef, order, t, horizon, max_iterations, tolerance):
    """ Newton iteration for a stationary point of y^(order) starting at t.
        Returns None if the iteration leaves [0, horizon] or does not
        converge.
    """

    for _ in range(max_iterations):
        g = _pair_value(lam, coef, order + 1, t)
        h = _pair_value(lam, coef, order + 2, t)
        if h == 0.0 or not np.isfinite(h):
            return None
        step = g / h
        t = t - step
        if t <= 0.0 or t > horizon:
            return None
        if abs(step) <= tolerance * max(1.0, t):
            return t
    return None


def _find_extrema(res, order, seeds=None):
    _check_stable(res)
    cfg = current_cfg()
    max_iterations = cfg.newton_max_iterations()
    tolerance = cfg.newton_tolerance()
    m, d = res.shape()
    lam = res.eigenvalues
    grid, horizon = bootstrap_grid(lam)
    samples = trajectories(res, grid, order)
    dc = res.dc_value()

    value = np.zeros((m, d))
    time = np.zeros((m, d))
    sign = np.ones((m, d))
    kind = np.empty((m, d), dtype=object)
    converged = np.ones((m, d), dtype=bool)
    for a in range(m):
        for b in range(d):
            coef = (res.k[:, a, b], res.r[:, a, b])
            curve = np.abs(samples[:, a, b])
            g = int(np.argmax(curve))
            starts = [grid[max(g, 1)]]
            if seeds is not None and 0 < seeds[a, b] < horizon:
                starts.append(float(seeds[a, b]))

            f0 = _pair_value(lam, coef, order, 0.0)
            f_inf = dc[a, b] if order == 0 else 0.0
            candidates = []
            for t0 in starts:
                t = _newton(lam, coef, order, t0, horizon, max_iterations,
                            tolerance)
                if t is not None:
                    f = _pair_value(lam, coef, order, t)
                    candidates.append((abs(f), t, f, 'interior', True))
            candidates.append((abs(f0), 0.0, f0, 'initial', True))
            candidates.append((abs(f_inf), horizon, f_inf, 'final', True))
            best = max(candidates, key=lambda c: c[0])

            grid_best = curve[g]
            if best[0] < grid_best * (1.0 - 1e-9) - 1e-300:
                lo = grid[max(g - 1, 0)]
                hi = grid[min(g + 1, len(grid) - 1)]
                fine = np.linspace(lo, hi, 2001)
                vals = [_pair_value(lam, coef, order, t) for t in fine]
                idx = int(np.argmax(np.abs(vals)))
                best = (abs(vals[idx]), fine[idx], vals[idx], 'interior',
                        False)
                log(('WARNING: Newton search did not converge for output {} '
                     'disturbance {} (order {}), using refined grid at t = '
                     '{:.6g}').format(a, b, order, fine[idx]))

            value[a, b] = best[0]
            time[a, b] = best[1]
            sign[a, b] = -1.0 if best[2] < 0 else 1.0
            kind[a, b] = best[3]
            converged[a, b] = best[4]
    return Extrema(order, value, time, sign, kind, converged, horizon)


def find_overshoot(res, seeds=None):
    """ Largest absolute value of the step response per pair. seeds are
        optional peak times (e.g. of a previous iterate) used as additional
        Newton starting points.
    """

    return _find_extrema(res, 0, seeds)


def find_rocof(res, seeds=None):
    """ Largest absolute slope of the step response per pair, t = 0
        included.
    """

    return _find_extrema(res, 1, seeds)


class ResidueSensitivity():
    """ drl holds the first order change of r_i through lambda_i, i.e.
        r_i dlambda_i for a simple mode. Inside a cluster of repeated
        eigenvalues it also carries the coupling between the cluster's
        modes.
    """

    def __init__(self, param, drl, dr, dk):
        self.param = param
        self.drl = drl
        self.dr = dr
        self.dk = dk


def residue_sensitivity(res, sens):
    """ dr_i/d alpha = C d(u_i l_i)/d alpha B and dk_i/d alpha from the
        quotient rule, for all kept modes of res.
    """

    C_sub = res.C[:, sens.rows]
    B_sub = res.B[sens.cols, :]
    dr = np.array([C_sub @ sens.dyads[i] @ B_sub for i in res.modes],
                  dtype=complex).reshape(res.r.shape)
    CU = res.C @ res.modal.U
    LB = res.modal.L @ res.B
    G = sens.projected
    drl = np.zeros(res.r.shape, dtype=complex)
    for p, i in enumerate(res.modes):
        members = sens.members(i)
        drl[p] = np.outer(CU[:, members] @ G[members, i], LB[i, :])
    lam = res.eigenvalues[:, None, None]
    dk = -(dr * lam - drl) / lam ** 2
    return ResidueSensitivity(sens.param, drl, dr, dk)


def _frozen_derivative(lam, dcoef, n, t):
    """ Derivative of y^(n)(t) with respect to a parameter at fixed t.
    """

    dr, dk, drl = dcoef
    e = np.exp(lam * t)
    if n == 0:
        return float(np.real(np.sum(dk * (1.0 - e) + drl / lam * t * e)))
    term = dr * lam ** (n - 1) + drl * lam ** (n - 1) * t
    if n >= 2:
        term = term + drl * (n - 1) * lam ** (n - 2)
    return float(np.real(np.sum(term * e)))


def _flat_limit(lam, coef, n):
    weights = np.abs(lam) ** max(n - 1, 0) * np.abs(coef[1])
    return 1e-12 * max(float(np.sum(weights)), 1e-300)


def _extremum_sensitivity(res, extrema, frozen, final):
    """ frozen(a, b, n, t) is the derivative of y^(n)(t) at fixed t and
        final(a, b) the derivative of the settled value.
    """

    order = extrema.order
    lam = res.eigenvalues
    m, d = res.shape()
    out = np.zeros((m, d))
    for a in range(m):
        for b in range(d):
            coef = (res.k[:, a, b], res.r[:, a, b])
            s = extrema.sign[a, b]
            kind = extrema.kind[a, b]
            if kind == 'final':
                if order == 0:
                    out[a, b] = s * final(a, b)
                continue
            t = extrema.time[a, b]
            df = frozen(a, b, order, t)
            if kind == 'initial':
                out[a, b] = s * df
                continue
            g = _pair_value(lam, coef, order + 1, t)
            h = _pair_value(lam, coef, order + 2, t)
            if abs(h) <= _flat_limit(lam, coef, order + 2):
                log(('WARNING: flat extremum for output {} disturbance {} '
                     '(order {}), dropping peak time derivative').format(
                         a, b, order))
                out[a, b] = s * df
                continue
            dg = frozen(a, b, order + 1, t)
            dh = frozen(a, b, order + 2, t)
            dt = -(dg * h - g * dh) / h ** 2
            out[a, b] = s * (df + g * dt)
    return out


def _modal_backend(res, rsens):
    lam = res.eigenvalues

    def frozen(a, b, n, t):
        dcoef = (rsens.dr[:, a, b], rsens.dk[:, a, b], rsens.drl[:, a, b])
        return _frozen_derivative(lam, dcoef, n, t)

    def final(a, b):
        return float(np.real(np.sum(rsens.dk[:, a, b])))

    return frozen, final


def overshoot_sensitivity(res, rsens, extrema):
    """ d|y(tp)|/d alpha including the peak time shift predicted by the
        derivative of the Newton update.
    """

    return _extremum_sensitivity(res, extrema, *_modal_backend(res, rsens))


def rocof_sensitivity(res, rsens, extrema):
    return _extremum_sensitivity(res, extrema, *_modal_backend(res, rsens))


def direct_derivatives(sys, dA, t, top):
    """ Parameter derivatives of y, y', ..., y^(top) at a fixed time t from
        one block exponential

            expm([[A, dA, 0], [0, A, B], [0, 0, 0]] t)

        whose last block column holds dx(t) and x(t). Needs no eigenvectors,
        so it stays accurate on defective spectra.
    """

    A = np.asarray(sys.A, dtype=float)
    B = np.asarray(sys.B, dtype=float)
    C = np.asarray(sys.C, dtype=float)
    dA = _dense(dA)
    n, d = B.shape
    Z = np.zeros((2 * n + d, 2 * n + d))
    Z[:n, :n] = A
    Z[:n, n:2 * n] = dA
    Z[n:2 * n, n:2 * n] = A
    Z[n:2 * n, 2 * n:] = B
    E = scipy.linalg.expm(Z * t)
    dx = E[:n, 2 * n:]
    x = E[n:2 * n, 2 * n:]
    out = [C @ dx]
    xk, dxk = A @ x + B, dA @ x + A @ dx
    for _ in range(top):
        out.append(C @ dxk)
        xk, dxk = A @ xk, dA @ xk + A @ dxk
    return out


def settled_derivative(sys, res, dA):
    """ Derivative of the settled output C x_ss. With a zero eigenvalue the
        state drifts along its right vector u_0, so x_ss and the drift rate
        c solve the bordered system

            A x_ss - u_0 c = -B,   l_0 x_ss = 0

        and the derivative reuses the same matrix.
    """

    A = np.asarray(sys.A, dtype=float)
    B = np.asarray(sys.B, dtype=float)
    C = np.asarray(sys.C, dtype=float)
    n, d = B.shape
    k = len(res.dropped)
    K = A
    if k:
        U0 = np.real(res.modal.U[:, res.dropped])
        L0 = np.real(res.modal.L[res.dropped, :])
        K = np.block([[A, -U0], [L0, np.zeros((k, k))]])
    try:
        lu = scipy.linalg.lu_factor(K)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise ResponseError('settled state is singular: {}'.format(e))
    pad = np.zeros((k, d))
    x_ss = scipy.linalg.lu_solve(lu, np.vstack([-B, pad]))[:n]
    dx_ss = scipy.linalg.lu_solve(lu, np.vstack([-_dense(dA) @ x_ss, pad]))
    return C @ dx_ss[:n]


def _dense(M):
    if scipy.sparse.issparse(M):
        return M.toarray()
    return np.asarray(M, dtype=float)


def _direct_backend(sys, res, dA):
    cache = {}
    settled = []

    def frozen(a, b, n, t):
        if t not in cache:
            cache[t] = direct_derivatives(sys, dA, t, 3)
        return float(cache[t][n][a, b])

    def final(a, b):
        if not settled:
            settled.append(settled_derivative(sys, res, dA))
        return float(settled[0][a, b])

    return frozen, final


def direct_sensitivity(sys, res, dA, extrema):
    """ Same as overshoot_sensitivity / rocof_sensitivity, with the frozen
        time derivatives taken from direct_derivatives. Used when the
        spectrum has repeated eigenvalues.
    """

    return _extremum_sensitivity(res, extrema,
                                 *_direct_backend(sys, res, dA))


class OracleTrajectory():
    """ Dense output of the forward integration, one solution per
        disturbance column. Each solution carries the stacked state
        (x, x', x'') so derivative outputs never multiply A into an
        integrated state.
    """

    def __init__(self, sys, solutions, horizon):
        self.sys = sys
        self.solutions = solutions
        self.horizon = horizon

    def states(self, times, n=0):
        """ n-th derivative of the state, shape (times, states,
            disturbances).
        """

        if n not in (0, 1, 2):
            raise ResponseError('oracle provides derivatives up to order 2')
        times = np.atleast_1d(np.asarray(times, dtype=float))
        size = self.sys.A.shape[0]
        block = slice(n * size, (n + 1) * size)
        return np.stack([sol.sol(times)[block].T for sol in self.solutions],
                        axis=2)

    def output(self, times, n=0):
        """ n-th derivative (n <= 2) of the outputs, shape (times, outputs,
            disturbances).
        """

        return np.einsum('mn,tnd->tmd', self.sys.C, self.states(times, n))


def simulate_oracle(sys, horizon=20.0, rtol=None, atol=None):
    """ Integrate x' = A x + b_j from rest for every disturbance column with
        an adaptive 8th order Runge-Kutta scheme. x' and x'' are integrated
        alongside from x'(0) = b_j and x''(0) = A b_j.
    """

    cfg = current_cfg()
    if rtol is None:
        rtol = cfg.oracle_rtol()
    if atol is None:
        atol = cfg.oracle_atol()
    if horizon <= 0:
        raise IntegrationError('horizon must be positive')
    A = np.asarray(sys.A, dtype=float)
    size = A.shape[0]
    solutions = []
    for j in range(sys.B.shape[1]):
        b = np.asarray(sys.B[:, j], dtype=float)
        forcing = np.concatenate([b, np.zeros(2 * size)])
        start = np.concatenate([np.zeros(size), b, A @ b])

        def rhs(t, z):
            return (A @ z.reshape(3, size).T).T.ravel() + forcing

        sol = scipy.integrate.solve_ivp(rhs, (0.0, horizon), start,
                                        method='DOP853', dense_output=True,
                                        rtol=rtol, atol=atol)
        if sol.status == -1:
            raise IntegrationError(('integration failed for disturbance {}: '
                                    '{}').format(j, sol.message))
        solutions.append(sol)
    return OracleTrajectory(sys, solutions, horizon)


class MetricBundle():
    """ Metrics of one closed-loop system and their sensitivities.

        d_overshoot, d_rocof map parameter ids to (outputs x disturbances)
        derivatives of the magnitudes; d_zeta maps them to the derivatives
        of the damping ratios of the oscillatory modes (ordered as
        oscillatory).
    """

    def __init__(self, sys, modal, res, overshoot, rocof, oscillatory, zeta):
        self.sys = sys
        self.modal = modal
        self.residues = res
        self.overshoot = overshoot
        self.rocof = rocof
        self.oscillatory = oscillatory
        self.zeta = zeta
        self.d_overshoot = {}
        self.d_rocof = {}
        self.d_zeta = {}
        self.d_lambda = {}

    def param_ids(self):
        return list(self.d_overshoot.keys())

    def S_inf(self):
        return self.overshoot.worst()

    def R_inf(self):
        return self.rocof.worst()

    def S_mean(self):
        return self.overshoot.mean()

    def R_mean(self):
        return self.rocof.mean()

    def zeta_min(self):
        if len(self.zeta) == 0:
            return None
        return float(np.min(self.zeta))

    def zeta_mean(self):
        if len(self.zeta) == 0:
            return None
        return float(np.mean(self.zeta))

    def seeds(self):
        return self.overshoot.time, self.rocof.time


def _nonzero_rows(M):
    return np.nonzero(np.any(M != 0, axis=1))[0]


def analyze_system(sys, seeds=None, with_sensitivities=True):
    """ Eigen-analysis, extremum search and (optionally) all sensitivities
        for every registered parameter of sys.
    """

    from gridinertia.netmodel import system_derivative

    modal = spectral.eigensolve(sys.A)
    res = residues(modal, sys.B, sys.C)
    tp_seed, tr_seed = seeds if seeds is not None else (None, None)
    overshoot = find_overshoot(res, tp_seed)
    rocof = find_rocof(res, tr_seed)
    oscillatory = modal.oscillatory()
    zeta = np.array([modal.damping[i] for i in oscillatory])
    bundle = MetricBundle(sys, modal, res, overshoot, rocof, oscillatory,
                          zeta)
    if not with_sensitivities:
        return bundle

    groups = spectral.clusters(modal)
    for group in groups:
        log(('repeated eigenvalue {:.6g} (modes {}), using matrix '
             'exponential sensitivities').format(
                 modal.eigenvalues[group[0]], group))
    shaky = spectral.near_defective(modal)
    if shaky:
        log(('ill conditioned modes {}, using matrix exponential '
             'sensitivities').format(shaky))
    direct = bool(groups or shaky)
    rows = _nonzero_rows(np.asarray(sys.C).T)
    cols = _nonzero_rows(np.asarray(sys.B))
    for pid in sys.param_ids():
        dA = system_derivative(sys, pid)
        sens = spectral.sensitivities(modal, dA, res.modes, rows, cols, pid)
        bundle.d_lambda[pid] = sens.dlam
        bundle.d_zeta[pid] = np.array([sens.dzeta[i] for i in oscillatory])
        if direct:
            # eigenvectors of a repeated root may be near parallel
            bundle.d_overshoot[pid] = direct_sensitivity(sys, res, dA,
                                                         overshoot)
            bundle.d_rocof[pid] = direct_sensitivity(sys, res, dA, rocof)
            continue
        rsens = residue_sensitivity(res, sens)
        bundle.d_overshoot[pid] = overshoot_sensitivity(res, rsens, overshoot)
        bundle.d_rocof[pid] = rocof_sensitivity(res, rsens, rocof)
    return bundle
