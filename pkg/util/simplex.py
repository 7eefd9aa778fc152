""" Dense two-phase simplex solver for small linear programs

        minimize    c x
        subject to  A_ub x <= b_ub
                    A_eq x  = b_eq
                    lo <= x <= hi

    Pivoting follows Bland's rule (smallest entering index, ties in the ratio
    test broken by the smallest basic variable index), so results are
    deterministic and cycling cannot occur.
"""

import numpy as np


class SimplexResult():
    """ status is one of 'optimal', 'infeasible', 'unbounded' and
        'iteration-limit'. duals hold one multiplier per inequality row
        (<= 0) followed by one per equality row.
    """

    def __init__(self, status, x=None, objective=None, duals=None,
                 iterations=0):
        self.status = status
        self.x = x
        self.objective = objective
        self.duals = duals
        self.iterations = iterations

    def success(self):
        return self.status == 'optimal'


class _StandardForm():
    """ min c y  s.t.  M y = b, y >= 0 with b >= 0, built from the general
        form by shifting bounds, adding slack variables and flipping rows
        with a negative right hand side.
    """

    def __init__(self, c, A_ub, b_ub, A_eq, b_eq, bounds):
        n = len(c)
        columns = []
        offset = np.zeros(n)
        for j, (lo, hi) in enumerate(bounds):
            col = np.zeros(n)
            if np.isfinite(lo):
                col[j] = 1.0
                offset[j] = lo
                columns.append((col, hi - lo if np.isfinite(hi) else None))
            elif np.isfinite(hi):
                col[j] = -1.0
                offset[j] = hi
                columns.append((col, None))
            else:
                neg = np.zeros(n)
                col[j] = 1.0
                neg[j] = -1.0
                columns.append((col, None))
                columns.append((neg, None))
        T = np.column_stack([col for col, _ in columns]) if columns \
            else np.zeros((n, 0))
        self.transform = T
        self.offset = offset
        nv = T.shape[1]

        rows_ub = [A_ub @ T] if len(b_ub) else []
        rhs_ub = [b_ub - A_ub @ offset] if len(b_ub) else []
        upper = [(k, width) for k, (_, width) in enumerate(columns)
                 if width is not None]
        if upper:
            U = np.zeros((len(upper), nv))
            for r, (k, _) in enumerate(upper):
                U[r, k] = 1.0
            rows_ub.append(U)
            rhs_ub.append(np.array([w for _, w in upper]))
        G = np.vstack(rows_ub) if rows_ub else np.zeros((0, nv))
        h = np.concatenate(rhs_ub) if rhs_ub else np.zeros(0)
        E = A_eq @ T if len(b_eq) else np.zeros((0, nv))
        e = b_eq - A_eq @ offset if len(b_eq) else np.zeros(0)

        m_ub, m_eq = G.shape[0], E.shape[0]
        M = np.zeros((m_ub + m_eq, nv + m_ub))
        M[:m_ub, :nv] = G
        M[:m_ub, nv:] = np.eye(m_ub)
        M[m_ub:, :nv] = E
        b = np.concatenate((h, e))
        self.flip = np.where(b < 0, -1.0, 1.0)
        self.M = M * self.flip[:, None]
        self.b = b * self.flip
        self.c = np.concatenate((c @ T, np.zeros(m_ub)))
        self.n_structural = nv
        self.m_ub = m_ub
        self.m_eq = m_eq
        self.n_user_ub = len(b_ub)

    def to_x(self, y):
        return self.offset + self.transform @ y[:self.n_structural]


def _iterate(M, b, c, basis, tol, max_iterations, allowed):
    """ Revised simplex iterations from a feasible basis. Returns (status,
        basis, iterations).
    """

    for it in range(max_iterations):
        Bm = M[:, basis]
        try:
            xB = np.linalg.solve(Bm, b)
            y = np.linalg.solve(Bm.T, c[basis])
        except np.linalg.LinAlgError:
            return 'singular', basis, it
        reduced = c - M.T @ y
        in_basis = set(basis)
        entering = None
        for j in range(M.shape[1]):
            if allowed[j] and j not in in_basis and reduced[j] < -tol:
                entering = j
                break
        if entering is None:
            return 'optimal', basis, it
        d = np.linalg.solve(Bm, M[:, entering])
        candidates = [i for i in range(len(d)) if d[i] > tol]
        if not candidates:
            return 'unbounded', basis, it
        ratios = [max(xB[i], 0.0) / d[i] for i in candidates]
        best = min(ratios)
        ties = [i for i, r in zip(candidates, ratios)
                if r <= best + tol * max(1.0, abs(best))]
        leaving = min(ties, key=lambda i: basis[i])
        basis = list(basis)
        basis[leaving] = entering
    return 'iteration-limit', basis, max_iterations


def solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None,
          tol=1e-9, max_iterations=None):
    c = np.asarray(c, dtype=float)
    n = len(c)
    A_ub = np.zeros((0, n)) if A_ub is None else \
        np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else \
        np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    if bounds is None:
        bounds = [(0.0, np.inf)] * n
    bounds = [(-np.inf if lo is None else float(lo),
               np.inf if hi is None else float(hi)) for lo, hi in bounds]
    for lo, hi in bounds:
        if lo > hi:
            return SimplexResult('infeasible')

    sf = _StandardForm(c, A_ub, b_ub, A_eq, b_eq, bounds)
    m, nv = sf.M.shape
    if max_iterations is None:
        max_iterations = 50 * (m + nv) + 100

    # phase 1: artificial variables for rows without a usable slack
    basis = []
    art_cols = []
    for i in range(m):
        slack = sf.n_structural + i if i < sf.m_ub else None
        if slack is not None and sf.flip[i] > 0:
            basis.append(slack)
        else:
            art_cols.append(i)
            basis.append(nv + len(art_cols) - 1)
    A1 = np.zeros((m, len(art_cols)))
    for k, i in enumerate(art_cols):
        A1[i, k] = 1.0
    M1 = np.hstack((sf.M, A1))
    c1 = np.concatenate((np.zeros(nv), np.ones(len(art_cols))))
    allowed = np.ones(M1.shape[1], dtype=bool)
    iterations = 0
    b = sf.b.copy()
    if art_cols:
        status, basis, it = _iterate(M1, b, c1, basis, tol, max_iterations,
                                     allowed)
        iterations += it
        if status != 'optimal':
            return SimplexResult('iteration-limit' if status ==
                                 'iteration-limit' else 'infeasible',
                                 iterations=iterations)
        xB = np.linalg.solve(M1[:, basis], b)
        infeasibility = sum(xB[i] for i, j in enumerate(basis) if j >= nv)
        if infeasibility > 1e-7 * max(1.0, np.max(np.abs(b), initial=0.0)):
            return SimplexResult('infeasible', iterations=iterations)

        # drive remaining (zero level) artificials out of the basis
        keep = list(range(m))
        for r in range(m):
            if basis[r] < nv:
                continue
            row = np.linalg.solve(M1[:, basis].T, np.eye(m)[r]) @ M1
            pivot = None
            in_basis = set(basis)
            for j in range(nv):
                if j not in in_basis and abs(row[j]) > 1e-7:
                    pivot = j
                    break
            if pivot is None:
                keep.remove(r)
            else:
                basis[r] = pivot
        row_ids = keep
        basis = [basis[r] for r in keep]
    else:
        row_ids = list(range(m))

    M2 = sf.M[row_ids, :]
    b2 = b[row_ids]
    status, basis, it = _iterate(M2, b2, sf.c, basis, tol, max_iterations,
                                 np.ones(nv, dtype=bool))
    iterations += it
    if status != 'optimal':
        return SimplexResult('infeasible' if status == 'singular' else status,
                             iterations=iterations)

    Bm = M2[:, basis]
    y = np.zeros(nv)
    y[basis] = np.linalg.solve(Bm, b2)
    x = sf.to_x(np.maximum(y, 0.0))
    row_duals = np.zeros(m)
    row_duals[row_ids] = np.linalg.solve(Bm.T, sf.c[basis])
    row_duals = row_duals * sf.flip
    duals = np.concatenate((row_duals[:sf.n_user_ub],
                            row_duals[sf.m_ub:]))
    return SimplexResult('optimal', x, float(c @ x), duals, iterations)
