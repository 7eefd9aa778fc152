""" Dense eigen-analysis with biorthonormal left/right eigenvector pairs and
    first order eigen-sensitivities.

    Conventions: column i of U is the right eigenvector u_i, row i of L is the
    left eigenvector l_i (l_i A = lambda_i l_i), L U = I. The largest entry
    of every u_i is real and positive.
"""

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.csgraph
from gridinertia import current_cfg
from gridinertia.errors import DegenerateSpectrumError, SpectralError


class ModalData():

    def __init__(self, eigenvalues, U, L, a_norm):
        self.eigenvalues = eigenvalues
        self.U = U
        self.L = L
        self.a_norm = a_norm
        self.damping = np.full(len(eigenvalues), np.nan)
        for i in self.oscillatory():
            self.damping[i] = damping_ratio(eigenvalues[i])

    def n_modes(self):
        return len(self.eigenvalues)

    def oscillatory(self):
        """ Indices of modes with positive imaginary part (one per conjugate
            pair).
        """

        return [i for i, lam in enumerate(self.eigenvalues) if lam.imag > 0]

    def conjugate_index(self, i):
        lam = self.eigenvalues[i]
        if lam.imag == 0:
            return i
        dist = np.abs(self.eigenvalues - np.conj(lam))
        return int(np.argmin(dist))

    def right(self, i):
        return self.U[:, i]

    def left(self, i):
        return self.L[i, :]

    def closest_pair(self):
        """ Return (i, j, |lambda_i - lambda_j|) for the closest two
            eigenvalues.
        """

        n = self.n_modes()
        if n < 2:
            return None
        gaps = _gap_matrix(self.eigenvalues)
        i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
        return int(min(i, j)), int(max(i, j)), float(gaps[i, j])


def _gap_matrix(eigenvalues):
    gaps = np.abs(eigenvalues[:, None] - eigenvalues[None, :])
    np.fill_diagonal(gaps, np.inf)
    return gaps


def _groups(eigenvalues, limit):
    """ Connected components of the "closer than limit" relation with at
        least two members.
    """

    if len(eigenvalues) < 2:
        return []
    close = scipy.sparse.csr_matrix(_gap_matrix(eigenvalues) < limit)
    count, labels = scipy.sparse.csgraph.connected_components(
        close, directed=False)
    groups = [np.nonzero(labels == c)[0] for c in range(count)]
    return [[int(i) for i in g] for g in groups if len(g) > 1]


def clusters(modal, tolerance=None):
    """ Groups of modes whose eigenvalues lie within the degeneracy
        tolerance (relative to ||A||) of each other.
    """

    if tolerance is None:
        tolerance = current_cfg().degeneracy_tolerance()
    return _groups(modal.eigenvalues, tolerance * modal.a_norm)


def near_defective(modal, limit=1e5):
    """ Modes whose eigenvalue condition number ||l_i|| ||u_i|| exceeds
        limit, e.g. the split halves of a rounded Jordan block.
    """

    kappa = np.linalg.norm(modal.L, axis=1) * np.linalg.norm(modal.U, axis=0)
    return [int(i) for i in np.nonzero(kappa > limit)[0]]


def eigensolve(A):
    """ Full spectrum of a real square matrix with biorthonormalized
        left/right eigenvector pairs.
    """

    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SpectralError('eigensolve needs a square matrix, got shape {}'
                            ''.format(A.shape))
    if not np.all(np.isfinite(A)):
        raise SpectralError('matrix contains non-finite entries')
    try:
        lam, vl, vr = scipy.linalg.eig(A, left=True, right=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SpectralError('eigenvalue iteration did not converge: {}'
                            ''.format(e))

    n = A.shape[0]
    U = np.array(vr, dtype=complex)
    L = np.array(vl, dtype=complex).conj().T
    for i in range(n):
        k = np.argmax(np.abs(U[:, i]))
        phase = np.conj(U[k, i]) / np.abs(U[k, i])
        U[:, i] *= phase
        U[k, i] = abs(U[k, i])
        if lam[i].imag == 0:
            U[:, i] = U[:, i].real
        s = L[i, :] @ U[:, i]
        if abs(s) < 1e-300:
            raise SpectralError(('mode {} is defective (left and right eigen'
                                 'vectors are orthogonal)').format(i))
        L[i, :] /= s

    a_norm = float(np.linalg.norm(A))
    scale = max(a_norm, 1e-300)
    # repeated eigenvalues: restore L U = I inside each cluster unless the
    # right vectors are near parallel (a defective root)
    limit = current_cfg().degeneracy_tolerance() * scale
    for group in _groups(lam, limit):
        if np.linalg.cond(U[:, group]) > 1e5:
            continue
        L[group, :] = scipy.linalg.solve(L[group, :] @ U[:, group],
                                         L[group, :])
    right_res = np.linalg.norm(A @ U - U * lam[None, :], axis=0)
    left_res = np.linalg.norm(L @ A - lam[:, None] * L, axis=1)
    right_res /= np.maximum(np.linalg.norm(U, axis=0), 1e-300)
    left_res /= np.maximum(np.linalg.norm(L, axis=1), 1e-300)
    worst = max(np.max(right_res, initial=0.0), np.max(left_res, initial=0.0))
    if worst > 1e-9 * scale:
        raise SpectralError(('eigenpair residual {:.3e} exceeds tolerance for'
                             ' ||A|| = {:.3e}').format(worst, a_norm))
    return ModalData(lam, U, L, a_norm)


def damping_ratio(lam):
    """ zeta = -sigma / |lambda| for an oscillatory mode lambda = sigma + i
        omega, omega > 0.
    """

    if lam.imag <= 0:
        raise SpectralError(('damping ratio is only defined for oscillatory '
                             'modes, got lambda = {}').format(lam))
    return -lam.real / abs(lam)


def damping_sensitivity(lam, dlam):
    if lam.imag <= 0:
        raise SpectralError(('damping ratio is only defined for oscillatory '
                             'modes, got lambda = {}').format(lam))
    sigma, omega = lam.real, lam.imag
    dsigma, domega = dlam.real, dlam.imag
    return omega * (sigma * domega - omega * dsigma) / \
        (sigma ** 2 + omega ** 2) ** 1.5


def _coo(dA, n):
    dA = scipy.sparse.coo_matrix(dA)
    if dA.shape != (n, n):
        raise SpectralError('perturbation has shape {}, expected {}'.format(
                            dA.shape, (n, n)))
    return dA


def _projected(modal, dA):
    """ G[j, i] = l_j dA u_i for all mode pairs.
    """

    dA = _coo(dA, modal.n_modes())
    return (modal.L[:, dA.row] * dA.data[None, :]) @ modal.U[dA.col, :]


def eig_sensitivity(modal, dA):
    """ d lambda_i / d alpha = l_i dA u_i for all modes.
    """

    dA = _coo(dA, modal.n_modes())
    return np.einsum('ik,k,ki->i', modal.L[:, dA.row], dA.data,
                     modal.U[dA.col, :])


def _check_separation(modal, i, tolerance=None):
    if tolerance is None:
        tolerance = current_cfg().degeneracy_tolerance()
    lam = modal.eigenvalues
    gaps = np.abs(lam[i] - lam)
    gaps[i] = np.inf
    j = int(np.argmin(gaps)) if len(gaps) > 1 else i
    if j != i and gaps[j] < tolerance * modal.a_norm:
        raise DegenerateSpectrumError(min(i, j), max(i, j), float(gaps[j]))


def _dyad_from_projection(modal, G, i, rows, cols, members=None):
    """ members are the modes of the cluster of i (i included); their mutual
        terms cancel in the summed cluster dyad and are left out.
    """

    skip = [i] if members is None else list(members)
    lam = modal.eigenvalues
    diff = lam[i] - lam
    diff[skip] = 1.0
    c_right = G[:, i] / diff
    c_right[skip] = 0.0
    c_left = -G[i, :] / diff
    c_left[skip] = 0.0
    U, L = modal.U, modal.L
    term1 = np.outer(U[rows, :] @ c_right, L[i, cols])
    term2 = np.outer(U[rows, i], c_left @ L[:, cols])
    return term1 - term2


def dyad_derivative(modal, dA, i, rows=None, cols=None):
    """ d(u_i l_i)/d alpha restricted to the given rows and columns (all by
        default). Raises DegenerateSpectrumError if another eigenvalue is
        within the degeneracy tolerance of lambda_i.
    """

    n = modal.n_modes()
    rows = np.arange(n) if rows is None else np.asarray(rows, dtype=int)
    cols = np.arange(n) if cols is None else np.asarray(cols, dtype=int)
    _check_separation(modal, i)
    return _dyad_from_projection(modal, _projected(modal, dA), i, rows, cols)


class EigSensitivity():
    """ Eigen-sensitivities of all modes with respect to one parameter.

        dyads maps a mode index to d(u_i l_i)/d alpha restricted to
        rows x cols. For a mode in a cluster of repeated eigenvalues the
        dyads of the cluster only sum to the derivative of the cluster's
        spectral projector, and dlam is NaN. projected holds
        G[j, i] = l_j dA u_i.
    """

    def __init__(self, param, dlam, dzeta, dyads, rows, cols, projected,
                 groups):
        self.param = param
        self.dlam = dlam
        self.dzeta = dzeta
        self.dyads = dyads
        self.rows = rows
        self.cols = cols
        self.projected = projected
        self.groups = groups

    def members(self, i):
        for group in self.groups:
            if i in group:
                return group
        return [i]


def sensitivities(modal, dA, modes=None, rows=None, cols=None, param=None):
    """ All first order sensitivities for one parameter. Eigen-dyad
        derivatives are formed for the given modes only.

        Repeated real eigenvalues are handled per cluster; a pair split off
        the real axis by rounding counts as real and gets a zero damping
        ratio derivative. A repeated oscillatory mode has no damping ratio
        derivative and raises DegenerateSpectrumError.
    """

    n = modal.n_modes()
    modes = list(range(n)) if modes is None else list(modes)
    rows = np.arange(n) if rows is None else np.asarray(rows, dtype=int)
    cols = np.arange(n) if cols is None else np.asarray(cols, dtype=int)
    tolerance = current_cfg().degeneracy_tolerance()
    groups = clusters(modal, tolerance)
    limit = tolerance * modal.a_norm
    lam = modal.eigenvalues
    for group in groups:
        if any(abs(lam[i].imag) >= limit for i in group):
            i, j = group[0], group[1]
            raise DegenerateSpectrumError(i, j, float(abs(lam[i] - lam[j])))
    G = _projected(modal, dA)
    dlam = np.diag(G).copy()
    for group in groups:
        dlam[group] = np.nan
    dzeta = np.full(n, np.nan)
    for i in modal.oscillatory():
        if np.isnan(dlam[i]):
            dzeta[i] = 0.0
        else:
            dzeta[i] = damping_sensitivity(lam[i], dlam[i])
    result = EigSensitivity(param, dlam, dzeta, {}, rows, cols, G, groups)
    for i in modes:
        result.dyads[i] = _dyad_from_projection(modal, G, i, rows, cols,
                                                result.members(i))
    return result
