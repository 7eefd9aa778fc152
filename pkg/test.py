import contextlib
import copy
import io
import json
import math
import os
import shutil
import tempfile
import unittest
from collections import OrderedDict
import numpy as np
import scipy.linalg
import scipy.optimize
from gridinertia import create_context
from gridinertia import cli, spectral
from gridinertia.capability import (CapabilityBall, GainConstraint,
                                    MeasurementSet, dual_constraint,
                                    dual_order, fit_norm_ball,
                                    load_measurements, norm_order,
                                    verify_duality)
from gridinertia.errors import (CapabilityError, CaseError, ConfigError,
                                DegenerateSpectrumError, InputError,
                                KronReductionError, MeasurementError,
                                NumericalError, ResponseError,
                                SpectralError, VerificationError)
from gridinertia.models import DeviceGains, LinearSystem
from gridinertia.netmodel import (attach_devices, build_base_system,
                                  build_system, descriptor_response,
                                  frequency_response, frequency_state,
                                  kron_reduce, load_case, load_gains,
                                  system_derivative)
from gridinertia.placement import (PlacementConfig, build_lp, evaluate,
                                   grid_search, load_placement_config,
                                   min_capacity_place, place, run_scenarios,
                                   solve_lp)
from gridinertia.response import (analyze_system, direct_sensitivity,
                                  find_overshoot, find_rocof,
                                  overshoot_sensitivity, residue_sensitivity,
                                  residues, rocof_sensitivity,
                                  simulate_oracle, step_response,
                                  trajectories)
from gridinertia.subroutines import dump_json_document
from util import simplex
from util.synthetic import (box_cloud, elliptical_cloud, five_area_case,
                            random_stable_system, second_order_system)

CASE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'docs',
                        'cases')


def case_doc(name):
    with open(os.path.join(CASE_DIR, name + '.json')) as f:
        return json.load(f, object_pairs_hook=OrderedDict)


def case_from_doc(doc):
    return load_case(json.dumps(doc))


def reference_case(name):
    return case_from_doc(case_doc(name))


def match_modes(reference, other):
    """ Index into other of the eigenvalue closest to each reference one.
    """

    return [int(np.argmin(np.abs(other - lam))) for lam in reference]


def three_bus_gains():
    return DeviceGains(OrderedDict([('dev1', (0.3, 0.5)),
                                    ('dev2', (0.2, 0.4))]))


def uniform_devices_doc(name, t1, t2):
    """ Case document with every device given the same time constants.
    """

    doc = case_doc(name)
    for dev in doc['devices']:
        dev['t1'] = t1
        dev['t2'] = t2
    return doc


class GridInertiaTestCase(unittest.TestCase):
    """ Common set up of all test cases.

        If just called as $ python3 test.py, the bundled simplex solver is
        used for all linear programs. The environment variable GI_LP_SOLVER
        selects another backend. Example:

            $ GI_LP_SOLVER=highs python3 test.py

        runs the placement tests with the HiGHS solver shipped with SciPy.
    """

    def setUp(self):
        """ Set up a testing context logging into a tmp directory.
        """

        self.tmp_dir = tempfile.mkdtemp()
        self.lp_solver = os.environ.get('GI_LP_SOLVER', 'simplex')
        self.cfg = create_context(lp_solver=self.lp_solver,
                                  log_file=os.path.join(self.tmp_dir,
                                                        'gi_log.txt'))

    def tearDown(self):
        """ Remove tmp directory.
        """

        shutil.rmtree(self.tmp_dir)


class NetmodelTestCase(GridInertiaTestCase):

    def test_minimal_case(self):
        """ Test loading the smallest valid case and the load defaults.
        """

        doc = {'buses': [{'id': 1}, {'id': 2}],
               'lines': [{'from': 1, 'to': 2, 'susceptance': 5.0}],
               'generators': [{'bus': 1, 'inertia': 6.0}],
               'loads': [{'bus': 2, 'power': 1.0}]}
        case = case_from_doc(doc)
        self.assertEqual(len(case.buses), 2)
        self.assertEqual(case.bus_ids(), ['1', '2'])
        self.assertEqual(case.loads[0].motor_fraction, 0.1)
        self.assertAlmostEqual(case.bus('1').omega0, 2 * math.pi * 50.0)

    def test_case_errors(self):
        """ Test that invalid case documents are rejected with a message
            naming the offending entry.
        """

        doc = case_doc('three_bus')
        doc['lines'][0]['to'] = '7'
        with self.assertRaisesRegex(CaseError, r'line\[0\]'):
            case_from_doc(doc)

        doc = case_doc('three_bus')
        doc['lines'][1]['susceptance'] = -1.0
        with self.assertRaisesRegex(CaseError, r'line\[1\]'):
            case_from_doc(doc)

        doc = case_doc('three_bus')
        doc['buses'].append({'id': '4'})
        with self.assertRaisesRegex(CaseError, 'not connected'):
            case_from_doc(doc)

        doc = case_doc('three_bus')
        doc['devices'][0]['t1'] = 0.0
        with self.assertRaisesRegex(CaseError, 'dev1'):
            case_from_doc(doc)

        with self.assertRaisesRegex(CaseError, 'line 1'):
            load_case('{"buses": [}')

    def test_single_machine_spectrum(self):
        """ Test the swing equation of a single machine against its closed
            form roots.
        """

        case = reference_case('single_machine')
        base = build_base_system(case)
        self.assertEqual(base.state_labels, ['delta_G[1]', 'omega_G[1]'])
        self.assertAlmostEqual(base.A[0, 1], 1.0)
        self.assertAlmostEqual(base.A[1, 1], -1.0 / 10.0)
        modal = spectral.eigensolve(base.A)
        expected = np.roots([1.0, 0.1, 0.0])
        for lam in expected:
            self.assertLess(np.min(np.abs(modal.eigenvalues - lam)), 1e-10)

    def test_state_layout(self):
        """ Test state ordering and labels of the closed loop model.
        """

        sys = build_system(reference_case('three_bus'))
        self.assertEqual(sys.state_labels,
                         ['delta_G[1]', 'delta_G[2]', 'omega_G[1]',
                          'omega_G[2]', 'delta_L[3]', 'omega_L[3]',
                          'P_dev[dev1]', 'omega_dev[dev1]', 'P_dev[dev2]',
                          'omega_dev[dev2]'])
        self.assertEqual(sys.input_labels, ['dP[3]'])
        self.assertEqual(sys.output_labels, ['omega[1]', 'omega[2]'])
        self.assertAlmostEqual(sys.B[5, 0], -0.1 / (0.1 * 1.5 * 1.5))

    def test_kron_reduce(self):
        """ Test Kron reduction on scalar and decoupled blocks.
        """

        red = kron_reduce([[2.0]], [[1.0]], [[1.0]], [[2.0]])
        self.assertAlmostEqual(red[0, 0], 1.5)
        A11 = np.array([[1.0, 2.0], [3.0, 4.0]])
        red = kron_reduce(A11, np.zeros((2, 1)), np.ones((1, 2)), [[3.0]])
        np.testing.assert_array_equal(red, A11)
        with self.assertRaises(KronReductionError):
            kron_reduce(A11, np.ones((2, 2)), np.ones((2, 2)),
                        [[1.0, 1.0], [1.0, 1.0]])

    def test_kron_reduce_frequency_response(self):
        """ Test that the reduced system has the frequency response of the
            partitioned differential-algebraic system.
        """

        rng = np.random.default_rng(3)
        A = rng.normal(size=(5, 5))
        A[3:, 3:] += 4.0 * np.eye(2)
        B = rng.normal(size=(3, 1))
        C = rng.normal(size=(1, 3))
        red = kron_reduce(A[:3, :3], A[:3, 3:], A[3:, :3], A[3:, 3:])
        for s in 1j * rng.uniform(0.1, 10.0, 10):
            reduced = C @ np.linalg.solve(s * np.eye(3) - red, B)
            E = np.zeros((5, 5))
            E[:3, :3] = np.eye(3)
            G = np.vstack((B, np.zeros((2, 1))))
            full = np.hstack((C, np.zeros((1, 2)))) @ \
                np.linalg.solve(s * E - A, G)
            self.assertLess(abs(reduced[0, 0] - full[0, 0]),
                            1e-9 * abs(full[0, 0]))

    def test_descriptor_oracle(self):
        """ Test the assembled model against the un-reduced network model,
            with and without an algebraic bus.
        """

        doc = case_doc('three_bus')
        static = copy.deepcopy(doc)
        static['loads'][0]['motor_fraction'] = 0.0
        static['disturbances'] = [{'bus': '1', 'magnitude': 0.1},
                                  {'bus': '2', 'magnitude': -0.05}]
        for case in [case_from_doc(doc), case_from_doc(static)]:
            base = build_base_system(case)
            for s in [1j, 0.3 + 2.0j, 5.0j]:
                reduced = frequency_response(base, s)
                full = descriptor_response(case, s)
                np.testing.assert_allclose(reduced, full, rtol=1e-9,
                                           atol=1e-12)
        self.assertNotIn('omega_L[3]',
                         build_base_system(case_from_doc(static)).state_labels)

    def test_static_load_damping_logged(self):
        """ Test that damping of a load without motor share, which is
            eliminated with its bus, is reported in the log.
        """

        doc = case_doc('three_bus')
        doc['loads'][0]['motor_fraction'] = 0.0
        doc['disturbances'] = [{'bus': '1', 'magnitude': 0.1}]
        case_from_doc(doc)
        with open(os.path.join(self.tmp_dir, 'gi_log.txt')) as f:
            log_text = f.read()
        self.assertIn('load damping 3.75 pu at bus 3 is ignored', log_text)

    def test_disturbance_at_static_bus(self):
        """ Test that a disturbance without a frequency state is rejected.
        """

        doc = case_doc('three_bus')
        doc['loads'][0]['motor_fraction'] = 0.0
        with self.assertRaisesRegex(CaseError, r'disturbance\[0\]'):
            build_base_system(case_from_doc(doc))

    def test_registry(self):
        """ Test position and value of the single nonzero entry of dA/dalpha.
        """

        doc = case_doc('single_machine')
        for t1, t2, kind, value, offset in [(0.05, 0.05, 'inertia', 400.0, 0),
                                            (0.1, 0.2, 'damping', 50.0, 1),
                                            (1.0, 1.0, 'inertia', 1.0, 0)]:
            doc['devices'][0]['t1'] = t1
            doc['devices'][0]['t2'] = t2
            case = case_from_doc(doc)
            base = build_base_system(case)
            sys = attach_devices(base, case, case.zero_gains())
            row, col, val = sys.registry['dev1.' + kind]
            self.assertAlmostEqual(val, value, places=9)
            self.assertEqual(row, base.n_states() + offset)
            self.assertEqual(col, frequency_state(base, '1'))
            dA = system_derivative(sys, 'dev1.' + kind).toarray()
            self.assertEqual(np.count_nonzero(dA), 1)
        with self.assertRaises(CaseError):
            system_derivative(sys, 'dev9.inertia')

    def test_system_derivative_finite_difference(self):
        """ Test dA/dalpha against a forward difference of the assembled
            matrices.
        """

        case = reference_case('three_bus')
        gains = three_bus_gains()
        base = build_base_system(case)
        sys = attach_devices(base, case, gains)
        eps = 1e-6
        pids = case.param_ids()
        for k, pid in enumerate(pids):
            vec = gains.as_vector(pids)
            vec[k] += eps
            other = attach_devices(base, case, gains.updated(pids, vec))
            fd = (other.A - sys.A) / eps
            np.testing.assert_allclose(fd,
                                       system_derivative(sys, pid).toarray(),
                                       atol=1e-8 * max(1.0, np.max(fd)))

    def test_zero_gain_spectrum_split(self):
        """ Test that zero gains leave the grid spectrum and add the device
            poles -1/T1, -1/T2.
        """

        case = reference_case('three_bus')
        base = build_base_system(case)
        sys = attach_devices(base, case, case.zero_gains())
        expected = list(np.linalg.eigvals(base.A))
        for dev in case.devices:
            expected += [-1.0 / dev.t1, -1.0 / dev.t2]
        actual = spectral.eigensolve(sys.A).eigenvalues
        self.assertEqual(len(actual), len(expected))
        for lam in expected:
            self.assertLess(np.min(np.abs(actual - lam)), 1e-8)

    def test_zero_gain_transparency(self):
        """ Test that devices with zero gains do not change the outputs.
        """

        case = reference_case('three_bus')
        base = build_base_system(case)
        sys = attach_devices(base, case, case.zero_gains())
        for s in [0.5j, 2.0j, 1.0 + 1.0j]:
            np.testing.assert_allclose(frequency_response(sys, s),
                                       frequency_response(base, s),
                                       rtol=1e-10, atol=1e-14)
        times = np.linspace(0.0, 10.0, 101)
        with_dev = simulate_oracle(sys, 10.0).output(times)
        without = simulate_oracle(base, 10.0).output(times)
        scale = np.max(np.abs(without))
        self.assertLess(np.max(np.abs(with_dev - without)), 1e-7 * scale)

    def test_load_gains(self):
        """ Test reading a gains document.
        """

        case = reference_case('three_bus')
        gains = load_gains('{"gains": {"dev2": {"inertia": 0.4, '
                           '"damping": 0.1}}}', case)
        self.assertEqual(gains.inertia('dev2'), 0.4)
        self.assertEqual(gains.damping('dev1'), 0.0)
        with self.assertRaisesRegex(CaseError, 'unknown device'):
            load_gains('{"gains": {"devX": {"inertia": 1}}}', case)
        with self.assertRaisesRegex(CaseError, 'negative'):
            load_gains('{"gains": {"dev1": {"inertia": -1}}}', case)


class SpectralTestCase(GridInertiaTestCase):

    def test_diagonal(self):
        """ Test eigenpairs of a diagonal matrix.
        """

        modal = spectral.eigensolve(np.diag([-1.0, -2.0]))
        self.assertEqual(sorted(modal.eigenvalues.real), [-2.0, -1.0])
        np.testing.assert_allclose(np.abs(modal.U), np.abs(modal.L.T),
                                   atol=1e-15)
        np.testing.assert_allclose(np.sort(np.abs(modal.U), axis=None),
                                   [0.0, 0.0, 1.0, 1.0])

    def test_two_by_two(self):
        """ Test a complex pair against the characteristic polynomial.
        """

        A = np.array([[0.0, 1.0], [-1.0, -1.0]])
        modal = spectral.eigensolve(A)
        root = 1j * math.sqrt(3)
        for lam in [(-1 + root) / 2, (-1 - root) / 2]:
            self.assertLess(np.min(np.abs(modal.eigenvalues - lam)), 1e-12)
        for i in range(2):
            right, left = modal.right(i), modal.left(i)
            lam = modal.eigenvalues[i]
            self.assertLess(np.linalg.norm(A @ right - lam * right), 1e-12)
            self.assertLess(np.linalg.norm(left @ A - lam * left), 1e-12)

    def test_normalization(self):
        """ Test biorthonormality, phase convention and spectral
            reconstruction on a random stable matrix.
        """

        A, _, _ = random_stable_system(20, seed=4)
        modal = spectral.eigensolve(A)
        np.testing.assert_allclose(modal.L @ modal.U, np.eye(20), atol=1e-9)
        recon = (modal.U * modal.eigenvalues[None, :]) @ modal.L
        self.assertLess(np.linalg.norm(recon - A), 1e-8)
        self.assertLess(np.max(np.abs(recon.imag)), 1e-8)
        for i in range(20):
            u = modal.right(i)
            k = np.argmax(np.abs(u))
            self.assertEqual(u[k].imag, 0.0)
            self.assertGreater(u[k].real, 0.0)

    def test_non_finite(self):
        """ Test that matrices with non-finite entries are rejected.
        """

        with self.assertRaises(SpectralError):
            spectral.eigensolve(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_damping_ratio(self):
        """ Test damping ratios of simple modes.
        """

        self.assertAlmostEqual(spectral.damping_ratio(-1 + 1j),
                               1 / math.sqrt(2), places=12)
        self.assertAlmostEqual(spectral.damping_ratio(-3 + 4j), 0.6,
                               places=12)
        self.assertEqual(spectral.damping_ratio(5j), 0.0)
        with self.assertRaises(SpectralError):
            spectral.damping_ratio(-1.0 + 0j)

    def test_damping_sensitivity(self):
        """ Test the damping ratio derivative against its closed form and a
            finite difference.
        """

        self.assertAlmostEqual(spectral.damping_sensitivity(-1 + 1j, 1.0),
                               -1 / 2 ** 1.5, places=12)
        self.assertEqual(spectral.damping_sensitivity(-1 + 1j, 0.0), 0.0)
        rng = np.random.default_rng(7)
        for _ in range(10):
            lam = complex(-rng.uniform(0.1, 2.0), rng.uniform(0.1, 5.0))
            dlam = complex(rng.normal(), rng.normal())
            eps = 1e-7
            fd = (spectral.damping_ratio(lam + eps * dlam) -
                  spectral.damping_ratio(lam - eps * dlam)) / (2 * eps)
            analytic = spectral.damping_sensitivity(lam, dlam)
            self.assertLess(abs(fd - analytic), 1e-6 * max(abs(fd), 1.0))

    def test_eig_sensitivity_diagonal(self):
        """ Test eigenvalue sensitivity of a decoupled perturbation.
        """

        modal = spectral.eigensolve(np.diag([-1.0, -2.0]))
        dA = np.zeros((2, 2))
        dA[0, 0] = 1.0
        dlam = spectral.eig_sensitivity(modal, dA)
        i = int(np.argmin(np.abs(modal.eigenvalues + 1.0)))
        self.assertAlmostEqual(dlam[i], 1.0)
        self.assertAlmostEqual(dlam[1 - i], 0.0)

    def test_eig_sensitivity_finite_difference(self):
        """ Test eigenvalue sensitivities against central differences,
            including the second order decay of the difference error.
        """

        A, _, _ = random_stable_system(10, seed=11)
        modal = spectral.eigensolve(A)
        dA = np.zeros((10, 10))
        dA[3, 7] = 1.0
        dlam = spectral.eig_sensitivity(modal, dA)

        def fd(eps):
            hi = np.linalg.eigvals(A + eps * dA)
            lo = np.linalg.eigvals(A - eps * dA)
            return (hi[match_modes(modal.eigenvalues, hi)] -
                    lo[match_modes(modal.eigenvalues, lo)]) / (2 * eps)

        err = np.abs(fd(1e-6) - dlam)
        self.assertLess(np.max(err), 1e-5 * np.max(np.abs(dlam)))
        coarse = np.max(np.abs(fd(1e-2) - dlam))
        fine = np.max(np.abs(fd(1e-3) - dlam))
        self.assertLess(fine, coarse / 10.0)

        for i in modal.oscillatory():
            j = modal.conjugate_index(i)
            self.assertLess(abs(dlam[i] - np.conj(dlam[j])),
                            1e-12 * max(1.0, abs(dlam[i])))

    def test_dyad_invariant_eigenvector(self):
        """ Test that a perturbation along an eigenvector of a symmetric
            matrix leaves its eigen-dyad unchanged.
        """

        rng = np.random.default_rng(2)
        Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        A = Q @ np.diag([-1.0, -2.0, -3.0, -4.0]) @ Q.T
        modal = spectral.eigensolve(A)
        i = int(np.argmin(np.abs(modal.eigenvalues + 1.0)))
        u = modal.right(i).real
        d = spectral.dyad_derivative(modal, np.outer(u, u), i)
        self.assertLess(np.max(np.abs(d)), 1e-10)

    def test_dyad_finite_difference(self):
        """ Test eigen-dyad derivatives against central differences.
        """

        A, _, _ = random_stable_system(8, seed=5)
        modal = spectral.eigensolve(A)
        dA = np.zeros((8, 8))
        dA[2, 6] = 1.0
        eps = 1e-6
        hi = spectral.eigensolve(A + eps * dA)
        lo = spectral.eigensolve(A - eps * dA)
        ih = match_modes(modal.eigenvalues, hi.eigenvalues)
        il = match_modes(modal.eigenvalues, lo.eigenvalues)
        for i in range(8):
            analytic = spectral.dyad_derivative(modal, dA, i)
            fd = (np.outer(hi.right(ih[i]), hi.left(ih[i])) -
                  np.outer(lo.right(il[i]), lo.left(il[i]))) / (2 * eps)
            self.assertLess(np.max(np.abs(fd - analytic)),
                            1e-4 * np.max(np.abs(fd)))

    def test_degenerate_pair(self):
        """ Test that eigenvector derivatives of clashing modes are refused.
        """

        modal = spectral.eigensolve(np.diag([-1.0, -1.0 - 1e-14, -2.0]))
        dA = np.zeros((3, 3))
        dA[0, 1] = 1.0
        i = int(np.argmin(np.abs(modal.eigenvalues + 1.0)))
        with self.assertRaises(DegenerateSpectrumError):
            spectral.dyad_derivative(modal, dA, i)
        pair = modal.closest_pair()
        self.assertLess(pair[2], 1e-13)

    def test_repeated_eigenvalue_cluster(self):
        """ Test that the eigen-dyads of a repeated real eigenvalue sum to
            the derivative of the cluster's spectral projector.
        """

        rng = np.random.default_rng(4)
        V = rng.normal(size=(4, 4)) + 3.0 * np.eye(4)
        A = V @ np.diag([-1.0, -1.0, -3.0, -4.0]) @ np.linalg.inv(V)
        dA = rng.normal(size=(4, 4))
        modal = spectral.eigensolve(A)
        np.testing.assert_allclose(modal.L @ modal.U, np.eye(4), atol=1e-10)
        groups = spectral.clusters(modal)
        self.assertEqual(len(groups), 1)
        group = groups[0]
        self.assertEqual(sorted(np.round(modal.eigenvalues[group].real, 6)),
                         [-1.0, -1.0])

        sens = spectral.sensitivities(modal, dA)
        self.assertTrue(np.all(np.isnan(sens.dlam[group])))
        others = [i for i in range(4) if i not in group]
        self.assertTrue(np.all(np.isfinite(sens.dlam[others])))
        analytic = sum(sens.dyads[i] for i in group)

        def projector(M):
            other = spectral.eigensolve(M)
            near = np.argsort(np.abs(other.eigenvalues + 1.0))[:2]
            return sum(np.outer(other.right(i), other.left(i)) for i in near)

        eps = 1e-4
        fd = (projector(A + eps * dA) - projector(A - eps * dA)) / (2 * eps)
        self.assertLess(np.max(np.abs(fd - analytic)),
                        1e-4 * np.max(np.abs(fd)))

    def test_near_defective(self):
        """ Test that the split halves of a perturbed Jordan block are
            reported as ill conditioned and separated modes are not.
        """

        modal = spectral.eigensolve([[-1.0, 1.0], [1e-12, -1.0]])
        self.assertEqual(spectral.near_defective(modal), [0, 1])
        self.assertEqual(spectral.clusters(modal), [])
        modal = spectral.eigensolve(np.diag([-1.0, -2.0]))
        self.assertEqual(spectral.near_defective(modal), [])

    def test_repeated_oscillatory_mode(self):
        """ Test that a repeated oscillatory mode is refused, it has no
            damping ratio derivative.
        """

        block = np.array([[-0.1, 1.0], [-1.0, -0.1]])
        A = np.zeros((4, 4))
        A[:2, :2] = block
        A[2:, 2:] = block
        dA = np.zeros((4, 4))
        dA[0, 2] = 1.0
        modal = spectral.eigensolve(A)
        with self.assertRaises(DegenerateSpectrumError):
            spectral.sensitivities(modal, dA)


class ResponseTestCase(GridInertiaTestCase):

    def residue_set(self, A, B, C):
        return residues(spectral.eigensolve(A), B, C)

    def test_scalar_lag(self):
        """ Test residues and step response of a first order lag.
        """

        res = self.residue_set([[-1.0]], [[1.0]], [[1.0]])
        self.assertAlmostEqual(res.r[0, 0, 0].real, 1.0)
        self.assertAlmostEqual(res.k[0, 0, 0].real, 1.0)
        self.assertAlmostEqual(step_response(res, 40.0)[0, 0], 1.0)
        self.assertAlmostEqual(step_response(res, 1.0)[0, 0],
                               1.0 - math.exp(-1.0), places=14)

    def test_decoupled_residues(self):
        """ Test residues of decoupled modes.
        """

        res = self.residue_set(np.diag([-1.0, -2.0]), np.eye(2), np.eye(2))
        for i, lam in enumerate(res.eigenvalues):
            k = int(round(-lam.real)) - 1
            expected = np.zeros((2, 2))
            expected[k, k] = 1.0
            np.testing.assert_allclose(res.r[i], expected, atol=1e-14)

    def test_dc_value(self):
        """ Test that the step coefficients sum to the DC gain.
        """

        A, B, C = random_stable_system(12, 2, 3, seed=8)
        res = self.residue_set(A, B, C)
        dc = -C @ np.linalg.solve(A, B)
        np.testing.assert_allclose(res.dc_value(), dc, rtol=1e-9,
                                   atol=1e-12)

    def test_initial_values(self):
        """ Test that the step starts at rest with slope CB.
        """

        A, B, C = random_stable_system(6, 2, 2, seed=9)
        res = self.residue_set(A, B, C)
        np.testing.assert_allclose(step_response(res, 0.0), 0.0, atol=1e-12)
        np.testing.assert_allclose(step_response(res, 0.0, 1), C @ B,
                                   rtol=1e-10, atol=1e-12)
        with self.assertRaises(ResponseError):
            step_response(res, -1.0)

    def test_second_order_overshoot(self):
        """ Test peak time and overshoot of a second order system.
        """

        A, B, C = second_order_system(0.5, 1.0)
        res = self.residue_set(A, B, C)
        ext = find_overshoot(res)
        self.assertEqual(ext.kind[0, 0], 'interior')
        self.assertAlmostEqual(ext.time[0, 0], math.pi / math.sqrt(0.75),
                               delta=1e-6)
        self.assertAlmostEqual(ext.time[0, 0], 3.62760, delta=1e-5)
        dc = res.dc_value()[0, 0]
        self.assertAlmostEqual((ext.value[0, 0] - dc) / dc, 0.16303,
                               delta=1e-5)
        self.assertAlmostEqual((ext.value[0, 0] - dc) / dc,
                               math.exp(-math.pi * 0.5 / math.sqrt(0.75)),
                               delta=1e-9)

    def test_monotone_response(self):
        """ Test boundary extrema of a first order lag.
        """

        res = self.residue_set([[-1.0]], [[1.0]], [[1.0]])
        over = find_overshoot(res)
        self.assertEqual(over.kind[0, 0], 'final')
        self.assertAlmostEqual(over.value[0, 0], 1.0)
        self.assertEqual(over.time[0, 0], over.horizon)
        rocof = find_rocof(res)
        self.assertEqual(rocof.kind[0, 0], 'initial')
        self.assertEqual(rocof.time[0, 0], 0.0)
        self.assertAlmostEqual(rocof.value[0, 0], 1.0)

    def test_unstable(self):
        """ Test that the extremum search refuses unstable systems.
        """

        res = self.residue_set([[0.5]], [[1.0]], [[1.0]])
        with self.assertRaises(ResponseError):
            find_overshoot(res)

    def test_extrema_against_dense_grid(self):
        """ Test overshoot and RoCoF of the three bus case against a dense
            grid of the integrated response.
        """

        bundle = evaluate(reference_case('three_bus'), three_bus_gains())
        for ext, n in [(bundle.overshoot, 0), (bundle.rocof, 1)]:
            times = np.linspace(0.0, ext.horizon, 100001)
            oracle = simulate_oracle(bundle.sys, ext.horizon)
            grid = np.max(np.abs(oracle.output(times, n)), axis=0)
            for a in range(grid.shape[0]):
                for b in range(grid.shape[1]):
                    self.assertLessEqual(grid[a, b],
                                         ext.value[a, b] + 1e-8)
                    if ext.kind[a, b] != 'final':
                        self.assertLess(ext.value[a, b] - grid[a, b], 1e-6)

    def test_single_machine_rocof(self):
        """ Test the initial RoCoF of a single machine: omega0 dP / M.
        """

        bundle = evaluate(reference_case('single_machine'),
                          DeviceGains({'dev1': (0.0, 0.0)}))
        self.assertAlmostEqual(bundle.R_inf(), 0.5, places=9)
        self.assertEqual(bundle.rocof.kind[0, 0], 'initial')
        self.assertEqual(bundle.rocof.time[0, 0], 0.0)
        self.assertEqual(len(bundle.residues.dropped), 1)

    def test_residue_sensitivity(self):
        """ Test residue sensitivities against central differences and for a
            null perturbation.
        """

        case = reference_case('three_bus')
        gains = three_bus_gains()
        base = build_base_system(case)
        sys = attach_devices(base, case, gains)
        modal = spectral.eigensolve(sys.A)
        res = residues(modal, sys.B, sys.C)

        zero = spectral.sensitivities(modal, np.zeros(sys.A.shape),
                                      res.modes)
        self.assertEqual(np.max(np.abs(residue_sensitivity(res, zero).dr)),
                         0.0)

        pids = case.param_ids()
        eps = 1e-6
        for k, pid in enumerate(pids):
            sens = spectral.sensitivities(modal, system_derivative(sys, pid),
                                          res.modes)
            rsens = residue_sensitivity(res, sens)
            shifted = []
            for sgn in [1.0, -1.0]:
                vec = gains.as_vector(pids)
                vec[k] += sgn * eps
                other = attach_devices(base, case, gains.updated(pids, vec))
                ores = residues(spectral.eigensolve(other.A), other.B,
                                other.C)
                idx = match_modes(res.eigenvalues, ores.eigenvalues)
                shifted.append(ores.r[idx])
            fd = (shifted[0] - shifted[1]) / (2 * eps)
            self.assertLess(np.max(np.abs(fd - rsens.dr)),
                            1e-4 * np.max(np.abs(fd)))
            scale = np.max(np.abs(rsens.dr))
            for i, lam in enumerate(res.eigenvalues):
                if lam.imag <= 0:
                    continue
                j = int(np.argmin(np.abs(res.eigenvalues - np.conj(lam))))
                np.testing.assert_allclose(rsens.dr[i], np.conj(rsens.dr[j]),
                                           rtol=0.0, atol=1e-9 * scale)

    def test_metric_sensitivities(self):
        """ Test overshoot, RoCoF, damping and eigenvalue sensitivities of
            the three bus case against central differences of the full
            recomputation.
        """

        case = reference_case('three_bus')
        gains = three_bus_gains()
        bundle = evaluate(case, gains)
        pids = case.param_ids()
        self.assertEqual(bundle.param_ids(), pids)
        eps = 1e-5
        for k, pid in enumerate(pids):
            shifted = []
            for sgn in [1.0, -1.0]:
                vec = gains.as_vector(pids)
                vec[k] += sgn * eps
                shifted.append(evaluate(case, gains.updated(pids, vec),
                                        seeds=bundle.seeds(),
                                        with_sensitivities=False))
            for name, analytic in [('overshoot', bundle.d_overshoot[pid]),
                                   ('rocof', bundle.d_rocof[pid])]:
                fd = (getattr(shifted[0], name).value -
                      getattr(shifted[1], name).value) / (2 * eps)
                self.assertLess(np.max(np.abs(fd - analytic)),
                                1e-3 * max(np.max(np.abs(fd)), 1e-6))

            lam = bundle.modal.eigenvalues
            idx = [match_modes(lam, s.modal.eigenvalues) for s in shifted]
            fd = (shifted[0].modal.eigenvalues[idx[0]] -
                  shifted[1].modal.eigenvalues[idx[1]]) / (2 * eps)
            self.assertLess(np.max(np.abs(fd - bundle.d_lambda[pid])),
                            1e-5 * np.max(np.abs(fd)))

            osc = bundle.oscillatory
            fd_zeta = (shifted[0].modal.damping[np.array(idx[0])[osc]] -
                       shifted[1].modal.damping[np.array(idx[1])[osc]]) / \
                (2 * eps)
            self.assertLess(np.max(np.abs(fd_zeta - bundle.d_zeta[pid])),
                            1e-5 * max(np.max(np.abs(fd_zeta)), 1e-6))

    def test_stationarity_shortcut(self):
        """ Test that at an interior peak the overshoot sensitivity equals
            the frozen-time derivative of the step response.
        """

        case = reference_case('three_bus')
        gains = three_bus_gains()
        bundle = evaluate(case, gains)
        res = bundle.residues
        pid = case.param_ids()[0]
        sys = bundle.sys
        sens = spectral.sensitivities(bundle.modal,
                                      system_derivative(sys, pid), res.modes)
        rsens = residue_sensitivity(res, sens)
        ext = bundle.overshoot
        for a in range(ext.value.shape[0]):
            for b in range(ext.value.shape[1]):
                if ext.kind[a, b] != 'interior':
                    continue
                t = ext.time[a, b]
                e = np.exp(res.eigenvalues * t)
                dlam = sens.dlam[res.modes]
                frozen = np.real(np.sum(rsens.dk[:, a, b] * (1.0 - e) -
                                        res.k[:, a, b] * t * dlam * e))
                self.assertLess(abs(ext.sign[a, b] * frozen -
                                    bundle.d_overshoot[pid][a, b]), 1e-8)

    def test_direct_sensitivity(self):
        """ Test that the matrix exponential sensitivities agree with the
            modal ones on a simple spectrum.
        """

        case = reference_case('three_bus')
        bundle = evaluate(case, three_bus_gains())
        res = bundle.residues
        sys = bundle.sys
        for pid in case.param_ids():
            dA = system_derivative(sys, pid)
            sens = spectral.sensitivities(bundle.modal, dA, res.modes)
            rsens = residue_sensitivity(res, sens)
            for modal, ext in [
                    (overshoot_sensitivity(res, rsens, bundle.overshoot),
                     bundle.overshoot),
                    (rocof_sensitivity(res, rsens, bundle.rocof),
                     bundle.rocof)]:
                direct = direct_sensitivity(sys, res, dA, ext)
                scale = max(np.max(np.abs(modal)), 1e-6)
                self.assertLess(np.max(np.abs(direct - modal)),
                                1e-6 * scale, msg=pid)

    def test_structural_zero(self):
        """ Test that a parameter without a path to the outputs has zero
            metric sensitivities.
        """

        A = np.zeros((4, 4))
        A[:2, :2] = [[0.0, 1.0], [-2.0, -0.6]]
        A[2:, 2:] = [[-1.5, 0.0], [0.0, -3.0]]
        B = np.array([[0.0], [1.0], [0.0], [0.0]])
        C = np.array([[1.0, 0.0, 0.0, 0.0]])
        sys = LinearSystem(A, B, C, ['a', 'b', 'c', 'd'], ['u'], ['y'],
                           OrderedDict([('x.inertia', (2, 3, 1.0))]))
        bundle = analyze_system(sys)
        self.assertLess(np.max(np.abs(bundle.d_overshoot['x.inertia'])),
                        1e-12)
        self.assertLess(np.max(np.abs(bundle.d_rocof['x.inertia'])), 1e-12)

    def test_oracle_scalar(self):
        """ Test the integration oracle on a scalar lag and a system without
            inputs.
        """

        sys = LinearSystem(np.array([[-1.0]]), np.array([[1.0]]),
                           np.array([[1.0]]), ['x'], ['u'], ['y'])
        times = np.linspace(0.0, 5.0, 51)
        y = simulate_oracle(sys, 5.0).output(times)[:, 0, 0]
        np.testing.assert_allclose(y, 1.0 - np.exp(-times), atol=1e-10)
        sys.B = np.zeros((1, 1))
        y = simulate_oracle(sys, 5.0).output(times)
        self.assertEqual(np.max(np.abs(y)), 0.0)

    def test_oracle_derivatives(self):
        """ Test the slope and curvature of the integration oracle against
            the matrix exponential on a random system of order 27.
        """

        seed = 16
        n = 2 + (7 * seed) % 29
        A, B, C = random_stable_system(n, 2, 2, seed=seed)
        sys = LinearSystem(A, B, C, [str(i) for i in range(n)],
                           ['u0', 'u1'], ['y0', 'y1'])
        oracle = simulate_oracle(sys, 20.0)
        times = np.linspace(0.0, 20.0, 41)
        # x'(t) = exp(A t) b
        dx = np.stack([scipy.linalg.expm(A * t) @ B for t in times])
        for order, M in [(1, C), (2, C @ A)]:
            exact = np.einsum('mn,tnd->tmd', M, dx)
            scale = max(1.0, np.max(np.abs(exact)))
            self.assertLess(np.max(np.abs(oracle.output(times, order) -
                                          exact)), 1e-8 * scale,
                            msg='order {}'.format(order))

    def test_oracle_equivalence(self):
        """ Test modal responses and two derivatives against forward
            integration on random stable systems.
        """

        times = np.linspace(0.0, 20.0, 201)
        for seed in range(20):
            n = 2 + (7 * seed) % 29
            A, B, C = random_stable_system(n, 2, 2, seed=seed)
            sys = LinearSystem(A, B, C, [str(i) for i in range(n)],
                               ['u0', 'u1'], ['y0', 'y1'])
            res = self.residue_set(A, B, C)
            oracle = simulate_oracle(sys, 20.0)
            for order in [0, 1, 2]:
                modal = trajectories(res, times, order)
                ref = oracle.output(times, order)
                scale = max(1.0, np.max(np.abs(ref)))
                self.assertLess(np.max(np.abs(modal - ref)), 1e-8 * scale,
                                msg='seed {} order {}'.format(seed, order))

    def test_repeated_device_poles(self):
        """ Test metric sensitivities of devices sharing time constants at
            zero gains, where the device poles coincide (a double pole when
            T1 = T2), against one sided differences of second order.
        """

        for name, t1, t2 in [('three_bus', 0.05, 0.2),
                             ('single_machine', 0.05, 0.05)]:
            case = case_from_doc(uniform_devices_doc(name, t1, t2))
            gains = case.zero_gains()
            bundle = evaluate(case, gains)
            self.assertTrue(spectral.clusters(bundle.modal) or
                            spectral.near_defective(bundle.modal))
            pids = case.param_ids()
            h = 1e-4
            for k, pid in enumerate(pids):
                steps = []
                for size in [h, 2 * h]:
                    vec = gains.as_vector(pids)
                    vec[k] = size
                    steps.append(evaluate(case, gains.updated(pids, vec),
                                          seeds=bundle.seeds(),
                                          with_sensitivities=False))
                for metric, analytic in [
                        ('overshoot', bundle.d_overshoot[pid]),
                        ('rocof', bundle.d_rocof[pid])]:
                    values = [getattr(b, metric).value
                              for b in [bundle] + steps]
                    fd = (-3.0 * values[0] + 4.0 * values[1] -
                          values[2]) / (2 * h)
                    self.assertLess(np.max(np.abs(fd - analytic)),
                                    1e-3 * max(np.max(np.abs(fd)), 1e-6),
                                    msg='{} {} {}'.format(name, pid, metric))

    def test_zero_gains_equal_device_free(self):
        """ Test that zero gains reproduce the metrics of the device free
            system.
        """

        case = reference_case('three_bus')
        with_dev = evaluate(case, case.zero_gains())
        free_case = case.with_devices([])
        free = evaluate(free_case, free_case.zero_gains())
        self.assertAlmostEqual(with_dev.S_inf(), free.S_inf(), places=10)
        self.assertAlmostEqual(with_dev.R_inf(), free.R_inf(), places=10)
        self.assertAlmostEqual(with_dev.zeta_min(), free.zeta_min(),
                               places=10)

    def test_device_order_invariance(self):
        """ Test that metrics do not depend on the order of the devices.
        """

        doc = case_doc('three_bus')
        case = case_from_doc(doc)
        doc['devices'] = list(reversed(doc['devices']))
        flipped = case_from_doc(doc)
        one = evaluate(case, three_bus_gains())
        two = evaluate(flipped, three_bus_gains())
        self.assertAlmostEqual(one.S_inf(), two.S_inf(), places=10)
        self.assertAlmostEqual(one.R_inf(), two.R_inf(), places=10)
        self.assertAlmostEqual(one.zeta_min(), two.zeta_min(), places=10)
        for pid in case.param_ids():
            np.testing.assert_allclose(one.d_overshoot[pid],
                                       two.d_overshoot[pid], atol=1e-9)

    def test_linearity(self):
        """ Test that doubling the disturbances doubles the extrema.
        """

        case = reference_case('three_bus')
        one = evaluate(case, three_bus_gains(), with_sensitivities=False)
        two = evaluate(case.with_disturbance_scale(2.0), three_bus_gains(),
                       with_sensitivities=False)
        np.testing.assert_allclose(two.overshoot.value,
                                   2.0 * one.overshoot.value, rtol=1e-9)
        np.testing.assert_allclose(two.rocof.value, 2.0 * one.rocof.value,
                                   rtol=1e-9)

    def test_realness(self):
        """ Test that the imaginary parts cancel in every response.
        """

        bundle = evaluate(reference_case('three_bus'), three_bus_gains())
        res = bundle.residues
        times = np.linspace(0.0, 5.0, 11)
        for n, coef in [(0, res.k), (1, res.r)]:
            e = np.exp(np.multiply.outer(res.eigenvalues, times))
            basis = 1.0 - e if n == 0 else e
            full = np.einsum('kt,kmd->tmd', basis, coef)
            self.assertLess(np.max(np.abs(full.imag)), 1e-9)


class CapabilityTestCase(GridInertiaTestCase):

    def test_norm_orders(self):
        """ Test parsing of norm orders and their duals.
        """

        self.assertEqual(norm_order('inf'), math.inf)
        self.assertEqual(norm_order(2), 2.0)
        self.assertEqual(dual_order(1), math.inf)
        self.assertEqual(dual_order('inf'), 1.0)
        self.assertEqual(dual_order(2), 2.0)
        with self.assertRaises(CapabilityError):
            norm_order(3)

    def test_load_measurements(self):
        """ Test reading measurement files.
        """

        data = load_measurements('time_s,freq_dev_hz,rocof_hz_s\n'
                                 '0,0.01,0.001\n1,0.02,0.002\n2,0.0,-0.01\n')
        self.assertEqual(len(data), 3)
        self.assertEqual(list(data.rocof), [0.001, 0.002, -0.01])

        data = load_measurements('time_s,freq_dev_hz\n0,0.1\n1,0.1\n2,0.1\n')
        np.testing.assert_array_equal(data.rocof, [0.0, 0.0, 0.0])
        data = load_measurements('time_s,freq_dev_hz\n0,0.0\n1,0.1\n2,0.4\n')
        np.testing.assert_allclose(data.rocof, [0.1, 0.2, 0.3])

        data = load_measurements('time,freq_dev_hz\n'
                                 '2020-01-01T00:00:00,0.0\n'
                                 '2020-01-01T00:00:02,0.2\n')
        np.testing.assert_allclose(data.times, [0.0, 2.0])
        np.testing.assert_allclose(data.rocof, [0.1, 0.1])

        with self.assertRaisesRegex(MeasurementError, 'row 2'):
            load_measurements('time_s,freq_dev_hz\n0,0.1\n1,abc\n')
        with self.assertRaisesRegex(MeasurementError, 'row 2'):
            load_measurements('time_s,freq_dev_hz\n1,0.1\n1,0.2\n')
        with self.assertRaisesRegex(MeasurementError, 'freq_dev_hz'):
            load_measurements('time_s,f\n0,0.1\n')

    def test_fit_single_sample(self):
        """ Test the radius fitted to a single sample.
        """

        data = MeasurementSet([0.0], [0.2], [0.01])
        ball = fit_norm_ball(data, 1, 1.0 / 20)
        self.assertAlmostEqual(ball.c, 0.02, places=15)
        self.assertEqual(ball.inside, 1)

    def test_fit_degenerate(self):
        """ Test that a cloud at the origin is refused unless explicitly
            allowed.
        """

        data = MeasurementSet([0.0, 1.0], [0.0, 0.0], [0.0, 0.0])
        with self.assertRaises(CapabilityError):
            fit_norm_ball(data, 2, 1.0)
        ball = fit_norm_ball(data, 2, 1.0, allow_degenerate=True)
        self.assertTrue(ball.degenerate)
        self.assertEqual(ball.c, self.cfg.radius_floor())

    def test_fit_box_and_coverage(self):
        """ Test the infinity norm radius of a box cloud and the median
            radius at coverage 0.5.
        """

        data = box_cloud(101, 0.2, 0.05, seed=1)
        h = 0.5
        ball = fit_norm_ball(data, 'inf', h)
        expected = np.max(np.maximum(h * np.abs(data.frequency),
                                     np.abs(data.rocof)))
        self.assertEqual(ball.c, expected)
        self.assertTrue(np.all(ball.contains(data.frequency, data.rocof)))

        ball = fit_norm_ball(data, 2, h, coverage=0.5)
        norms = np.hypot(h * data.frequency, data.rocof)
        self.assertAlmostEqual(ball.c, float(np.median(norms)), places=15)
        self.assertEqual(ball.inside, 51)

    def test_fit_grows_with_cloud(self):
        """ Test that adding samples to a cloud never shrinks the fitted
            radius.
        """

        base = elliptical_cloud(50, 0.2, 0.05, seed=3)
        for p in [1, 2, 'inf']:
            data = base
            c = fit_norm_ball(data, p, 0.5).c
            for seed in range(4, 9):
                data = data.merged(box_cloud(20, 0.3, 0.08, seed=seed))
                grown = fit_norm_ball(data, p, 0.5).c
                self.assertGreaterEqual(grown, c, msg='p = {}'.format(p))
                c = grown
            self.assertEqual(len(data), 150)
            self.assertTrue(np.all(np.diff(data.times) > 0))

    def test_dual_constraint(self):
        """ Test the dual gain constraint of each norm.
        """

        ball = CapabilityBall(2, 1.0, 1.0, 1.0)
        con = dual_constraint(ball, 1.0)
        self.assertEqual(con.form(), 'disk')
        self.assertTrue(con.contains(0.6, 0.8, 1e-12))
        self.assertFalse(con.contains(0.7, 0.8))

        con = dual_constraint(CapabilityBall(1, 1.0 / 20, 1.0, 1.0), 1.0)
        self.assertEqual(con.form(), 'box')
        self.assertEqual(con.norm_rows(), [(1.0, 0.0), (0.0, 20.0)])
        self.assertTrue(con.contains(1.0, 0.05))
        self.assertFalse(con.contains(1.0, 0.051))

        con = dual_constraint(CapabilityBall('inf', 2.0, 0.5, 1.0), 1.0)
        self.assertEqual(con.form(), 'diamond')
        self.assertEqual(con.bound, 2.0)
        self.assertEqual(con.norm_rows(), [(1.0, 0.5)])
        self.assertAlmostEqual(con.norm(1.0, 2.0), 2.0)

        with self.assertRaises(CapabilityError):
            dual_constraint(ball, 0.0)

    def test_quadratic_rows(self):
        """ Test that the tangent rows of a disk constraint never exceed the
            norm of non-negative gains and touch it at the anchor.
        """

        con = GainConstraint(2.0, 0.5, 1.0)
        rows = con.norm_rows(count=16, anchor=(0.3, 0.2))
        rng = np.random.default_rng(0)
        for M, K in rng.uniform(0.0, 2.0, size=(50, 2)):
            self.assertLessEqual(max(a * M + b * K for a, b in rows),
                                 con.norm(M, K) + 1e-12)
        self.assertAlmostEqual(max(a * 0.3 + b * 0.2 for a, b in rows),
                               con.norm(0.3, 0.2), places=12)
        M, K = con.project(3.0, 1.0)
        self.assertAlmostEqual(con.norm(M, K), 1.0)

    def test_duality(self):
        """ Test the brute-force duality check for each norm: the worst
            power equals the capacity, shrunk gains stay inside and inflated
            gains violate it.
        """

        data = elliptical_cloud(500, 0.2, 0.05, seed=3)
        for p in [1, 2, 'inf']:
            ball = fit_norm_ball(data, p, 0.25)
            con = dual_constraint(ball, 2.0)
            report = verify_duality(con, ball, 2.0)
            self.assertTrue(report.passed(), msg='p={}'.format(p))
            self.assertLess(abs(report.max_power - 2.0), 2e-6)
            self.assertTrue(report.inflation_violates)
            if p == 2:
                self.assertLess(abs(report.max_power - 2.0), 2e-9)
            half = verify_duality(con, ball, 2.0, scale=0.5)
            self.assertLessEqual(half.max_power, 1.0 * (1 + 1e-9))


class SimplexTestCase(GridInertiaTestCase):

    def test_one_variable(self):
        """ Test min -x s.t. x <= 1, x >= 0.
        """

        res = simplex.solve([-1.0], [[1.0]], [1.0])
        self.assertTrue(res.success())
        self.assertAlmostEqual(res.x[0], 1.0)
        self.assertAlmostEqual(res.objective, -1.0)
        self.assertAlmostEqual(res.duals[0], -1.0)

    def test_tie_break(self):
        """ Test that ties between optimal vertices are broken
            deterministically.
        """

        results = [simplex.solve([-1.0, -1.0], [[1.0, 1.0]], [1.0])
                   for _ in range(3)]
        for res in results:
            np.testing.assert_array_equal(res.x, [1.0, 0.0])

    def test_status(self):
        """ Test infeasible and unbounded programs.
        """

        res = simplex.solve([1.0], [[1.0]], [-1.0])
        self.assertEqual(res.status, 'infeasible')
        res = simplex.solve([-1.0, 0.0], [[-1.0, 1.0]], [1.0])
        self.assertEqual(res.status, 'unbounded')
        res = simplex.solve([1.0], bounds=[(2.0, 1.0)])
        self.assertEqual(res.status, 'infeasible')

    def test_bounds_and_equalities(self):
        """ Test shifted, free and upper bounded variables with an equality
            row.
        """

        res = simplex.solve([1.0, 2.0, -1.0], A_eq=[[1.0, 1.0, 1.0]],
                            b_eq=[3.0],
                            bounds=[(-1.0, 4.0), (None, None), (0.0, 2.0)])
        self.assertTrue(res.success())
        np.testing.assert_allclose(res.x, [4.0, -3.0, 2.0], atol=1e-9)
        self.assertAlmostEqual(res.objective, -4.0, places=9)

    def test_random_programs(self):
        """ Test random bounded programs against HiGHS.
        """

        rng = np.random.default_rng(12)
        for _ in range(20):
            n, m = rng.integers(2, 7), rng.integers(1, 6)
            c = rng.normal(size=n)
            A = rng.normal(size=(m, n))
            x0 = rng.uniform(0.0, 1.0, n)
            b = A @ x0 + rng.uniform(0.0, 1.0, m)
            bounds = [(0.0, 3.0)] * n
            res = simplex.solve(c, A, b, bounds=bounds)
            ref = scipy.optimize.linprog(c, A_ub=A, b_ub=b, bounds=bounds,
                                         method='highs')
            self.assertTrue(res.success())
            self.assertAlmostEqual(res.objective, ref.fun, delta=1e-8)
            self.assertTrue(np.all(A @ res.x <= b + 1e-9))
            self.assertTrue(np.all(res.duals <= 1e-9))


class PlacementTestCase(GridInertiaTestCase):

    def config(self, **kwargs):
        return PlacementConfig(**kwargs)

    def test_load_config(self):
        """ Test reading and validating placement configs.
        """

        path = os.path.join(CASE_DIR, 'placement_config.json')
        with open(path) as f:
            config = load_placement_config(f.read(), CASE_DIR)
        self.assertEqual(config.label, 'three-bus')
        self.assertEqual(config.bounds['rocof_lo'], -0.5)
        self.assertEqual(len(config.scenario_configs()), 4)
        self.assertEqual(config.scenario_configs()[1][1].weights['overshoot'],
                         1.0)

        with self.assertRaisesRegex(ConfigError, 'unknown weight'):
            load_placement_config('{"weights": {"speed": 1}}')
        with self.assertRaisesRegex(ConfigError, 'dominate'):
            load_placement_config('{"weights": {"zeta": 1}, '
                                  '"penalties": {"zeta": 0.5}}')
        with self.assertRaisesRegex(ConfigError, 'budget mode'):
            load_placement_config('{"weights": {"zeta": 1}, '
                                  '"budget": {"mode": "any"}}')
        with self.assertRaisesRegex(ConfigError, 'positive'):
            load_placement_config('{"weights": {}}')
        with self.assertRaisesRegex(ConfigError, 'line 1'):
            load_placement_config('{"weights": ')

    def test_capability_file(self):
        """ Test a placement config referring to a capability document.
        """

        path = os.path.join(self.tmp_dir, 'capability.json')
        with open(path, 'w') as f:
            f.write(json.dumps({'ball': {'p': '2', 'h': 0.5, 'c': 0.25}}))
        config = load_placement_config('{"weights": {"zeta": 1}, '
                                       '"capability": {"file": '
                                       '"capability.json"}}', self.tmp_dir)
        self.assertEqual(config.capability.p, 2.0)
        dev = reference_case('three_bus').devices[0]
        self.assertEqual(config.gain_constraint(dev).bound, 4.0)

    def test_stationary_lp(self):
        """ Test that an LP without sensitivities does not move.
        """

        case = reference_case('three_bus')
        gains = three_bus_gains()
        bundle = evaluate(case, gains)
        for source in [bundle.d_zeta, bundle.d_rocof, bundle.d_overshoot]:
            for pid in source:
                source[pid] = np.zeros_like(source[pid])
        config = self.config(weights={'zeta': 1.0})
        delta = OrderedDict((pid, 0.1) for pid in case.param_ids())
        lp = build_lp(bundle, config, gains, delta, case)
        sol = solve_lp(lp)
        np.testing.assert_allclose(lp.step(sol.x), 0.0, atol=1e-12)
        self.assertAlmostEqual(sol.objective, -bundle.zeta_min(), places=9)

    def test_lp_moves_to_trust_region_edge(self):
        """ Test a one parameter improvement limited by the trust region.
        """

        case = reference_case('single_machine')
        gains = case.zero_gains()
        bundle = evaluate(case, gains)
        self.assertEqual(bundle.overshoot.kind[0, 0], 'final')
        self.assertLess(bundle.d_overshoot['dev1.damping'][0, 0], 0.0)
        config = self.config(weights={'overshoot': 1.0})
        delta = OrderedDict([('dev1.inertia', 0.1), ('dev1.damping', 0.1)])
        lp = build_lp(bundle, config, gains, delta, case)
        step = lp.step(solve_lp(lp).x)
        self.assertAlmostEqual(step[1], 0.1, places=9)
        self.assertAlmostEqual(step[0], 0.0, places=9)

    def test_lp_slack_rule(self):
        """ Test that slacks are added only for currently violated bounds.
        """

        case = reference_case('single_machine')
        gains = case.zero_gains()
        bundle = evaluate(case, gains)
        config = self.config(weights={'overshoot': 1.0},
                             bounds={'rocof_hi': 0.3, 'overshoot_hi': 10.0})
        delta = OrderedDict([('dev1.inertia', 0.1), ('dev1.damping', 0.1)])
        lp = build_lp(bundle, config, gains, delta, case)
        self.assertTrue(lp.has_variable('slack.rocof_hi[0,0]'))
        k = lp.index('slack.rocof_hi[0,0]')
        self.assertEqual(lp.lower[k], 0.0)
        self.assertEqual(lp.cost[k], self.cfg.slack_penalty())
        self.assertFalse(lp.has_variable('slack.rocof_lo[0,0]'))
        self.assertFalse(lp.has_variable('slack.overshoot_hi[0,0]'))

    def test_descent(self):
        """ Test that accepted objectives strictly decrease and the smallest
            damping ratio improves, from seeded starting gains.
        """

        case = reference_case('three_bus')
        config = self.config(weights={'zeta': 1.0}, max_iterations=10)
        rng = np.random.default_rng(0)
        for seed in range(20):
            start = DeviceGains(OrderedDict(
                (dev.id, tuple(rng.uniform(0.0, 0.5, 2)))
                for dev in case.devices))
            result = place(case, config, start)
            objectives = result.accepted_objectives()
            for before, after in zip(objectives, objectives[1:]):
                self.assertLess(after, before, msg='run {}'.format(seed))
            first = result.history[0].metrics['zeta_min']
            self.assertGreaterEqual(result.bundle.zeta_min(), first)
            for dev in case.devices:
                self.assertTrue(config.gain_constraint(dev).contains(
                    result.gains.inertia(dev.id),
                    result.gains.damping(dev.id), 1e-9))

    def test_against_grid_search(self):
        """ Test the optimizer result of a single device against an
            exhaustive search of its gains.
        """

        case = reference_case('three_bus')
        single = case.with_devices(case.devices[:1])
        config = self.config(weights={'zeta': 1.0})
        result = place(single, config)
        grid = grid_search(single, config, resolution=30)
        self.assertIsNotNone(grid.best_gains)
        self.assertLessEqual(result.objective,
                             grid.best_objective +
                             0.02 * abs(grid.best_objective))

    def test_zero_budget(self):
        """ Test that a zero total budget keeps all gains at zero.
        """

        case = reference_case('three_bus')
        config = self.config(weights={'zeta': 1.0},
                             budget_mode='total-budget', total_budget=0.0)
        result = place(case, config)
        self.assertEqual(result.termination, 'improvement-threshold')
        for dev in case.devices:
            self.assertEqual(result.gains.inertia(dev.id), 0.0)
            self.assertEqual(result.gains.damping(dev.id), 0.0)
        self.assertEqual(result.total_capacity(), 0.0)

    def test_infeasible_start(self):
        """ Test that starting gains outside the capability are refused.
        """

        case = reference_case('three_bus')
        config = self.config(weights={'zeta': 1.0})
        start = DeviceGains(OrderedDict([('dev1', (5.0, 0.0)),
                                         ('dev2', (0.0, 0.0))]))
        with self.assertRaisesRegex(ConfigError, 'dev1'):
            place(case, config, start)

    def test_min_capacity_loose_bounds(self):
        """ Test that bounds met by the device free system need no
            capacity.
        """

        case = reference_case('three_bus')
        free = evaluate(case, case.zero_gains(), with_sensitivities=False)
        config = self.config(bounds={'rocof_hi': 10.0 * free.R_inf(),
                                     'overshoot_hi': 10.0 * free.S_inf()})
        result = min_capacity_place(case, config)
        self.assertEqual(result.total_capacity(), 0.0)
        self.assertTrue(result.bounds_met)

    def test_min_capacity_binding_bound(self):
        """ Test that a binding RoCoF bound is met with positive capacity.
        """

        case = reference_case('three_bus')
        free = evaluate(case, case.zero_gains(), with_sensitivities=False)
        bound = 0.98 * free.R_inf()
        config = self.config(bounds={'rocof_hi': bound})
        result = min_capacity_place(case, config)
        self.assertGreater(result.total_capacity(), 0.0)
        self.assertLessEqual(result.bundle.R_inf(), bound * (1 + 1e-4))
        self.assertLess(result.violations['rocof'], 1e-4 * bound)

    def test_min_capacity_infeasible_bound(self):
        """ Test that a bound below what devices can reach is reported as
            not met.
        """

        case = reference_case('single_machine')
        config = self.config(bounds={'rocof_hi': 0.1})
        result = min_capacity_place(case, config)
        self.assertFalse(result.bounds_met)
        self.assertGreater(result.violations['rocof'], 0.3)

    def test_uniform_devices(self):
        """ Test placement from zero gains with devices sharing their time
            constants, including a device with a double pole.
        """

        for name, t1, t2 in [('three_bus', 0.05, 0.2),
                             ('single_machine', 0.05, 0.05)]:
            case = case_from_doc(uniform_devices_doc(name, t1, t2))
            config = self.config(weights={'overshoot': 1.0},
                                 max_iterations=10)
            result = place(case, config)
            self.assertNotEqual(result.termination, 'evaluation-failure',
                                msg=name)
            self.assertLess(result.objective, result.history[0].objective,
                            msg=name)

    def test_min_capacity_uniform_devices(self):
        """ Test that a binding RoCoF bound is met when both devices share
            their time constants.
        """

        case = case_from_doc(uniform_devices_doc('three_bus', 0.05, 0.2))
        free = evaluate(case, case.zero_gains(), with_sensitivities=False)
        bound = 0.98 * free.R_inf()
        result = min_capacity_place(case, self.config(
            bounds={'rocof_hi': bound}))
        self.assertGreater(result.total_capacity(), 0.0)
        self.assertLessEqual(result.bundle.R_inf(), bound * (1 + 1e-4))

    def test_evaluation_failure(self):
        """ Test that a failing evaluation of the initial gains ends the run
            with a reason. Three identical generators around a hub share an
            oscillatory mode, which has no damping ratio derivative.
        """

        doc = case_doc('single_machine')
        doc['buses'] = [{'id': str(i)} for i in range(1, 5)]
        doc['lines'] = [{'from': '1', 'to': str(i), 'susceptance': 5.0}
                        for i in range(2, 5)]
        doc['generators'] += [{'bus': str(i), 'inertia': 4.0,
                               'damping': 0.5, 'base': 1.0}
                              for i in range(2, 5)]
        case = case_from_doc(doc)
        config = self.config(weights={'overshoot': 1.0})
        result = place(case, config)
        self.assertEqual(result.termination, 'evaluation-failure')
        self.assertEqual(result.history, [])
        self.assertIn('degenerate', result.message)


class ScenarioTestCase(GridInertiaTestCase):
    """ Each performance metric should be lowest in the run that puts it in
        the cost function.
    """

    def assert_diagonal(self, results):
        by_label = {res.label: res.bundle for res in results}
        checks = [('max zeta_min', lambda b: -b.zeta_min()),
                  ('min S_inf', lambda b: b.S_inf()),
                  ('min R_inf', lambda b: b.R_inf()),
                  ('min S1+R1', lambda b: b.S_mean() + b.R_mean())]
        for label, metric in checks:
            if label not in by_label:
                continue
            own = metric(by_label[label])
            for other in by_label.values():
                self.assertLessEqual(own, metric(other) +
                                     1e-3 * abs(metric(other)) + 1e-9,
                                     msg=label)

    def scenario_config(self, labels, max_iterations=100):
        weights = {'max zeta_min': {'zeta': 1.0},
                   'min S_inf': {'overshoot': 1.0},
                   'min R_inf': {'rocof': 1.0},
                   'min S1+R1': {'overshoot_mean': 1.0, 'rocof_mean': 1.0}}
        return PlacementConfig(scenarios=[(label, weights[label])
                                          for label in labels],
                               max_iterations=max_iterations)

    def test_three_bus_pattern(self):
        """ Test the pattern on the three bus case.
        """

        case = reference_case('three_bus')
        config = self.scenario_config(['max zeta_min', 'min S_inf',
                                       'min R_inf'])
        results = run_scenarios(case, config)
        self.assertEqual([r.label for r in results],
                         ['max zeta_min', 'min S_inf', 'min R_inf'])
        self.assert_diagonal(results)

    def test_five_area_pattern(self):
        """ Test the pattern on the five area string case.
        """

        case = case_from_doc(five_area_case())
        config = self.scenario_config(['max zeta_min', 'min S_inf',
                                       'min R_inf', 'min S1+R1'], 60)
        results = run_scenarios(case, config)
        self.assert_diagonal(results)
        free = evaluate(case, case.zero_gains(), with_sensitivities=False)
        for res in results:
            self.assertLessEqual(res.objective,
                                 res.history[0].objective)
        self.assertGreater(results[0].bundle.zeta_min(), free.zeta_min())

    def test_five_area_document(self):
        """ Test that the generated five area case matches the stored one.
        """

        self.assertEqual(json.loads(json.dumps(five_area_case())),
                         case_doc('five_area'))


class CliTestCase(GridInertiaTestCase):

    def setUp(self):
        super().setUp()
        self.ini = os.path.join(self.tmp_dir, 'config.ini')
        with open(self.ini, 'w') as f:
            f.write('[environment]\nlog_file = {}\n\n[placement]\n'
                    'lp_solver = {}\n'.format(
                        os.path.join(self.tmp_dir, 'gi_log.txt'),
                        self.lp_solver))

    def run_cli(self, *args):
        return cli.main(['--ini', self.ini] + list(args))

    def out_dir(self, name):
        return os.path.join(self.tmp_dir, name)

    def test_exit_codes(self):
        """ Test the mapping of error classes to exit codes.
        """

        self.assertEqual(cli.exit_code(CaseError('x')), 1)
        self.assertEqual(cli.exit_code(InputError('x')), 1)
        self.assertEqual(cli.exit_code(NumericalError('x')), 2)
        self.assertEqual(cli.exit_code(VerificationError('x')), 3)

    def test_usage_error(self):
        """ Test that a missing required flag exits with the input error
            code.
        """

        for argv in [['analyze'], ['place', '--case']]:
            with self.assertRaises(SystemExit) as cm, \
                    contextlib.redirect_stderr(io.StringIO()):
                cli.main(argv)
            self.assertEqual(cm.exception.code, 1)

    def test_missing_case(self):
        """ Test that a missing case file is an input error naming the path.
        """

        path = os.path.join(self.tmp_dir, 'nope.json')
        code = self.run_cli('analyze', '--case', path, '--out-dir',
                            self.out_dir('a'))
        self.assertEqual(code, 1)
        with open(os.path.join(self.tmp_dir, 'gi_log.txt')) as f:
            self.assertIn(path, f.read())

    def test_analyze(self):
        """ Test the analysis report and trajectories with the oracle check.
        """

        out = self.out_dir('analyze')
        code = self.run_cli('analyze', '--case',
                            os.path.join(CASE_DIR, 'three_bus.json'),
                            '--out-dir', out, '--verify')
        self.assertEqual(code, 0)
        with open(os.path.join(out, 'report.csv')) as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0].split(',')[0], 'label')
        self.assertEqual(len(lines), 3)
        with open(os.path.join(out, 'metrics.json')) as f:
            doc = json.load(f)
        self.assertLess(doc['oracle_mismatch'], 1e-6)
        self.assertIn('dev1.inertia', doc['sensitivities'])
        self.assertTrue(os.path.exists(os.path.join(out,
                                                    'trajectory_omega_1_dP_3'
                                                    '.csv')))

    def test_non_finite_json(self):
        """ Test that documents with NaN and infinities stay valid JSON.
        """

        text = dump_json_document(OrderedDict([
            ('nan', float('nan')),
            ('values', np.array([1.0, np.inf, -np.inf])),
            ('scalar', np.float64(2.5))]))
        self.assertNotIn('NaN', text)
        self.assertNotIn('Infinity', text)
        self.assertEqual(json.loads(text), {'nan': None,
                                            'values': [1.0, None, None],
                                            'scalar': 2.5})

    def test_report_table(self):
        """ Test formatting of the comparison table.
        """

        case = reference_case('three_bus')
        table = cli.ReportTable()
        table.add('initial', evaluate(case, case.zero_gains(),
                                      with_sensitivities=False),
                  case.zero_gains())
        text = table.to_text().splitlines()
        self.assertEqual(len(text), 3)
        self.assertTrue(text[1].startswith('-------'))
        self.assertEqual(len(table.formatted()[0]), len(table.header))
        for cell in table.formatted()[0][1:]:
            self.assertLessEqual(len(cell.replace('-', '').replace('.', '')
                                     .split('e')[0]), 6)

    def test_place_deterministic(self):
        """ Test that two placement runs write identical result documents.
        """

        docs = []
        for name in ['one', 'two']:
            out = self.out_dir(name)
            code = self.run_cli('place', '--case',
                                os.path.join(CASE_DIR, 'three_bus.json'),
                                '--config',
                                os.path.join(CASE_DIR,
                                             'placement_config.json'),
                                '--out-dir', out)
            self.assertEqual(code, 0)
            with open(os.path.join(out, 'result.json'), 'rb') as f:
                docs.append(f.read())
        self.assertEqual(docs[0], docs[1])
        doc = json.loads(docs[0].decode('utf-8'))
        self.assertEqual(len(doc['results']), 4)
        for res in doc['results']:
            accepted = [h['objective'] for h in res['history']
                        if h['accepted']]
            self.assertEqual(accepted, sorted(accepted, reverse=True))
        with open(os.path.join(self.out_dir('one'), 'report.csv')) as f:
            self.assertEqual(len(f.read().splitlines()), 6)

    def test_place_min_capacity(self):
        """ Test that the minimal capacity mode reports capacity and bounds.
        """

        config = os.path.join(self.tmp_dir, 'min_capacity.json')
        with open(config, 'w') as f:
            f.write(dump_json_document({'bounds': {'rocof_hi': 10.0}}))
        out = self.out_dir('mc')
        code = self.run_cli('place', '--case',
                            os.path.join(CASE_DIR, 'three_bus.json'),
                            '--config', config, '--min-capacity',
                            '--out-dir', out)
        self.assertEqual(code, 0)
        with open(os.path.join(out, 'result.json')) as f:
            doc = json.load(f)
        self.assertTrue(doc['min_capacity'])
        self.assertEqual(doc['results'][0]['total_capacity'], 0.0)
        self.assertTrue(doc['results'][0]['bounds_met'])

    def test_fit_capability(self):
        """ Test fitting a capability ball to a synthetic cloud and to a
            measurement file.
        """

        out = self.out_dir('cap')
        code = self.run_cli('fit-capability', '--synthetic', '400', '--seed',
                            '2', '--p', '2', '--out-dir', out)
        self.assertEqual(code, 0)
        with open(os.path.join(out, 'capability.json')) as f:
            doc = json.load(f)
        self.assertEqual(doc['constraint']['form'], 'disk')
        self.assertEqual(doc['constraint']['q'], '2')
        self.assertTrue(doc['verification']['passed'])

        csv_path = os.path.join(self.tmp_dir, 'freq.csv')
        with open(csv_path, 'w') as f:
            f.write('time_s,freq_dev_hz,rocof_hz_s\n0,0.2,0.01\n'
                    '1,-0.1,0.005\n')
        code = self.run_cli('fit-capability', '--measurements', csv_path,
                            '--p', '1', '--h', '0.05', '--out-dir', out)
        self.assertEqual(code, 0)
        with open(os.path.join(out, 'capability.json')) as f:
            doc = json.load(f)
        self.assertEqual(doc['constraint']['form'], 'box')
        self.assertAlmostEqual(doc['ball']['c'], 0.02)

        code = self.run_cli('fit-capability', '--synthetic', '10', '--p',
                            '3', '--out-dir', out)
        self.assertEqual(code, 1)

    def test_verify(self):
        """ Test the self-checks of the three bus case.
        """

        out = self.out_dir('verify')
        code = self.run_cli('verify', '--case',
                            os.path.join(CASE_DIR, 'three_bus.json'),
                            '--out-dir', out)
        self.assertEqual(code, 0)
        with open(os.path.join(out, 'verification.json')) as f:
            doc = json.load(f)
        self.assertTrue(doc['passed'])
        self.assertLess(max(doc['sensitivity_relative_error'].values()),
                        1e-3)


if __name__ == '__main__':
    unittest.main()
