""" Seeded generators for synthetic test data: measurement clouds, random
    stable state-space systems and a string topology multi-area case.
"""

import math
from collections import OrderedDict
import numpy as np
from gridinertia.capability import MeasurementSet


def elliptical_cloud(count, freq_radius, rocof_radius, seed=0):
    """ Samples uniformly distributed in the ellipse with the given semi-axes
        (Hz and Hz/s), one second apart.
    """

    rng = np.random.default_rng(seed)
    radius = np.sqrt(rng.uniform(0.0, 1.0, count))
    angle = rng.uniform(0.0, 2.0 * math.pi, count)
    return MeasurementSet(np.arange(count, dtype=float),
                          freq_radius * radius * np.cos(angle),
                          rocof_radius * radius * np.sin(angle))


def box_cloud(count, freq_limit, rocof_limit, seed=0):
    rng = np.random.default_rng(seed)
    return MeasurementSet(np.arange(count, dtype=float),
                          rng.uniform(-freq_limit, freq_limit, count),
                          rng.uniform(-rocof_limit, rocof_limit, count))


def random_stable_system(n, outputs=1, inputs=1, seed=0):
    """ (A, B, C) with n states, well separated stable eigenvalues (about
        half of them in complex pairs) and a moderately conditioned
        eigenbasis.
    """

    rng = np.random.default_rng(seed)
    J = np.zeros((n, n))
    i = 0
    while i < n:
        sigma = -rng.uniform(0.2, 3.0)
        if i + 1 < n and rng.uniform() < 0.5:
            omega = rng.uniform(0.5, 6.0)
            J[i:i + 2, i:i + 2] = [[sigma, omega], [-omega, sigma]]
            i += 2
        else:
            J[i, i] = sigma
            i += 1
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    T = Q @ np.diag(rng.uniform(1.0, 2.0, n))
    A = T @ J @ np.linalg.inv(T)
    B = rng.normal(size=(n, inputs))
    C = rng.normal(size=(outputs, n))
    return A, B, C


def second_order_system(zeta, omega_n):
    """ y'' + 2 zeta omega_n y' + omega_n^2 y = omega_n^2 u.
    """

    A = np.array([[0.0, 1.0], [-omega_n ** 2, -2.0 * zeta * omega_n]])
    B = np.array([[0.0], [omega_n ** 2]])
    C = np.array([[1.0, 0.0]])
    return A, B, C


def five_area_case(tie_susceptance=2.0):
    """ Case document of five areas in a string. Every area has a generator
        bus and a load bus; neighbouring load buses are connected by weak
        ties. The areas at both ends have the lowest inertia. Disturbances
        hit the load buses of areas 1, 3 and 5, the generator frequencies
        are monitored and every generator bus hosts a candidate device.
    """

    inertia = [3.0, 6.0, 8.0, 6.0, 3.0]
    time_constants = [(0.05, 0.2), (0.04, 0.25), (0.06, 0.3), (0.03, 0.15),
                      (0.07, 0.35)]
    doc = OrderedDict()
    doc['name'] = 'five-area string'
    doc['system_base_mva'] = 100.0
    doc['nominal_frequency_hz'] = 50.0
    doc['buses'] = []
    doc['lines'] = []
    doc['generators'] = []
    doc['loads'] = []
    doc['devices'] = []
    for k in range(1, 6):
        gen, load = 'G{}'.format(k), 'L{}'.format(k)
        doc['buses'].append(OrderedDict([('id', gen)]))
        doc['buses'].append(OrderedDict([('id', load)]))
        doc['lines'].append(OrderedDict([('from', gen), ('to', load),
                                         ('susceptance', 20.0)]))
        doc['generators'].append(OrderedDict([('bus', gen),
                                              ('inertia', inertia[k - 1]),
                                              ('damping', 0.5),
                                              ('base', 1.0)]))
        doc['loads'].append(OrderedDict([('bus', load), ('power', 1.0)]))
        t1, t2 = time_constants[k - 1]
        doc['devices'].append(OrderedDict([('id', 'v{}'.format(k)),
                                           ('bus', gen), ('t1', t1),
                                           ('t2', t2), ('capacity', 1.0)]))
    for k in range(1, 5):
        doc['lines'].append(OrderedDict([('from', 'L{}'.format(k)),
                                         ('to', 'L{}'.format(k + 1)),
                                         ('susceptance', tie_susceptance)]))
    doc['disturbances'] = [OrderedDict([('bus', 'L{}'.format(k)),
                                        ('magnitude', -0.1)])
                           for k in [1, 3, 5]]
    doc['outputs'] = ['G{}'.format(k) for k in range(1, 6)]
    return doc
