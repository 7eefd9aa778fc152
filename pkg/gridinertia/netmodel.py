""" Case ingestion and assembly of the linearized grid model.

    State ordering of the device free model is
        [delta_G, omega_G, delta_L, omega_L]
    with one (angle, frequency) pair per dynamic node. Frequency states are in
    per unit, outputs are scaled by omega0 (rad/s). Devices append two states
    each: injected power P~ and measured frequency omega~.
"""

import math
from collections import OrderedDict
import numpy as np
import scipy.linalg
import scipy.sparse
from gridinertia import current_cfg
from gridinertia.errors import CaseError, KronReductionError
from gridinertia.models import (Bus, Device, DeviceGains, Disturbance,
                                Generator, LinearSystem, Line, Load,
                                PowerSystemCase, param_id)
from gridinertia.subroutines import log, parse_json_document

_MISSING = object()


def _number(entry, key, where, default=_MISSING):
    if key not in entry or entry[key] is None:
        if default is _MISSING:
            raise CaseError('{}: missing field "{}"'.format(where, key))
        return default
    val = entry[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise CaseError('{}: field "{}" must be a number, got {!r}'.format(
                        where, key, val))
    val = float(val)
    if not math.isfinite(val):
        raise CaseError('{}: field "{}" must be finite'.format(where, key))
    return val


def _entries(doc, key, required=False):
    if key not in doc:
        if required:
            raise CaseError('case file: missing top-level key "{}"'.format(
                            key))
        return []
    val = doc[key]
    if not isinstance(val, list):
        raise CaseError('case file: "{}" must be a list'.format(key))
    for idx, entry in enumerate(val):
        if key != 'outputs' and not isinstance(entry, dict):
            raise CaseError('{}[{}]: must be an object'.format(key, idx))
    return val


def _bus_ref(entry, key, where, bus_ids):
    if key not in entry:
        raise CaseError('{}: missing field "{}"'.format(where, key))
    ref = str(entry[key])
    if ref not in bus_ids:
        raise CaseError('{}: unknown bus {}'.format(where, ref))
    return ref


def load_case(text):
    """ Parse and validate a JSON case document. Omitted optional fields get
        their defaults (generator damping 0, machine base 1, motor fraction
        0.1, motor inertia 1.5 s, load damping 2.5 pu).
    """

    doc = parse_json_document(text, 'case file', CaseError)
    if not isinstance(doc, dict):
        raise CaseError('case file: top level must be an object')

    f_nom = _number(doc, 'nominal_frequency_hz', 'case file', 50.0)
    s_base = _number(doc, 'system_base_mva', 'case file', 100.0)
    if f_nom <= 0:
        raise CaseError('case file: nominal_frequency_hz must be positive')
    if s_base <= 0:
        raise CaseError('case file: system_base_mva must be positive')

    buses = []
    for idx, entry in enumerate(_entries(doc, 'buses', required=True)):
        where = 'bus[{}]'.format(idx)
        if 'id' not in entry:
            raise CaseError('{}: missing field "id"'.format(where))
        omega0 = _number(entry, 'omega0', where, 2 * math.pi * f_nom)
        if omega0 <= 0:
            raise CaseError('{}: omega0 must be positive'.format(where))
        buses.append(Bus(str(entry['id']), omega0))
    if not buses:
        raise CaseError('case file: no buses')
    bus_ids = [b.id for b in buses]
    if len(set(bus_ids)) != len(bus_ids):
        raise CaseError('case file: duplicate bus ids')

    lines = []
    for idx, entry in enumerate(_entries(doc, 'lines')):
        where = 'line[{}]'.format(idx)
        fb = _bus_ref(entry, 'from', where, bus_ids)
        tb = _bus_ref(entry, 'to', where, bus_ids)
        b = _number(entry, 'susceptance', where)
        if fb == tb:
            raise CaseError('{}: line connects bus {} to itself'.format(
                            where, fb))
        if b <= 0:
            raise CaseError('{}: susceptance must be positive'.format(where))
        lines.append(Line(idx, fb, tb, b))

    generators = []
    for idx, entry in enumerate(_entries(doc, 'generators')):
        where = 'generator[{}]'.format(idx)
        bus = _bus_ref(entry, 'bus', where, bus_ids)
        gen = Generator(bus,
                        _number(entry, 'inertia', where),
                        _number(entry, 'damping', where, 0.0),
                        _number(entry, 'base', where, 1.0))
        if gen.inertia <= 0:
            raise CaseError('{}: inertia M must be positive'.format(where))
        if gen.base <= 0:
            raise CaseError('{}: base S_B must be positive'.format(where))
        if gen.damping < 0:
            raise CaseError('{}: damping must be non-negative'.format(where))
        if bus in [g.bus for g in generators]:
            raise CaseError('{}: bus {} already hosts a generator'.format(
                            where, bus))
        generators.append(gen)

    loads = []
    for idx, entry in enumerate(_entries(doc, 'loads')):
        where = 'load[{}]'.format(idx)
        load = Load(_bus_ref(entry, 'bus', where, bus_ids),
                    _number(entry, 'power', where),
                    _number(entry, 'motor_fraction', where, 0.1),
                    _number(entry, 'motor_inertia', where, 1.5),
                    _number(entry, 'damping', where, 2.5))
        if not 0.0 <= load.motor_fraction <= 1.0:
            raise CaseError('{}: motor fraction must be in [0, 1]'.format(
                            where))
        if load.motor_inertia < 0 or load.damping < 0:
            raise CaseError(('{}: motor inertia and damping must be non-nega'
                             'tive').format(where))
        loads.append(load)

    devices = []
    for idx, entry in enumerate(_entries(doc, 'devices')):
        where = 'device[{}]'.format(idx)
        device_id = str(entry.get('id', 'dev{}'.format(idx + 1)))
        dev = Device(device_id,
                     _bus_ref(entry, 'bus', where, bus_ids),
                     _number(entry, 't1', where),
                     _number(entry, 't2', where),
                     _number(entry, 'capacity', where),
                     _number(entry, 'inertia', where, 0.0),
                     _number(entry, 'damping', where, 0.0))
        if dev.t1 <= 0 or dev.t2 <= 0:
            raise CaseError('{} ({}): T1 and T2 must be positive'.format(
                            where, device_id))
        if dev.capacity < 0:
            raise CaseError('{} ({}): capacity must be non-negative'.format(
                            where, device_id))
        if dev.inertia < 0 or dev.damping < 0:
            raise CaseError(('{} ({}): initial gains must be non-negative'
                             '').format(where, device_id))
        if device_id in [d.id for d in devices]:
            raise CaseError('{}: duplicate device id {}'.format(
                            where, device_id))
        devices.append(dev)

    disturbances = []
    for idx, entry in enumerate(_entries(doc, 'disturbances')):
        where = 'disturbance[{}]'.format(idx)
        disturbances.append(Disturbance(_bus_ref(entry, 'bus', where,
                                                 bus_ids),
                                        _number(entry, 'magnitude', where)))

    outputs = []
    for idx, ref in enumerate(_entries(doc, 'outputs')):
        if isinstance(ref, dict):
            ref = ref.get('bus')
        if str(ref) not in bus_ids:
            raise CaseError('output[{}]: unknown bus {}'.format(idx, ref))
        outputs.append(str(ref))

    for key in doc:
        if key not in ['buses', 'lines', 'generators', 'loads', 'devices',
                       'disturbances', 'outputs', 'system_base_mva',
                       'nominal_frequency_hz', 'name', 'description']:
            log('WARNING: unexpected case file entry "{}"'.format(key))

    case = PowerSystemCase(buses, lines, generators, loads, devices,
                           disturbances, outputs, s_base, f_nom)
    _check_connected(case)
    nodes = dynamic_nodes(case)
    for bus in case.bus_ids():
        damping = sum(ld.frequency_damping() for ld in case.loads
                      if ld.bus == bus)
        if bus not in nodes and damping > 0:
            log(('WARNING: load damping {:.6g} pu at bus {} is ignored, the '
                 'bus has no inertia and is eliminated').format(damping, bus))
    log('loaded case: {}'.format(case.summary()))
    return case


def _check_connected(case):
    adjacency = OrderedDict((b, set()) for b in case.bus_ids())
    for line in case.lines:
        adjacency[line.from_bus].add(line.to_bus)
        adjacency[line.to_bus].add(line.from_bus)
    start = case.bus_ids()[0]
    seen = {start}
    stack = [start]
    while stack:
        for nxt in adjacency[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    missing = [b for b in case.bus_ids() if b not in seen]
    if missing:
        raise CaseError('network is not connected: bus(es) {} unreachable'
                        ''.format(', '.join(missing)))


def susceptance_laplacian(case):
    """ Bus susceptance Laplacian (DC power flow stiffness) in bus order.
    """

    index = {b: i for i, b in enumerate(case.bus_ids())}
    L = np.zeros((len(index), len(index)))
    for line in case.lines:
        i, j = index[line.from_bus], index[line.to_bus]
        L[i, i] += line.susceptance
        L[j, j] += line.susceptance
        L[i, j] -= line.susceptance
        L[j, i] -= line.susceptance
    return L


def dynamic_nodes(case):
    """ Return the dynamic nodes as an OrderedDict bus -> (kind, inertia,
        damping); generators first, then motor loads. A load at a generator
        bus adds its motor inertia and frequency damping to the generator.
    """

    nodes = OrderedDict()
    for gen in case.generators:
        nodes[gen.bus] = ['G', gen.inertia * gen.base, gen.damping]
    motor_buses = []
    for load in case.loads:
        if load.bus in nodes:
            nodes[load.bus][1] += load.inertia()
            nodes[load.bus][2] += load.frequency_damping()
        elif load.inertia() > 0:
            if load.bus not in motor_buses:
                motor_buses.append(load.bus)
    for bus in case.bus_ids():
        if bus not in motor_buses:
            continue
        inertia = sum(ld.inertia() for ld in case.loads if ld.bus == bus)
        damping = sum(ld.frequency_damping() for ld in case.loads
                      if ld.bus == bus)
        nodes[bus] = ['L', inertia, damping]
    return OrderedDict((k, tuple(v)) for k, v in nodes.items())


def kron_reduce(A11, A12, A21, A22, condition_limit=None):
    """ Schur complement A11 - A12 A22^-1 A21 eliminating algebraic
        variables.
    """

    if condition_limit is None:
        condition_limit = current_cfg().kron_condition_limit()
    A11 = np.atleast_2d(np.asarray(A11, dtype=float))
    A12 = np.atleast_2d(np.asarray(A12, dtype=float))
    A21 = np.atleast_2d(np.asarray(A21, dtype=float))
    A22 = np.atleast_2d(np.asarray(A22, dtype=float))
    if A22.shape[0] != A22.shape[1]:
        raise KronReductionError('algebraic block must be square, got {}'
                                 ''.format(A22.shape))
    if A22.shape[0] == 0:
        return A11.copy()
    cond = np.linalg.cond(A22)
    if not np.isfinite(cond) or cond > condition_limit:
        raise KronReductionError(('algebraic block is singular (condition '
                                  'estimate {:.3e} > {:.1e})').format(
                                     cond, condition_limit))
    return A11 - A12 @ scipy.linalg.solve(A22, A21)


def _node_states(nodes):
    """ Map each dynamic bus to the index of its angle and frequency state.
    """

    gens = [b for b, n in nodes.items() if n[0] == 'G']
    motors = [b for b, n in nodes.items() if n[0] == 'L']
    ng, nl = len(gens), len(motors)
    index = OrderedDict()
    labels = [None] * (2 * (ng + nl))
    for k, bus in enumerate(gens):
        index[bus] = (k, ng + k)
        labels[k] = 'delta_G[{}]'.format(bus)
        labels[ng + k] = 'omega_G[{}]'.format(bus)
    for k, bus in enumerate(motors):
        index[bus] = (2 * ng + k, 2 * ng + nl + k)
        labels[2 * ng + k] = 'delta_L[{}]'.format(bus)
        labels[2 * ng + nl + k] = 'omega_L[{}]'.format(bus)
    return index, labels


def build_base_system(case, condition_limit=None):
    """ Assemble the device free model (A0, B0, C0) of a case.
    """

    nodes = dynamic_nodes(case)
    if not nodes:
        raise CaseError('case has no dynamic node (generator or motor load)')
    bus_ids = case.bus_ids()
    dyn = [bus_ids.index(b) for b in nodes]
    alg = [i for i in range(len(bus_ids)) if i not in dyn]
    L = susceptance_laplacian(case)
    L_red = kron_reduce(L[np.ix_(dyn, dyn)], L[np.ix_(dyn, alg)],
                        L[np.ix_(alg, dyn)], L[np.ix_(alg, alg)],
                        condition_limit)
    if alg:
        log('kron reduction eliminated {} algebraic bus(es)'.format(len(alg)))

    index, labels = _node_states(nodes)
    n = len(labels)
    A = np.zeros((n, n))
    node_list = list(nodes.keys())
    for k, bus in enumerate(node_list):
        kind, m, d = nodes[bus]
        i_delta, i_omega = index[bus]
        A[i_delta, i_omega] = 1.0
        A[i_omega, i_omega] = -d / m
        for j, other in enumerate(node_list):
            A[i_omega, index[other][0]] = -L_red[k, j] / m

    B = np.zeros((n, len(case.disturbances)))
    input_labels = []
    for k, dist in enumerate(case.disturbances):
        if dist.bus not in nodes:
            raise CaseError(('disturbance[{}]: bus {} has no dynamic frequen'
                             'cy state').format(k, dist.bus))
        B[index[dist.bus][1], k] = dist.magnitude / nodes[dist.bus][1]
        input_labels.append('dP[{}]'.format(dist.bus))

    C = np.zeros((len(case.outputs), n))
    output_labels = []
    for k, bus in enumerate(case.outputs):
        if bus not in nodes:
            raise CaseError(('output[{}]: bus {} has no dynamic frequency st'
                             'ate').format(k, bus))
        C[k, index[bus][1]] = case.bus(bus).omega0
        output_labels.append('omega[{}]'.format(bus))

    node_inertia = OrderedDict((b, nodes[b][1]) for b in node_list)
    return LinearSystem(A, B, C, labels, input_labels, output_labels,
                        node_inertia=node_inertia)


def frequency_state(base, bus):
    """ Index of the frequency state of a bus in a device free system, or
        None if the bus has no dynamic frequency state.
    """

    for label in ['omega_G[{}]'.format(bus), 'omega_L[{}]'.format(bus)]:
        if label in base.state_labels:
            return base.state_index(label)
    return None


def attach_devices(base, case, gains):
    """ Close the loop between the grid model and all candidate devices of
        the case, using the given gains.
    """

    missing = [d.id for d in case.devices if d.id not in gains.gains]
    if missing:
        raise CaseError('no gains given for device(s) {}'.format(
                        ', '.join(missing)))
    negative = gains.negative_entries()
    if negative:
        raise CaseError('negative gains for device {}'.format(negative[0][0]))

    n0 = base.n_states()
    nv = len(case.devices)
    n = n0 + 2 * nv
    A = np.zeros((n, n))
    A[:n0, :n0] = base.A
    B = np.zeros((n, base.B.shape[1]))
    B[:n0, :] = base.B
    C = np.zeros((base.C.shape[0], n))
    C[:, :n0] = base.C
    labels = list(base.state_labels)
    registry = OrderedDict()

    for v, dev in enumerate(case.devices):
        col = frequency_state(base, dev.bus)
        if col is None:
            raise CaseError(('device {}: bus {} has no dynamic frequency sta'
                             'te').format(dev.id, dev.bus))
        r1, r2 = n0 + 2 * v, n0 + 2 * v + 1
        scale = dev.gain_scale()
        A[r1, r1] = -(dev.t1 + dev.t2) * scale
        A[r1, r2] = 1.0
        A[r2, r1] = -scale
        A[r1, col] = gains.inertia(dev.id) * scale
        A[r2, col] = gains.damping(dev.id) * scale
        A[col, r1] = -1.0 / base.node_inertia[dev.bus]
        labels.append('P_dev[{}]'.format(dev.id))
        labels.append('omega_dev[{}]'.format(dev.id))
        registry[param_id(dev.id, 'inertia')] = (r1, col, scale)
        registry[param_id(dev.id, 'damping')] = (r2, col, scale)

    return LinearSystem(A, B, C, labels, base.input_labels,
                        base.output_labels, registry, base.node_inertia)


def system_derivative(sys, pid):
    """ dA/dalpha as a sparse matrix with a single entry.
    """

    if pid not in sys.registry:
        raise CaseError('unknown parameter id "{}"'.format(pid))
    row, col, value = sys.registry[pid]
    n = sys.n_states()
    return scipy.sparse.coo_matrix(([value], ([row], [col])), shape=(n, n))


def build_system(case, gains=None):
    """ Convenience: device free model plus devices closed with gains (the
        case's initial gains by default).
    """

    if gains is None:
        gains = case.initial_gains()
    return attach_devices(build_base_system(case), case, gains)


def frequency_response(sys, s):
    """ C (sI - A)^-1 B at a complex frequency s.
    """

    n = sys.n_states()
    return sys.C @ scipy.linalg.solve(s * np.eye(n) - sys.A, sys.B)


def descriptor_response(case, s):
    """ Frequency response of the un-reduced differential-algebraic model

            delta'     = omega
            m omega'   = -d omega - (L11 delta + L12 theta) + dP
            0          = -(L21 delta + L22 theta)

        evaluated by one dense solve, without Kron reduction.
    """

    nodes = dynamic_nodes(case)
    bus_ids = case.bus_ids()
    node_list = list(nodes.keys())
    dyn = [bus_ids.index(b) for b in node_list]
    alg = [i for i in range(len(bus_ids)) if i not in dyn]
    nd, na = len(dyn), len(alg)
    L = susceptance_laplacian(case)
    order = dyn + alg
    Lp = L[np.ix_(order, order)]
    size = 2 * nd + na
    E = np.zeros((size, size))
    F = np.zeros((size, size))
    E[:nd, :nd] = np.eye(nd)
    F[:nd, nd:2 * nd] = np.eye(nd)
    for k, bus in enumerate(node_list):
        E[nd + k, nd + k] = nodes[bus][1]
        F[nd + k, nd + k] = -nodes[bus][2]
    F[nd:2 * nd, :nd] = -Lp[:nd, :nd]
    F[nd:2 * nd, 2 * nd:] = -Lp[:nd, nd:]
    F[2 * nd:, :nd] = -Lp[nd:, :nd]
    F[2 * nd:, 2 * nd:] = -Lp[nd:, nd:]
    G = np.zeros((size, len(case.disturbances)))
    for k, dist in enumerate(case.disturbances):
        G[nd + node_list.index(dist.bus), k] = dist.magnitude
    H = np.zeros((len(case.outputs), size))
    for k, bus in enumerate(case.outputs):
        H[k, nd + node_list.index(bus)] = case.bus(bus).omega0
    return H @ scipy.linalg.solve(s * E - F, G)


def load_gains(text, case):
    """ Parse a gains document {"gains": {device_id: {"inertia": .., "damping":
        ..}}}. Devices not listed keep their initial gains from the case.
    """

    doc = parse_json_document(text, 'gains file', CaseError)
    entries = doc.get('gains', doc) if isinstance(doc, dict) else None
    if not isinstance(entries, dict):
        raise CaseError('gains file: expected an object of device gains')
    gains = case.initial_gains().gains
    for device_id, entry in entries.items():
        where = 'gains[{}]'.format(device_id)
        if device_id not in gains:
            raise CaseError('{}: unknown device'.format(where))
        if not isinstance(entry, dict):
            raise CaseError('{}: must be an object'.format(where))
        gains[device_id] = (_number(entry, 'inertia', where, 0.0),
                            _number(entry, 'damping', where, 0.0))
    result = DeviceGains(gains)
    if result.negative_entries():
        raise CaseError('gains file: negative gains for device {}'.format(
                        result.negative_entries()[0][0]))
    return result
