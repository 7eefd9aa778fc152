""" Domain types shared by the modules of gridinertia.

    All types are treated as immutable after construction: operations return
    new objects instead of changing their inputs.
"""

from collections import OrderedDict
import numpy as np


class Bus():

    def __init__(self, bus_id, omega0):
        self.id = bus_id
        self.omega0 = omega0


class Line():

    def __init__(self, index, from_bus, to_bus, susceptance):
        self.index = index
        self.from_bus = from_bus
        self.to_bus = to_bus
        self.susceptance = susceptance


class Generator():
    """ Synchronous machine in swing-equation form. Inertia constant M in
        seconds on the machine base S_B (pu of the system base).
    """

    def __init__(self, bus, inertia, damping=0.0, base=1.0):
        self.bus = bus
        self.inertia = inertia
        self.damping = damping
        self.base = base


class Load():
    """ Frequency dependent load with a motor share providing inertia.
    """

    def __init__(self, bus, power, motor_fraction=0.1, motor_inertia=1.5,
                 damping=2.5):
        self.bus = bus
        self.power = power
        self.motor_fraction = motor_fraction
        self.motor_inertia = motor_inertia
        self.damping = damping

    def inertia(self):
        """ Motor inertia on the system base (s * pu).
        """

        return self.motor_inertia * self.motor_fraction * abs(self.power)

    def frequency_damping(self):
        return self.damping * abs(self.power)


class Device():
    """ Candidate synthetic inertia device

            P(s) = (M s + K) / ((T1 s + 1)(T2 s + 1)) * omega(s)
    """

    def __init__(self, device_id, bus, t1, t2, capacity, inertia=0.0,
                 damping=0.0):
        self.id = device_id
        self.bus = bus
        self.t1 = t1
        self.t2 = t2
        self.capacity = capacity
        self.inertia = inertia
        self.damping = damping

    def gain_scale(self):
        """ The single nonzero entry of dA/dalpha for both of the device's
            parameters.
        """

        return 1.0 / (self.t1 * self.t2)


class Disturbance():

    def __init__(self, bus, magnitude):
        self.bus = bus
        self.magnitude = magnitude


class PowerSystemCase():
    """ Declarative grid description as read from a case file.
    """

    def __init__(self, buses, lines, generators, loads, devices, disturbances,
                 outputs, system_base_mva=100.0, nominal_frequency_hz=50.0):
        self.buses = list(buses)
        self.lines = list(lines)
        self.generators = list(generators)
        self.loads = list(loads)
        self.devices = list(devices)
        self.disturbances = list(disturbances)
        self.outputs = list(outputs)
        self.system_base_mva = system_base_mva
        self.nominal_frequency_hz = nominal_frequency_hz

    def bus_ids(self):
        return [b.id for b in self.buses]

    def bus(self, bus_id):
        for b in self.buses:
            if b.id == bus_id:
                return b
        return None

    def device(self, device_id):
        for d in self.devices:
            if d.id == device_id:
                return d
        return None

    def device_ids(self):
        return [d.id for d in self.devices]

    def param_ids(self):
        """ Identifiers of all optimization parameters: synthetic inertia and
            synthetic damping of every device, in device order.
        """

        ids = []
        for d in self.devices:
            ids.append(param_id(d.id, 'inertia'))
            ids.append(param_id(d.id, 'damping'))
        return ids

    def initial_gains(self):
        return DeviceGains(OrderedDict((d.id, (d.inertia, d.damping))
                                       for d in self.devices))

    def zero_gains(self):
        return DeviceGains(OrderedDict((d.id, (0.0, 0.0))
                                       for d in self.devices))

    def with_disturbance_scale(self, factor):
        """ Return a copy of the case with all disturbance magnitudes scaled.
        """

        disturbances = [Disturbance(d.bus, d.magnitude * factor)
                        for d in self.disturbances]
        return PowerSystemCase(self.buses, self.lines, self.generators,
                               self.loads, self.devices, disturbances,
                               self.outputs, self.system_base_mva,
                               self.nominal_frequency_hz)

    def with_devices(self, devices):
        return PowerSystemCase(self.buses, self.lines, self.generators,
                               self.loads, devices, self.disturbances,
                               self.outputs, self.system_base_mva,
                               self.nominal_frequency_hz)

    def summary(self):
        return ('{} buses, {} lines, {} generators, {} loads, {} devices, {} '
                'disturbances, {} outputs').format(
                    len(self.buses), len(self.lines), len(self.generators),
                    len(self.loads), len(self.devices),
                    len(self.disturbances), len(self.outputs))


def param_id(device_id, kind):
    """ Parameter identifier, e.g. 'dev1.inertia' or 'dev1.damping'.
    """

    return '{}.{}'.format(device_id, kind)


def split_param_id(pid):
    device_id, _, kind = pid.rpartition('.')
    return device_id, kind


class DeviceGains():
    """ Synthetic inertia M (s) and synthetic damping K (pu) per device.
    """

    def __init__(self, gains):
        self.gains = OrderedDict((k, (float(m), float(d)))
                                 for k, (m, d) in gains.items())

    def device_ids(self):
        return list(self.gains.keys())

    def inertia(self, device_id):
        return self.gains[device_id][0]

    def damping(self, device_id):
        return self.gains[device_id][1]

    def value(self, pid):
        device_id, kind = split_param_id(pid)
        if kind == 'inertia':
            return self.inertia(device_id)
        return self.damping(device_id)

    def as_vector(self, param_ids):
        return np.array([self.value(pid) for pid in param_ids])

    def updated(self, param_ids, vector):
        """ Return new gains with the given parameters set to the values of
            vector.
        """

        gains = OrderedDict(self.gains)
        for pid, val in zip(param_ids, vector):
            device_id, kind = split_param_id(pid)
            m, d = gains[device_id]
            if kind == 'inertia':
                gains[device_id] = (float(val), d)
            else:
                gains[device_id] = (m, float(val))
        return DeviceGains(gains)

    def negative_entries(self):
        return [(k, m, d) for k, (m, d) in self.gains.items()
                if m < 0 or d < 0]

    def total_inertia(self):
        return sum(m for m, d in self.gains.values())

    def total_damping(self):
        return sum(d for m, d in self.gains.values())

    def to_dict(self):
        return OrderedDict((k, OrderedDict([('inertia', m), ('damping', d)]))
                           for k, (m, d) in self.gains.items())


class LinearSystem():
    """ x' = A x + B dP, y = C x with labeled axes.

        registry maps parameter ids to (row, col, value): the position and
        value of the single nonzero entry of dA/dalpha.
    """

    def __init__(self, A, B, C, state_labels, input_labels, output_labels,
                 registry=None, node_inertia=None):
        self.A = A
        self.B = B
        self.C = C
        self.state_labels = list(state_labels)
        self.input_labels = list(input_labels)
        self.output_labels = list(output_labels)
        self.registry = registry if registry is not None else OrderedDict()
        self.node_inertia = node_inertia if node_inertia is not None \
            else OrderedDict()

    def n_states(self):
        return self.A.shape[0]

    def state_index(self, label):
        return self.state_labels.index(label)

    def param_ids(self):
        return list(self.registry.keys())
