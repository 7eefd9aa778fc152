""" Capability of a device from measured frequency excursions.

    A scaled p-norm ball ||(h |omega|, |omega'|)||_p <= c is fitted to a cloud
    of (frequency deviation, RoCoF) samples. A device delivering
    K omega + M omega' stays below its power capacity P on the whole ball iff

        ||(K / h, M)||_q <= P / c,    1/p + 1/q = 1
"""

import csv
import io
import math
from collections import OrderedDict
import numpy as np
from dateutil import parser as dateparser
from gridinertia import current_cfg
from gridinertia.errors import CapabilityError, MeasurementError
from gridinertia.subroutines import log


NORM_ORDERS = [1.0, 2.0, math.inf]


def norm_order(p):
    """ Normalize a norm order given as number or string ('inf', 'infinity').
    """

    if isinstance(p, str):
        if p.strip().lower() in ['inf', 'infinity', 'max']:
            return math.inf
        try:
            p = float(p)
        except ValueError:
            raise CapabilityError('invalid norm order "{}"'.format(p))
    p = float(p)
    if p not in NORM_ORDERS:
        raise CapabilityError(('norm order must be one of 1, 2, inf, got {}'
                               '').format(p))
    return p


def dual_order(p):
    p = norm_order(p)
    if p == 1.0:
        return math.inf
    if p == math.inf:
        return 1.0
    return p / (p - 1.0)


def order_label(p):
    return 'inf' if p == math.inf else '{:g}'.format(p)


class MeasurementSet():
    """ Samples of frequency deviation (Hz) and RoCoF (Hz/s). Times are in
        seconds relative to the first sample.
    """

    def __init__(self, times, frequency, rocof):
        self.times = np.asarray(times, dtype=float)
        self.frequency = np.asarray(frequency, dtype=float)
        self.rocof = np.asarray(rocof, dtype=float)

    def __len__(self):
        return len(self.frequency)

    def merged(self, other):
        offset = self.times[-1] + 1.0 if len(self) else 0.0
        return MeasurementSet(np.concatenate((self.times,
                                              other.times + offset)),
                              np.concatenate((self.frequency,
                                              other.frequency)),
                              np.concatenate((self.rocof, other.rocof)))


def _cell(row, key, index):
    val = row.get(key)
    if val is None or val.strip() == '':
        raise MeasurementError('row {}: missing value for "{}"'.format(
                               index, key))
    try:
        num = float(val)
    except ValueError:
        raise MeasurementError('row {}: "{}" is not a number ({!r})'.format(
                               index, key, val))
    if not math.isfinite(num):
        raise MeasurementError('row {}: "{}" is not finite'.format(index, key))
    return num


def load_measurements(text):
    """ Parse a measurement CSV with the columns time_s (or an ISO 8601
        timestamp column time), freq_dev_hz and optional rocof_hz_s. A
        missing RoCoF column is filled by central differences of the
        frequency. Row indices in error messages count data rows from 1.
    """

    reader = csv.DictReader(io.StringIO(text))
    columns = [c.strip() for c in (reader.fieldnames or [])]
    reader.fieldnames = columns
    if 'freq_dev_hz' not in columns:
        raise MeasurementError('measurement file: missing column freq_dev_hz')
    if 'time_s' in columns:
        time_key = 'time_s'
    elif 'time' in columns:
        time_key = 'time'
    else:
        raise MeasurementError(('measurement file: missing time column (time'
                                '_s or time)'))
    has_rocof = 'rocof_hz_s' in columns

    times, freq, rocof = [], [], []
    start = None
    for index, row in enumerate(reader, start=1):
        if time_key == 'time_s':
            times.append(_cell(row, 'time_s', index))
        else:
            try:
                stamp = dateparser.isoparse(row.get('time', '').strip())
            except (ValueError, OverflowError):
                raise MeasurementError(('row {}: invalid ISO 8601 timestamp '
                                        '{!r}').format(index, row.get('time')))
            if start is None:
                start = stamp
            times.append((stamp - start).total_seconds())
        freq.append(_cell(row, 'freq_dev_hz', index))
        if has_rocof:
            rocof.append(_cell(row, 'rocof_hz_s', index))

    if not freq:
        raise MeasurementError('measurement file contains no samples')
    times = np.array(times)
    if np.any(np.diff(times) <= 0):
        bad = int(np.argmax(np.diff(times) <= 0)) + 2
        raise MeasurementError(('row {}: time stamps must be strictly increa'
                                'sing').format(bad))
    times = times - times[0]
    if not has_rocof:
        if len(freq) < 2:
            raise MeasurementError(('at least two samples are needed to deri'
                                    've RoCoF from frequency'))
        rocof = np.gradient(np.array(freq), times)
        log('derived RoCoF of {} samples by central differences'.format(
            len(freq)))
    return MeasurementSet(times, freq, rocof)


def scaled_norms(data, p, h):
    """ ||(h |omega_k|, |omega'_k|)||_p per sample.
    """

    p = norm_order(p)
    pts = np.column_stack((h * np.abs(data.frequency), np.abs(data.rocof)))
    return np.linalg.norm(pts, ord=p, axis=1)


class CapabilityBall():

    def __init__(self, p, h, c, coverage, inside=None, degenerate=False):
        self.p = norm_order(p)
        self.h = h
        self.c = c
        self.coverage = coverage
        self.inside = inside
        self.degenerate = degenerate

    def contains(self, frequency, rocof, tolerance=0.0):
        pts = np.column_stack((self.h * np.abs(np.atleast_1d(frequency)),
                               np.abs(np.atleast_1d(rocof))))
        return np.linalg.norm(pts, ord=self.p, axis=1) <= \
            self.c * (1.0 + tolerance)

    def to_dict(self):
        return OrderedDict([('p', order_label(self.p)),
                            ('h', self.h),
                            ('c', self.c),
                            ('coverage', self.coverage),
                            ('inside', self.inside),
                            ('degenerate', self.degenerate)])


def fit_norm_ball(data, p, h, coverage=1.0, allow_degenerate=False,
                  radius_floor=None):
    """ Smallest radius c such that ceil(coverage * N) samples lie inside
        the ball. A radius below the floor raises unless allow_degenerate is
        set, in which case c is floored and the ball flagged degenerate.
    """

    if radius_floor is None:
        radius_floor = current_cfg().radius_floor()
    if len(data) == 0:
        raise CapabilityError('cannot fit a capability ball to empty data')
    if not 0.0 < coverage <= 1.0:
        raise CapabilityError('coverage must be in (0, 1], got {}'.format(
                              coverage))
    if not h > 0:
        raise CapabilityError('frequency scaling h must be positive')
    norms = np.sort(scaled_norms(data, p, h))
    count = max(int(math.ceil(coverage * len(norms) - 1e-9)), 1)
    c = float(norms[count - 1])
    degenerate = False
    if c < radius_floor:
        if not allow_degenerate:
            raise CapabilityError(('fitted radius {:.3e} is below the floor '
                                   '{:.1e} (degenerate measurement cloud)'
                                   '').format(c, radius_floor))
        log('WARNING: degenerate measurement cloud, flooring radius to {}'
            ''.format(radius_floor))
        c = radius_floor
        degenerate = True
    inside = int(np.sum(norms <= c))
    return CapabilityBall(p, h, c, coverage, inside, degenerate)


class GainConstraint():
    """ ||(K / h, M)||_q <= bound on the gains of one device.
    """

    def __init__(self, q, h, bound, c=1.0):
        self.q = q
        self.h = h
        self.bound = bound
        self.c = c

    def form(self):
        if self.q == math.inf:
            return 'box'
        if self.q == 1.0:
            return 'diamond'
        return 'disk'

    def norm(self, inertia, damping):
        return float(np.linalg.norm([damping / self.h, inertia], ord=self.q))

    def contains(self, inertia, damping, tolerance=0.0):
        return self.norm(inertia, damping) <= self.bound + tolerance

    def project(self, inertia, damping):
        """ Scale (M, K) back onto the constraint if it lies outside.
        """

        size = self.norm(inertia, damping)
        if size <= self.bound or size == 0.0:
            return inertia, damping
        factor = self.bound / size
        return inertia * factor, damping * factor

    def norm_rows(self, count=None, anchor=None):
        """ Coefficient pairs (a_M, a_K) with a_M M + a_K K <= ||(K/h, M)||_q
            for non-negative gains; equality holds for some row at every
            point for q in {1, inf}. The quadratic case uses count tangent
            half-planes, one of them aligned with anchor = (M, K).
        """

        if self.q == math.inf:
            return [(1.0, 0.0), (0.0, 1.0 / self.h)]
        if self.q == 1.0:
            return [(1.0, 1.0 / self.h)]
        if count is None:
            count = current_cfg().halfplanes()
        theta0 = 0.0
        if anchor is not None and (anchor[0] > 0 or anchor[1] > 0):
            theta0 = math.atan2(anchor[0], anchor[1] / self.h)
        rows = []
        for k in range(count):
            theta = theta0 + 2.0 * math.pi * k / count
            rows.append((math.sin(theta), math.cos(theta) / self.h))
        return rows

    def to_dict(self):
        return OrderedDict([('q', order_label(self.q)),
                            ('h', self.h),
                            ('bound', self.bound),
                            ('form', self.form())])


def dual_constraint(ball, capacity):
    """ Gain constraint of a device with power capacity P on the given ball:
        ||(K/h, M)||_q <= P / c.
    """

    if not capacity > 0:
        raise CapabilityError('capacity must be positive, got {}'.format(
                              capacity))
    return GainConstraint(dual_order(ball.p), ball.h, capacity / ball.c,
                          ball.c)


def _unit_boundary(order, resolution):
    """ Points on the unit sphere of the given norm in the plane, including
        the axes and diagonals.
    """

    count = 8 * int(math.ceil(resolution / 8.0))
    phi = 2.0 * math.pi * np.arange(count) / count
    dirs = np.column_stack((np.cos(phi), np.sin(phi)))
    return dirs / np.linalg.norm(dirs, ord=order, axis=1)[:, None]


def _max_power(gains, primal, chunk=512):
    """ Per gain point, the largest |X x + Y y| over all primal points.
    """

    best = np.empty(len(gains))
    for start in range(0, len(gains), chunk):
        block = gains[start:start + chunk]
        best[start:start + chunk] = np.max(np.abs(block @ primal.T), axis=1)
    return best


class DualityReport():

    def __init__(self, capacity, expected, max_power, min_boundary_power,
                 inflated_max_power, tolerance=1e-6):
        self.capacity = capacity
        self.expected = expected
        self.max_power = max_power
        self.min_boundary_power = min_boundary_power
        self.inflated_max_power = inflated_max_power
        self.within = max_power <= capacity * (1.0 + tolerance)
        self.tight = abs(max_power - expected) <= tolerance * expected and \
            min_boundary_power >= expected * (1.0 - tolerance)
        self.inflation_violates = \
            inflated_max_power > capacity * (1.0 + tolerance)

    def passed(self):
        return self.within and self.tight and self.inflation_violates

    def to_dict(self):
        return OrderedDict([('capacity', self.capacity),
                            ('expected_max_power', self.expected),
                            ('max_power', self.max_power),
                            ('min_boundary_power', self.min_boundary_power),
                            ('inflated_max_power', self.inflated_max_power),
                            ('within_capacity', bool(self.within)),
                            ('tight', bool(self.tight)),
                            ('inflation_violates',
                             bool(self.inflation_violates)),
                            ('passed', bool(self.passed()))])


def verify_duality(constraint, ball, capacity, resolution=10000, scale=1.0):
    """ Brute-force check of the dual constraint: the worst power
        |K omega + M omega'| over the boundary of the ball, for gains on the
        boundary of the constraint shrunk or grown by scale, must equal
        scale * capacity; gains inflated by 1.01 must exceed the capacity.
    """

    primal = ball.c * _unit_boundary(ball.p, resolution)
    dual = constraint.bound * _unit_boundary(constraint.q, resolution)
    powers = _max_power(scale * dual, primal)
    inflated = _max_power(1.01 * dual, primal)
    report = DualityReport(capacity, scale * capacity, float(np.max(powers)),
                           float(np.min(powers)), float(np.max(inflated)))
    log(('duality check p={} q={}: max power {:.9g} (capacity {:.9g}), '
         'passed={}').format(order_label(ball.p), order_label(constraint.q),
                             report.max_power, capacity, report.passed()))
    return report
