""" Placement of synthetic inertia and damping by sequential linear
    programming.

    Every iteration linearizes damping ratios, overshoots and RoCoFs around
    the current gains, solves an LP inside a per-parameter trust region and
    accepts the step only if the re-evaluated (true) objective decreases.
"""

import copy
import math
import os
from collections import OrderedDict
import numpy as np
import scipy.optimize
from gridinertia import current_cfg
from gridinertia.capability import (CapabilityBall, GainConstraint,
                                    dual_order, order_label)
from gridinertia.errors import (ConfigError, InfeasibleError, LPError,
                                NumericalError, PlacementError,
                                UnboundedError)
from gridinertia.models import DeviceGains, LinearSystem, param_id
from gridinertia.netmodel import attach_devices, build_base_system
from gridinertia.response import analyze_system
from gridinertia.subroutines import log, parse_json_document, read_text
from util import simplex

BUDGET_MODES = ['fixed-capacity', 'total-budget', 'capacity-as-variable']
WEIGHT_KEYS = ['zeta', 'rocof', 'overshoot', 'zeta_mean', 'rocof_mean',
               'overshoot_mean', 'capacity']
BOUND_KEYS = ['zeta_lo', 'rocof_lo', 'rocof_hi', 'overshoot_lo',
              'overshoot_hi']
STEP_COST = 1e-9


def _float(doc, key, where, default=None):
    if key not in doc or doc[key] is None:
        return default
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError('{}: "{}" must be a number'.format(where, key))
    return float(val)


class PlacementConfig():
    """ Weights, bounds, capability and budget settings of a placement run.

        Bounds on RoCoF (Hz/s) and overshoot (Hz) act on the signed extrema;
        an omitted lower bound defaults to the negated upper bound.
    """

    def __init__(self, weights=None, bounds=None, penalties=None,
                 capability=None, budget_mode='fixed-capacity',
                 total_budget=None, trust_region=None, trust_region_floor=None,
                 max_iterations=None, improvement_threshold=None,
                 scenarios=None, label='placement'):
        cfg = current_cfg()
        self.weights = OrderedDict((k, 0.0) for k in WEIGHT_KEYS)
        self.weights.update(weights or {})
        self.bounds = OrderedDict((k, None) for k in BOUND_KEYS)
        self.bounds.update(bounds or {})
        for name in ['rocof', 'overshoot']:
            hi = self.bounds[name + '_hi']
            if hi is not None and self.bounds[name + '_lo'] is None:
                self.bounds[name + '_lo'] = -hi
        self.penalties = OrderedDict((k, cfg.slack_penalty())
                                     for k in ['zeta', 'rocof', 'overshoot'])
        self.penalties.update(penalties or {})
        self.capability = capability if capability is not None else \
            CapabilityBall(1.0, 1.0, 1.0, 1.0)
        self.budget_mode = budget_mode
        self.total_budget = total_budget
        self.trust_region = trust_region
        self.trust_region_floor = trust_region_floor \
            if trust_region_floor is not None else cfg.step_size_floor()
        self.max_iterations = max_iterations if max_iterations is not None \
            else cfg.max_iterations()
        self.improvement_threshold = improvement_threshold \
            if improvement_threshold is not None \
            else cfg.improvement_threshold()
        self.scenarios = scenarios or []
        self.label = label
        self.validate()

    def validate(self):
        for key, val in self.weights.items():
            if val < 0:
                raise ConfigError('weight "{}" must be non-negative'.format(
                                  key))
        if self.budget_mode not in BUDGET_MODES:
            raise ConfigError('budget mode must be one of {}'.format(
                              ', '.join(BUDGET_MODES)))
        if self.budget_mode == 'total-budget' and \
                (self.total_budget is None or self.total_budget < 0):
            raise ConfigError('total-budget mode needs a non-negative total')
        if not any(v > 0 for v in self.weights.values()) and \
                not self.has_bounds() and not self.scenarios:
            raise ConfigError('at least one cost weight must be positive')
        for name in ['rocof', 'overshoot']:
            lo, hi = self.bounds[name + '_lo'], self.bounds[name + '_hi']
            if lo is not None and hi is not None and lo > hi:
                raise ConfigError('{} bounds: lower bound exceeds upper bound'
                                  ''.format(name))
        top = max(self.weights.values())
        for key, val in self.penalties.items():
            if val <= top:
                raise ConfigError(('slack penalty for {} ({}) must dominate '
                                   'the cost weights').format(key, val))
        if self.max_iterations < 0:
            raise ConfigError('max_iterations must be non-negative')

    def has_bounds(self):
        return any(v is not None for v in self.bounds.values())

    def with_weights(self, weights, label):
        other = copy.copy(self)
        other.weights = OrderedDict((k, 0.0) for k in WEIGHT_KEYS)
        other.weights.update(weights)
        other.scenarios = []
        other.label = label
        other.validate()
        return other

    def scenario_configs(self):
        """ (label, config) per scenario; the config itself if none are
            listed.
        """

        if not self.scenarios:
            return [(self.label, self)]
        return [(label, self.with_weights(weights, label))
                for label, weights in self.scenarios]

    def gain_constraint(self, device, capacity=None):
        if capacity is None:
            capacity = device.capacity
        ball = self.capability
        return GainConstraint(dual_order(ball.p), ball.h, capacity / ball.c,
                              ball.c)

    def uses_capacity_variables(self):
        return self.budget_mode != 'fixed-capacity'

    def to_dict(self):
        doc = OrderedDict()
        doc['label'] = self.label
        doc['weights'] = OrderedDict(self.weights)
        doc['bounds'] = OrderedDict(self.bounds)
        doc['penalties'] = OrderedDict(self.penalties)
        doc['capability'] = OrderedDict([('p', order_label(self.capability.p)),
                                         ('h', self.capability.h),
                                         ('c', self.capability.c)])
        doc['budget'] = OrderedDict([('mode', self.budget_mode),
                                     ('total', self.total_budget)])
        doc['trust_region'] = OrderedDict([('initial', self.trust_region),
                                           ('floor', self.trust_region_floor)])
        doc['max_iterations'] = self.max_iterations
        doc['improvement_threshold'] = self.improvement_threshold
        doc['scenarios'] = [OrderedDict([('label', label), ('weights', w)])
                            for label, w in self.scenarios]
        return doc


def _capability_from_doc(doc, base_dir):
    if 'file' in doc:
        path = doc['file']
        if base_dir and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        loaded = parse_json_document(read_text(path, 'capability file'),
                                     'capability file', ConfigError)
        doc = loaded.get('ball', loaded)
    where = 'capability'
    try:
        ball = CapabilityBall(doc.get('p', 1), _float(doc, 'h', where, 1.0),
                              _float(doc, 'c', where, 1.0),
                              _float(doc, 'coverage', where, 1.0))
    except NumericalError as e:
        raise ConfigError('capability: {}'.format(e))
    if not ball.h > 0 or not ball.c > 0:
        raise ConfigError('capability: h and c must be positive')
    return ball


def load_placement_config(text, base_dir=None):
    """ Parse a placement config document (see docs/schema.md).
    """

    doc = parse_json_document(text, 'placement config', ConfigError)
    if not isinstance(doc, dict):
        raise ConfigError('placement config: top level must be an object')

    def section(key):
        val = doc.get(key, OrderedDict())
        if not isinstance(val, dict):
            raise ConfigError('placement config: "{}" must be an object'
                              ''.format(key))
        return val

    weights = OrderedDict()
    for key, val in section('weights').items():
        if key not in WEIGHT_KEYS:
            raise ConfigError('weights: unknown weight "{}"'.format(key))
        weights[key] = _float(section('weights'), key, 'weights')
    bounds = OrderedDict()
    for key in section('bounds'):
        if key not in BOUND_KEYS:
            raise ConfigError('bounds: unknown bound "{}"'.format(key))
        bounds[key] = _float(section('bounds'), key, 'bounds')
    penalties = OrderedDict((k, _float(section('penalties'), k, 'penalties'))
                            for k in section('penalties'))
    capability = _capability_from_doc(section('capability'), base_dir) \
        if 'capability' in doc else None
    budget = section('budget')
    trust = section('trust_region')

    scenarios = []
    for idx, entry in enumerate(doc.get('scenarios', [])):
        if not isinstance(entry, dict) or 'label' not in entry:
            raise ConfigError('scenarios[{}]: needs a label'.format(idx))
        sw = entry.get('weights', {})
        for key in sw:
            if key not in WEIGHT_KEYS:
                raise ConfigError('scenarios[{}]: unknown weight "{}"'.format(
                                  idx, key))
        scenarios.append((str(entry['label']),
                          OrderedDict((k, _float(sw, k, 'scenarios'))
                                      for k in sw)))

    max_iterations = doc.get('max_iterations')
    if max_iterations is not None and (isinstance(max_iterations, bool) or
                                       not isinstance(max_iterations, int)):
        raise ConfigError('max_iterations must be an integer')
    return PlacementConfig(weights, bounds, penalties, capability,
                           budget.get('mode', 'fixed-capacity'),
                           _float(budget, 'total', 'budget'),
                           _float(trust, 'initial', 'trust_region'),
                           _float(trust, 'floor', 'trust_region'),
                           max_iterations,
                           _float(doc, 'improvement_threshold', 'config'),
                           scenarios, str(doc.get('label', 'placement')))


def evaluate(case, gains, seeds=None, with_sensitivities=True, base=None):
    """ Metrics (in Hz and Hz/s) of the closed loop with the given gains and
        their sensitivities to every device parameter.
    """

    if base is None:
        base = build_base_system(case)
    sys = attach_devices(base, case, gains)
    sys_hz = LinearSystem(sys.A, sys.B, sys.C / (2.0 * math.pi),
                          sys.state_labels, sys.input_labels,
                          sys.output_labels, sys.registry, sys.node_inertia)
    return analyze_system(sys_hz, seeds, with_sensitivities)


def required_capacity(case, config, gains):
    """ Per-device capacity c ||(K/h, M)||_q needed to deliver the gains on
        the capability ball.
    """

    ball = config.capability
    q = dual_order(ball.p)
    caps = OrderedDict()
    for dev in case.devices:
        vec = [gains.damping(dev.id) / ball.h, gains.inertia(dev.id)]
        caps[dev.id] = ball.c * float(np.linalg.norm(vec, ord=q))
    return caps


def bound_violations(bundle, config):
    """ Total violation of the hard bounds per metric kind.
    """

    b = config.bounds
    viol = OrderedDict([('zeta', 0.0), ('rocof', 0.0), ('overshoot', 0.0)])
    if b['zeta_lo'] is not None and len(bundle.zeta):
        viol['zeta'] = float(np.sum(np.maximum(0.0,
                                               b['zeta_lo'] - bundle.zeta)))
    for name, ext in [('rocof', bundle.rocof),
                      ('overshoot', bundle.overshoot)]:
        vals = ext.signed()
        if b[name + '_hi'] is not None:
            viol[name] += float(np.sum(np.maximum(0.0,
                                                  vals - b[name + '_hi'])))
        if b[name + '_lo'] is not None:
            viol[name] += float(np.sum(np.maximum(0.0,
                                                  b[name + '_lo'] - vals)))
    return viol


def objective_value(bundle, config, case, gains):
    """ True objective: weighted metrics plus slack penalties on bound
        violations (and the capacity cost in capacity-as-variable mode).
    """

    w = config.weights
    val = 0.0
    if len(bundle.zeta):
        val -= w['zeta'] * bundle.zeta_min()
        val -= w['zeta_mean'] * bundle.zeta_mean()
    val += w['rocof'] * bundle.R_inf() + w['overshoot'] * bundle.S_inf()
    val += w['rocof_mean'] * bundle.R_mean()
    val += w['overshoot_mean'] * bundle.S_mean()
    if config.budget_mode == 'capacity-as-variable':
        val += w['capacity'] * sum(required_capacity(case, config,
                                                     gains).values())
    for key, amount in bound_violations(bundle, config).items():
        val += config.penalties[key] * amount
    return val


def metric_summary(bundle):
    return OrderedDict([('zeta_min', bundle.zeta_min()),
                        ('zeta_mean', bundle.zeta_mean()),
                        ('rocof_max', bundle.R_inf()),
                        ('overshoot_max', bundle.S_inf()),
                        ('rocof_mean', bundle.R_mean()),
                        ('overshoot_mean', bundle.S_mean())])


class LinearProgram():
    """ min c x  s.t.  A_ub x <= b_ub,  lo <= x <= hi  with named variables.
    """

    def __init__(self):
        self.names = []
        self.cost = []
        self.lower = []
        self.upper = []
        self.rows = []
        self.rhs = []
        self.row_names = []
        self.params = []

    def add_variable(self, name, cost=0.0, lower=0.0, upper=math.inf):
        self.names.append(name)
        self.cost.append(cost)
        self.lower.append(lower)
        self.upper.append(upper)
        return len(self.names) - 1

    def add_row(self, coefficients, rhs, name=''):
        """ coefficients maps variable index -> value.
        """

        self.rows.append(dict(coefficients))
        self.rhs.append(rhs)
        self.row_names.append(name)

    def index(self, name):
        return self.names.index(name)

    def has_variable(self, name):
        return name in self.names

    def standard_form(self):
        """ Dense (c, A_ub, b_ub, bounds).
        """

        n = len(self.names)
        A = np.zeros((len(self.rows), n))
        for i, row in enumerate(self.rows):
            for j, val in row.items():
                A[i, j] += val
        bounds = list(zip(self.lower, self.upper))
        return np.array(self.cost, dtype=float), A, \
            np.array(self.rhs, dtype=float), bounds

    def step(self, x):
        """ Delta alpha from a solution vector of the split step variables.
        """

        return np.array([x[self.index('step+.' + pid)] -
                         x[self.index('step-.' + pid)]
                         for pid in self.params])


def _add_pair_rows(lp, step_vars, name, values, grads, lo, hi, penalty,
                   dominate_var):
    """ Rows for the signed extrema of one metric kind: two-sided bounds
        with slacks for pairs violating them now, and the worst-case
        variable dominating all predicted magnitudes.
    """

    m, d = values.shape
    for a in range(m):
        for b in range(d):
            g = grads[:, a, b]
            v = values[a, b]
            tag = '{}[{},{}]'.format(name, a, b)
            row_pos = _step_row(step_vars, g)
            row_neg = _step_row(step_vars, -g)
            if hi is not None:
                row = dict(row_pos)
                if v > hi:
                    row[lp.add_variable('slack.{}_hi[{},{}]'.format(name, a,
                                                                   b),
                                        penalty)] = -1.0
                lp.add_row(row, hi - v, tag + '<=hi')
            if lo is not None:
                row = dict(row_neg)
                if v < lo:
                    row[lp.add_variable('slack.{}_lo[{},{}]'.format(name, a,
                                                                   b),
                                        penalty)] = -1.0
                lp.add_row(row, v - lo, tag + '>=lo')
            if dominate_var is not None:
                row = dict(row_pos)
                row[dominate_var] = -1.0
                lp.add_row(row, -v, tag + '<=worst')
                row = dict(row_neg)
                row[dominate_var] = -1.0
                lp.add_row(row, v, tag + '>=-worst')


def _step_row(step_vars, grad):
    """ Coefficients of g . Delta alpha in terms of the split step
        variables.
    """

    row = {}
    for (plus, minus), val in zip(step_vars, grad):
        if val != 0.0:
            row[plus] = val
            row[minus] = -val
    return row


def build_lp(bundle, config, gains, delta_max, case, anchors=None):
    """ Linearized placement subproblem around the current gains.

        delta_max maps parameter ids to trust region radii. anchors maps
        device ids to the point the quadratic capability half-planes are
        aligned with (the current gains by default).
    """

    pids = bundle.param_ids()
    if not pids:
        raise PlacementError('no device parameters to optimize')
    w = config.weights
    lp = LinearProgram()
    lp.params = list(pids)

    step_vars = []
    for pid in pids:
        alpha = gains.value(pid)
        width = delta_max[pid]
        plus = lp.add_variable('step+.' + pid, STEP_COST, 0.0, width)
        minus = lp.add_variable('step-.' + pid, STEP_COST, 0.0,
                                max(min(width, alpha), 0.0))
        step_vars.append((plus, minus))

    def grad_matrix(source):
        return np.array([source[pid] for pid in pids])

    # mean metric terms enter the cost directly
    mean_cost = np.zeros(len(pids))
    if len(bundle.zeta):
        dz = grad_matrix(bundle.d_zeta)
        mean_cost -= w['zeta_mean'] * np.mean(dz, axis=1)
    if bundle.rocof.value.size:
        mean_cost += w['rocof_mean'] * np.array(
            [np.mean(bundle.d_rocof[pid]) for pid in pids])
        mean_cost += w['overshoot_mean'] * np.array(
            [np.mean(bundle.d_overshoot[pid]) for pid in pids])
    for (plus, minus), val in zip(step_vars, mean_cost):
        lp.cost[plus] += val
        lp.cost[minus] -= val

    # damping ratios
    if len(bundle.zeta):
        dz = grad_matrix(bundle.d_zeta)
        zeta_var = None
        if w['zeta'] > 0:
            zeta_var = lp.add_variable('zeta_min', -w['zeta'], -1.0, 1.0)
        lo = config.bounds['zeta_lo']
        for j, zeta in enumerate(bundle.zeta):
            g = dz[:, j]
            if zeta_var is not None:
                row = _step_row(step_vars, -g)
                row[zeta_var] = 1.0
                lp.add_row(row, zeta, 'zeta[{}]>=zeta_min'.format(j))
            if lo is not None:
                row = _step_row(step_vars, -g)
                if zeta < lo:
                    row[lp.add_variable('slack.zeta_lo[{}]'.format(j),
                                        config.penalties['zeta'])] = -1.0
                lp.add_row(row, zeta - lo, 'zeta[{}]>=lo'.format(j))

    # signed RoCoF and overshoot extrema
    for name, ext, dsource, weight in [
            ('rocof', bundle.rocof, bundle.d_rocof, w['rocof']),
            ('overshoot', bundle.overshoot, bundle.d_overshoot,
             w['overshoot'])]:
        if ext.value.size == 0:
            continue
        worst = None
        if weight > 0:
            worst = lp.add_variable(name + '_max', weight, 0.0)
        grads = np.array([ext.sign * dsource[pid] for pid in pids])
        _add_pair_rows(lp, step_vars, name, ext.signed(), grads,
                       config.bounds[name + '_lo'],
                       config.bounds[name + '_hi'],
                       config.penalties[name], worst)

    _add_capability_rows(lp, step_vars, config, gains, case, anchors)
    return lp


def _add_capability_rows(lp, step_vars, config, gains, case, anchors):
    index = {pid: k for k, pid in enumerate(lp.params)}
    cap_vars = []
    for dev in case.devices:
        m_id = param_id(dev.id, 'inertia')
        k_id = param_id(dev.id, 'damping')
        if m_id not in index:
            continue
        m_plus, m_minus = step_vars[index[m_id]]
        k_plus, k_minus = step_vars[index[k_id]]
        M, K = gains.inertia(dev.id), gains.damping(dev.id)
        anchor = (anchors or {}).get(dev.id, (M, K))
        constraint = config.gain_constraint(dev)
        rows = constraint.norm_rows(anchor=anchor)
        if config.uses_capacity_variables():
            cost = config.weights['capacity'] \
                if config.budget_mode == 'capacity-as-variable' else 0.0
            cap = lp.add_variable('capacity.' + dev.id, cost, 0.0)
            cap_vars.append(cap)
            c = constraint.c
            for r, (a_m, a_k) in enumerate(rows):
                lp.add_row({m_plus: c * a_m, m_minus: -c * a_m,
                            k_plus: c * a_k, k_minus: -c * a_k, cap: -1.0},
                           -c * (a_m * M + a_k * K),
                           'capability.{}[{}]'.format(dev.id, r))
        else:
            for r, (a_m, a_k) in enumerate(rows):
                lp.add_row({m_plus: a_m, m_minus: -a_m,
                            k_plus: a_k, k_minus: -a_k},
                           constraint.bound - (a_m * M + a_k * K),
                           'capability.{}[{}]'.format(dev.id, r))
    if cap_vars and config.total_budget is not None:
        lp.add_row({v: 1.0 for v in cap_vars}, config.total_budget, 'budget')


class LPSolution():

    def __init__(self, x, objective, status, duals=None):
        self.x = x
        self.objective = objective
        self.status = status
        self.duals = duals


def solve_lp(lp, solver=None):
    """ Solve with the bundled simplex ('simplex') or scipy's HiGHS
        ('highs'); the configured solver by default.
    """

    if solver is None:
        solver = current_cfg().lp_solver()
    c, A, b, bounds = lp.standard_form()
    if solver == 'simplex':
        res = simplex.solve(c, A, b, bounds=bounds)
        status, x, objective, duals = res.status, res.x, res.objective, \
            res.duals
    elif solver == 'highs':
        res = scipy.optimize.linprog(c, A_ub=A if len(b) else None,
                                     b_ub=b if len(b) else None,
                                     bounds=[(lo, None if hi == math.inf
                                              else hi) for lo, hi in bounds],
                                     method='highs')
        status = {0: 'optimal', 1: 'iteration-limit', 2: 'infeasible',
                  3: 'unbounded'}.get(res.status, 'error')
        x, objective = res.x, res.fun
        duals = None
        if status == 'optimal' and getattr(res, 'ineqlin', None) is not None:
            duals = np.asarray(res.ineqlin.marginals)
    else:
        raise LPError('unknown LP solver "{}"'.format(solver))
    if status == 'infeasible':
        raise InfeasibleError(('placement LP with {} variables and {} rows '
                               'is infeasible').format(len(c), len(b)))
    if status == 'unbounded':
        raise UnboundedError('placement LP is unbounded')
    if status != 'optimal':
        raise LPError('LP solver stopped with status {}'.format(status))
    return LPSolution(np.asarray(x, dtype=float), float(objective), status,
                      duals)


class IterateRecord():

    def __init__(self, iteration, gains, objective, metrics, delta_max,
                 accepted, step_norm=0.0):
        self.iteration = iteration
        self.gains = gains
        self.objective = objective
        self.metrics = metrics
        self.delta_max = delta_max
        self.accepted = accepted
        self.step_norm = step_norm

    def to_dict(self):
        return OrderedDict([('iteration', self.iteration),
                            ('accepted', self.accepted),
                            ('objective', self.objective),
                            ('step_norm', self.step_norm),
                            ('delta_max', OrderedDict(self.delta_max)),
                            ('metrics', self.metrics),
                            ('gains', self.gains.to_dict())])


class PlacementResult():
    """ Outcome of a placement run. history holds every iterate (accepted
        and rejected); termination is one of 'max-iterations',
        'improvement-threshold', 'step-size-floor' and 'evaluation-failure'.
    """

    def __init__(self, label, history, gains, bundle, termination,
                 objective=None, capacity=None, violations=None,
                 bounds_met=None, message=''):
        self.label = label
        self.history = history
        self.gains = gains
        self.bundle = bundle
        self.termination = termination
        self.objective = objective
        self.capacity = capacity if capacity is not None else OrderedDict()
        self.violations = violations if violations is not None \
            else OrderedDict()
        self.bounds_met = bounds_met
        self.message = message

    def accepted(self):
        return [rec for rec in self.history if rec.accepted]

    def accepted_objectives(self):
        return [rec.objective for rec in self.accepted()]

    def total_capacity(self):
        return float(sum(self.capacity.values()))

    def to_dict(self):
        doc = OrderedDict()
        doc['label'] = self.label
        doc['termination'] = self.termination
        if self.message:
            doc['message'] = self.message
        doc['objective'] = self.objective
        doc['gains'] = self.gains.to_dict() if self.gains else None
        doc['metrics'] = metric_summary(self.bundle) if self.bundle else None
        doc['capacity'] = OrderedDict(self.capacity)
        doc['total_capacity'] = self.total_capacity()
        doc['bound_violations'] = OrderedDict(self.violations)
        doc['bounds_met'] = self.bounds_met
        doc['history'] = [rec.to_dict() for rec in self.history]
        return doc


def initial_trust_region(case, config):
    delta = OrderedDict()
    fallback = 0.1 * (config.total_budget or 1.0)
    for dev in case.devices:
        width = config.trust_region
        if width is None:
            width = 0.1 * dev.capacity if dev.capacity > 0 else fallback
        delta[param_id(dev.id, 'inertia')] = width
        delta[param_id(dev.id, 'damping')] = width
    return delta


def _restore_feasibility(case, config, gains):
    """ Clip negative gains and scale gains back onto the capability
        constraints (outer polyhedral approximations may overshoot them).
    """

    vals = OrderedDict()
    for dev in case.devices:
        M = max(gains.inertia(dev.id), 0.0)
        K = max(gains.damping(dev.id), 0.0)
        if not config.uses_capacity_variables():
            M, K = config.gain_constraint(dev).project(M, K)
        vals[dev.id] = (M, K)
    gains = DeviceGains(vals)
    if config.uses_capacity_variables() and config.total_budget is not None:
        total = sum(required_capacity(case, config, gains).values())
        if total > config.total_budget and total > 0:
            factor = config.total_budget / total
            gains = DeviceGains(OrderedDict((k, (m * factor, d * factor))
                                            for k, (m, d) in
                                            gains.gains.items()))
    return gains


def _check_initial(case, config, gains):
    tol = 1e-9
    if gains.negative_entries():
        raise ConfigError('initial gains must be non-negative')
    if config.uses_capacity_variables():
        if config.total_budget is not None and \
                sum(required_capacity(case, config, gains).values()) > \
                config.total_budget + tol:
            raise ConfigError('initial gains exceed the total budget')
        return
    for dev in case.devices:
        if not config.gain_constraint(dev).contains(gains.inertia(dev.id),
                                                    gains.damping(dev.id),
                                                    tol):
            raise ConfigError(('initial gains of device {} violate its capab'
                               'ility constraint').format(dev.id))


def _finish(label, history, gains, bundle, termination, objective, case,
            config, message=''):
    tol = current_cfg().bound_tolerance()
    violations = bound_violations(bundle, config) if bundle else None
    met = None
    if violations is not None:
        met = all(v <= tol for v in violations.values())
    capacity = required_capacity(case, config, gains) if gains else None
    log('placement "{}" terminated: {} (objective {})'.format(
        label, termination, objective))
    return PlacementResult(label, history, gains, bundle, termination,
                           objective, capacity, violations, met, message)


def place(case, config, initial_gains=None):
    """ Sequential linear programming loop. Only steps that strictly
        decrease the true objective are accepted; rejected steps halve the
        trust region of the parameters that hit it (of all parameters if
        none did).
    """

    gains = initial_gains if initial_gains is not None \
        else case.initial_gains()
    _check_initial(case, config, gains)
    pids = case.param_ids()
    if not pids:
        raise PlacementError('case has no candidate devices')
    delta_max = initial_trust_region(case, config)
    base = build_base_system(case)
    label = config.label

    try:
        bundle = evaluate(case, gains, base=base)
    except NumericalError as e:
        log('placement "{}": evaluation of initial gains failed: {}'.format(
            label, e))
        return _finish(label, [], gains, None, 'evaluation-failure', None,
                       case, config, str(e))
    objective = objective_value(bundle, config, case, gains)
    history = [IterateRecord(0, gains, objective, metric_summary(bundle),
                             OrderedDict(delta_max), True)]
    log('placement "{}": initial objective {:.9g}'.format(label, objective))

    termination = 'max-iterations'
    for it in range(1, config.max_iterations + 1):
        lp = build_lp(bundle, config, gains, delta_max, case)
        sol = solve_lp(lp)
        step = lp.step(sol.x)
        step_norm = float(np.max(np.abs(step)))
        if step_norm <= 1e-12:
            termination = 'improvement-threshold'
            break

        trial = _restore_feasibility(case, config,
                                     gains.updated(pids,
                                                   gains.as_vector(pids) +
                                                   step))
        try:
            trial_bundle = evaluate(case, trial, seeds=bundle.seeds(),
                                    base=base)
            trial_objective = objective_value(trial_bundle, config, case,
                                              trial)
        except NumericalError as e:
            log('placement "{}" iteration {}: trial evaluation failed: {}'
                ''.format(label, it, e))
            trial_bundle, trial_objective = None, math.inf

        if trial_objective < objective:
            improvement = objective - trial_objective
            gains, bundle, objective = trial, trial_bundle, trial_objective
            history.append(IterateRecord(it, gains, objective,
                                         metric_summary(bundle),
                                         OrderedDict(delta_max), True,
                                         step_norm))
            log(('placement "{}" iteration {}: accepted, objective {:.9g}'
                 '').format(label, it, objective))
            if improvement < config.improvement_threshold:
                termination = 'improvement-threshold'
                break
            continue

        hit = [pid for pid, s in zip(pids, step)
               if abs(s) >= delta_max[pid] * (1.0 - 1e-9)]
        for pid in (hit or pids):
            delta_max[pid] *= 0.5
        history.append(IterateRecord(it, trial, trial_objective,
                                     metric_summary(trial_bundle)
                                     if trial_bundle else None,
                                     OrderedDict(delta_max), False,
                                     step_norm))
        log(('placement "{}" iteration {}: rejected, largest trust region '
             '{:.3e}').format(label, it, max(delta_max.values())))
        if max(delta_max.values()) < config.trust_region_floor:
            termination = 'step-size-floor'
            break

    return _finish(label, history, gains, bundle, termination, objective,
                   case, config)


def min_capacity_place(case, config):
    """ Smallest total capacity keeping all bounded metrics within their
        bounds, starting from zero gains.
    """

    if not config.has_bounds():
        raise ConfigError('minimal capacity placement needs metric bounds')
    weights = OrderedDict((k, 0.0) for k in WEIGHT_KEYS)
    weights['capacity'] = config.weights['capacity'] or 1.0
    mc = config.with_weights(weights, config.label)
    mc.budget_mode = 'capacity-as-variable'
    return place(case, mc, case.zero_gains())


def run_scenarios(case, config):
    results = []
    for label, scenario in config.scenario_configs():
        if scenario.budget_mode == 'capacity-as-variable' and \
                not any(v > 0 for k, v in scenario.weights.items()
                        if k != 'capacity'):
            results.append(min_capacity_place(case, scenario))
        else:
            results.append(place(case, scenario))
    return results


class GridSearchResult():

    def __init__(self, device_id, inertia, damping, values, best_gains,
                 best_objective):
        self.device_id = device_id
        self.inertia = inertia
        self.damping = damping
        self.values = values
        self.best_gains = best_gains
        self.best_objective = best_objective


def grid_search(case, config, resolution=200, device_id=None):
    """ Exhaustive search of the objective over a resolution x resolution
        grid of (M, K) for one device (the first by default); the other
        devices keep their initial gains. Points outside the capability
        constraint or failing to evaluate are skipped.
    """

    if not case.devices:
        raise PlacementError('case has no candidate devices')
    dev = case.device(device_id) if device_id else case.devices[0]
    if dev is None:
        raise PlacementError('unknown device "{}"'.format(device_id))
    constraint = config.gain_constraint(dev)
    m_max = constraint.bound
    k_max = constraint.bound * constraint.h
    inertia = np.linspace(0.0, m_max, resolution)
    damping = np.linspace(0.0, k_max, resolution)
    values = np.full((resolution, resolution), np.inf)
    base = build_base_system(case)
    start = case.initial_gains().gains
    best, best_val = None, math.inf
    for a, M in enumerate(inertia):
        for b, K in enumerate(damping):
            if not constraint.contains(M, K, 1e-12):
                continue
            vals = OrderedDict(start)
            vals[dev.id] = (M, K)
            gains = DeviceGains(vals)
            try:
                bundle = evaluate(case, gains, with_sensitivities=False,
                                  base=base)
            except NumericalError:
                continue
            values[a, b] = objective_value(bundle, config, case, gains)
            if values[a, b] < best_val:
                best, best_val = gains, values[a, b]
    log('grid search over {} points: best objective {}'.format(
        resolution ** 2, best_val))
    return GridSearchResult(dev.id, inertia, damping, values, best, best_val)
