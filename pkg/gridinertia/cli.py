""" Command line front end.

    Subcommands: analyze, place, fit-capability, verify. Exit codes: 0 on
    success, 1 on input errors, 2 on numerical failures, 3 on failed
    self-checks.
"""

import argparse
import os
import sys
from collections import OrderedDict
import numpy as np
from gridinertia import __version__, create_context
from gridinertia.capability import (dual_constraint, fit_norm_ball,
                                    load_measurements, norm_order,
                                    verify_duality)
from gridinertia.errors import (CapabilityError, GridInertiaError, InputError,
                                NumericalError, PlacementError,
                                VerificationError)
from gridinertia.models import DeviceGains
from gridinertia.netmodel import load_case, load_gains
from gridinertia.placement import (evaluate, grid_search,
                                   load_placement_config, min_capacity_place,
                                   place, run_scenarios)
from gridinertia.response import simulate_oracle, trajectories
from gridinertia.subroutines import (dump_json_document, fmt6, log,
                                     read_text, to_jsonable, write_csv,
                                     write_text)

COMMANDS = OrderedDict()

EXIT_CODES = [(VerificationError, 3),
              (InputError, 1),
              (NumericalError, 2),
              (GridInertiaError, 2)]


def command(name, help_text):
    """ Register a subcommand handler.
    """

    def decorator(func):
        COMMANDS[name] = (func, help_text)
        return func
    return decorator


def exit_code(error):
    for cls, code in EXIT_CODES:
        if isinstance(error, cls):
            return code
    return 2


class ReportTable():
    """ Metric comparison table. Damping ratio in percent, RoCoF in mHz/s,
        overshoot in mHz; R1 and S1 are means over all (output,
        disturbance) pairs.
    """

    header = ['label', 'zeta_min_pct', 'rocof_max_mhz_s', 'overshoot_max_mhz',
              'sum_inertia_pu', 'sum_damping_pu', 'rocof_mean_mhz_s',
              'overshoot_mean_mhz']

    def __init__(self):
        self.rows = []

    def add(self, label, bundle, gains):
        zeta = bundle.zeta_min()
        self.rows.append([label,
                          None if zeta is None else 100.0 * zeta,
                          1000.0 * bundle.R_inf(),
                          1000.0 * bundle.S_inf(),
                          gains.total_inertia(),
                          gains.total_damping(),
                          1000.0 * bundle.R_mean(),
                          1000.0 * bundle.S_mean()])

    def formatted(self):
        return [[row[0]] + [fmt6(v) for v in row[1:]] for row in self.rows]

    def write(self, out_dir, name='report'):
        write_csv(os.path.join(out_dir, name + '.csv'), self.header,
                  self.formatted())
        write_text(os.path.join(out_dir, name + '.txt'), self.to_text())

    def to_text(self):
        cells = [self.header] + self.formatted()
        widths = [max(len(str(r[i])) for r in cells)
                  for i in range(len(self.header))]
        lines = []
        for k, row in enumerate(cells):
            lines.append('  '.join(str(c).ljust(w) if i == 0 else
                                   str(c).rjust(w)
                                   for i, (c, w) in enumerate(zip(row,
                                                                  widths))))
            if k == 0:
                lines.append('  '.join('-' * w for w in widths))
        return '\n'.join(lines) + '\n'


def _sample_times(horizon, step):
    return np.linspace(0.0, horizon, int(round(horizon / step)) + 1)


def write_trajectories(out_dir, prefix, bundle, times, oracle=None):
    """ One CSV per (output, disturbance) pair with y (Hz) and its slope
        (Hz/s) from the modal formula, plus oracle columns if given.
    """

    res = bundle.residues
    y = trajectories(res, times, 0)
    dy = trajectories(res, times, 1)
    oy = doy = None
    if oracle is not None:
        oy = oracle.output(times, 0)
        doy = oracle.output(times, 1)
    sys_ = bundle.sys
    paths = []
    for a, out in enumerate(sys_.output_labels):
        for b, dist in enumerate(sys_.input_labels):
            header = ['time_s', 'freq_dev_hz', 'rocof_hz_s']
            if oracle is not None:
                header += ['oracle_freq_dev_hz', 'oracle_rocof_hz_s']
            rows = []
            for k, t in enumerate(times):
                row = [float(t), float(y[k, a, b]), float(dy[k, a, b])]
                if oracle is not None:
                    row += [float(oy[k, a, b]), float(doy[k, a, b])]
                rows.append(row)
            name = '{}_{}_{}.csv'.format(prefix, _slug(out), _slug(dist))
            path = os.path.join(out_dir, name)
            write_csv(path, header, rows)
            paths.append(path)
    return paths


def _slug(label):
    return ''.join(c if c.isalnum() else '_' for c in label).strip('_')


def oracle_mismatch(bundle, times):
    """ Largest absolute difference between modal and integrated responses
        (value and slope).
    """

    oracle = simulate_oracle(bundle.sys, float(times[-1]))
    res = bundle.residues
    worst = 0.0
    for n in [0, 1]:
        diff = np.abs(trajectories(res, times, n) - oracle.output(times, n))
        worst = max(worst, float(np.max(diff, initial=0.0)))
    return worst, oracle


def _load_case_and_gains(args):
    case = load_case(read_text(args.case, 'case file'))
    gains = case.initial_gains()
    if getattr(args, 'gains', None):
        gains = load_gains(read_text(args.gains, 'gains file'), case)
    return case, gains


@command('analyze', 'metrics report and trajectories of a case')
def cmd_analyze(args):
    case, gains = _load_case_and_gains(args)
    table = ReportTable()
    free = evaluate(case, case.zero_gains(), with_sensitivities=False)
    table.add('device-free', free, case.zero_gains())
    bundle = evaluate(case, gains)
    table.add('with gains', bundle, gains)
    table.write(args.out_dir)

    times = _sample_times(args.horizon, args.step)
    oracle = None
    mismatch = None
    if args.verify:
        mismatch, oracle = oracle_mismatch(bundle, times)
    write_trajectories(args.out_dir, 'trajectory', bundle, times, oracle)

    doc = OrderedDict()
    doc['case'] = case.summary()
    doc['gains'] = gains.to_dict()
    doc['metrics'] = _metrics_doc(bundle)
    doc['sensitivities'] = _sensitivity_doc(bundle)
    if mismatch is not None:
        doc['oracle_mismatch'] = mismatch
    write_text(os.path.join(args.out_dir, 'metrics.json'),
               dump_json_document(to_jsonable(doc)))
    print(table.to_text(), end='')
    if mismatch is not None and mismatch > 1e-6:
        raise VerificationError(('modal and integrated responses differ by '
                                 '{:.3e}').format(mismatch))
    return 0


def _metrics_doc(bundle):
    doc = OrderedDict()
    doc['zeta_min'] = bundle.zeta_min()
    doc['rocof_max_hz_s'] = bundle.R_inf()
    doc['overshoot_max_hz'] = bundle.S_inf()
    doc['rocof_mean_hz_s'] = bundle.R_mean()
    doc['overshoot_mean_hz'] = bundle.S_mean()
    doc['overshoot'] = bundle.overshoot.signed()
    doc['peak_time_s'] = bundle.overshoot.time
    doc['rocof'] = bundle.rocof.signed()
    doc['rocof_time_s'] = bundle.rocof.time
    doc['rocof_kind'] = bundle.rocof.kind.tolist()
    doc['eigenvalues'] = [[float(lam.real), float(lam.imag)]
                          for lam in bundle.modal.eigenvalues]
    return doc


def _sensitivity_doc(bundle):
    doc = OrderedDict()
    for pid in bundle.param_ids():
        doc[pid] = OrderedDict([('overshoot', bundle.d_overshoot[pid]),
                                ('rocof', bundle.d_rocof[pid]),
                                ('zeta', bundle.d_zeta[pid])])
    return doc


def _allocation_rows(case, label, gains):
    return [[label, dev.bus, dev.id, gains.inertia(dev.id),
             gains.damping(dev.id)] for dev in case.devices]


@command('place', 'optimal placement of synthetic inertia and damping')
def cmd_place(args):
    case = load_case(read_text(args.case, 'case file'))
    if not args.config:
        raise InputError('place needs --config')
    config = load_placement_config(read_text(args.config, 'placement config'),
                                   os.path.dirname(args.config))
    if args.min_capacity:
        results = [min_capacity_place(case, config)]
    else:
        results = run_scenarios(case, config)

    table = ReportTable()
    free = evaluate(case, case.zero_gains(), with_sensitivities=False)
    table.add('initial', free, case.zero_gains())
    allocation = []
    times = _sample_times(args.horizon, args.step)
    write_trajectories(args.out_dir, 'before', free, times)
    for res in results:
        if res.bundle is not None:
            table.add(res.label, res.bundle, res.gains)
            write_trajectories(args.out_dir, 'after_' + _slug(res.label),
                               res.bundle, times)
        allocation += _allocation_rows(case, res.label, res.gains)
    table.write(args.out_dir)
    write_csv(os.path.join(args.out_dir, 'allocation.csv'),
              ['scenario', 'bus', 'device', 'inertia_s', 'damping_pu'],
              allocation)

    doc = OrderedDict()
    doc['version'] = __version__
    doc['case'] = case.summary()
    doc['config'] = config.to_dict()
    doc['min_capacity'] = bool(args.min_capacity)
    doc['results'] = [res.to_dict() for res in results]
    write_text(os.path.join(args.out_dir, 'result.json'),
               dump_json_document(to_jsonable(doc)))
    print(table.to_text(), end='')
    failed = [res for res in results
              if res.termination == 'evaluation-failure']
    if failed:
        raise PlacementError('placement "{}" failed: {}'.format(
                             failed[0].label, failed[0].message))
    return 0


@command('fit-capability', 'fit a capability ball and its dual constraint')
def cmd_fit_capability(args):
    try:
        p = norm_order(args.p)
    except CapabilityError as e:
        raise InputError(str(e))
    if args.synthetic:
        from util.synthetic import elliptical_cloud
        data = elliptical_cloud(args.synthetic, 0.2, 0.05, args.seed)
    elif args.measurements:
        data = load_measurements(read_text(args.measurements,
                                           'measurement file'))
    else:
        raise InputError('fit-capability needs --measurements or --synthetic')
    if not args.h > 0 or not 0 < args.coverage <= 1 or not args.capacity > 0:
        raise InputError('h and capacity must be positive, coverage in (0, 1]')

    ball = fit_norm_ball(data, p, args.h, args.coverage,
                         allow_degenerate=args.allow_degenerate)
    constraint = dual_constraint(ball, args.capacity)
    report = verify_duality(constraint, ball, args.capacity, args.resolution)
    doc = OrderedDict()
    doc['samples'] = len(data)
    doc['ball'] = ball.to_dict()
    doc['constraint'] = constraint.to_dict()
    doc['verification'] = report.to_dict()
    write_text(os.path.join(args.out_dir, 'capability.json'),
               dump_json_document(to_jsonable(doc)))
    print(dump_json_document(to_jsonable(doc)), end='')
    if not report.passed():
        raise VerificationError('duality check failed')
    return 0


def finite_difference_check(case, gains, eps=1e-5):
    """ Relative error of analytic overshoot and RoCoF sensitivities against
        central differences, per parameter.
    """

    bundle = evaluate(case, gains)
    pids = case.param_ids()
    out = OrderedDict()
    for pid in pids:
        vals = []
        for sgn in [1.0, -1.0]:
            vec = gains.as_vector(pids)
            vec[pids.index(pid)] += sgn * eps
            vals.append(evaluate(case, gains.updated(pids, vec),
                                 seeds=bundle.seeds(),
                                 with_sensitivities=False))
        errs = []
        for name, analytic in [('overshoot', bundle.d_overshoot[pid]),
                               ('rocof', bundle.d_rocof[pid])]:
            hi = getattr(vals[0], name).value
            lo = getattr(vals[1], name).value
            fd = (hi - lo) / (2.0 * eps)
            scale = max(float(np.max(np.abs(fd), initial=0.0)), 1e-6)
            errs.append(float(np.max(np.abs(fd - analytic), initial=0.0)) /
                        scale)
        out[pid] = max(errs)
    return out


def grid_search_gap(case, config_path, resolution):
    """ Relative gap between the placement optimum and an exhaustive grid
        search over the gains of the first device (other devices removed).
    """

    config = load_placement_config(read_text(config_path,
                                             'placement config'),
                                   os.path.dirname(config_path))
    if not case.devices:
        raise InputError('grid search needs at least one device')
    single = case.with_devices(case.devices[:1])
    result = place(single, config)
    grid = grid_search(single, config, resolution)
    if grid.best_gains is None:
        raise VerificationError('no grid point could be evaluated')
    scale = max(abs(grid.best_objective), 1e-12)
    return (result.objective - grid.best_objective) / scale


@command('verify', 'oracle and finite difference self-checks of a case')
def cmd_verify(args):
    case, gains = _load_case_and_gains(args)
    if gains.total_inertia() == 0 and gains.total_damping() == 0:
        half = OrderedDict((d.id, (0.5 * d.capacity, 0.5 * d.capacity))
                           for d in case.devices)
        gains = DeviceGains(half)
    bundle = evaluate(case, gains)
    times = _sample_times(args.horizon, args.step)
    mismatch, _ = oracle_mismatch(bundle, times)
    fd = finite_difference_check(case, gains)
    doc = OrderedDict()
    doc['case'] = case.summary()
    doc['gains'] = gains.to_dict()
    doc['oracle_mismatch'] = mismatch
    doc['sensitivity_relative_error'] = fd
    passed = mismatch <= 1e-6 and all(v <= 1e-3 for v in fd.values())
    if args.config:
        gap = grid_search_gap(case, args.config, args.resolution)
        doc['grid_search_relative_gap'] = gap
        passed = passed and gap <= 0.02
    doc['passed'] = passed
    write_text(os.path.join(args.out_dir, 'verification.json'),
               dump_json_document(to_jsonable(doc)))
    print(dump_json_document(to_jsonable(doc)), end='')
    if not passed:
        raise VerificationError('self-check failed (see verification.json)')
    return 0


class ArgumentParser(argparse.ArgumentParser):
    """ Usage errors (missing or malformed flags) are input errors.
    """

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, '{}: error: {}\n'.format(self.prog, message))


def build_parser():
    parser = ArgumentParser(
        prog='gridinertia',
        description=('Placement of synthetic inertia and damping in low-'
                     'inertia grids.'))
    parser.add_argument('--ini', default='config.ini',
                        help='INI configuration file (default: config.ini)')
    sub = parser.add_subparsers(dest='command')
    for name, (func, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--out-dir', default='out')
        p.add_argument('--seed', type=int, default=0)
        p.add_argument('--horizon', type=float, default=20.0)
        p.add_argument('--step', type=float, default=0.01)
        if name in ['analyze', 'place', 'verify']:
            p.add_argument('--case', required=True)
        if name in ['analyze', 'verify']:
            p.add_argument('--gains')
        if name == 'analyze':
            p.add_argument('--verify', action='store_true')
        if name in ['place', 'verify']:
            p.add_argument('--config')
        if name == 'verify':
            p.add_argument('--resolution', type=int, default=200)
        if name == 'place':
            p.add_argument('--min-capacity', action='store_true')
        if name == 'fit-capability':
            p.add_argument('--measurements')
            p.add_argument('--synthetic', type=int, default=0,
                           help='use N synthetic samples instead of a file')
            p.add_argument('--p', default='2')
            p.add_argument('--h', type=float, default=1.0)
            p.add_argument('--coverage', type=float, default=1.0)
            p.add_argument('--capacity', type=float, default=1.0)
            p.add_argument('--resolution', type=int, default=10000)
            p.add_argument('--allow-degenerate', action='store_true')
        p.set_defaults(handler=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, 'handler', None):
        parser.print_help()
        return 1
    create_context(args.ini)
    try:
        return args.handler(args)
    except GridInertiaError as e:
        code = exit_code(e)
        msg = '{} error: {}'.format(args.command, e)
        print(msg, file=sys.stderr)
        log(msg)
        return code


if __name__ == '__main__':
    sys.exit(main())
