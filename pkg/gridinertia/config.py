""" Class to comfortably get config values.
"""

import configparser
import datetime
import os
import sys


class Cfg():

    def __init__(self, path='config.ini'):
        cp = configparser.ConfigParser()
        if os.path.exists(path):
            cp.read(path)
        else:
            msg = 'Config file "{}" not found. Using defaults.'.format(path)
            self.log_cfg(None, msg)
        fail, cfg = self._parse_config(cp)
        if fail:
            msg = '{} Exiting.'.format(fail)
            print(msg)
            self.log_cfg(None, msg)
            sys.exit(1)
        self.cfg = cfg

    def log_cfg(self, cp, msg):
        """ Write a log message to the log file BEFORE the config has been
            parsed.
        """

        if cp is not None and \
                'environment' in cp.sections() and \
                cp['environment'].get('log_file'):
            log_file = cp['environment'].get('log_file')
        else:
            log_file = self._default_log_file()
        timestamp = str(datetime.datetime.now()).split('.')[0]
        # make /dev/stdout usable as log file
        # https://www.bugs.python.org/issue27805
        if log_file == '/dev/stdout':
            mode = 'w'
        else:
            mode = 'a'
        with open(log_file, mode) as f:
            f.write('[{}]   {}\n'.format(timestamp, msg))

    def _default_log_file(self):
        return '/tmp/gi_log.txt'

    def log_file(self):
        return self.cfg['log_file']

    def kron_condition_limit(self):
        return self.cfg['kron_condition_limit']

    def degeneracy_tolerance(self):
        """ Relative (to ||A||) distance below which two eigenvalues are
            considered to clash.
        """

        return self.cfg['degeneracy_tolerance']

    def zero_eigenvalue_tolerance(self):
        return self.cfg['zero_eigenvalue_tolerance']

    def newton_max_iterations(self):
        return self.cfg['newton_max_iterations']

    def newton_tolerance(self):
        return self.cfg['newton_tolerance']

    def horizon_cap(self):
        return self.cfg['horizon_cap']

    def oracle_rtol(self):
        return self.cfg['oracle_rtol']

    def oracle_atol(self):
        return self.cfg['oracle_atol']

    def lp_solver(self):
        return self.cfg['lp_solver']

    def max_iterations(self):
        return self.cfg['max_iterations']

    def improvement_threshold(self):
        return self.cfg['improvement_threshold']

    def step_size_floor(self):
        return self.cfg['step_size_floor']

    def slack_penalty(self):
        return self.cfg['slack_penalty']

    def bound_tolerance(self):
        return self.cfg['bound_tolerance']

    def radius_floor(self):
        return self.cfg['radius_floor']

    def halfplanes(self):
        """ Number of tangent half-planes used to outer-approximate a
            quadratic capability ball inside the LP.
        """

        return self.cfg['halfplanes']

    def lp_solvers(self):
        return ['simplex', 'highs']

    def _get_default_config(self):
        cfg = {}
        cfg['log_file'] = self._default_log_file()
        cfg['kron_condition_limit'] = 1e12
        cfg['degeneracy_tolerance'] = 1e-8
        cfg['zero_eigenvalue_tolerance'] = 1e-10
        cfg['newton_max_iterations'] = 50
        cfg['newton_tolerance'] = 1e-10
        cfg['horizon_cap'] = 60.0
        cfg['oracle_rtol'] = 1e-11
        cfg['oracle_atol'] = 1e-13
        cfg['lp_solver'] = 'simplex'
        cfg['max_iterations'] = 200
        cfg['improvement_threshold'] = 1e-6
        cfg['step_size_floor'] = 1e-6
        cfg['slack_penalty'] = 1e4
        cfg['bound_tolerance'] = 1e-6
        cfg['radius_floor'] = 1e-9
        cfg['halfplanes'] = 16
        return cfg

    def set_debug_config(self, lp_solver='simplex', log_file=None):
        cfg = self._get_default_config()
        if log_file is not None:
            cfg['log_file'] = log_file
        if lp_solver not in self.lp_solvers():
            lp_solver = 'simplex'
        cfg['lp_solver'] = lp_solver
        self.cfg = cfg

    def _parse_section(self, cp, section, cfg, fails, typed_keys):
        """ Parse all entries of one config section given a dictionary
            mapping expected keys to the type they have to be cast to.
        """

        if section not in cp.sections():
            return
        for (key, val) in cp.items(section):
            if key not in typed_keys:
                self.log_cfg(cp, ('WARNING: unexpected config entry "{}" i'
                                  'n section [{}]'.format(key, section)))
                continue
            try:
                cfg[key] = typed_keys[key](val)
            except ValueError:
                fails.append(('{} in {} section must be of type {}'
                              '').format(key, section,
                                         typed_keys[key].__name__))

    def _parse_config(self, cp):
        """ Prase a configparser.ConfigParser instance and return
                - a fail message in case of an invalid config (False otherwise)
                - a config dict
        """

        cfg = self._get_default_config()
        fails = []

        # Environment
        self._parse_section(cp, 'environment', cfg, fails,
                            {'log_file': str})

        # Numerics
        self._parse_section(cp, 'numerics', cfg, fails,
                            {'kron_condition_limit': float,
                             'degeneracy_tolerance': float,
                             'zero_eigenvalue_tolerance': float,
                             'newton_max_iterations': int,
                             'newton_tolerance': float,
                             'horizon_cap': float,
                             'oracle_rtol': float,
                             'oracle_atol': float})

        # Placement
        self._parse_section(cp, 'placement', cfg, fails,
                            {'lp_solver': str,
                             'max_iterations': int,
                             'improvement_threshold': float,
                             'step_size_floor': float,
                             'slack_penalty': float,
                             'bound_tolerance': float})
        if cfg['lp_solver'] not in self.lp_solvers():
            fails.append(('lp_solver in placement section must be one of '
                          '{}'.format(', '.join(self.lp_solvers()))))

        # Capability
        self._parse_section(cp, 'capability', cfg, fails,
                            {'radius_floor': float,
                             'halfplanes': int})
        if cfg['halfplanes'] < 4:
            fails.append('halfplanes in capability section must be >= 4')

        for key in ['kron_condition_limit', 'horizon_cap', 'newton_tolerance',
                    'oracle_rtol', 'oracle_atol', 'step_size_floor',
                    'slack_penalty', 'radius_floor']:
            if cfg[key] <= 0:
                fails.append('{} must be positive'.format(key))

        if fails:
            fail = '\n'.join(fails)
        else:
            fail = False

        return fail, cfg
