""" gridinertia

    Small-signal models of low-inertia power grids, explicit time-domain
    performance metrics with analytic sensitivities, and placement of
    synthetic inertia and damping by sequential linear programming.
"""

from gridinertia.config import Cfg


__version__ = '1.0.0'

_context = {'cfg': None}


def current_cfg():
    """ Return the active configuration, creating a default one from
        config.ini if no context has been set up yet.
    """

    if _context['cfg'] is None:
        _context['cfg'] = Cfg()
    return _context['cfg']


def create_context(path='config.ini', **kwargs):
    """ Set up the configuration used by all modules of the package.

        Given kwargs the context runs in testing mode and the kwargs are
        passed on to Cfg.set_debug_config.
    """

    from gridinertia.subroutines import log

    cfg = Cfg(path)
    _context['cfg'] = cfg
    startup_msg = 'starting'
    if kwargs:
        cfg.set_debug_config(**kwargs)
        startup_msg += ' in testing mode with kwargs:'
        for k, v in sorted(kwargs.items()):
            startup_msg += ' {}={}'.format(k, v)
    log(startup_msg)
    return cfg
