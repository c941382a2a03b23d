"""Conditional flow matching: probability path, target field, loss,
classifier-free guidance and the midpoint ODE solver.

All functions work on numpy arrays and torch tensors alike.
"""

# import
## batteries
import logging
from collections import namedtuple
## application
from FMSR.Utils import DataError, NumericError, check_finite

# logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


FlowState = namedtuple('FlowState', ['t', 'x_t'])


class PathConfig(object):
    """
    Optimal-transport path parameters.
    """
    def __init__(self, sigma_min=0.1):
        self.sigma_min = sigma_min

    @property
    def sigma_min(self):
        return self._sigma_min
    @sigma_min.setter
    def sigma_min(self, x):
        x = float(x)
        if not 0 <= x < 1:
            raise DataError('sigma_min must be in [0, 1); got {}'.format(x))
        self._sigma_min = x

    def mu(self, t):
        return t
    def sigma(self, t):
        return 1 - (1 - self.sigma_min) * t


def _check_shapes(a, b, what):
    if tuple(a.shape) != tuple(b.shape):
        msg = '{}: shape mismatch {} vs {}'
        raise DataError(msg.format(what, tuple(a.shape), tuple(b.shape)))

def _check_time(t):
    try:
        t_min, t_max = float(t.min()), float(t.max())
    except AttributeError:
        t_min = t_max = float(t)
    if t_min < 0 or t_max > 1:
        raise DataError('t must lie in [0, 1]; got range [{}, {}]'.format(t_min, t_max))

def sample_path(x_h, x_0, t, cfg=None):
    """
    Point on the conditional path: t * x_h + (1 - (1 - sigma_min) t) * x_0.

    Parameters
    ----------
    x_h : array
        Data (target band)
    x_0 : array
        Gaussian noise, same shape
    t : float or array
        Time(s) in [0, 1]; arrays must broadcast against x_h
    cfg : PathConfig
    """
    cfg = cfg or PathConfig()
    _check_shapes(x_h, x_0, 'sample_path')
    _check_time(t)
    return cfg.mu(t) * x_h + cfg.sigma(t) * x_0

def target_field(x_h, x_0, cfg=None):
    """Constant target velocity of the path: x_h - (1 - sigma_min) * x_0"""
    cfg = cfg or PathConfig()
    _check_shapes(x_h, x_0, 'target_field')
    return x_h - (1 - cfg.sigma_min) * x_0

def cfm_loss(v_pred, u_target):
    """Mean squared error over all elements (and the batch)"""
    _check_shapes(v_pred, u_target, 'cfm_loss')
    return ((v_pred - u_target) ** 2).mean()

def cfg_combine(v_cond, v_uncond, omega):
    """
    Classifier-free guidance: v_uncond + omega * (v_cond - v_uncond).
    omega = 1 is the conditional field, omega = 0 the unconditional one.
    """
    _check_shapes(v_cond, v_uncond, 'cfg_combine')
    if omega < 0:
        raise DataError('Guidance scale must be >= 0; got {}'.format(omega))
    if omega == 1:
        return v_cond
    return v_uncond + omega * (v_cond - v_uncond)

def midpoint_solve(field, x_0, steps, return_trajectory=False):
    """
    Integrate dx/dt = field(t, x) from t=0 to t=1 with the explicit
    midpoint rule on a uniform grid:
      x <- x + h * field(t + h/2, x + h/2 * field(t, x))

    Parameters
    ----------
    field : callable
        field(t : float, x : array) -> array shaped like x
    x_0 : array
        State at t = 0
    steps : int
        Number of steps (>= 1)
    return_trajectory : bool
        Also return the [FlowState, ...] visited, t = 0 included

    Returns
    -------
    State at t = 1 (and the trajectory)
    """
    steps = int(steps)
    if steps < 1:
        raise DataError('Solver needs at least 1 step; got {}'.format(steps))
    h = 1.0 / steps
    x = x_0
    trajectory = [FlowState(0.0, x)]
    for i in range(steps):
        t = i * h
        k1 = field(t, x)
        _check_field(k1, i, t)
        k2 = field(t + h / 2, x + (h / 2) * k1)
        _check_field(k2, i, t + h / 2)
        x = x + h * k2
        trajectory.append(FlowState((i + 1) * h, x))
    if return_trajectory:
        return x, trajectory
    return x

def _check_field(v, i, t):
    try:
        check_finite(v, 'field')
    except NumericError:
        msg = 'Non-finite vector field at solver step {} (t={:.4f})'
        raise NumericError(msg.format(i, t))
