"""Independent reference solutions used only by the tests.

``pde_value`` solves the Markovian case X = B (d = 1) through the semilinear
heat equation ``u_t + u_xx / 2 + g(t, u, u_x) = 0``, ``u(T, x) = phi(x)``
with an explicit finite-difference scheme. It shares no code with the
regression solver.
"""

import numpy as np


def pde_solution(g, phi, horizon=1.0, half_width=10.0, dx=0.02, cfl=0.4):
    """Return ``(x, u0)`` with ``u0 = u(0, x)`` on a uniform grid."""
    x = np.arange(-half_width, half_width + dx / 2, dx)
    dt_max = cfl * dx * dx
    n_t = int(np.ceil(horizon / dt_max))
    dt = horizon / n_t
    u = phi(x).astype(float)
    for k in range(n_t, 0, -1):
        t = k * dt
        ux = np.empty_like(u)
        uxx = np.empty_like(u)
        ux[1:-1] = (u[2:] - u[:-2]) / (2 * dx)
        uxx[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / (dx * dx)
        ux[0], ux[-1] = (u[1] - u[0]) / dx, (u[-1] - u[-2]) / dx
        uxx[0] = uxx[-1] = 0.0
        u = u + dt * (0.5 * uxx + g(t, u, ux))
    return x, u


def pde_value(g, phi, x0=0.0, **kw):
    x, u = pde_solution(g, phi, **kw)
    return float(np.interp(x0, x, u))
