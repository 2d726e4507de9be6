"""Safety filters built on sensor-based incremental models.

Modules: ``numerics`` (integration, Lyapunov/Riccati), ``qp`` (min-norm
programs), ``cbf`` (barrier constraints), ``incmodel`` (incremental model),
``plants`` (simulated plants and sensors), ``harness`` (closed loop) and
``cli`` (command line).
"""

__version__ = "0.1.0"
