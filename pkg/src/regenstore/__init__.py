"""Network-coded redundancy maintenance for distributed storage.

Submodules:

* ``field``     -- GF(2^8) arithmetic and linear algebra
* ``codec``     -- random linear network coding: encode, repair, reconstruct
* ``flowgraph`` -- information flow graphs and exact min-cut verification
* ``model``     -- closed-form availability/bandwidth model
* ``trace``     -- availability traces, timeout heuristic, (f, a) estimation
* ``sim``       -- Monte Carlo churn simulator
* ``cli``       -- the ``regenstore`` command
"""

__version__ = "0.1.0"
