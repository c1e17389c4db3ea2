"""gensolv: solvability analysis for operators with eps-parameterized coefficients.

The toolkit classifies eps-nets, compares constant-coefficient operators
through their Hormander weight functions, and runs three local solvers on
discrete periodic grids, measuring every hypothesis and residual it can.
"""

__version__ = "0.1.0"

from .nets import EpsGrid, GenNumber, classify, valuation, invert  # noqa: F401
