"""
Error exponents and rate-exponent regions for distributed hypothesis testing,
with a Monte Carlo simulator of the quantize-bin-test scheme.
"""

from .data_model import *
from .exceptions import *
from .info import *
from .discrete import *
from .gaussian import *
from .simulator import *
