"""Constants frozen from exact k = 2 runs; later runs are compared against them."""

from fractions import Fraction
import math

from .bellman import phi

# min over even-level specials of row_contribution / (k 3^(l+1) omega), k = 2
ROW_C = Fraction(13, 57)

# min over specials of S^2 w(J) / (k 9^l omega^2), k = 2
S2J_C = Fraction(412, 361)

# ledger integrals at the full depth n = 4**2 for k = 2, omega = 1
MART_INTEGRAL_K2 = Fraction(280828759991, 53552873472)
SQ_INTEGRAL_K2 = Fraction(24128506811, 1673527296)

_P2 = 19 / 7
MART_RATIO_K2 = float(MART_INTEGRAL_K2) / (_P2 ** 2 * math.log(_P2) ** 2)
SQ_RATIO_K2 = float(SQ_INTEGRAL_K2) / (_P2 ** 2 * math.log(_P2))

# maximal testing ratio at depth 4 for k = 2 (exact value lies in Q(sqrt(228/49)))
TESTING_K2 = 1.9368132915899412

C_DRIFT = 0.125
# a distribution bound B <= K v / lam with K = Q / phi(1), read against the full Delta sum
WEAK_CONSTANT = 1 / (C_DRIFT * phi(1.0))
