"""Tour of the expression toolkit backing every vector field and level function.

Run:  python3 demos/demo_expressions.py
"""

import math

from lyagate import expr as ex

# Parse over 2 states and 1 input. The grammar is infix arithmetic with ^ for
# integer powers and the functions sin, cos, exp, sqrt, abs.
e = ex.parse_expression("1.5*x1^2 + x1*x2 + 0.5*x2^2", 2, 1)
print("parsed:        ", ex.to_text(e))

# Printing and re-parsing reproduces the tree node for node.
again = ex.parse_expression(ex.to_text(e), 2, 1)
print("round trip ok: ", again == e)

# Evaluation is plain IEEE-double arithmetic.
x = (1.0, -2.0)
print("value at %s:  %g" % (x, ex.eval_expression(e, x)))

# Symbolic differentiation folds literal zeros and ones, nothing more.
d1 = ex.differentiate(e, "x1")
d2 = ex.differentiate(e, "x2")
print("d/dx1:         ", ex.to_text(d1))
print("d/dx2:         ", ex.to_text(d2))

# abs differentiates through sign (sign(0) = 0), which keeps the derivative
# total; callers are expected to stay away from the kink.
a = ex.parse_expression("abs(x1)", 1, 0)
print("d|x1|/dx1:     ", ex.to_text(ex.differentiate(a, "x1")))

# Substitution closes a loop u := g(x): this is how Lie derivatives are born.
f = ex.parse_expression("-x1 + u1", 1, 1)
closed = ex.substitute(f, {"u1": ex.parse_expression("2*x1", 1, 0)})
print("f(x, g(x)):    ", ex.to_text(closed))

# Compiled callables back the hot loops (integration, grid scans).
fn = ex.compile_scalar(e)
assert fn(x, ()) == ex.eval_expression(e, x)
print("compiled value:", fn(x, ()))

# Errors carry positions and points.
try:
    ex.parse_expression("x1 + * x2", 2, 0)
except Exception as err:
    print("syntax error:  ", err)
try:
    ex.eval_expression(ex.parse_expression("1/x1", 1, 0), (0.0,))
except Exception as err:
    print("domain error:  ", err)
