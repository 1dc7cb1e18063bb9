"""Reference external simulator for the JSON-lines protocol.

Reads one request per line, ``{"level": l, "xi": xi_l, "x": [...]}``, and
answers ``{"y": value, "cost": seconds}``.  The "solver" here is a toy 1-d
integrand whose discretization error shrinks linearly in xi.
"""
import json
import math
import sys

for line in sys.stdin:
    req = json.loads(line)
    x, xi = req["x"][0], req["xi"]
    # midpoint rule for int_0^1 exp(x t) dt with step xi
    m = max(1, int(round(1.0 / xi)))
    h = 1.0 / m
    y = h * sum(math.exp(x * (k + 0.5) * h) for k in range(m))
    print(json.dumps({"y": y, "cost": float(m)}), flush=True)
