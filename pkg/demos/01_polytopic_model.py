"""Build the LPV/uncertainty polytope and check its convex-hull property.

Walks through the lateral-error dynamics at a few speeds, the scheduling
weights, and the vertex enumeration with and without stiffness uncertainty.
"""

import numpy as np

from polytrack import (VehicleParams, build_error_dynamics, build_polytope,
                       discretize_euler, scheduling_weights)

np.set_printoptions(precision=4, suppress=True)

params = VehicleParams()
print("single-track parameters:", params, "\n")

# continuous error dynamics stiffen as speed drops
for v in (5.0, 15.0, 25.0):
    A, B, Bk = build_error_dynamics(params, v)
    print(f"v = {v:5.1f} m/s   A[1] = {A[1]}")
print()

# the discrete vertex polytope: 4 scheduling corners x 4 stiffness corners
model = build_polytope(params, (5.0, 25.0), Ts=0.01, uncertainty_enabled=True)
print(f"vertices: {model.n_vertices} (distinct (A,B) pairs: "
      f"{len(model.distinct_vertices())})")
print(f"disturbance input column E_w^T = {model.E_w.ravel()} "
      f"(unit signal = {model.wind_force:.0f} N of lateral wind)\n")

# bilinear scheduling weights reproduce the interior model exactly
v = 10.0
w = scheduling_weights(v, model.v_range)
print(f"weights at v = {v}: {w} (sum = {w.sum():.12f})")
A_mix, B_mix, Bk_mix = model.evaluate(v)
Ac, Bc, Bkc = build_error_dynamics(params, v)
Ad, Bd, Bkd = discretize_euler(Ac, Bc, Bkc, model.Ts)
print("max |A_mix - A(v)| =", np.abs(A_mix - Ad).max())
print("max |B_mix - B(v)| =", np.abs(B_mix - Bd).max())
print("max |Bk_mix - Bk(v)| =", np.abs(Bk_mix - Bkd).max())
