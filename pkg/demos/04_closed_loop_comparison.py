"""Closed-loop comparison on the ramped double lane change.

Runs the robust LPV-MPC, the switched LPV controller, the frozen-gain LQR,
and the certainty-equivalence MPC through the same maneuver at a worst-case
stiffness corner, then prints a metrics table.  Writes lateral-error traces
to demo_comparison.png when matplotlib is available.

The robust MPC episode re-solves its LMI problem every 10 ms and takes a
minute or so of wall clock; the others are quick.
"""

import numpy as np

from polytrack import (DoubleLaneChangeSpec, RampSpeed, RobustMpcConfig,
                       RobustMpcController, Scenario, SwitchedSynthConfig,
                       VehicleParams, build_polytope, metrics,
                       run_closed_loop, synthesize_schedule)
from polytrack.controllers import FrozenLqrController, NominalMpcController
from polytrack.switched import SwitchedLpvController

params = VehicleParams()
Ts = 0.01
scenario = Scenario(
    path=DoubleLaneChangeSpec(lead_in=20.0, total_length=330.0),
    speed=RampSpeed(5.0, 25.0, 10.0),
    duration=10.0,
    cf_scale=0.8, cr_scale=0.8,   # worst corner: both axles 20% soft
    name="dlc-ramp")

model = build_polytope(params, (5.0, 25.0), Ts)
cfg = RobustMpcConfig(w_max=0.0)
schedule = synthesize_schedule(params, SwitchedSynthConfig())

controllers = [
    RobustMpcController(model, cfg),
    SwitchedLpvController(schedule),
    FrozenLqrController(params, Ts, cfg),
    NominalMpcController(params, Ts, cfg),
]

logs = {}
print(f"{'controller':14s} {'rms_ey':>9s} {'max_ey':>9s} {'rms_epsi':>9s} "
      f"{'energy':>9s} {'switches':>8s}")
for ctrl in controllers:
    log = run_closed_loop(scenario, ctrl, seed=0)
    logs[ctrl.name] = log
    m = metrics(log)
    print(f"{ctrl.name:14s} {m['rms_ey']:9.5f} {m['max_ey']:9.5f} "
          f"{m['rms_epsi']:9.5f} {m['control_energy']:9.6f} "
          f"{m['switch_count']:8d}")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    for name, log in logs.items():
        t = np.asarray(log.t)
        ax[0].plot(t, log.e_y(), label=name)
        ax[1].plot(t, np.asarray(log.delta))
    ax[0].set_ylabel("lateral offset e_y [m]")
    ax[0].legend(loc="upper right", fontsize=8)
    ax[1].set_ylabel("steering delta [rad]")
    ax[1].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig("demo_comparison.png", dpi=120)
    print("\nwrote demo_comparison.png")
except ImportError:
    print("\nmatplotlib not installed; skipping the plot")
