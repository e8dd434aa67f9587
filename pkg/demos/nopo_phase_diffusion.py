"""Watch the free phase of an above-threshold NOPO diffuse under vacuum noise."""
import numpy as np

from wignernet import (InputSchedule, NopoParams, SimConfig, nopo, nopo_fixed_point,
                       nopo_phase_diffusion_rate, nopo_threshold, run_ensemble)


def phase(tr):
    s, i = tr.states[:, 0], tr.states[:, 1]
    return {"phi": 0.5 * (np.unwrap(np.angle(s)) - np.unwrap(np.angle(i)))}


params = NopoParams(kappa=1.0, kappa_p=2.0, chi=0.05)
eps = 2 * nopo_threshold(params)
model = nopo(params)
T, dt = 400.0, 5e-3
cfg = SimConfig(dt=dt, seed=1, record_stride=int(T / 10 / dt))
stats = run_ensemble(model, InputSchedule.constant(model.input_labels, [0, 0, eps], T), cfg,
                     200, phase, initial_state=nopo_fixed_point(params, eps))

t = np.linspace(0, T, len(stats.variance["phi"]))
slope = np.polyfit(t, stats.variance["phi"], 1)[0]
print("predicted rate:", nopo_phase_diffusion_rate(params, eps))
print("measured slope:", slope)
