"""Print the real-quadrature gain of the g_max = 20 Kerr amplifier versus bias."""
import numpy as np

from wignernet.experiments import amplifier_gain_rows
from wignernet.perceptron import AmplifierSpec

amp = AmplifierSpec(g_max=20.0, kappa_A=1.0, chi=0.01)
rows = amplifier_gain_rows(amp, np.linspace(0.0, 1.2, 25))

print(f"{'bias/max':>9} {'g_rr':>9} {'g_rr (sim)':>11}")
for r in rows:
    print(f"{r['bias_ratio']:9.3f} {r['g_rr']:9.4f} {r['sim_g_rr']:11.4f}")
