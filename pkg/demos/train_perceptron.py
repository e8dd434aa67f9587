"""Train the optical perceptron on a 2-D Gaussian task and compare with GDA."""
import sys

from wignernet.mleval import GaussianTask, gda_fit, gda_predict, optimal_error_rate, sample_dataset
from wignernet.perceptron import design_perceptron, run_training
from wignernet.sde import SimConfig

sep = float(sys.argv[1]) if len(sys.argv) > 1 else 2.0
spec = design_perceptron(2)
task = GaussianTask.symmetric(2, sep)
X, y = sample_dataset(task, 200, seed=7)
split = (X[:100], y[:100], X[100:], y[100:])

run = run_training(spec, split, SimConfig(dt=1e-3, seed=7, record_stride=100))
gda = gda_fit(X[:100], y[:100])
print(f"separation {sep}")
print(f"perceptron test error: {run.test_error_rate:.3f}")
print(f"GDA test error:        {(gda_predict(gda, X[100:]) != y[100:]).mean():.3f}")
print(f"Bayes error:           {optimal_error_rate(sep):.3f}")
print(f"feedback photons:      {run.N_fb:.0f}")
