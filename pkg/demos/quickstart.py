"""Recover x1 + x2*x3 from 400 noisy rows with the GA search."""

from eqdetect import PipelineConfig, generate_benchmark, run_pipeline
from eqdetect.dataset import train_test_split

data = train_test_split(generate_benchmark("A", 400, seed=1), test_fraction=0.75, seed=1)
cfg = PipelineConfig(ga_population=300, ga_generations=25, ga_runs=5, psi=0.02,
                     r=7.5, normalize_radius=False)
report = run_pipeline(data, cfg)

print("equation:", report.equation)
print("stable:  ", report.stable)
for stage in report.stages:
    print(f"  {stage['stage']:<18} {stage['status']}")
