"""Default desk-scale sweep: eps = 0.2, 0.1, 0.05 with f(x) = x and beta = 1."""
import sys

from pmasym.cli import ExperimentConfig, emit, run

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
report = run(ExperimentConfig(out=out))
emit(report, out)
for r in report["records"]:
    geo = r["step_geometry"]
    line = f"eps={r['eps']:<5} E={r['energy']['total']:.6f} jumps={len(geo['jumps'])}"
    if geo["jumps"]:
        line += f" H={geo['half_length']:.3f} V={geo['half_height']:.3f}"
    if r["cubic_fit"]:
        line += f" Lambda={r['cubic_fit']['Lambda']:.3f}"
    if r["per_jump"]:
        line += f" E_jump/sqrt(2V)={r['per_jump']['ratio']:.3f}"
    print(line)
for name, t in report["trends"].items():
    print(f"{name:30s} nonincreasing={t['nonincreasing']}")
print("written to", out)
