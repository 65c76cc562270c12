"""One eps, two window centres: the flattest point of a step and the largest jump."""
from pmasym.cli import CenterPolicy, ExperimentConfig, run_eps

eps = 0.05
for policy in ("MidStep", "AtJump"):
    cfg = ExperimentConfig(eps_list=(eps,), center_policy=CenterPolicy.parse(policy))
    r = run_eps(cfg, eps)
    sf, cf = r["staircase_fit"], r["cubic_fit"]
    print(f"{policy:8s} centre x={r['center']:.4f} staircase {sf['kind']} tau0={sf['tau0']:+.3f} "
          f"sup={sf['sup_error']:.3f}")
    print(f"         cubic Lambda={cf['Lambda']:.4f} (pred {r['Lambda_pred']:.4f}) sup={cf['sup_error']:.2e}")
