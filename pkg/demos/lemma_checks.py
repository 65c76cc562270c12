"""Run every oracle suite once and print the violation counts."""
from pmasym.cli import LEMMAS, lemma_suite

for name in LEMMAS:
    r = lemma_suite(name, seed=1)
    extra = {k: v for k, v in r.items() if k in ("max_rel_error", "max_abs_gap")}
    print(f"{name:12s} cases={r['cases']:<6} violations={r['violations']} {extra}")
