"""Numerical checks of the approximation and stability statements.

Each check builds a concrete instance, measures the quantity a statement
bounds, and compares.  ``verify_all`` adds the scan and automaton oracles;
it is what ``rt verify`` runs.

    python demos/04_theory_checks.py
"""

from rational_transductor.experiments import verify_all
from rational_transductor.theory_verify import check_time_invariant_error

for eps in (1e-4, 1e-3, 1e-2):
    r = check_time_invariant_error(eps=eps)
    print(f"time-invariant perturbation eps={eps:.0e}: error {r.measured:.2e} <= bound {r.bound:.2e}")

print()
code, results = verify_all(seed=0, log=lambda m: None)
for r in results:
    print(r.line())
print(f"\nexit status {code}")
