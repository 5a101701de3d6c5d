"""Regular counters written down as weighted automata.

A parity checker and a mod-k counter are permutation matrices indexed by the
input symbol; reading a word multiplies them.  The Hankel rank of each
automaton equals its number of states, and the parallel scan reproduces the
left-to-right loop exactly.

    python demos/01_automata_as_matrices.py
"""

import numpy as np

from rational_transductor.scan import scan_depth, scan_forward
from rational_transductor.wfa_core import (eval_sequential, hankel_rank, make_horner, make_mod_counter,
                                           make_parity, horner_value)

rng = np.random.default_rng(0)
bits = rng.integers(0, 2, 24)
print("input bits:", "".join(map(str, bits)))

parity = make_parity()
states = eval_sequential(parity, bits)
print("parity state after each prefix:", states[1:, 1].astype(int))
print("running parity from numpy:     ", np.cumsum(bits) % 2)

mod5 = make_mod_counter(5)
h = eval_sequential(mod5, bits)[-1]
print(f"\nmod-5 counter ends in state e_{int(np.argmax(h))}; popcount % 5 = {bits.sum() % 5}")

# The same states via prefix products, in ceil(log2 T) combine levels.
ops = mod5.transitions[bits]
scanned = scan_forward(ops, mod5.alpha)
print(f"scan vs loop max abs diff: {np.abs(scanned - eval_sequential(mod5, bits)).max():.1e} "
      f"({scan_depth(len(bits))} levels for T={len(bits)})")

# Hankel rank recovers the minimal number of states.
print(f"\nHankel rank: parity {hankel_rank(parity, 4)}, mod-5 {hankel_rank(mod5, 5)}")

# Horner evaluation is an affine automaton over (value, 1).
digits = [3, 1, 4, 1, 5, 9]
print("Horner base-10 of", digits, "=", horner_value(make_horner(10), digits))
