"""Sequential steps against parallel levels.

The recurrence h_t = M_t h_{t-1} takes T dependent steps in a loop.  The
Kogge-Stone scan forms every prefix product in ceil(log2 T) levels, each of
which is one batched matmul.  On a single CPU core the extra work usually
outweighs the shorter critical path; the level count is what matters on
parallel hardware.

    python demos/02_scan_depth.py
"""

import time

import numpy as np

from rational_transductor.scan import prefix_products, scan_forward

rng = np.random.default_rng(0)
d = 16
print(f"{'T':>6} {'levels':>6} {'loop ms':>9} {'scan ms':>9} {'max diff':>9}")
for T in (128, 512, 2048, 8192):
    q, _ = np.linalg.qr(rng.standard_normal((T, d, d)))  # orthogonal: states stay bounded
    alpha = rng.standard_normal(d)

    t0 = time.perf_counter()
    loop = scan_forward(q, alpha, schedule="sequential")
    t1 = time.perf_counter()
    par = scan_forward(q, alpha, schedule="kogge_stone")
    t2 = time.perf_counter()

    levels = prefix_products(q)[1]
    print(f"{T:>6} {levels:>6} {1e3 * (t1 - t0):>9.2f} {1e3 * (t2 - t1):>9.2f} "
          f"{np.abs(loop - par).max():>9.1e}")
