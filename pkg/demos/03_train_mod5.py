"""Train a small transductor on mod-5 counting and test far beyond its training length.

Training uses sequences of length 40 (the ``lengen`` preset, one seed).
The rational head keeps a state that is a product of orthogonal matrices,
so the count it tracks does not drift with length.  The preset's 3,000
steps take a few minutes on one core; pass a smaller step count to see the
curve before it converges.

    python demos/03_train_mod5.py [steps]
"""

import dataclasses
import sys

from rational_transductor.experiments import default_spec
from rational_transductor.rational_head import audit
from rational_transductor.trainer import evaluate, train

spec = default_spec("lengen")
steps = int(sys.argv[1]) if len(sys.argv) > 1 else spec.train.steps
train_cfg = dataclasses.replace(spec.train, steps=steps, seeds=[0], eval_every=0)
cfg = spec.models["rt"]
print(f"head {cfg.head}, d_rat {cfg.d_rat}, {cfg.num_layers} layers, train length {spec.task.train_len}")

models, report = train(cfg, train_cfg, spec.task, log=lambda m: print(m, flush=True))
model = models[0]

# Every transition of a conserving Cayley head is orthogonal by construction.
for name, (ok, measured) in audit(model.head).items():
    print(f"audit {name}: {measured:.1e} ({'ok' if ok else 'violated'})")

for length, m in evaluate(model, spec.task, [40, 200, 1000], n_per_length=128, seed=1).items():
    print(f"L={length:<5} token acc {m['token_acc']:.3f}")
