"""Scratch: finite-difference sanity check of loss_and_grads (not shipped)."""
import numpy as np
from engramlm.backbone import desk_config, init_params, loss_and_grads

cfg = desk_config()
params = init_params(cfg, seed=1)
rng = np.random.default_rng(2)
# randomize everything (incl. normally-zero arrays) so all paths carry signal
for name, a in params.arrays.items():
    params.arrays[name] = a + 0.1 * rng.standard_normal(a.shape)

B, S = 2, 8
tokens = rng.integers(0, cfg.vocab_size, size=(B, S + 1))
x, y = tokens[:, :-1], tokens[:, 1:]

loss, grads = loss_and_grads(params, x, y)
print("loss", loss)

def fd(name, idx, h=1e-6):
    a = params.arrays[name]
    orig = a[idx]
    a[idx] = orig + h
    lp, _ = loss_and_grads(params, x, y)
    a[idx] = orig - h
    lm, _ = loss_and_grads(params, x, y)
    a[idx] = orig
    return (lp - lm) / (2 * h)

bad = 0
rng2 = np.random.default_rng(3)
for name in sorted(params.arrays):
    a = params.arrays[name]
    for _ in range(3):
        idx = tuple(rng2.integers(0, s) for s in a.shape)
        g_fd = fd(name, idx)
        g_an = grads[name][idx]
        denom = max(abs(g_fd), abs(g_an), 1e-8)
        rel = abs(g_fd - g_an) / denom
        status = "OK " if rel < 1e-4 else "BAD"
        if status == "BAD":
            bad += 1
            print(f"{status} {name}{idx}: fd={g_fd:.8e} an={g_an:.8e} rel={rel:.2e}")
print("done, bad =", bad)
