"""The forward noising process and its reverse chain.

With a denoiser that knows x0 exactly, the reverse chain walks pure noise
back to the data; with known pixels pinned, those pixels end at their
values whatever the network says.
"""
import numpy as np

from iidm.diffusion import forward_jump, forward_step, make_schedule, oracle_predictor, reverse_chain

sched = make_schedule(50, 1e-4, 0.2)
print("alpha_bar at t = 1, 12, 25, 50:", [round(sched.alpha_bar(t), 4) for t in (1, 12, 25, 50)])

rng = np.random.default_rng(0)
n, x0 = 10_000, 0.7
for t in (12, 25, 50):
    y = np.full(n, x0)
    for s in range(1, t + 1):
        y = forward_step(y, s, sched, rng.standard_normal(n))
    z = forward_jump(np.full(n, x0), t, sched, rng.standard_normal(n))
    print(f"t={t:2d}: stepwise mean {y.mean():+.4f} var {y.var():.4f} | jump mean {z.mean():+.4f} var {z.var():.4f}"
          f" | closed form mean {np.sqrt(sched.alpha_bar(t)) * x0:+.4f}")

x = rng.uniform(-1, 1, (1, 1, 16, 16))
rec = reverse_chain(rng.standard_normal(x.shape), oracle_predictor(x, sched), sched, rng)
print("\noracle reverse chain RMSE:", float(np.sqrt(np.mean((rec - x) ** 2))))

where = np.zeros(x.shape, bool)
where[..., :8] = True
noisy_net = lambda y, t, c: rng.standard_normal(y.shape)
rec = reverse_chain(rng.standard_normal(x.shape), noisy_net, sched, rng, known=(np.full(x.shape, -1.0), where))
print("pinned half stays at -1:", bool(np.all(rec[where] == -1.0)))
