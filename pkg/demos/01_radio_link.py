"""Two robots drive apart while trying to share one keyframe each.

Prints the connectivity curves of both built-in radio models, then replays the
same drive with each model and shows what the communication log records.
Run with ``python demos/01_radio_link.py``.
"""

import numpy as np

from cosmoforge import PRO_RADIO, WIFI, SyncedSequence, Trial, connectivity_prob, simulate
from cosmoforge.lie import Pose3

print("distance [m]   wifi    pro-radio")
for d in (0, 20, 40, 60, 70, 100, 150, 199):
    print(f"{d:12d}   {connectivity_prob(WIFI, d):.3f}   {connectivity_prob(PRO_RADIO, d):.3f}")

# robot "b" leaves "a" at 4 m/s, sampled at 10 Hz for 50 s
stamps = 0.1 * np.arange(501)
a = Trial("a", stamps, [Pose3() for _ in stamps])
b = Trial("b", stamps, [Pose3(translation=[4.0 * t, 0.0, 0.0]) for t in stamps])
seq = SyncedSequence([a, b], [0.0, 0.0])

# every 5 s each robot offers a new keyframe of 100k points
schedule = {r: [(t, i) for i, t in enumerate(range(0, 50, 5))] for r in "ab"}

for model in (WIFI, PRO_RADIO):
    log = simulate(model, seq, schedule, rng_seed=7)
    counts = log.counts()
    print(f"\n{model.name}: {counts['init']} started, {counts['delivered']} delivered, {counts['failed']} failed")
    for e in log.deliveries()[:4]:
        print(f"  t={e.t:5.1f}s  {e.sender}->{e.receiver} keyframe {e.kf_index}  {e.bytes / 1e3:.0f} kB")
    last = max((e.t for e in log.deliveries()), default=None)
    if last is not None:
        print(f"  last delivery at {last:.1f}s, separation {4.0 * last:.0f} m")
