"""Sweep the sag reactive-support slope and report mean injected Q under ideal tracking.

The 1PG and 2PG mean reactive power levels (75 and 100 kvar) bracket the usable
slope; the printed window is the range where both sit within +-20 %.
"""
import math

import numpy as np

from pvfc.control import current_refs_sag
from pvfc.ems import EmsLimits, sag_power_refs
from pvfc.signals import clarke, detect_sag, instantaneous_pq

LIM = EmsLimits()
SAGS = {"1PG": ((0.7, 1.0, 1.0), 75e3), "2PG": ((0.65, 0.65, 1.0), 100e3), "3PG": ((0.6, 0.6, 0.6), 14e3)}


def mean_q(fractions, k_q, pre_sag=150e3, n=1000):
    v_hat = LIM.v_hat

    def ab(t):
        return clarke(*(f * v_hat * math.cos(t - k * 2 * math.pi / 3) for k, f in zip((0, 1, -1), fractions)))

    sag = detect_sag(tuple(f * v_hat for f in fractions), v_hat)
    p, q = sag_power_refs(sag, LIM, pre_sag, k_q)
    qs = [instantaneous_pq(ab(t), current_refs_sag(ab(t), ab(t - math.pi / 2), p, q))[1]
          for t in np.linspace(0, 2 * math.pi, n, endpoint=False)]
    return float(np.mean(qs))


def main():
    print(" k_q   " + "  ".join(f"{k:>9s}" for k in SAGS))
    window = []
    for k_q in np.arange(1.0, 3.01, 0.05):
        qs = {name: mean_q(fr, k_q) for name, (fr, _) in SAGS.items()}
        print(f"{k_q:4.2f}  " + "  ".join(f"{q / 1e3:9.2f}" for q in qs.values()))
        if all(abs(qs[n] - SAGS[n][1]) <= 0.2 * SAGS[n][1] for n in ("1PG", "2PG")):
            window.append(k_q)
    if window:
        print(f"1PG and 2PG both within 20% for k_q in [{min(window):.2f}, {max(window):.2f}]")


if __name__ == "__main__":
    main()
