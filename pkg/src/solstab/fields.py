"""Seeded, compactly supported test fields with analytic derivatives.

All randomness in the package flows through rng_for(seed, *key): a counted
splittable generator built on numpy's SeedSequence, so identical seeds give
identical fields on any machine and refining the grid re-samples the same
continuum function.
"""

import zlib

import numpy as np

__all__ = ["rng_for", "smoothstep", "smoothstep_d", "Bump", "random_bump"]


def rng_for(seed, *key):
    ents = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in key:
        if isinstance(k, str):
            ents.append(zlib.crc32(k.encode()))
        else:
            ents.append(int(k) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy=ents))


def smoothstep(x):
    """C^2 ramp: 0 below 0, 1 above 1, x^3(10-15x+6x^2) between."""
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 * (10.0 - 15.0 * x + 6.0 * x ** 2)


def smoothstep_d(x):
    d = 30.0 * x ** 2 * (1.0 - x) ** 2
    return np.where((x > 0.0) & (x < 1.0), d, 0.0)


class Bump:
    """amp * ramp_up * ramp_down * (1 + osc), supported on [a, b].

    The two smoothstep ramps meet at the midpoint, so the profile is C^2
    with all derivatives vanishing at the support ends; the oscillation
    keeps seeded families from all looking alike. d() is the exact radial
    derivative, so consumers can choose analytic or finite-difference
    derivatives independently.
    """

    def __init__(self, a, b, amp=1.0, osc_k=0.0, osc_ph=0.0):
        if not b > a:
            raise ValueError("need b > a")
        self.a = float(a)
        self.b = float(b)
        self.amp = float(amp)
        self.osc_k = float(osc_k)
        self.osc_ph = float(osc_ph)
        self.w = 0.5 * (b - a)

    def _parts(self, r):
        x1 = (r - self.a) / self.w
        x2 = (self.b - r) / self.w
        p = smoothstep(x1) * smoothstep(x2)
        q = 1.0 + 0.3 * np.sin(self.osc_k * (r - self.a) + self.osc_ph)
        return x1, x2, p, q

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        _, _, p, q = self._parts(r)
        return self.amp * p * q

    def d(self, r):
        r = np.asarray(r, dtype=float)
        x1, x2, p, q = self._parts(r)
        dp = (smoothstep_d(x1) * smoothstep(x2)
              - smoothstep(x1) * smoothstep_d(x2)) / self.w
        dq = 0.3 * self.osc_k * np.cos(self.osc_k * (r - self.a)
                                       + self.osc_ph)
        return self.amp * (dp * q + p * dq)

    def params(self):
        return {"a": self.a, "b": self.b, "amp": self.amp,
                "osc_k": self.osc_k, "osc_ph": self.osc_ph}


def random_bump(rng, r_lo, r_hi, min_rel_width=0.25):
    """Seeded bump strictly inside (r_lo, r_hi)."""
    span = r_hi - r_lo
    if span <= 0:
        raise ValueError("empty window")
    margin = 0.05 * span
    free = span - 2.0 * margin
    width = (min_rel_width + (0.85 - min_rel_width) * rng.random()) * free
    a = r_lo + margin + rng.random() * (free - width)
    amp = (0.5 + rng.random()) * (1.0 if rng.random() < 0.5 else -1.0)
    j = rng.integers(0, 3)
    osc_k = np.pi * j / width
    osc_ph = 2.0 * np.pi * rng.random()
    return Bump(a, a + width, amp=amp, osc_k=osc_k, osc_ph=osc_ph)
