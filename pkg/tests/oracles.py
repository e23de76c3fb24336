"""Independent reference implementations used to pin expected values.

Everything here is deliberately written from scratch (closed-form water
level, Gauss-Laguerre quadrature, dense-chain linear algebra) so the tests
cross-check the package against a second route to the same numbers.
"""
from __future__ import annotations

import itertools

import numpy as np

GL_X, GL_W = np.polynomial.laguerre.laggauss(128)


def oracle_rate(b, h, hc, phi, base=2.0):
    """Stop rate via the water-level closed form (not the split cases)."""
    logf = np.log2 if base == 2.0 else np.log
    if b <= 0:
        return 0.0
    if phi == 0 or hc <= 0:
        return float(logf(1 + h * b)) if h > 0 else 0.0
    if h <= 0:
        return float(logf(1 + hc * b))
    if abs(1 / hc - 1 / h) < b:
        w = 0.5 * (b + 1 / h + 1 / hc)
        return float(logf(h * hc * w * w))
    g = max(h, hc)
    return float(logf(1 + g * b))


def best_grid_split(b, h, hc, n=10_000, base=2.0):
    """Exhaustive split search for the two-channel allocation."""
    logf = np.log2 if base == 2.0 else np.log
    p = np.linspace(0.0, b, n + 1)
    rates = logf(1 + h * p) + logf(1 + hc * (b - p))
    k = int(np.argmax(rates))
    return float(rates[k]), float(p[k])


# ---------------------------------------------------------------------------
# exact renewal metrics for the i.i.d. unit-mean-exponential configuration


def _rate_vec(b, h, hc):
    interior = np.abs(1 / hc - 1 / h) < b
    w = 0.5 * (b + 1 / h + 1 / hc)
    r_int = np.log2(h * hc * w * w)
    r_one = np.log2(1 + np.maximum(h, hc) * b)
    return np.where(interior, r_int, r_one)


def _q_rho1(b, gamma, ps):
    """(P(R >= gamma), E[R 1{R >= gamma}]) given battery b, gains exp(1)."""
    if b <= 0:
        return (1.0, 0.0) if gamma <= 0 else (0.0, 0.0)
    c = 2.0 ** gamma - 1.0
    hs0 = c / b
    q0 = np.exp(-hs0)
    r0 = q0 * np.sum(GL_W * np.log2(1 + (hs0 + GL_X) * b))
    if ps == 0.0:
        return float(q0), float(r0)
    hc = GL_X
    if gamma <= 0:
        hstar = np.zeros_like(hc)
    else:
        lo = np.full_like(hc, 1e-12)
        hi = np.ones_like(hc)
        for _ in range(200):
            bad = _rate_vec(b, hi, hc) < gamma
            if not bad.any():
                break
            hi[bad] *= 2.0
        for _ in range(70):
            mid = 0.5 * (lo + hi)
            ok = _rate_vec(b, mid, hc) >= gamma
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
        hstar = hi
    q1 = np.sum(GL_W * np.exp(-hstar))
    rates = _rate_vec(b, hstar[None, :] + GL_X[:, None], hc[None, :])
    inner = np.exp(-hstar) * (GL_W @ rates)
    r1 = np.sum(GL_W * inner)
    return float((1 - ps) * q0 + ps * q1), float((1 - ps) * r0 + ps * r1)


def exact_threshold_metrics(gamma, ps, e_values=(0.0, 4.0),
                            e_probs=(0.5, 0.5), b_hi=800.0):
    """(throughput, mean saving time) of the rule 'stop once rate >= gamma'
    for i.i.d. exp(1) gains and i.i.d. harvesting.

    Backward recursion on the battery lattice; the start battery is one
    harvest draw.
    """
    e_values = np.asarray(e_values, float)
    e_probs = np.asarray(e_probs, float)
    step = np.gcd.reduce([int(round(v)) for v in e_values if v > 0] or [1])
    bs = np.arange(0.0, b_hi + step, step)
    n = len(bs)
    q = np.zeros(n)
    r1 = np.zeros(n)
    for i, b in enumerate(bs):
        q[i], r1[i] = _q_rho1(float(b), gamma, ps)
    tau = np.ones(n)
    rho = r1.copy()
    p0 = float(e_probs[e_values == 0].sum())
    nz = [(int(round(v)) // step, p) for v, p in zip(e_values, e_probs)
          if v > 0]
    for i in range(n - 2, -1, -1):
        cont = 1.0 - q[i]
        t_nz = sum(p * tau[min(i + k, n - 1)] for k, p in nz)
        r_nz = sum(p * rho[min(i + k, n - 1)] for k, p in nz)
        denom = 1.0 - cont * p0
        tau[i] = (1.0 + cont * t_nz) / denom
        rho[i] = (r1[i] + cont * r_nz) / denom
    start_idx = [min(int(round(v)) // step, n - 1) for v in e_values]
    eT = float(sum(p * tau[i] for i, p in zip(start_idx, e_probs)))
    eR = float(sum(p * rho[i] for i, p in zip(start_idx, e_probs)))
    return eR / eT, eT


# ---------------------------------------------------------------------------
# exhaustive stationary-policy search on small discrete configurations


class SmallConfig:
    """Markov environment small enough to enumerate every stopping map."""

    def __init__(self, ps, bmax, e_units, Pe, h_vals, Ph, hc, delta=1.0):
        self.ps = ps
        self.bmax = bmax
        self.e_units = list(e_units)
        self.Pe = np.asarray(Pe, float)
        self.h_vals = np.asarray(h_vals, float)
        self.Ph = np.asarray(Ph, float)
        self.hc = hc
        self.delta = delta
        self.nb = bmax + 1
        self.ne = len(e_units)
        self.nh = len(h_vals)
        self.n = 2 * self.nb * self.ne * self.nh

    def index(self, phi, b, e, h):
        return ((phi * self.nb + b) * self.ne + e) * self.nh + h

    def states(self):
        return itertools.product(range(2), range(self.nb), range(self.ne),
                                 range(self.nh))

    def rates(self):
        R = np.zeros(self.n)
        for phi, b, e, h in self.states():
            R[self.index(phi, b, e, h)] = oracle_rate(
                b * self.delta, self.h_vals[h], self.hc, phi)
        return R

    def kernels(self):
        Kc = np.zeros((self.n, self.n))
        Kr = np.zeros((self.n, self.n))
        p_phi = np.array([1 - self.ps, self.ps])
        for phi, b, e, h in self.states():
            i = self.index(phi, b, e, h)
            for e2 in range(self.ne):
                pe = self.Pe[e, e2]
                if pe == 0:
                    continue
                bc = min(b + self.e_units[e2], self.bmax)
                br = min(self.e_units[e2], self.bmax)
                for h2 in range(self.nh):
                    w0 = pe * self.Ph[h, h2]
                    if w0 == 0:
                        continue
                    for phi2 in range(2):
                        w = w0 * p_phi[phi2]
                        if w == 0:
                            continue
                        Kc[i, self.index(phi2, bc, e2, h2)] += w
                        Kr[i, self.index(phi2, br, e2, h2)] += w
        return Kc, Kr

    def decision_states(self):
        return [self.index(phi, b, e, h)
                for phi, b, e, h in self.states() if b > 0]


def policy_gains(config: SmallConfig, masks: np.ndarray) -> np.ndarray:
    """Exact long-run reward per slot for a batch of stop/continue maps.

    Gain = sum_s pi(s) R(s) 1{stop at s} with pi the stationary law of the
    slot chain that follows the saving dynamics on continue states and the
    period-restart dynamics on stop states.
    """
    Kc, Kr = config.kernels()
    R = config.rates()
    n = config.n
    gains = np.empty(len(masks))
    chunk = max(1, 2 ** 22 // (n * n))
    ones = np.ones(n)
    rhs = np.zeros(n)
    rhs[0] = 1.0
    for a in range(0, len(masks), chunk):
        block = masks[a:a + chunk]
        P = np.where(block[:, :, None], Kr[None], Kc[None])
        A = np.swapaxes(P, 1, 2) - np.eye(n)[None]
        A[:, 0, :] = ones
        try:
            rhs_b = np.repeat(rhs[None, :, None], len(block), axis=0)
            pi = np.linalg.solve(A, rhs_b)[..., 0]
            bad = ~np.isfinite(pi).all(axis=1)
        except np.linalg.LinAlgError:
            pi = np.empty((len(block), n))
            bad = np.ones(len(block), bool)
        if not bad.any():
            resid = np.abs(np.einsum("ps,psj->pj", pi, P) - pi).max(axis=1)
            bad = (resid > 1e-8) | (pi.min(axis=1) < -1e-8)
        for j in np.where(bad)[0]:
            pi[j] = _stationary_lstsq(P[j])
        gains[a:a + chunk] = np.einsum(
            "ps,s,ps->p", pi, R, block.astype(float))
    return gains


def _stationary_lstsq(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return np.clip(pi, 0.0, None) / max(np.clip(pi, 0.0, None).sum(), 1e-300)


def enumerate_best_policy(config: SmallConfig):
    """(best gain, best mask) over every stationary stop/continue map.

    Maps never stop at an empty battery: a zero-rate stop has the same
    transition as continuing and contributes zero reward, so excluding it
    loses nothing.
    """
    dec = config.decision_states()
    n_dec = len(dec)
    if n_dec > 16:
        raise ValueError(f"{n_dec} decision states is too many to enumerate")
    count = 2 ** n_dec
    bits = ((np.arange(count)[:, None] >> np.arange(n_dec)[None, :]) & 1
            ).astype(bool)
    masks = np.zeros((count, config.n), dtype=bool)
    masks[:, dec] = bits
    gains = policy_gains(config, masks)
    k = int(np.argmax(gains))
    return float(gains[k]), masks[k]
