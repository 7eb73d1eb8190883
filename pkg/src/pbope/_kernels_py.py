"""Pure numpy implementations of the compiled kernels.

Every function here has the same signature and return contract as its
counterpart in ``_kernels.pyx``; the test suite checks them against each other.
"""
import numpy as np

BACKEND = "python"

_MASK = (1 << 64) - 1
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
CLAMP_HI = 1.0 - 1e-12


def _fmix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniforms(seed, day, index, n_slots):
    idx = np.ascontiguousarray(index, dtype=np.uint64)
    s = np.full(idx.shape, int(seed) & _MASK, dtype=np.uint64)
    d = np.uint64(int(day) & _MASK)
    with np.errstate(over="ignore"):
        h = _fmix(s + GOLDEN)
        h = _fmix((h ^ d) + GOLDEN)
        state = _fmix((h ^ idx) + GOLDEN)
        out = np.empty((idx.shape[0], n_slots), dtype=np.float64)
        for j in range(n_slots):
            state = state + GOLDEN
            out[:, j] = (_fmix(state) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    return out


def _clamped_q(cell_pair, cell_pos, n_skip, theta, gamma):
    q = theta[cell_pos] * gamma[cell_pair]
    over = q > CLAMP_HI
    clamped = int(np.count_nonzero(over & (n_skip > 0)))
    return np.minimum(q, CLAMP_HI), clamped


def _loglik(q, n_click, n_skip):
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(n_click > 0, n_click * np.log(q), 0.0)
        b = np.where(n_skip > 0, n_skip * np.log1p(-q), 0.0)
    return float(np.sum(a) + np.sum(b))


def em_sweep(cell_pair, cell_pos, n_click, n_skip, theta, gamma):
    cell_pair = np.asarray(cell_pair, dtype=np.int64)
    cell_pos = np.asarray(cell_pos, dtype=np.int64)
    n_click = np.asarray(n_click, dtype=np.float64)
    n_skip = np.asarray(n_skip, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)

    q, clamped = _clamped_q(cell_pair, cell_pos, n_skip, theta, gamma)
    ll = _loglik(q, n_click, n_skip)
    t = theta[cell_pos]
    g = gamma[cell_pair]
    tot = n_click + n_skip
    post_e = n_click + n_skip * t * (1.0 - g) / (1.0 - q)
    post_r = n_click + n_skip * g * (1.0 - t) / (1.0 - q)

    num_t = np.bincount(cell_pos, weights=post_e, minlength=theta.size)
    den_t = np.bincount(cell_pos, weights=tot, minlength=theta.size)
    num_g = np.bincount(cell_pair, weights=post_r, minlength=gamma.size)
    den_g = np.bincount(cell_pair, weights=tot, minlength=gamma.size)
    new_theta = np.where(den_t > 0, num_t / np.where(den_t > 0, den_t, 1.0), theta)
    new_gamma = np.where(den_g > 0, num_g / np.where(den_g > 0, den_g, 1.0), gamma)
    return new_theta, new_gamma, ll, clamped


def cell_log_likelihood(cell_pair, cell_pos, n_click, n_skip, theta, gamma):
    n_click = np.asarray(n_click, dtype=np.float64)
    n_skip = np.asarray(n_skip, dtype=np.float64)
    q, clamped = _clamped_q(
        np.asarray(cell_pair, dtype=np.int64),
        np.asarray(cell_pos, dtype=np.int64),
        n_skip,
        np.asarray(theta, dtype=np.float64),
        np.asarray(gamma, dtype=np.float64),
    )
    return _loglik(q, n_click, n_skip), clamped


def ips_sums(offsets, k_pos, p_pos, clicked, alpha, theta, clip):
    offsets = np.asarray(offsets, dtype=np.int64)
    k_pos = np.asarray(k_pos, dtype=np.int64)
    p_pos = np.asarray(p_pos, dtype=np.int64)
    clicked = np.asarray(clicked, dtype=bool)
    alpha = np.asarray(alpha, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    n = offsets.size - 1
    sess = np.repeat(np.arange(n), np.diff(offsets))

    kmax = np.zeros(n, dtype=np.int64)
    np.maximum.at(kmax, sess, np.where(clicked, k_pos, 0))
    in_range = k_pos <= kmax[sess]
    missing = in_range & (p_pos < 1)
    dropped = np.zeros(n, dtype=bool)
    dropped[sess[missing]] = True

    terms = in_range & clicked & ~dropped[sess]
    K, A = theta.size, alpha.size
    p = np.minimum(p_pos[terms], K) - 1
    k = np.minimum(k_pos[terms], K) - 1
    w = theta[p] / theta[k]
    n_clip = 0
    if clip > 0:
        over = w > clip
        n_clip = int(np.count_nonzero(over))
        w = np.where(over, clip, w)
    contrib = w * alpha[np.minimum(k_pos[terms], A) - 1]
    sums = np.bincount(sess[terms], weights=contrib, minlength=n).astype(np.float64)
    return sums, dropped, n_clip, float(np.sum(w)), float(np.sum(w * w)), int(w.size)
