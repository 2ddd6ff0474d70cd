"""Log-space special functions for the mechanisms.

Everything that is a probability is returned as a natural log so that cap
probabilities such as (1 - gamma**2)**((d-1)/2) survive at d ~ 1e6 and beyond.

    log_beta            ln B(a, b)
    reg_inc_beta        ln I_x(a, b)
    inv_reg_inc_beta    x with I_x(a, b) = q
    inv_log_reg_inc_beta  x with ln I_x(a, b) = lq, for lq down to -1e300
    sphere_cap_logprob  ln P(<U, u> >= gamma) for U uniform on S^{d-1}
    log_binom_tail      ln sum_{l=lo}^{hi} C(d, l)
"""

import math

import numpy as np
from scipy.special import betaln, gammaln, logsumexp, betaincinv

CF_TOL = 1e-15
CF_BASE_ITERS = 500
_TINY = 1e-300
_LOG_HALF = -math.log(2.0)


def _check_positive(**kw):
    for name, v in kw.items():
        if np.any(np.asarray(v) <= 0) or np.any(np.isnan(v)):
            raise ValueError(f"{name} must be positive, got {v}")


_STIRLING_MIN = 100.0


def _stirling_tail(x):
    # ln Gamma(x) minus its Stirling approximation, for x >= 100
    x2 = x * x
    return (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * x2)) / x2) / x2) / x


def _log_beta(a, b):
    a, b = np.maximum(a, b), np.minimum(a, b)
    big = a >= _STIRLING_MIN
    with np.errstate(invalid="ignore", divide="ignore"):
        # ln Gamma(a) - ln Gamma(a + b) without cancelling two huge log-gammas
        s = a + b
        diff = (-(a - 0.5) * np.log1p(b / a) - b * np.log(s) + b
                + _stirling_tail(np.maximum(a, _STIRLING_MIN)) - _stirling_tail(np.maximum(s, _STIRLING_MIN)))
        out = np.where(big, gammaln(b) + diff, betaln(a, b))
    return out if np.ndim(out) else float(out)


def log_beta(alpha, beta):
    """ln B(alpha, beta).

    Log-gamma for small arguments; once the larger one reaches 100 the
    difference ln Gamma(a) - ln Gamma(a + b) is taken from Stirling's series,
    which keeps full accuracy for B(1e6, 1/2) where gammaln differences lose
    about nine digits.
    """
    _check_positive(alpha=alpha, beta=beta)
    return _log_beta(np.asarray(alpha, float), np.asarray(beta, float))


def _cf_iters(a, b):
    # Near the mean the Lentz recursion needs O(sqrt(a + b)) terms, so the
    # fixed budget is widened for very large shape parameters.
    return CF_BASE_ITERS + int(4 * math.sqrt(float(np.max(a + b))))


def _betacf(a, b, x):
    """Continued fraction for I_x(a, b), modified Lentz, vectorized.

    Valid (fast convergence) for x < (a + 1) / (a + b + 2). Entries that
    have converged are dropped from the working set as the loop proceeds.
    """
    x = np.asarray(x, float)
    scalar_ab = np.ndim(a) == 0 and np.ndim(b) == 0
    if scalar_ab:
        a, b = float(a), float(b)
        maxit = _cf_iters(a, b)
    else:
        x, a, b = np.broadcast_arrays(x, np.asarray(a, float), np.asarray(b, float))
        a, b = a.ravel(), b.ravel()
        maxit = _cf_iters(a, b)
    shape = x.shape
    xs = x.ravel()
    out = np.empty(xs.shape)
    idx = np.arange(xs.size)
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(xs)
    dd = 1.0 - qab * xs / qap
    dd = 1.0 / np.where(np.abs(dd) < _TINY, _TINY, dd)
    h = dd.copy()
    for m in range(1, maxit + 1):
        m2 = 2 * m
        aa = m * (b - m) * xs / ((qam + m2) * (a + m2))
        dd = 1.0 + aa * dd
        dd = 1.0 / np.where(np.abs(dd) < _TINY, _TINY, dd)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        h *= dd * c
        aa = -(a + m) * (qab + m) * xs / ((a + m2) * (qap + m2))
        dd = 1.0 + aa * dd
        dd = 1.0 / np.where(np.abs(dd) < _TINY, _TINY, dd)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        delta = dd * c
        h *= delta
        conv = np.abs(delta - 1.0) <= CF_TOL
        if conv.any():
            out[idx[conv]] = h[conv]
            keep = ~conv
            if not keep.any():
                return out.reshape(shape)
            idx, xs, c, dd, h = idx[keep], xs[keep], c[keep], dd[keep], h[keep]
            if not scalar_ab:
                a, b = a[keep], b[keep]
                qab, qap, qam = a + b, a + 1.0, a - 1.0
    out[idx] = h
    return out.reshape(shape)


def _log_prefactor(x, a, b):
    """ln[x^a (1-x)^b / (a B(a, b))] with the symmetric case done carefully.

    For a == b the product x(1-x) is written as (1 - (1-2x)^2) / 4 and the
    duplication formula turns B(a, a) into B(a, 1/2), which removes the
    catastrophic cancellation between a*log(x) and ln B at a ~ 1e6.
    """
    with np.errstate(divide="ignore"):
        # near the centre use 4x(1-x) = 1 - (1-2x)^2, in the tails x(1-x)
        # directly since 1 - 2x rounds to 1 there
        centre = np.abs(1.0 - 2.0 * x) < 0.5
        log_4x1x = np.where(centre, np.log1p(-(1.0 - 2.0 * x) ** 2),
                            np.log(x) + np.log1p(-x) + math.log(4.0))
        if np.ndim(a) == 0 and np.ndim(b) == 0:
            if a == b:
                return a * log_4x1x + (_LOG_HALF - _log_beta(a, 0.5) - math.log(a))
            return a * np.log(x) + b * np.log1p(-x) - (_log_beta(a, b) + math.log(a))
        sym = a * log_4x1x + _LOG_HALF - _log_beta(a, 0.5) - np.log(a)
        gen = a * np.log(x) + b * np.log1p(-x) - _log_beta(a, b) - np.log(a)
    return np.where(a == b, sym, gen)


def _log_lower(x, a, b):
    # ln I_x(a, b) for x on the convergent side of the continued fraction
    with np.errstate(divide="ignore"):
        return _log_prefactor(x, a, b) + np.log(_betacf(a, b, x))


def _pick(v, mask):
    return v if np.ndim(v) == 0 else v[mask]


def _log_inc_beta(x, a, b):
    x = np.asarray(x, float)
    if np.ndim(a) or np.ndim(b):
        x, a, b = np.broadcast_arrays(x, np.asarray(a, float), np.asarray(b, float))
    else:
        a, b = float(a), float(b)
    out = np.empty(x.shape)
    zero = x <= 0.0
    one = x >= 1.0
    flip = (x > (a + 1.0) / (a + b + 2.0)) & ~one
    low = ~(zero | one | flip)
    out[zero] = -np.inf
    out[one] = 0.0
    if low.any():
        out[low] = _log_lower(x[low], _pick(a, low), _pick(b, low))
    if flip.any():
        comp = _log_lower(1.0 - x[flip], _pick(b, flip), _pick(a, flip))
        out[flip] = np.log1p(-np.exp(comp))
    return out


def reg_inc_beta(x, alpha, beta):
    """ln I_x(alpha, beta), the log of the regularized incomplete beta.

    Accepts arrays; broadcasts over all three arguments.
    """
    _check_positive(alpha=alpha, beta=beta)
    xa = np.asarray(x, float)
    if np.any((xa < 0) | (xa > 1)) or np.any(np.isnan(xa)):
        raise ValueError("x must lie in [0, 1]")
    out = _log_inc_beta(xa, alpha, beta)
    return out[()] if out.ndim == 0 else out


def reg_inc_beta_upper(x, alpha, beta):
    """ln(1 - I_x(alpha, beta)) without forming the difference."""
    return reg_inc_beta(1.0 - np.asarray(x, float), beta, alpha)


def _log_x_pdf(x, a, b):
    # ln(x * density of Beta(a, b) at x), the derivative of I along ln x
    return _log_prefactor(x, a, b) + np.log(a) - np.log1p(-x)


def _newton_log_inc_beta(lq, a, b, lo, hi, maxiter):
    # safeguarded Newton on t = ln x; all arguments are flat arrays
    # scipy's inverse only supplies the starting point; the root is always
    # polished against the log-space continued fraction above
    with np.errstate(all="ignore"):
        x = betaincinv(a, b, np.exp(lq))
    x = np.where((x > lo) & (x < hi), x, 0.5 * (lo + hi))
    x[lq == -np.inf] = 0.0
    x[lq == 0.0] = hi[lq == 0.0]
    active = np.isfinite(lq) & (lq < 0.0)
    for _ in range(maxiter):
        if not active.any():
            break
        xs, as_, bs, ls = x[active], a[active], b[active], lq[active]
        li = _log_inc_beta(xs, as_, bs)
        f = li - ls
        los = np.where(f < 0, xs, lo[active])
        his = np.where(f >= 0, xs, hi[active])
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            slope = np.exp(_log_x_pdf(xs, as_, bs) - li)
            xn = xs * np.exp(-f / slope)
        done = ((np.abs(f) <= 1e-15 * np.maximum(1.0, np.abs(ls)))
                | (np.abs(xn - xs) <= 4e-16 * xs) | (his - los <= 4e-16 * his))
        # a root below the smallest double shows up as an underflowed step
        under = (xn == 0.0) & (f > 0) & (los == 0.0)
        done |= under
        bad = ~np.isfinite(xn) | (xn <= los) | (xn >= his)
        xn = np.where(under, 0.0, np.where(done, xs, np.where(bad, 0.5 * (los + his), xn)))
        x[active] = xn
        lo[active] = los
        hi[active] = his
        active[active] = ~done
    return x


def inv_log_reg_inc_beta(lq, alpha, beta, lo=0.0, hi=1.0, maxiter=100):
    """Solve ln I_x(alpha, beta) = lq for x, vectorized over lq.

    Newton steps are taken on t = ln x, where ln I is concave for
    alpha, beta >= 1 so the iteration cannot overshoot once it is left of
    the root. A bisection bracket [lo, hi] is kept for every entry and any
    step that leaves it is replaced by the bracket midpoint, which covers
    the non-concave shapes (alpha or beta < 1) as well. Targets above the
    median are solved on the mirrored problem I_{1-x}(beta, alpha) = 1 - q.
    """
    _check_positive(alpha=alpha, beta=beta)
    arrs = np.broadcast_arrays(np.asarray(lq, float), np.asarray(alpha, float),
                               np.asarray(beta, float), np.asarray(lo, float),
                               np.asarray(hi, float))
    shape = arrs[0].shape
    lq, a, b, lo, hi = (np.array(v, float).ravel() for v in arrs)
    if np.any(lq > 0) or np.any(np.isnan(lq)):
        raise ValueError("log probability must be <= 0")
    x = np.empty(lq.shape)
    up = lq > _LOG_HALF
    if (~up).any():
        x[~up] = _newton_log_inc_beta(lq[~up], a[~up], b[~up], lo[~up], hi[~up], maxiter)
    if up.any():
        with np.errstate(divide="ignore"):
            lc = np.log(-np.expm1(lq[up]))
        x[up] = 1.0 - _newton_log_inc_beta(lc, b[up], a[up], 1.0 - hi[up], 1.0 - lo[up], maxiter)
    x = x.reshape(shape)
    return x[()] if x.ndim == 0 else x


def inv_reg_inc_beta(q, alpha, beta):
    """x in [0, 1] with I_x(alpha, beta) = q."""
    qa = np.asarray(q, float)
    if np.any((qa < 0) | (qa > 1)) or np.any(np.isnan(qa)):
        raise ValueError("q must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        lq = np.log(qa)
    # above the median, solve the mirrored problem so the target keeps
    # full relative precision
    upper = qa > 0.5
    out = np.empty(qa.shape)
    if (~upper).any():
        out[~upper] = inv_log_reg_inc_beta(lq[~upper], np.broadcast_to(alpha, qa.shape)[~upper],
                                           np.broadcast_to(beta, qa.shape)[~upper])
    if upper.any():
        with np.errstate(divide="ignore"):
            lc = np.log1p(-qa[upper])
        out[upper] = 1.0 - inv_log_reg_inc_beta(lc, np.broadcast_to(beta, qa.shape)[upper],
                                                np.broadcast_to(alpha, qa.shape)[upper])
    return out[()] if out.ndim == 0 else out


def sphere_cap_logprob(d, gamma):
    """ln P(<U, u> >= gamma) for U uniform on the unit sphere in R^d.

    The first coordinate of U is 2B - 1 with B ~ Beta((d-1)/2, (d-1)/2), so
    the cap probability is I_{(1-gamma)/2}(alpha, alpha).
    """
    if d < 2 or int(d) != d:
        raise ValueError("d must be an integer >= 2")
    g = np.asarray(gamma, float)
    if np.any(np.abs(g) > 1) or np.any(np.isnan(g)):
        raise ValueError("gamma must lie in [-1, 1]")
    alpha = (d - 1) / 2.0
    out = _log_inc_beta((1.0 - g) / 2.0, alpha, alpha)
    return out[()] if out.ndim == 0 else out


def sphere_cap_logprob_below(d, gamma):
    """ln P(<U, u> < gamma), the complement of sphere_cap_logprob."""
    return sphere_cap_logprob(d, -np.asarray(gamma, float))


def log_binom(d, l):
    """ln C(d, l) for integer arrays l."""
    l = np.asarray(l, float)
    return gammaln(d + 1.0) - gammaln(l + 1.0) - gammaln(d - l + 1.0)


def log_binom_tail(d, lo, hi):
    """ln sum_{l=lo}^{hi} C(d, l)."""
    d, lo, hi = int(d), int(lo), int(hi)
    if not 0 <= lo <= hi <= d:
        raise ValueError(f"need 0 <= lo <= hi <= d, got lo={lo} hi={hi} d={d}")
    if lo == 0 and hi == d:
        return d * math.log(2.0)
    if d <= 1030:
        # exact integers are cheap here and avoid any rounding in the sum;
        # math.log accepts arbitrarily large ints
        c = math.comb(d, lo)
        total = 0
        for l in range(lo, hi + 1):
            total += c
            c = c * (d - l) // (l + 1)
        return math.log(total)
    ls = np.arange(lo, hi + 1)
    return float(logsumexp(log_binom(d, ls)))
