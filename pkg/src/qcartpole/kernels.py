"""Hot loops for the classical surrogate, written once and compiled with
numba when available.

Setting ``QCARTPOLE_NUMBA=0`` (or running without numba installed) selects
the plain-Python path; both paths execute the same source and consume the
same Mersenne-Twister stream, so episodes are bit-identical across
backends.  ``benchmarks/backend_bench.py`` times the two.

Everything here works on scalars: the observation matrix is the identity
and the input vector is (0, 1), which the expansions below exploit.  Draw
order per episode is pinned: one uniform for the initial momentum, then
per inner step four standard normals (process pair, measurement pair),
then one uniform per outer block if the controller is random.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("QCARTPOLE_NUMBA", "1") != "0"

if USE_NUMBA:
    def _compile(fn):
        return _njit(cache=True, nogil=True)(fn)
else:
    def _compile(fn):
        return fn

# potential kind codes (match Potential.kind_code)
POT_QUADRATIC = 0
POT_COSINE = 1
POT_QUARTIC = 2

# controller / estimator codes
CTRL_ZERO = 0
CTRL_RANDOM = 1
CTRL_LQR = 2

EST_RAW = 0
EST_KF = 1
EST_KF_DECORR = 2
EST_EKF = 3

REASON_THRESHOLD = 0
REASON_MAX_STEPS = 1


@_compile
def v_prime(kind, c1, c2, x):
    if kind == 0:
        return -c1 * x
    if kind == 1:
        return -c1 * math.pi / c2 * math.sin(math.pi * x / c2)
    return -4.0 * c1 * x * x * x


@_compile
def v_second(kind, c1, c2, x):
    if kind == 0:
        return -c1
    if kind == 1:
        return -c1 * (math.pi / c2) ** 2 * math.cos(math.pi * x / c2)
    return -12.0 * c1 * x * x


@_compile
def lqr_position_weight(kind, c1, c2, x, eps_w):
    s = abs(x)
    if kind == 0:
        w = 0.5 * c1
    elif kind == 1:
        if s < 1e-8:
            w = -0.5 * c1 * (math.pi / c2) ** 2
        else:
            w = c1 * (math.cos(math.pi * s / c2) - 1.0) / (s * s)
    else:
        w = c1 * s * s
    return max(w, eps_w)


@_compile
def riccati_scalar(a00, a01, a10, a11, b0, b1, w100, w111, w2,
                   p00, p01, p11, tol, max_iter):
    """Value iteration for a general 2x2 (A, B); returns
    (p00, p01, p11, k0, k1, ok)."""
    k0 = 0.0
    k1 = 0.0
    for _ in range(max_iter):
        pa00 = p00 * a00 + p01 * a10
        pa01 = p00 * a01 + p01 * a11
        pa10 = p01 * a00 + p11 * a10
        pa11 = p01 * a01 + p11 * a11
        # B'PB and B'PA
        pb0 = p00 * b0 + p01 * b1
        pb1 = p01 * b0 + p11 * b1
        denom = w2 + b0 * pb0 + b1 * pb1
        if denom <= 0.0 or not math.isfinite(denom):
            return p00, p01, p11, 0.0, 0.0, False
        k0 = (b0 * pa00 + b1 * pa10) / denom
        k1 = (b0 * pa01 + b1 * pa11) / denom
        apa00 = a00 * pa00 + a10 * pa10
        apa01 = a00 * pa01 + a10 * pa11
        apa10 = a01 * pa00 + a11 * pa10
        apa11 = a01 * pa01 + a11 * pa11
        apb0 = a00 * pb0 + a10 * pb1
        apb1 = a01 * pb0 + a11 * pb1
        n00 = w100 + apa00 - apb0 * k0
        n01 = 0.5 * ((apa01 - apb0 * k1) + (apa10 - apb1 * k0))
        n11 = w111 + apa11 - apb1 * k1
        delta = max(abs(n00 - p00), abs(n01 - p01), abs(n11 - p11))
        p00, p01, p11 = n00, n01, n11
        if delta < tol:
            return p00, p01, p11, k0, k1, True
    return p00, p01, p11, k0, k1, False


@_compile
def block_transition(a00, a01, a10, a11, n):
    """(A^n, sum_j A^j (0,1)): held-force block as one transition."""
    e00 = 1.0
    e01 = 0.0
    e10 = 0.0
    e11 = 1.0
    s0 = 0.0
    s1 = 0.0
    for _ in range(n):
        s0_new = a00 * s0 + a01 * s1
        s1_new = a10 * s0 + a11 * s1 + 1.0
        s0 = s0_new
        s1 = s1_new
        f00 = a00 * e00 + a01 * e10
        f01 = a00 * e01 + a01 * e11
        f10 = a10 * e00 + a11 * e10
        f11 = a10 * e01 + a11 * e11
        e00, e01, e10, e11 = f00, f01, f10, f11
    return e00, e01, e10, e11, s0, s1


@_compile
def classical_episode(
    seed,
    pot_kind, c1, c2, dt, mass,
    x_th, f_max, p0_half,
    n_meas, max_steps,
    chol,                      # (4, 4) lower Cholesky of joint (w, v) cov
    controller_kind, random_scale,
    estimator_kind,
    a_eff, b_eff,              # compounded block transition (2,2), (2,)
    r_eff, q_eff, s_eff,       # compounded process / averaged-measurement cov
    a_star, t_mat, q_star,     # decorrelation pieces (zeros unless used)
    r_in,                      # per-inner-step process cov (ekf)
    relinearize,
    k0_fixed, k1_fixed,
    w2, eps_w,
    prior_var_x, prior_var_p,
    trace,
    tr_x, tr_p, tr_mx, tr_mp,          # per inner step
    tr_u, tr_yx, tr_yp, tr_sx, tr_sp,  # per outer block
):
    """One full surrogate episode; returns (t_termination, reason, n_outer).

    The process-noise sample drawn at a measurement slot perturbs the
    *next* transition (the back-action enters the state after the outcome
    is read), so the first transition of the episode is noiseless.
    """
    np.random.seed(seed)
    x = 0.0
    p = np.random.uniform(-p0_half, p0_half)

    # the controller emits a force; each inner step applies force * dt as a
    # momentum impulse, so the force bound competes with the potential
    # gradient (f_max equals |V'| at the threshold for the quadratic case)
    u_max = f_max * dt

    # pending process noise (applied on the next transition)
    wpx = 0.0
    wpp = 0.0

    # estimator state
    shx = 0.0
    shp = 0.0
    e00 = prior_var_x
    e01 = 0.0
    e11 = prior_var_p

    # unpack matrices to scalars
    l00 = chol[0, 0]
    l10 = chol[1, 0]
    l11 = chol[1, 1]
    l20 = chol[2, 0]
    l21 = chol[2, 1]
    l22 = chol[2, 2]
    l30 = chol[3, 0]
    l31 = chol[3, 1]
    l32 = chol[3, 2]
    l33 = chol[3, 3]

    a00 = a_eff[0, 0]
    a01 = a_eff[0, 1]
    a10 = a_eff[1, 0]
    a11 = a_eff[1, 1]
    b0 = b_eff[0]
    b1 = b_eff[1]
    r00 = r_eff[0, 0]
    r01 = r_eff[0, 1]
    r11 = r_eff[1, 1]
    q00 = q_eff[0, 0]
    q01 = q_eff[0, 1]
    q11 = q_eff[1, 1]
    as00 = a_star[0, 0]
    as01 = a_star[0, 1]
    as10 = a_star[1, 0]
    as11 = a_star[1, 1]
    t00 = t_mat[0, 0]
    t01 = t_mat[0, 1]
    t10 = t_mat[1, 0]
    t11 = t_mat[1, 1]
    qs00 = q_star[0, 0]
    qs01 = q_star[0, 1]
    qs11 = q_star[1, 1]
    ri00 = r_in[0, 0]
    ri01 = r_in[0, 1]
    ri11 = r_in[1, 1]

    dtm = dt / mass

    # warm-started Riccati state for relinearized gains
    pr00 = 0.0
    pr01 = 0.0
    pr11 = 0.0
    have_ric = False
    k0 = k0_fixed
    k1 = k1_fixed

    u = 0.0                 # first block applies no force
    yx_prev = 0.0
    yp_prev = 0.0
    have_prev = False

    step = 0
    n_outer = 0
    while True:
        acc_x = 0.0
        acc_p = 0.0
        block_len = 0
        terminated = False
        reason = REASON_THRESHOLD
        for _ in range(n_meas):
            # transition: deterministic map plus the carried back-action
            x_new = x + p * dtm
            p_new = p - v_prime(pot_kind, c1, c2, x) * dt + u
            x = x_new + wpx
            p = p_new + wpp
            # noise pair for this slot's measurement
            z0 = np.random.standard_normal()
            z1 = np.random.standard_normal()
            z2 = np.random.standard_normal()
            z3 = np.random.standard_normal()
            wpx = l00 * z0
            wpp = l10 * z0 + l11 * z1
            vx = l20 * z0 + l21 * z1 + l22 * z2
            vp = l30 * z0 + l31 * z1 + l32 * z2 + l33 * z3
            yx = x + vx
            yp = p + vp
            acc_x += yx
            acc_p += yp
            if trace:
                tr_x[step] = x
                tr_p[step] = p
                tr_mx[step] = yx
                tr_mp[step] = yp
            step += 1
            block_len += 1
            if abs(x) > x_th:
                terminated = True
                reason = REASON_THRESHOLD
                break
            if step >= max_steps:
                terminated = True
                reason = REASON_MAX_STEPS
                break
        if terminated:
            return step, reason, n_outer

        yx = acc_x / block_len
        yp = acc_p / block_len

        # ---- estimator -------------------------------------------------
        if estimator_kind == EST_RAW:
            shx = yx
            shp = yp
        else:
            if estimator_kind == EST_EKF:
                sx = shx
                sp = shp
                pp00 = e00
                pp01 = e01
                pp11 = e11
                for _ in range(n_meas):
                    j = -v_second(pot_kind, c1, c2, sx) * dt
                    g00 = pp00 + dtm * pp01
                    g01 = pp01 + dtm * pp11
                    g10 = j * pp00 + pp01
                    g11 = j * pp01 + pp11
                    pp00 = g00 + g01 * dtm + ri00
                    pp01 = g00 * j + g01 + ri01
                    pp11 = g10 * j + g11 + ri11
                    sx_new = sx + sp * dtm
                    sp_new = sp - v_prime(pot_kind, c1, c2, sx) * dt + u
                    sx = sx_new
                    sp = sp_new
            elif estimator_kind == EST_KF_DECORR and have_prev:
                sx = as00 * shx + as01 * shp + b0 * u + t00 * yx_prev + t01 * yp_prev
                sp = as10 * shx + as11 * shp + b1 * u + t10 * yx_prev + t11 * yp_prev
                g00 = as00 * e00 + as01 * e01
                g01 = as00 * e01 + as01 * e11
                g10 = as10 * e00 + as11 * e01
                g11 = as10 * e01 + as11 * e11
                pp00 = g00 * as00 + g01 * as01 + qs00
                pp01 = g00 * as10 + g01 * as11 + qs01
                pp11 = g10 * as10 + g11 * as11 + qs11
            else:
                sx = a00 * shx + a01 * shp + b0 * u
                sp = a10 * shx + a11 * shp + b1 * u
                g00 = a00 * e00 + a01 * e01
                g01 = a00 * e01 + a01 * e11
                g10 = a10 * e00 + a11 * e01
                g11 = a10 * e01 + a11 * e11
                pp00 = g00 * a00 + g01 * a01 + r00
                pp01 = g00 * a10 + g01 * a11 + r01
                pp11 = g10 * a10 + g11 * a11 + r11
            # update with the averaged measurement (C = I)
            zx = yx - sx
            zp = yp - sp
            s00 = pp00 + q00
            s01 = pp01 + q01
            s11 = pp11 + q11
            det = s00 * s11 - s01 * s01
            i00 = s11 / det
            i01 = -s01 / det
            i11 = s00 / det
            g00 = pp00 * i00 + pp01 * i01
            g01 = pp00 * i01 + pp01 * i11
            g10 = pp01 * i00 + pp11 * i01
            g11 = pp01 * i01 + pp11 * i11
            shx = sx + g00 * zx + g01 * zp
            shp = sp + g10 * zx + g11 * zp
            n00 = (1.0 - g00) * pp00 - g01 * pp01
            n01 = (1.0 - g00) * pp01 - g01 * pp11
            n10 = -g10 * pp00 + (1.0 - g11) * pp01
            n11 = -g10 * pp01 + (1.0 - g11) * pp11
            e00 = n00
            e01 = 0.5 * (n01 + n10)
            e11 = n11

        yx_prev = yx
        yp_prev = yp
        have_prev = True

        # ---- controller (force for the next block) ---------------------
        if controller_kind == CTRL_ZERO:
            u = 0.0
        elif controller_kind == CTRL_RANDOM:
            hi = random_scale * u_max
            u = np.random.uniform(-hi, hi)
        else:
            if relinearize:
                w100 = lqr_position_weight(pot_kind, c1, c2, shx, eps_w)
                w111 = 0.5 / mass
                ja10 = -v_second(pot_kind, c1, c2, shx) * dt
                ba00, ba01, ba10, ba11, bb0, bb1 = block_transition(
                    1.0, dtm, ja10, 1.0, n_meas)
                if not have_ric:
                    pr00 = w100
                    pr01 = 0.0
                    pr11 = w111
                pr00, pr01, pr11, kk0, kk1, ok = riccati_scalar(
                    ba00, ba01, ba10, ba11, bb0, bb1, w100, w111, w2,
                    pr00, pr01, pr11, 1e-10, 100_000)
                if ok:
                    k0 = kk0
                    k1 = kk1
                    have_ric = True
                # on failure keep the previous block's gain
            u = -(k0 * shx + k1 * shp)
            if u > u_max:
                u = u_max
            elif u < -u_max:
                u = -u_max

        if trace:
            tr_u[n_outer] = u / dt
            tr_yx[n_outer] = yx
            tr_yp[n_outer] = yp
            tr_sx[n_outer] = shx
            tr_sp[n_outer] = shp
        n_outer += 1


@_compile
def noise_pair_stream(seed, n, chol):
    """n jointly drawn (w, v) rows, same order the episode kernel uses."""
    np.random.seed(seed)
    out = np.empty((n, 4))
    for i in range(n):
        z0 = np.random.standard_normal()
        z1 = np.random.standard_normal()
        z2 = np.random.standard_normal()
        z3 = np.random.standard_normal()
        out[i, 0] = chol[0, 0] * z0
        out[i, 1] = chol[1, 0] * z0 + chol[1, 1] * z1
        out[i, 2] = chol[2, 0] * z0 + chol[2, 1] * z1 + chol[2, 2] * z2
        out[i, 3] = (chol[3, 0] * z0 + chol[3, 1] * z1 + chol[3, 2] * z2
                     + chol[3, 3] * z3)
    return out
