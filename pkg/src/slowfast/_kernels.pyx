# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation core.

Hot Euler-Maruyama loops for the built-in model families, fed by
counter-based Philox4x32-10 streams (one stream per path per noise tag)
with a 128-layer ziggurat normal sampler. The pure-python fallback in
``_purepy`` implements the same interface; see ``_backend`` for selection.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan, cos, exp, fabs, isfinite, log, sin, sqrt
from libc.stdint cimport int32_t, int64_t, uint32_t, uint64_t

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    #include <math.h>

    /* Philox4x32-10 (Salmon et al. 2011 reference constants). The 128-bit
       counter is split as (c0,c1) = 64-bit draw-block counter, c2 = path
       index, c3 = stream tag, so every output is a pure function of
       (key=seed, path, tag, block). */
    typedef struct { uint32_t c0, c1, c2, c3, k0, k1; uint32_t out[4]; int idx; } px_state;

    static inline void px_block(px_state* s) {
        uint32_t c0=s->c0, c1=s->c1, c2=s->c2, c3=s->c3;
        uint32_t k0=s->k0, k1=s->k1;
        int r;
        for (r = 0; r < 10; r++) {
            uint64_t p0 = (uint64_t)0xD2511F53u * c0;
            uint64_t p1 = (uint64_t)0xCD9E8D57u * c2;
            uint32_t n0 = (uint32_t)(p1 >> 32) ^ c1 ^ k0;
            uint32_t n1 = (uint32_t)p1;
            uint32_t n2 = (uint32_t)(p0 >> 32) ^ c3 ^ k1;
            uint32_t n3 = (uint32_t)p0;
            c0=n0; c1=n1; c2=n2; c3=n3;
            k0 += 0x9E3779B9u; k1 += 0xBB67AE85u;
        }
        s->out[0]=c0; s->out[1]=c1; s->out[2]=c2; s->out[3]=c3;
        s->c0 += 1u; if (s->c0 == 0u) s->c1 += 1u;
        s->idx = 0;
    }

    static inline uint32_t px_next32(px_state* s) {
        if (s->idx > 3) px_block(s);
        return s->out[s->idx++];
    }

    static inline void px_seed(px_state* s, uint64_t seed, uint32_t path, uint32_t tag) {
        s->c0 = 0u; s->c1 = 0u; s->c2 = path; s->c3 = tag;
        s->k0 = (uint32_t)(seed & 0xFFFFFFFFu);
        s->k1 = (uint32_t)(seed >> 32);
        s->idx = 4; /* force a fresh block on first draw */
    }

    static inline double px_u01(px_state* s) {
        /* open (0,1), safe under log() */
        return (px_next32(s) + 0.5) * (1.0 / 4294967296.0);
    }

    /* 128-layer ziggurat for the standard normal (Marsaglia & Tsang 2000). */
    static double zig_wn[128], zig_fn[128];
    static uint32_t zig_kn[128];

    static void zig_init(void) {
        const double m1 = 2147483648.0;
        double dn = 3.442619855899, tn = dn, vn = 9.91256303526217e-3, q;
        int i;
        q = vn / exp(-0.5 * dn * dn);
        zig_kn[0] = (uint32_t)((dn / q) * m1);
        zig_kn[1] = 0;
        zig_wn[0] = q / m1;
        zig_wn[127] = dn / m1;
        zig_fn[0] = 1.0;
        zig_fn[127] = exp(-0.5 * dn * dn);
        for (i = 126; i >= 1; i--) {
            dn = sqrt(-2.0 * log(vn / dn + exp(-0.5 * dn * dn)));
            zig_kn[i + 1] = (uint32_t)((dn / tn) * m1);
            tn = dn;
            zig_fn[i] = exp(-0.5 * dn * dn);
            zig_wn[i] = dn / m1;
        }
    }

    static inline double zig_normal(px_state* s) {
        const double r = 3.442619855899;
        for (;;) {
            int32_t hz = (int32_t)px_next32(s);
            uint32_t iz = (uint32_t)hz & 127u;
            uint32_t az = (uint32_t)(hz < 0 ? -(int64_t)hz : hz);
            if (az < zig_kn[iz])
                return hz * zig_wn[iz];
            if (iz == 0) {
                double x, y;
                do {
                    x = -log(px_u01(s)) / r;
                    y = -log(px_u01(s));
                } while (y + y < x * x);
                return (hz > 0) ? r + x : -(r + x);
            } else {
                double x = hz * zig_wn[iz];
                if (zig_fn[iz] + px_u01(s) * (zig_fn[iz - 1] - zig_fn[iz]) < exp(-0.5 * x * x))
                    return x;
            }
        }
    }
    """
    ctypedef struct px_state:
        uint32_t c0, c1, c2, c3, k0, k1
        uint32_t out[4]
        int idx
    void px_block(px_state* s) nogil
    uint32_t px_next32(px_state* s) nogil
    void px_seed(px_state* s, uint64_t seed, uint32_t path, uint32_t tag) nogil
    double px_u01(px_state* s) nogil
    void zig_init() nogil
    double zig_normal(px_state* s) nogil

zig_init()

BACKEND = "compiled"

# family / mode codes shared with the fallback (see _families.py)
DEF FAM_CONV = 0
DEF FAM_DEC_DER = 1
DEF FAM_DOUBLE_WELL = 2
DEF FAM_CUBIC = 3
DEF FAM_LIP = 4
DEF FAM_FC_DEMO = 5
DEF FAM_AVG_LINEAR = 10
DEF FAM_AVG_DEMO = 11
DEF FAM_AVG_SPLINE = 12

DEF MODE_SLOWFAST = 0
DEF MODE_FROZEN = 1
DEF MODE_AVERAGED = 2

DEF BLOW_CAP = 1e8

DEF TAG_W = 0
DEF TAG_B = 1
DEF TAG_AVG = 2


cdef class NoiseStream:
    """Deterministic gaussian stream keyed by (seed, path_index, stream_tag).

    Draw k depends only on the key and on how many draws preceded it, never
    on scheduling, so paths can be simulated in any order or worker layout.
    """
    cdef px_state state
    cdef public unsigned long long seed
    cdef public unsigned int path_index
    cdef public unsigned int stream_tag

    def __init__(self, seed, path_index, stream_tag):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path_index = int(path_index)
        self.stream_tag = int(stream_tag)
        px_seed(&self.state, self.seed, self.path_index, self.stream_tag)

    def normals(self, Py_ssize_t count):
        out = np.empty(count, dtype=np.float64)
        cdef double[::1] v = out
        cdef Py_ssize_t i
        with nogil:
            for i in range(count):
                v[i] = zig_normal(&self.state)
        return out

    def uniforms(self, Py_ssize_t count):
        out = np.empty(count, dtype=np.float64)
        cdef double[::1] v = out
        cdef Py_ssize_t i
        with nogil:
            for i in range(count):
                v[i] = px_u01(&self.state)
        return out


cdef inline double spline_eval(double x, const double[::1] knots,
                               const double[:, ::1] coefs, int64_t* n_extrap) noexcept nogil:
    # scipy PPoly layout: coefs[k, i] multiplies (x - knots[i])**(3-k);
    # constant extrapolation (clamp) outside the knot range.
    cdef Py_ssize_t m = knots.shape[0]
    cdef Py_ssize_t lo, hi, mid
    if x < knots[0]:
        n_extrap[0] += 1
        x = knots[0]
    elif x > knots[m - 1]:
        n_extrap[0] += 1
        x = knots[m - 1]
    lo = 0
    hi = m - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if knots[mid] <= x:
            lo = mid
        else:
            hi = mid
    cdef double t = x - knots[lo]
    return ((coefs[0, lo] * t + coefs[1, lo]) * t + coefs[2, lo]) * t + coefs[3, lo]


cdef inline void eval_slowfast(int family, const double* p, double x, double y,
                               double* b, double* g, double* sig, double* a) noexcept nogil:
    cdef double th, av
    if family == FAM_CONV:
        b[0] = -(x + y); g[0] = -y; sig[0] = 0.7071067811865476; a[0] = 1.0
    elif family == FAM_DEC_DER:
        b[0] = -(x + y); g[0] = -(y + x); sig[0] = 0.7071067811865476; a[0] = 1.0
    elif family == FAM_DOUBLE_WELL:
        b[0] = -(x + y); g[0] = -y * (y + 2.0) * (y - 2.0); sig[0] = 0.7071067811865476; a[0] = 1.0
    elif family == FAM_CUBIC:
        b[0] = -x * x * x - x + p[0] * sin(y)
        g[0] = -y * y * y - y + p[1] * sin(x)
        sig[0] = 1.0; a[0] = 1.0
    elif family == FAM_LIP:
        b[0] = -x - p[0] * cos(y)
        g[0] = -y + sin(x)
        sig[0] = 1.0; a[0] = 1.0
    else:  # FAM_FC_DEMO
        b[0] = -x - y
        sig[0] = sqrt(1.0 + 0.25 * sin(y) - x / (4.0 * 1.6487212707001282 * sqrt(1.0 + x * x)))
        th = sin(x) + y
        av = 1.0 + sin(th) / 12.0
        g[0] = av * av * (atan(x) - y) + cos(th) / 6.0 * av
        a[0] = av


cdef inline double eval_averaged(int family, const double* p, double x,
                                 const double[::1] knots, const double[:, ::1] coefs,
                                 double* sig, int64_t* n_extrap) noexcept nogil:
    if family == FAM_AVG_LINEAR:
        sig[0] = p[1]
        return -p[0] * x
    elif family == FAM_AVG_DEMO:
        sig[0] = 1.0
        return -x - atan(x)
    else:  # FAM_AVG_SPLINE
        sig[0] = p[0]
        return spline_eval(x, knots, coefs, n_extrap)


def run_paths(int family, object params, int mode, double eps,
              double x0, double y0, double dt,
              long n_steps, long record_every,
              object seed, long path_lo, long path_hi,
              bint want_frames, bint want_terminal,
              double px_exp, double py_exp,
              object spline_knots=None, object spline_coefs=None):
    """Simulate paths [path_lo, path_hi) and accumulate per-frame moments.

    Returns a dict of per-frame accumulators (sums over alive paths), plus
    optional full frames / terminal states. All outputs are pure functions
    of (seed, path index); chunking and threading do not change them.
    """
    cdef double[::1] pvec = np.ascontiguousarray(
        params if params is not None else [], dtype=np.float64)
    cdef double pbuf[8]
    cdef Py_ssize_t ip
    for ip in range(min(pvec.shape[0], 8)):
        pbuf[ip] = pvec[ip]

    cdef double[::1] knots
    cdef double[:, ::1] coefs
    if spline_knots is not None:
        knots = np.ascontiguousarray(spline_knots, dtype=np.float64)
        coefs = np.ascontiguousarray(spline_coefs, dtype=np.float64)
    else:
        knots = np.zeros(2, dtype=np.float64)
        coefs = np.zeros((4, 1), dtype=np.float64)

    cdef long n_rec = n_steps // record_every + 1
    cdef long n_paths = path_hi - path_lo
    cdef uint64_t seed_u = int(seed) & 0xFFFFFFFFFFFFFFFF

    cdef int dim
    if mode == MODE_SLOWFAST:
        dim = 2
    else:
        dim = 1

    alive_arr = np.zeros(n_rec, dtype=np.int64)
    sx_arr = np.zeros(n_rec, dtype=np.float64)
    sx2_arr = np.zeros(n_rec, dtype=np.float64)
    sx4_arr = np.zeros(n_rec, dtype=np.float64)
    sy_arr = np.zeros(n_rec, dtype=np.float64)
    sy2_arr = np.zeros(n_rec, dtype=np.float64)
    sy4_arr = np.zeros(n_rec, dtype=np.float64)
    sxp_arr = np.zeros(n_rec, dtype=np.float64)
    sxp2_arr = np.zeros(n_rec, dtype=np.float64)
    syp_arr = np.zeros(n_rec, dtype=np.float64)
    syp2_arr = np.zeros(n_rec, dtype=np.float64)

    cdef int64_t[::1] alive = alive_arr
    cdef double[::1] sx = sx_arr, sx2 = sx2_arr, sx4 = sx4_arr
    cdef double[::1] sy = sy_arr, sy2 = sy2_arr, sy4 = sy4_arr
    cdef double[::1] sxp = sxp_arr, sxp2 = sxp2_arr
    cdef double[::1] syp = syp_arr, syp2 = syp2_arr

    frames_arr = np.zeros((n_paths if want_frames else 0, n_rec, dim), dtype=np.float64)
    fmask_arr = np.zeros((n_paths if want_frames else 0, n_rec), dtype=np.uint8)
    term_arr = np.zeros((n_paths if want_terminal else 0, dim), dtype=np.float64)
    tmask_arr = np.zeros(n_paths if want_terminal else 0, dtype=np.uint8)
    cdef double[:, :, ::1] frames = frames_arr
    cdef cnp.uint8_t[:, ::1] fmask = fmask_arr
    cdef double[:, ::1] term = term_arr
    cdef cnp.uint8_t[::1] tmask = tmask_arr

    cdef int64_t n_blown = 0
    cdef int64_t n_extrap = 0

    cdef px_state sW, sB
    cdef long p, step, rec
    cdef double x, y, b, g, sig, a, xn, yn, x2v, y2v
    cdef double cw = sqrt(2.0 * dt)
    cdef double cb = sqrt(2.0 * dt / eps)
    cdef double dte = dt / eps
    cdef bint ok
    cdef bint has_px = px_exp > 0.0
    cdef bint has_py = py_exp > 0.0

    with nogil:
        for p in range(n_paths):
            x = x0
            y = y0
            ok = True
            if mode == MODE_SLOWFAST:
                px_seed(&sW, seed_u, <uint32_t>(path_lo + p), TAG_W)
                px_seed(&sB, seed_u, <uint32_t>(path_lo + p), TAG_B)
            elif mode == MODE_FROZEN:
                px_seed(&sB, seed_u, <uint32_t>(path_lo + p), TAG_B)
            else:
                px_seed(&sW, seed_u, <uint32_t>(path_lo + p), TAG_AVG)

            rec = 0
            # frame 0
            alive[0] += 1
            if mode == MODE_SLOWFAST:
                x2v = x * x
                y2v = y * y
                sx[0] += x; sx2[0] += x2v; sx4[0] += x2v * x2v
                sy[0] += y; sy2[0] += y2v; sy4[0] += y2v * y2v
                if has_px:
                    sxp[0] += x2v ** (0.5 * px_exp); sxp2[0] += x2v ** px_exp
                if has_py:
                    syp[0] += y2v ** (0.5 * py_exp); syp2[0] += y2v ** py_exp
            elif mode == MODE_FROZEN:
                y2v = y * y
                sy[0] += y; sy2[0] += y2v; sy4[0] += y2v * y2v
                if has_py:
                    syp[0] += y2v ** (0.5 * py_exp); syp2[0] += y2v ** py_exp
            else:
                x2v = x * x
                sx[0] += x; sx2[0] += x2v; sx4[0] += x2v * x2v
                if has_px:
                    sxp[0] += x2v ** (0.5 * px_exp); sxp2[0] += x2v ** px_exp
            if want_frames:
                if mode == MODE_SLOWFAST:
                    frames[p, 0, 0] = x; frames[p, 0, 1] = y
                elif mode == MODE_FROZEN:
                    frames[p, 0, 0] = y
                else:
                    frames[p, 0, 0] = x
                fmask[p, 0] = 1

            for step in range(1, n_steps + 1):
                if ok:
                    if mode == MODE_SLOWFAST:
                        eval_slowfast(family, pbuf, x, y, &b, &g, &sig, &a)
                        xn = x + b * dt + cw * sig * zig_normal(&sW)
                        yn = y + g * dte + cb * a * zig_normal(&sB)
                        if isfinite(xn) and isfinite(yn) and fabs(xn) <= BLOW_CAP and fabs(yn) <= BLOW_CAP:
                            x = xn; y = yn
                        else:
                            ok = False; n_blown += 1
                    elif mode == MODE_FROZEN:
                        eval_slowfast(family, pbuf, x, y, &b, &g, &sig, &a)
                        yn = y + g * dt + cw * a * zig_normal(&sB)
                        if isfinite(yn) and fabs(yn) <= BLOW_CAP:
                            y = yn
                        else:
                            ok = False; n_blown += 1
                    else:
                        b = eval_averaged(family, pbuf, x, knots, coefs, &sig, &n_extrap)
                        xn = x + b * dt + cw * sig * zig_normal(&sW)
                        if isfinite(xn) and fabs(xn) <= BLOW_CAP:
                            x = xn
                        else:
                            ok = False; n_blown += 1

                if step % record_every == 0:
                    rec += 1
                    if ok:
                        alive[rec] += 1
                        if mode == MODE_SLOWFAST:
                            x2v = x * x; y2v = y * y
                            sx[rec] += x; sx2[rec] += x2v; sx4[rec] += x2v * x2v
                            sy[rec] += y; sy2[rec] += y2v; sy4[rec] += y2v * y2v
                            if has_px:
                                sxp[rec] += x2v ** (0.5 * px_exp); sxp2[rec] += x2v ** px_exp
                            if has_py:
                                syp[rec] += y2v ** (0.5 * py_exp); syp2[rec] += y2v ** py_exp
                        elif mode == MODE_FROZEN:
                            y2v = y * y
                            sy[rec] += y; sy2[rec] += y2v; sy4[rec] += y2v * y2v
                            if has_py:
                                syp[rec] += y2v ** (0.5 * py_exp); syp2[rec] += y2v ** py_exp
                        else:
                            x2v = x * x
                            sx[rec] += x; sx2[rec] += x2v; sx4[rec] += x2v * x2v
                            if has_px:
                                sxp[rec] += x2v ** (0.5 * px_exp); sxp2[rec] += x2v ** px_exp
                    if want_frames and ok:
                        if mode == MODE_SLOWFAST:
                            frames[p, rec, 0] = x; frames[p, rec, 1] = y
                        elif mode == MODE_FROZEN:
                            frames[p, rec, 0] = y
                        else:
                            frames[p, rec, 0] = x
                        fmask[p, rec] = 1

            if want_terminal:
                if mode == MODE_SLOWFAST:
                    term[p, 0] = x; term[p, 1] = y
                elif mode == MODE_FROZEN:
                    term[p, 0] = y
                else:
                    term[p, 0] = x
                tmask[p] = 1 if ok else 0

    out = {
        "alive": alive_arr, "sx": sx_arr, "sx2": sx2_arr, "sx4": sx4_arr,
        "sy": sy_arr, "sy2": sy2_arr, "sy4": sy4_arr,
        "sxp": sxp_arr, "sxp2": sxp2_arr, "syp": syp_arr, "syp2": syp2_arr,
        "n_blown": int(n_blown), "n_extrap": int(n_extrap),
    }
    if want_frames:
        out["frames"] = frames_arr
        out["frame_alive"] = fmask_arr
    if want_terminal:
        out["terminal"] = term_arr
        out["terminal_alive"] = tmask_arr
    return out
