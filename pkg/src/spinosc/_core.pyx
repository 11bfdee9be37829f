# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled integration core: fixed-step RK4 on the coupled spin system with
the sampled feedback chain evaluated at the loop rate and held (ZOH) between
samples.  Mirrors _core_py exactly; select via spinosc._engine.
"""
from libc.math cimport cos, sin, isfinite, INFINITY

COMPILED = True


cdef struct Params:
    double wrb_q        # 2*pi*gamma_rb / q
    double inv_qt1rb
    double inv_qt2rb
    double m0rb
    double wxe          # 2*pi*gamma_xe
    double inv_t1xe
    double inv_t2xe
    double m0xe
    double lam
    double b0x, b0y, b0z
    double ax, ay, az
    double wrb          # 2*pi*gamma_rb (q cancels in the static solve)
    double t1rb, t2rb


cdef inline void rhs_full(double rx, double ry, double rz,
                          double xx, double xy, double xz,
                          double drive, Params* p, double* out) noexcept nogil:
    cdef double brx = p.b0x + p.lam * xx
    cdef double bry = p.b0y + p.lam * xy
    cdef double brz = p.b0z + p.lam * xz
    cdef double bxx = p.b0x + p.lam * rx + drive * p.ax
    cdef double bxy = p.b0y + p.lam * ry + drive * p.ay
    cdef double bxz = p.b0z + p.lam * rz + drive * p.az
    out[0] = p.wrb_q * (ry * brz - rz * bry) - rx * p.inv_qt2rb
    out[1] = p.wrb_q * (rz * brx - rx * brz) - ry * p.inv_qt2rb
    out[2] = p.wrb_q * (rx * bry - ry * brx) + (p.m0rb - rz) * p.inv_qt1rb
    out[3] = p.wxe * (xy * bxz - xz * bxy) - xx * p.inv_t2xe
    out[4] = p.wxe * (xz * bxx - xx * bxz) - xy * p.inv_t2xe
    out[5] = p.wxe * (xx * bxy - xy * bxx) + (p.m0xe - xz) * p.inv_t1xe


cdef inline void rb_static(double bx, double by, double bz,
                           Params* p, double* out) noexcept nogil:
    # Steady alkali magnetization: w*(M x B) + (M0 z - M)/T = 0, Cramer solve.
    cdef double w = p.wrb
    cdef double i2 = 1.0 / p.t2rb
    cdef double i1 = 1.0 / p.t1rb
    cdef double a11 = -i2, a12 = w * bz, a13 = -w * by
    cdef double a21 = -w * bz, a22 = -i2, a23 = w * bx
    cdef double a31 = w * by, a32 = -w * bx, a33 = -i1
    cdef double r3 = -p.m0rb * i1
    cdef double det = (a11 * (a22 * a33 - a23 * a32)
                       - a12 * (a21 * a33 - a23 * a31)
                       + a13 * (a21 * a32 - a22 * a31))
    out[0] = (-a12 * (-a23 * r3) + a13 * (-a22 * r3)) / det
    out[1] = (a11 * (-a23 * r3) + a13 * (a21 * r3)) / det
    out[2] = (a11 * (a22 * r3) - a12 * (a21 * r3)) / det


cdef inline void rhs_adiab(double xx, double xy, double xz,
                           double drive, Params* p, double* out) noexcept nogil:
    cdef double rb[3]
    rb_static(p.b0x + p.lam * xx, p.b0y + p.lam * xy, p.b0z + p.lam * xz, p, rb)
    cdef double bxx = p.b0x + p.lam * rb[0] + drive * p.ax
    cdef double bxy = p.b0y + p.lam * rb[1] + drive * p.ay
    cdef double bxz = p.b0z + p.lam * rb[2] + drive * p.az
    out[0] = p.wxe * (xy * bxz - xz * bxy) - xx * p.inv_t2xe
    out[1] = p.wxe * (xz * bxx - xx * bxz) - xy * p.inv_t2xe
    out[2] = p.wxe * (xx * bxy - xy * bxx) + (p.m0xe - xz) * p.inv_t1xe


def run_loop(int mode, int closed,
             double[::1] par, double[::1] state,
             double dt, long n_sub, long n_loop, double fs_loop,
             double[::1] bp, int shifter_kind, double[::1] sh_par,
             double[::1] delay_buf,
             double gain, double sat,
             double[::1] noise, long decim,
             double[:, ::1] rec, int record_xe):
    """Advance the loop n_loop feedback samples; record every `decim` samples.

    state: [rx, ry, rz, xx, xy, xz], updated in place.
    shifter_kind: 0 identity, 1 delay, 2 quadrature, 3 allpass, 4 negate+allpass,
                  5 negate only.
    sh_par: quadrature [cos, sin, ap_a, theta0_rad, drift_rad_s]; allpass [a].
    Returns -1 on success, else the loop index where divergence was detected.
    """
    cdef Params p
    p.wrb_q = par[0] / par[1]
    p.inv_qt1rb = 1.0 / (par[1] * par[2])
    p.inv_qt2rb = 1.0 / (par[1] * par[3])
    p.m0rb = par[4]
    p.wxe = par[5]
    p.inv_t1xe = 1.0 / par[6]
    p.inv_t2xe = 1.0 / par[7]
    p.m0xe = par[8]
    p.lam = par[9]
    p.b0x = par[10]; p.b0y = par[11]; p.b0z = par[12]
    p.ax = par[13]; p.ay = par[14]; p.az = par[15]
    p.wrb = par[0]
    p.t1rb = par[2]; p.t2rb = par[3]

    cdef double rx = state[0], ry = state[1], rz = state[2]
    cdef double xx = state[3], xy = state[4], xz = state[5]

    cdef double bb0 = bp[0], bb1 = bp[1], bb2 = bp[2], ba1 = bp[3], ba2 = bp[4]
    cdef double fx1 = 0.0, fx2 = 0.0, fy1 = 0.0, fy2 = 0.0
    cdef double apx = 0.0, apy = 0.0
    cdef double cth = 0.0, sth = 0.0, ap_a = 0.0, th0 = 0.0, drift = 0.0
    cdef long ndelay = 0, dpos = 0
    if shifter_kind == 1:
        ndelay = delay_buf.shape[0]
    elif shifter_kind == 2:
        cth = sh_par[0]; sth = sh_par[1]; ap_a = sh_par[2]
        th0 = sh_par[3]; drift = sh_par[4]
    elif shifter_kind == 3 or shifter_kind == 4:
        ap_a = sh_par[0]

    cdef long have_noise = noise.shape[0]
    cdef double lim_rb = 10.0 * p.m0rb
    cdef double lim_xe = 10.0 * p.m0xe

    cdef double h = dt, h2 = 0.5 * dt, h6 = dt / 6.0
    cdef double k1[6]
    cdef double k2[6]
    cdef double k3[6]
    cdef double k4[6]
    cdef double rbv[3]
    cdef double mx_s, y, xq, d, t_now, th
    cdef long k, i, irec
    cdef long bad = -1

    with nogil:
        for k in range(n_loop):
            # --- sample the alkali transverse magnetization
            if mode == 0:
                mx_s = rx
            else:
                rb_static(p.b0x + p.lam * xx, p.b0y + p.lam * xy,
                          p.b0z + p.lam * xz, &p, rbv)
                rx = rbv[0]; ry = rbv[1]; rz = rbv[2]
                mx_s = rx

            # --- feedback chain (one tick), ZOH drive for the substeps
            d = 0.0
            if closed:
                y = bb0 * mx_s + bb1 * fx1 + bb2 * fx2 - ba1 * fy1 - ba2 * fy2
                fx2 = fx1; fx1 = mx_s
                fy2 = fy1; fy1 = y
                if shifter_kind == 0:
                    pass
                elif shifter_kind == 1:
                    if ndelay > 0:
                        xq = delay_buf[dpos]
                        delay_buf[dpos] = y
                        dpos += 1
                        if dpos == ndelay:
                            dpos = 0
                        y = xq
                elif shifter_kind == 2:
                    xq = ap_a * (y - apy) + apx
                    apx = y; apy = xq
                    if drift != 0.0:
                        t_now = k / fs_loop
                        th = th0 + drift * t_now
                        cth = cos(th); sth = sin(th)
                    y = cth * y + sth * xq
                else:
                    if shifter_kind >= 4:
                        y = -y
                    if shifter_kind != 5:
                        xq = ap_a * (y - apy) + apx
                        apx = y; apy = xq
                        y = xq
                d = gain * y
                if have_noise:
                    d += noise[k]
                if d > sat:
                    d = sat
                elif d < -sat:
                    d = -sat

            # --- record at the sample instant
            if k % decim == 0:
                irec = k // decim
                rec[0, irec] = mx_s
                rec[1, irec] = d
                if record_xe:
                    rec[2, irec] = xx
                    rec[3, irec] = xy
                    rec[4, irec] = xz
                    rec[5, irec] = rz

            # --- inner RK4 substeps with the drive held constant
            if mode == 0:
                for i in range(n_sub):
                    rhs_full(rx, ry, rz, xx, xy, xz, d, &p, k1)
                    rhs_full(rx + h2 * k1[0], ry + h2 * k1[1], rz + h2 * k1[2],
                             xx + h2 * k1[3], xy + h2 * k1[4], xz + h2 * k1[5],
                             d, &p, k2)
                    rhs_full(rx + h2 * k2[0], ry + h2 * k2[1], rz + h2 * k2[2],
                             xx + h2 * k2[3], xy + h2 * k2[4], xz + h2 * k2[5],
                             d, &p, k3)
                    rhs_full(rx + h * k3[0], ry + h * k3[1], rz + h * k3[2],
                             xx + h * k3[3], xy + h * k3[4], xz + h * k3[5],
                             d, &p, k4)
                    rx += h6 * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0])
                    ry += h6 * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1])
                    rz += h6 * (k1[2] + 2.0 * (k2[2] + k3[2]) + k4[2])
                    xx += h6 * (k1[3] + 2.0 * (k2[3] + k3[3]) + k4[3])
                    xy += h6 * (k1[4] + 2.0 * (k2[4] + k3[4]) + k4[4])
                    xz += h6 * (k1[5] + 2.0 * (k2[5] + k3[5]) + k4[5])
            else:
                for i in range(n_sub):
                    rhs_adiab(xx, xy, xz, d, &p, k1)
                    rhs_adiab(xx + h2 * k1[0], xy + h2 * k1[1], xz + h2 * k1[2],
                              d, &p, k2)
                    rhs_adiab(xx + h2 * k2[0], xy + h2 * k2[1], xz + h2 * k2[2],
                              d, &p, k3)
                    rhs_adiab(xx + h * k3[0], xy + h * k3[1], xz + h * k3[2],
                              d, &p, k4)
                    xx += h6 * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0])
                    xy += h6 * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1])
                    xz += h6 * (k1[2] + 2.0 * (k2[2] + k3[2]) + k4[2])

            # --- divergence guard (configuration errors, not physics)
            if (not isfinite(xx + xy + xz + rx + ry + rz)
                    or xx * xx + xy * xy + xz * xz > lim_xe * lim_xe
                    or rx * rx + ry * ry + rz * rz > lim_rb * lim_rb):
                bad = k
                break

    state[0] = rx; state[1] = ry; state[2] = rz
    state[3] = xx; state[4] = xy; state[5] = xz
    return bad
