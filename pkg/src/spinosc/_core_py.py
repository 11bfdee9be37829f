"""Pure-Python integration core, the fallback when the compiled extension is
unavailable.  Same entry signature and the same operation order as _core.pyx
so the two produce matching trajectories; roughly two orders of magnitude
slower, intended for short runs and environments without a compiler.
"""
import math

COMPILED = False


def run_loop(mode, closed, par, state, dt, n_sub, n_loop, fs_loop,
             bp, shifter_kind, sh_par, delay_buf, gain, sat,
             noise, decim, rec, record_xe):
    wrb_q = par[0] / par[1]
    inv_qt1rb = 1.0 / (par[1] * par[2])
    inv_qt2rb = 1.0 / (par[1] * par[3])
    m0rb = par[4]
    wxe = par[5]
    inv_t1xe = 1.0 / par[6]
    inv_t2xe = 1.0 / par[7]
    m0xe = par[8]
    lam = par[9]
    b0x, b0y, b0z = par[10], par[11], par[12]
    ax, ay, az = par[13], par[14], par[15]
    wrb = par[0]
    i1 = 1.0 / par[2]
    i2 = 1.0 / par[3]

    rx, ry, rz = state[0], state[1], state[2]
    xx, xy, xz = state[3], state[4], state[5]

    bb0, bb1, bb2, ba1, ba2 = bp[0], bp[1], bp[2], bp[3], bp[4]
    fx1 = fx2 = fy1 = fy2 = 0.0
    apx = apy = 0.0
    cth = sth = ap_a = th0 = drift = 0.0
    ndelay = dpos = 0
    if shifter_kind == 1:
        ndelay = len(delay_buf)
    elif shifter_kind == 2:
        cth, sth, ap_a, th0, drift = (sh_par[0], sh_par[1], sh_par[2],
                                      sh_par[3], sh_par[4])
    elif shifter_kind in (3, 4):
        ap_a = sh_par[0]

    have_noise = len(noise)
    lim_rb = 10.0 * m0rb
    lim_xe = 10.0 * m0xe

    h = dt
    h2 = 0.5 * dt
    h6 = dt / 6.0

    def rb_static(bx, by, bz):
        a11, a12, a13 = -i2, wrb * bz, -wrb * by
        a21, a22, a23 = -wrb * bz, -i2, wrb * bx
        a31, a32, a33 = wrb * by, -wrb * bx, -i1
        r3 = -m0rb * i1
        det = (a11 * (a22 * a33 - a23 * a32)
               - a12 * (a21 * a33 - a23 * a31)
               + a13 * (a21 * a32 - a22 * a31))
        mx = (-a12 * (-a23 * r3) + a13 * (-a22 * r3)) / det
        my = (a11 * (-a23 * r3) + a13 * (a21 * r3)) / det
        mz = (a11 * (a22 * r3) - a12 * (a21 * r3)) / det
        return mx, my, mz

    def rhs_full(s0, s1, s2, s3, s4, s5, d):
        brx = b0x + lam * s3
        bry = b0y + lam * s4
        brz = b0z + lam * s5
        bxx = b0x + lam * s0 + d * ax
        bxy = b0y + lam * s1 + d * ay
        bxz = b0z + lam * s2 + d * az
        return (wrb_q * (s1 * brz - s2 * bry) - s0 * inv_qt2rb,
                wrb_q * (s2 * brx - s0 * brz) - s1 * inv_qt2rb,
                wrb_q * (s0 * bry - s1 * brx) + (m0rb - s2) * inv_qt1rb,
                wxe * (s4 * bxz - s5 * bxy) - s3 * inv_t2xe,
                wxe * (s5 * bxx - s3 * bxz) - s4 * inv_t2xe,
                wxe * (s3 * bxy - s4 * bxx) + (m0xe - s5) * inv_t1xe)

    def rhs_adiab(s3, s4, s5, d):
        mx, my, mz = rb_static(b0x + lam * s3, b0y + lam * s4, b0z + lam * s5)
        bxx = b0x + lam * mx + d * ax
        bxy = b0y + lam * my + d * ay
        bxz = b0z + lam * mz + d * az
        return (wxe * (s4 * bxz - s5 * bxy) - s3 * inv_t2xe,
                wxe * (s5 * bxx - s3 * bxz) - s4 * inv_t2xe,
                wxe * (s3 * bxy - s4 * bxx) + (m0xe - s5) * inv_t1xe)

    bad = -1
    for k in range(n_loop):
        if mode == 0:
            mx_s = rx
        else:
            rx, ry, rz = rb_static(b0x + lam * xx, b0y + lam * xy,
                                   b0z + lam * xz)
            mx_s = rx

        d = 0.0
        if closed:
            y = bb0 * mx_s + bb1 * fx1 + bb2 * fx2 - ba1 * fy1 - ba2 * fy2
            fx2, fx1 = fx1, mx_s
            fy2, fy1 = fy1, y
            if shifter_kind == 1:
                if ndelay > 0:
                    xq = delay_buf[dpos]
                    delay_buf[dpos] = y
                    dpos += 1
                    if dpos == ndelay:
                        dpos = 0
                    y = xq
            elif shifter_kind == 2:
                xq = ap_a * (y - apy) + apx
                apx, apy = y, xq
                if drift != 0.0:
                    th = th0 + drift * (k / fs_loop)
                    cth = math.cos(th)
                    sth = math.sin(th)
                y = cth * y + sth * xq
            elif shifter_kind >= 3:
                if shifter_kind >= 4:
                    y = -y
                if shifter_kind != 5:
                    xq = ap_a * (y - apy) + apx
                    apx, apy = y, xq
                    y = xq
            d = gain * y
            if have_noise:
                d += noise[k]
            if d > sat:
                d = sat
            elif d < -sat:
                d = -sat

        if k % decim == 0:
            irec = k // decim
            rec[0, irec] = mx_s
            rec[1, irec] = d
            if record_xe:
                rec[2, irec] = xx
                rec[3, irec] = xy
                rec[4, irec] = xz
                rec[5, irec] = rz

        if mode == 0:
            for _ in range(n_sub):
                k1 = rhs_full(rx, ry, rz, xx, xy, xz, d)
                k2 = rhs_full(rx + h2 * k1[0], ry + h2 * k1[1], rz + h2 * k1[2],
                              xx + h2 * k1[3], xy + h2 * k1[4], xz + h2 * k1[5], d)
                k3 = rhs_full(rx + h2 * k2[0], ry + h2 * k2[1], rz + h2 * k2[2],
                              xx + h2 * k2[3], xy + h2 * k2[4], xz + h2 * k2[5], d)
                k4 = rhs_full(rx + h * k3[0], ry + h * k3[1], rz + h * k3[2],
                              xx + h * k3[3], xy + h * k3[4], xz + h * k3[5], d)
                rx += h6 * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0])
                ry += h6 * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1])
                rz += h6 * (k1[2] + 2.0 * (k2[2] + k3[2]) + k4[2])
                xx += h6 * (k1[3] + 2.0 * (k2[3] + k3[3]) + k4[3])
                xy += h6 * (k1[4] + 2.0 * (k2[4] + k3[4]) + k4[4])
                xz += h6 * (k1[5] + 2.0 * (k2[5] + k3[5]) + k4[5])
        else:
            for _ in range(n_sub):
                k1 = rhs_adiab(xx, xy, xz, d)
                k2 = rhs_adiab(xx + h2 * k1[0], xy + h2 * k1[1], xz + h2 * k1[2], d)
                k3 = rhs_adiab(xx + h2 * k2[0], xy + h2 * k2[1], xz + h2 * k2[2], d)
                k4 = rhs_adiab(xx + h * k3[0], xy + h * k3[1], xz + h * k3[2], d)
                xx += h6 * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0])
                xy += h6 * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1])
                xz += h6 * (k1[2] + 2.0 * (k2[2] + k3[2]) + k4[2])

        s6 = xx + xy + xz + rx + ry + rz
        if (not math.isfinite(s6)
                or xx * xx + xy * xy + xz * xz > lim_xe * lim_xe
                or rx * rx + ry * ry + rz * rz > lim_rb * lim_rb):
            bad = k
            break

    state[0], state[1], state[2] = rx, ry, rz
    state[3], state[4], state[5] = xx, xy, xz
    return bad
