"""Slow, direct reference implementations used as test oracles.

Each one is written from the textbook formula with explicit loops and shares
no code with the package.
"""
import cmath
import math

import numpy as np


def dft_matrix(n):
    return np.array([[cmath.exp(-2j * math.pi * k * m / n) for m in range(n)] for k in range(n)])


def dft2(x):
    """Two-dimensional DFT straight from the definition, as two DFT-matrix products."""
    h, w = x.shape
    return dft_matrix(h) @ x @ dft_matrix(w).T


def radial_weight(h, w, gamma):
    rho = np.zeros((h, w))
    for k in range(h):
        for l in range(w):
            dk = min(k, h - k)
            dl = min(l, w - l)
            rho[k, l] = math.sqrt(dk * dk + dl * dl)
    return (rho / rho.max()) ** gamma if gamma > 0 else np.ones((h, w))


def fft_loss(p, t, gamma):
    h, w, c = p.shape
    W = radial_weight(h, w, gamma)
    total = 0.0
    for ch in range(c):
        fp = dft2(p[:, :, ch])
        ft = dft2(t[:, :, ch])
        for k in range(h):
            for l in range(w):
                total += W[k, l] * abs(abs(fp[k, l]) - abs(ft[k, l]))
    return total / (h * w * c)


def psnr(a, b, R):
    s = 0.0
    n = 0
    for x, y in zip(a.ravel(), b.ravel()):
        s += (float(x) - float(y)) ** 2
        n += 1
    return 10.0 * math.log10(R * R / (s / n))


def luma(rgb):
    h, w, _ = rgb.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            r, g, b = rgb[i, j]
            out[i, j] = 0.2126 * r + 0.7152 * g + 0.0722 * b
    return out


def ssim_gray(x, y, size=11, sigma=1.5, K1=0.01, K2=0.03, R=1.0):
    """Mean SSIM over all fully-contained windows, stats by direct weighted sums."""
    r = size // 2
    g = [math.exp(-0.5 * ((i - r) / sigma) ** 2) for i in range(size)]
    s = sum(g)
    g = [v / s for v in g]
    C1, C2 = (K1 * R) ** 2, (K2 * R) ** 2
    h, w = x.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            mx = my = 0.0
            for a in range(size):
                for b in range(size):
                    wt = g[a] * g[b]
                    mx += wt * x[i + a, j + b]
                    my += wt * y[i + a, j + b]
            vx = vy = cxy = 0.0
            for a in range(size):
                for b in range(size):
                    wt = g[a] * g[b]
                    dx = x[i + a, j + b] - mx
                    dy = y[i + a, j + b] - my
                    vx += wt * dx * dx
                    vy += wt * dy * dy
                    cxy += wt * dx * dy
            vals.append(((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2)))
    return sum(vals) / len(vals)


def sam(a, b):
    h, w, c = a.shape
    angles = []
    for i in range(h):
        for j in range(w):
            u, v = a[i, j], b[i, j]
            dot = sum(float(p) * float(q) for p, q in zip(u, v))
            nu = math.sqrt(sum(float(p) ** 2 for p in u))
            nv = math.sqrt(sum(float(q) ** 2 for q in v))
            if nu == 0 or nv == 0:
                continue
            angles.append(math.degrees(math.acos(max(-1.0, min(1.0, dot / (nu * nv))))))
    return sum(angles) / len(angles)


def ciede2000(lab1, lab2, kL=1.0, kC=1.0, kH=1.0):
    """Scalar CIEDE2000 following the published step-by-step formulation."""
    L1, a1, b1 = lab1
    L2, a2, b2 = lab2
    C1 = math.hypot(a1, b1)
    C2 = math.hypot(a2, b2)
    Cb = (C1 + C2) / 2
    G = 0.5 * (1 - math.sqrt(Cb**7 / (Cb**7 + 25.0**7)))
    a1p, a2p = (1 + G) * a1, (1 + G) * a2
    C1p, C2p = math.hypot(a1p, b1), math.hypot(a2p, b2)

    def hue(b, ap):
        if b == 0 and ap == 0:
            return 0.0
        h = math.degrees(math.atan2(b, ap))
        return h + 360 if h < 0 else h

    h1p, h2p = hue(b1, a1p), hue(b2, a2p)
    dLp = L2 - L1
    dCp = C2p - C1p
    if C1p * C2p == 0:
        dhp = 0.0
    elif abs(h2p - h1p) <= 180:
        dhp = h2p - h1p
    elif h2p - h1p > 180:
        dhp = h2p - h1p - 360
    else:
        dhp = h2p - h1p + 360
    dHp = 2 * math.sqrt(C1p * C2p) * math.sin(math.radians(dhp / 2))

    Lbp = (L1 + L2) / 2
    Cbp = (C1p + C2p) / 2
    if C1p * C2p == 0:
        hbp = h1p + h2p
    elif abs(h1p - h2p) <= 180:
        hbp = (h1p + h2p) / 2
    elif h1p + h2p < 360:
        hbp = (h1p + h2p + 360) / 2
    else:
        hbp = (h1p + h2p - 360) / 2
    T = (1 - 0.17 * math.cos(math.radians(hbp - 30)) + 0.24 * math.cos(math.radians(2 * hbp))
         + 0.32 * math.cos(math.radians(3 * hbp + 6)) - 0.20 * math.cos(math.radians(4 * hbp - 63)))
    dtheta = 30 * math.exp(-(((hbp - 275) / 25) ** 2))
    RC = 2 * math.sqrt(Cbp**7 / (Cbp**7 + 25.0**7))
    SL = 1 + 0.015 * (Lbp - 50) ** 2 / math.sqrt(20 + (Lbp - 50) ** 2)
    SC = 1 + 0.045 * Cbp
    SH = 1 + 0.015 * Cbp * T
    RT = -math.sin(math.radians(2 * dtheta)) * RC
    tL, tC, tH = dLp / (kL * SL), dCp / (kC * SC), dHp / (kH * SH)
    return math.sqrt(tL * tL + tC * tC + tH * tH + RT * tC * tH)


def _reflect(i, n):
    # half-sample symmetric extension
    while i < 0 or i >= n:
        i = -1 - i if i < 0 else 2 * n - 1 - i
    return i


def scharr_magnitude(x):
    """Unit-ramp-normalised Scharr magnitude by direct 3x3 stencils."""
    h, w = x.shape
    d = [-0.5, 0.0, 0.5]
    s = [3 / 16, 10 / 16, 3 / 16]
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            gx = gy = 0.0
            for a in range(3):
                for b in range(3):
                    v = x[_reflect(i + a - 1, h), _reflect(j + b - 1, w)]
                    gx += s[a] * d[b] * v
                    gy += d[a] * s[b] * v
            out[i, j] = math.hypot(gx, gy)
    return out


def q_index(x, y, n=8):
    """Mean Wang-Bovik Q over every n x n window (two-pass statistics)."""
    h, w = x.shape
    vals = []
    for i in range(h - n + 1):
        for j in range(w - n + 1):
            bx = x[i : i + n, j : j + n].ravel()
            by = y[i : i + n, j : j + n].ravel()
            mx, my = bx.mean(), by.mean()
            dx, dy = bx - mx, by - my
            vx, vy, cxy = (dx @ dx) / bx.size, (dy @ dy) / bx.size, (dx @ dy) / bx.size
            vals.append(4 * cxy * mx * my / ((vx + vy) * (mx * mx + my * my)))
    return sum(vals) / len(vals)


def qnr(fused, ms, pan):
    B = fused.shape[2]
    dl = []
    for i in range(B):
        for j in range(i + 1, B):
            dl.append(min(abs(q_index(ms[..., i], ms[..., j]) - q_index(fused[..., i], fused[..., j])), 1.0))
    gp = scharr_magnitude(pan[..., 0])
    ds = []
    for b in range(B):
        ds.append(min(abs(q_index(scharr_magnitude(ms[..., b]), gp)
                          - q_index(scharr_magnitude(fused[..., b]), gp)), 1.0))
    d_lambda = sum(dl) / len(dl)
    d_s = sum(ds) / len(ds)
    return d_lambda, d_s, (1 - d_lambda) * (1 - d_s)


def frechet_1d(a, b):
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    sa = math.sqrt(sum((v - ma) ** 2 for v in a) / (len(a) - 1))
    sb = math.sqrt(sum((v - mb) ** 2 for v in b) / (len(b) - 1))
    return (ma - mb) ** 2 + (sa - sb) ** 2


def variance_two_pass(stack):
    """Unbiased per-element variance of a (T, ...) stack by explicit loops."""
    T = stack.shape[0]
    flat = stack.reshape(T, -1)
    out = np.zeros(flat.shape[1])
    for e in range(flat.shape[1]):
        m = sum(float(flat[t, e]) for t in range(T)) / T
        out[e] = sum((float(flat[t, e]) - m) ** 2 for t in range(T)) / (T - 1)
    return out.reshape(stack.shape[1:])


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g
