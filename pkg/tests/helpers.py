"""Fixture builders shared across test modules."""
import numpy as np

from metadrn.data import pnm


def write_tree(root, num_classes, per_class=10, size=4):
    """An FSS-1000-shaped directory of tiny P6 images and P5 masks."""
    rng = np.random.default_rng(0)
    for c in range(num_classes):
        d = root / f"class_{c:04d}"
        d.mkdir(parents=True)
        for k in range(1, per_class + 1):
            pnm.write_ppm(d / f"{k}.ppm", rng.integers(0, 256, (size, size, 3), dtype=np.uint8))
            pnm.write_pgm(d / f"{k}_mask.pgm", (rng.random((size, size)) > 0.5).astype(np.uint8) * 255)
    return root


def conv_oracle(x, w, stride, dilation, padding):
    """Direct nested loops: out[n,o,i,j] = sum x[n,c,i*s+a*d-p, j*s+b*d-p] * w[o,c,a,b]."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for b_ in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for a in range(kh):
                            for b in range(kw):
                                r = i * stride + a * dilation - padding
                                q = j * stride + b * dilation - padding
                                if 0 <= r < h and 0 <= q < wd:
                                    acc += x[b_, c, r, q] * w[o, c, a, b]
                    out[b_, o, i, j] = acc
    return out
