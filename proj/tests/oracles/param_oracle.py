#!/usr/bin/env python3
"""Independent layer-by-layer parameter expansion for Ultralytics-style YAML configs.

Used once to derive the frozen parameter totals asserted in the C++ tests.
Pure Python (PyYAML only); it does not share code with the C++ analyzer.

    python3 tests/oracles/param_oracle.py tests/fixtures/listings/*.yaml
"""
import math
import sys

import yaml


def conv(c1, c2, k=1, g=1):
    # Conv2d without bias + BatchNorm (weight, bias)
    return k * k * (c1 // g) * c2 + 2 * c2


def conv2d_bias(c1, c2, k=1):
    return k * k * c1 * c2 + c2


def bottleneck(c1, c2, e=0.5):
    c_ = int(c2 * e)
    return conv(c1, c_, 3) + conv(c_, c2, 3)


def c2f(c1, c2, n):
    c = int(c2 * 0.5)
    return conv(c1, 2 * c, 1) + conv((2 + n) * c, c2, 1) + n * bottleneck(c, c, e=1.0)


def spp(c1, c2, ks):
    c_ = c1 // 2
    return conv(c1, c_, 1) + conv(c_ * (len(ks) + 1), c2, 1)


def sppf(c1, c2):
    c_ = c1 // 2
    return conv(c1, c_, 1) + conv(c_ * 4, c2, 1)


def scdown(c1, c2, k):
    return conv(c1, c2, 1) + conv(c2, c2, k, g=c2)


def psa(c1, c2):
    assert c1 == c2
    c = int(c1 * 0.5)
    heads = max(c // 64, 1)
    key_dim = int((c // heads) * 0.5)
    h = c + 2 * key_dim * heads
    attn = conv(c, h, 1) + conv(c, c, 1) + conv(c, c, 3, g=c)
    ffn = conv(c, 2 * c, 1) + conv(2 * c, c, 1)
    return conv(c1, 2 * c, 1) + conv(2 * c, c1, 1) + attn + ffn


def detect(nc, ch, reg_max=16):
    c2 = max(16, ch[0] // 4, reg_max * 4)
    c3 = max(ch[0], min(nc, 100))
    box = sum(conv(x, c2, 3) + conv(c2, c2, 3) + conv2d_bias(c2, 4 * reg_max) for x in ch)
    cls = sum(conv(x, c3, 3) + conv(c3, c3, 3) + conv2d_bias(c3, nc) for x in ch)
    return box + cls + reg_max  # frozen DFL projection still counts as a parameter


def v10detect(nc, ch, reg_max=16):
    c2 = max(16, ch[0] // 4, reg_max * 4)
    c3 = max(ch[0], min(nc, 100))
    box = sum(conv(x, c2, 3) + conv(c2, c2, 3) + conv2d_bias(c2, 4 * reg_max) for x in ch)
    cls = sum(conv(x, x, 3, g=x) + conv(x, c3, 1) + conv(c3, c3, 3, g=c3) + conv(c3, c3, 1)
              + conv2d_bias(c3, nc) for x in ch)
    return 2 * box + 2 * cls + reg_max  # one-to-many and one-to-one branches


def expand(doc, scale=None):
    nc = doc["nc"]
    depth = doc.get("depth_multiple", 1.0)
    width = doc.get("width_multiple", 1.0)
    max_ch = float("inf")
    if doc.get("scales"):
        key = scale or next(iter(doc["scales"]))
        depth, width, max_ch = doc["scales"][key]
    ch = [3]
    per_layer = []
    for i, (f, n, m, args) in enumerate(doc["backbone"] + doc["head"]):
        n = max(round(n * depth), 1) if n > 1 else n
        ins = [ch[x] for x in (f if isinstance(f, list) else [f])]
        c1 = ins[0]
        args = [nc if a == "nc" else a for a in args]
        if m in ("Conv", "Bottleneck", "SPP", "SPPF", "C2f", "SCDown", "PSA"):
            c2 = math.ceil(min(args[0], max_ch) * width / 8) * 8
            if m == "Conv":
                k = args[1] if len(args) > 1 else 1
                p = n * conv(c1, c2, k)
            elif m == "Bottleneck":
                p = n * bottleneck(c1, c2)
            elif m == "SPP":
                p = n * spp(c1, c2, args[1] if len(args) > 1 else [5, 9, 13])
            elif m == "SPPF":
                p = n * sppf(c1, c2)
            elif m == "C2f":
                p = c2f(c1, c2, n)
            elif m == "SCDown":
                p = n * scdown(c1, c2, args[1])
            elif m == "PSA":
                p = n * psa(c1, c2)
        elif m == "Concat":
            c2, p = sum(ins), 0
        elif m == "nn.Upsample":
            c2, p = c1, 0
        elif m == "Detect":
            c2, p = c1, detect(args[0], ins)
        elif m == "v10Detect":
            c2, p = c1, v10detect(args[0], ins)
        else:
            raise ValueError(f"layer {i}: unsupported module {m}")
        if i == 0:
            ch = []
        ch.append(c2)
        per_layer.append(p)
    return per_layer


if __name__ == "__main__":
    for path in sys.argv[1:]:
        with open(path) as fh:
            layers = expand(yaml.safe_load(fh))
        print(path, sum(layers), len(layers))
        print(layers)
