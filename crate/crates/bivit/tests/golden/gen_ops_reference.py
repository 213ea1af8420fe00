#!/usr/bin/env python3
"""Independent hand enumeration of the cost model for the reference config.

Counting conventions (must stay in sync with the library's documented
constants): linear = t*m*n MACs (no bias), binarized linear adds t*m scale
FLOPs; LN 8/elem, GELU 8/elem, softmax 2/elem, residual/positional adds
1/elem; activation sign-binarization 2/elem, scale application 1/elem; SAB
threshold 2n per attention row; score scaling 1/elem FP, 2/elem binarized.
Size: 4 bytes per FP param and scale, 1 bit per binary weight rounded up
per tensor.
"""
import json
import math

s, p, e, heads, depth, ratio, c = 32, 4, 64, 4, 2, 4, 10
t = (s // p) ** 2
dh = e // heads
hid = ratio * e
pd = 3 * p * p


def count(stage):
    attn_bin = stage != "FullPrecision"
    mlp_bin = stage == "Full"
    bops = 0
    flops = t * e * pd + t * e  # patch embed + pos add
    for _ in range(depth):
        flops += 8 * t * e  # ln1
        proj = t * e * e
        if attn_bin:
            bops += 4 * proj
            flops += 4 * t * e          # channel scales
            flops += 2 * (2 * t * e)    # binarize q, k activations
        else:
            flops += 4 * proj
        score = heads * t * t * dh
        if attn_bin:
            bops += score
            flops += 2 * heads * t * t
        else:
            flops += score
            flops += heads * t * t
        flops += 2 * heads * t * t      # softmax
        av = heads * t * t * dh
        if attn_bin:
            flops += 2 * heads * t * t  # SAB threshold
            flops += 2 * t * e          # binarize v
            bops += av
            flops += t * e              # apply v scales
        else:
            flops += av
        flops += t * e                  # residual
        flops += 8 * t * e              # ln2
        if mlp_bin:
            bops += t * hid * e
            flops += t * hid
        else:
            flops += t * hid * e
        flops += 8 * t * hid            # gelu
        if mlp_bin:
            bops += t * e * hid
            flops += t * e
        else:
            flops += t * e * hid
        flops += t * e                  # residual
    flops += t * e + 8 * e + c * e      # pool, final norm, head
    return bops, flops


def size(stage):
    attn_bin = stage != "FullPrecision"
    mlp_bin = stage == "Full"

    def binary_bytes(rows, cols):
        return math.ceil(rows * cols / 8) + 4 * rows

    b = 4 * (e * pd + e)            # patch embed
    b += 4 * (t * e)                # pos embed
    b += 4 * (2 * e)                # final norm
    b += 4 * (c * e + c)            # head
    for _ in range(depth):
        b += 4 * (2 * e) * 2        # ln1, ln2
        b += 4 * (4 * e)            # attn biases
        b += 4 * binary_bytes(e, e) if attn_bin else 4 * (4 * e * e)
        b += 4 * (hid + e)          # mlp biases
        if mlp_bin:
            b += binary_bytes(hid, e) + binary_bytes(e, hid)
        else:
            b += 4 * (hid * e + e * hid)
    return b


out = {}
for stage in ["FullPrecision", "AttentionOnly", "Full"]:
    bops, flops = count(stage)
    out[stage] = {
        "bops": bops,
        "flops": flops,
        "total_ops": bops / 64 + flops,
        "size_bytes": size(stage),
    }
print(json.dumps(out, indent=2))
