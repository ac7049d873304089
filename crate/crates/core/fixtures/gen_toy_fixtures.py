#!/usr/bin/env python3
"""Exact-rational enumeration of efficient information for toy case-control
instances under the identifiable reparametrized logistic model.

Every probability and score is rational because exp(alpha) and exp(beta_j)
are chosen rational, so the blocks and the Schur complement are computed
with fractions.Fraction and only rounded when written out.

Usage: python3 gen_toy_fixtures.py   (writes toy_*.json next to this file)
"""
import json
import math
import os
from fractions import Fraction as F


def lcm(a, b):
    return a * b // math.gcd(a, b)


def solve(a, b):
    """Exact solution of a x = b for a small square Fraction matrix (Gauss-Jordan)."""
    n = len(a)
    m = [row[:] + [b[i]] for i, row in enumerate(a)]
    for c in range(n):
        p = next(r for r in range(c, n) if m[r][c] != 0)
        m[c], m[p] = m[p], m[c]
        piv = m[c][c]
        m[c] = [v / piv for v in m[c]]
        for r in range(n):
            if r != c and m[r][c] != 0:
                f = m[r][c]
                m[r] = [vr - f * vc for vr, vc in zip(m[r], m[c])]
    return [m[r][n] for r in range(n)]


def build(name, support, g0, exp_alpha, exp_beta, weights, alpha, beta):
    w0, w1 = weights
    ebx = []
    for x in support:
        e = F(1)
        for xj, eb in zip(x, exp_beta):
            e *= eb ** xj
        ebx.append(e)
    f1 = [exp_alpha * e / (1 + exp_alpha * e) for e in ebx]
    f0 = [1 - v for v in f1]
    q1 = sum(a * g for a, g in zip(f1, g0))
    q0 = sum(a * g for a, g in zip(f0, g0))
    p_case = [a * g / q1 for a, g in zip(f1, g0)]
    p_ctrl = [a * g / q0 for a, g in zip(f0, g0)]

    # identifiable truth: exp(alpha*) = exp(alpha) Q0 / Q1
    exp_astar = exp_alpha * q0 / q1
    pi = [w1 * exp_astar * e / (w0 + w1 * exp_astar * e) for e in ebx]
    z = [[F(1)] + [F(v) for v in x] for x in support]

    dim = len(z[0])
    samples = [(0, p_ctrl, w0), (1, p_case, w1)]
    sigma = [[F(0)] * dim for _ in range(dim)]
    for c, probs, w in samples:
        scores = [[(c - pi[k]) * zk for zk in z[k]] for k in range(len(support))]
        mean = [sum(probs[k] * scores[k][i] for k in range(len(support))) for i in range(dim)]
        for k in range(len(support)):
            d = [scores[k][i] - mean[i] for i in range(dim)]
            for i in range(dim):
                for j in range(dim):
                    sigma[i][j] += w * probs[k] * d[i] * d[j]

    interest = list(range(1, dim))
    nuisance = [0]
    i11 = [[sigma[i][j] for j in interest] for i in interest]
    i12 = [[sigma[i][j] for j in nuisance] for i in interest]
    i22 = [[sigma[i][j] for j in nuisance] for i in nuisance]
    if all(v == 0 for row in i22 for v in row):
        # nuisance scores vanish after centering: projection onto {0}
        istar = i11
    else:
        cols = [solve(i22, [i12[r][c] for c in range(len(nuisance))]) for r in range(len(interest))]
        istar = [[i11[a][b] - sum(i12[a][c] * cols[b][c] for c in range(len(nuisance)))
                  for b in range(len(interest))] for a in range(len(interest))]

    den = 1
    for p in p_case + p_ctrl:
        den = lcm(den, p.denominator)
    counts = [[int(p * den) for p in p_ctrl], [int(p * den) for p in p_case]]

    fl = lambda m: [[float(v) for v in row] for row in m]
    return {
        "name": name,
        "instance": {
            "support": [[float(v) for v in x] for x in support],
            "g0": [float(g) for g in g0],
            "alpha": alpha,
            "beta": beta,
            "weights": [float(w0), float(w1)],
        },
        # parameters of the identifiable model at the truth: (alpha*, beta)
        "params": [math.log(exp_astar)] + beta,
        "interest": interest,
        "nuisance": nuisance,
        "counts": counts,
        "expected": {"i11": fl(i11), "i12": fl(i12), "i22": fl(i22), "istar": fl(istar)},
        "q0": float(q0 / q1),
    }


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    half = (F(1, 2), F(1, 2))
    fixtures = [
        build("toy_binary_slope_log2", [[0], [1]], [F(1, 2), F(1, 2)], F(1), [F(2)], half,
              0.0, [math.log(2.0)]),
        build("toy_two_covariates", [[0, 0], [1, 0], [0, 1], [1, 1]],
              [F(1, 10), F(2, 10), F(3, 10), F(4, 10)], F(1, 2), [F(2), F(1, 3)], half,
              math.log(0.5), [math.log(2.0), math.log(1.0 / 3.0)]),
        build("toy_binary_slope0", [[0], [1]], [F(1, 2), F(1, 2)], F(1), [F(1)], half,
              0.0, [0.0]),
    ]
    for fx in fixtures:
        with open(os.path.join(here, fx["name"] + ".json"), "w") as f:
            json.dump(fx, f, indent=2)
            f.write("\n")


if __name__ == "__main__":
    main()
