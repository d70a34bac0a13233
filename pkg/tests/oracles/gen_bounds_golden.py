"""Regenerate ``tests/golden_bounds.json`` with 50-digit mpmath arithmetic.

Formulas are re-typed here from scratch rather than imported, so the golden
values are an independent evaluation of the same closed forms.
"""
import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 50

APPF_LAMBDA_PLUS = "(13 - 3*sqrt(17))/32"


def grid():
    pts = [dict(d=2, H=2, delta="0.05", delta_min="3/32", lambda_plus=APPF_LAMBDA_PLUS,
                c1="8", c2="1", lam="1", k=30000, beta="2.65")]
    ds = [1, 2, 3, 4, 5, 8, 2, 3, 6, 10]
    Hs = [1, 2, 3, 5, 2, 4, 10, 3, 2, 1]
    deltas = ["0.01", "0.05", "0.1", "0.2", "0.001"]
    dmins = ["0.5", "0.1", "1/8", "0.02", "1"]
    lps = ["0.3", "0.02", "0.07", "0.5", "0.001", "1"]
    c1s = ["8", "10", "16"]
    c2s = ["1", "0.5", "2", "3"]
    ks = [1, 10, 1000, 30000, 10 ** 6]
    for i in range(19):
        pts.append(dict(d=ds[i % 10], H=Hs[(i * 3) % 10], delta=deltas[i % 5], delta_min=dmins[(i * 2) % 5],
                        lambda_plus=lps[i % 6], c1=c1s[i % 3], c2=c2s[i % 4], lam=["1", "0.5", "2"][i % 3],
                        k=ks[i % 5], beta=["0.8", "2.65", "5"][i % 3]))
    return pts


def ev(x):
    if x == APPF_LAMBDA_PLUS:
        return (13 - 3 * mp.sqrt(17)) / 32
    if "/" in x:
        num, den = x.split("/")
        return mp.mpf(num) / mp.mpf(den)
    return mp.mpf(x)


def golden(p):
    d, H, k = mp.mpf(p["d"]), mp.mpf(p["H"]), mp.mpf(p["k"])
    delta, dm, lp = ev(p["delta"]), ev(p["delta_min"]), ev(p["lambda_plus"])
    c1, c2, lam, beta = ev(p["c1"]), ev(p["c2"]), ev(p["lam"]), ev(p["beta"])
    g = H * beta * mp.sqrt(2 * d * k * mp.log(1 + k / lam)) + 2 * H ** 2 * mp.sqrt(k * mp.log(2 * H * k / delta))
    l1 = 48 * c1 ** 2 * H ** 4 * d ** 3 / lp ** 2 * mp.log(32 * c1 ** 2 * H ** 5 * d ** 4 / (lp ** 2 * delta))
    l2 = 432 * c2 ** 2 * H ** 4 * d ** 2 / (dm ** 2 * lp ** 3) * mp.log(288 * d ** 3 * H ** 5 * c2 ** 2 / (dm ** 2 * lp ** 3 * delta))
    e1 = 48 * c1 ** 2 * H ** 4 * d ** 2 / lp ** 2 * mp.log(32 * c1 ** 2 * H ** 5 * d ** 3 / (lp ** 2 * delta))
    e2 = 432 * c2 ** 2 * H ** 4 * d / (dm ** 2 * lp ** 3) * mp.log(288 * d ** 2 * H ** 5 * c2 ** 2 / (dm ** 2 * lp ** 3 * delta))
    kl, ke = max(l1, l2), max(e1, e2)
    reg_lsvi = d ** 3 * H ** 5 / dm * mp.log(d * H ** 2 * kl / delta)
    tau = H * ke
    reg_el = H ** mp.mpf(1.5) * d * mp.sqrt(tau * mp.log(tau / delta))
    out = {name: mp.nstr(v, 30) for name, v in dict(
        g=g, lsvi_branch1=l1, lsvi_branch2=l2, eleanor_branch1=e1, eleanor_branch2=e2,
        kappa_lsvi=kl, kappa_eleanor=ke, regret_lsvi=reg_lsvi, regret_eleanor=reg_el).items()}
    out["lambda_plus_value"] = mp.nstr(lp, 30)
    out["delta_min_value"] = mp.nstr(dm, 30)
    return out


def main():
    rows = [{"params": p, "golden": golden(p)} for p in grid()]
    path = Path(__file__).resolve().parent.parent / "golden_bounds.json"
    path.write_text(json.dumps(rows, indent=1) + "\n")
    print(f"wrote {len(rows)} rows to {path}")


if __name__ == "__main__":
    main()
