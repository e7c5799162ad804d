"""Resonance shift and width over a ladder of narrow sizes.

Runs the asymptotic model over ``--eps`` and confirms the largest values
with the direct meridian solver.  Writes ``ladder.csv`` to ``--out`` and
prints the log-log slopes next to the expected exponents.

    python scripts/eps_ladder.py --eps 0.4 0.3 0.2 0.14 0.1 --confirm 2
"""
import argparse
import csv
import warnings
from pathlib import Path

from tunnelguide.asymptotics import full_vs_leading, loglog_slope, peak_characteristics
from tunnelguide.direct import DirectGrid, direct_pole
from tunnelguide.pipeline import CoefficientCache, Coefficients, load_config, reference_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", type=float, nargs="+", default=[0.4, 0.3, 0.2, 0.14, 0.1])
    ap.add_argument("--confirm", type=int, default=2, help="number of largest eps checked by direct solves")
    ap.add_argument("--n-radial", type=int, default=16, help="direct meridian resolution")
    ap.add_argument("--cache-dir", default=".tunnelguide-cache")
    ap.add_argument("--out", default="out/eps_ladder")
    args = ap.parse_args()

    eps_list = sorted(args.eps, reverse=True)
    coef = Coefficients(load_config(reference_config()), CoefficientCache(args.cache_dir))
    model = coef.model("plus", expansion="full")
    rows = []
    for i, eps in enumerate(eps_list):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pk = peak_characteristics(model, eps)
            fvl = full_vs_leading(model, eps)
        row = dict(eps=eps, shift=model.k0_sq - pk.k_r_sq, width=pk.width, full_vs_leading=fvl)
        if i < args.confirm:
            dp = direct_pole(coef.config.spec(eps), DirectGrid(n_radial=args.n_radial), model.k0_sq, levels=2)
            row.update(direct_shift=model.k0_sq - dp.k_r_sq, direct_width=dp.width,
                       direct_shift_error=dp.k_r_sq_error, direct_width_error=dp.width_error)
        rows.append(row)
        print(", ".join(f"{k}={v:.6g}" for k, v in row.items()))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(out / "ladder.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, keys)
        w.writeheader()
        w.writerows(rows)

    p = 2 * model.mu1 + 1
    print(f"shift slope {loglog_slope(eps_list, [r['shift'] for r in rows]):.4f} (expected {p:.4f})")
    print(f"width slope {loglog_slope(eps_list, [r['width'] for r in rows]):.4f} (expected {2 * p:.4f})")
    print(f"full vs leading slope {loglog_slope(eps_list, [r['full_vs_leading'] for r in rows]):.4f} "
          f"(at least {p - 0.5:.4f})")


if __name__ == "__main__":
    main()
