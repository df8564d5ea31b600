"""Scan of t^4 (Gamma_2 - Gamma)(h) / h^2 on sub-level sets of a flowed cap."""
import argparse
import sys

from gammalab import deficit as D


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[3, 5, 10, 50])
    ap.add_argument("--t", type=float, nargs="+", default=[0.02, 0.05, 0.1, 0.2, 0.5])
    ap.add_argument("--eps", type=float, nargs="+", default=[0.05, 0.1, 1 / 7])
    ap.add_argument("--v", type=float, default=0.3)
    args = ap.parse_args()
    scan = D.hypothesis_H_scan(tuple(args.n), tuple(args.t), tuple(args.eps), v=args.v)
    print(f"{'n':>4} {'t':>6} {'eps':>7} {'side':>5} {'ratio':>12} {'theta':>7} {'skipped':>8}")
    for c in scan.cells:
        print(f"{c.n:4d} {c.t:6.3f} {c.eps:7.4f} {c.side:>5} {c.ratio:12.4e} {c.theta_at_sup:7.4f} "
              f"{c.skipped_below_floor:8d}")
    for t, val in sorted(scan.per_t.items()):
        print(f"sup at t={t:g}: {val:.4e}")
    print(f"C_H={scan.C_H:.4e} t_spread={scan.t_spread:.1f} symmetry={scan.symmetry_ratio:.2f}")
    return 0 if scan.t_spread <= 3 and scan.symmetry_ratio <= 2 else 1


if __name__ == "__main__":
    sys.exit(main())
