"""Scaled heat-kernel derivative suprema and the cap-measure Gaussian gap per dimension."""
import argparse

from gammalab import deficit as D
from gammalab.profiles import SphereGeometry


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[3, 5, 10, 20])
    ap.add_argument("--gap-n", type=int, nargs="+", default=[10, 25, 50, 100, 200])
    args = ap.parse_args()
    for n in args.n:
        k = D.kernel_bound_scan(SphereGeometry(n))
        print(f"n={n:4d} constant={k.constant:.4f} grad={k.grad_scaled.round(4).tolist()} "
              f"hess={k.hess_scaled.round(4).tolist()} mass_error={k.mass_error:.1e}")
    for n in args.gap_n:
        g = D.cap_measure_gap(SphereGeometry(n))
        print(f"n={n:4d} sup gap*n/sqrt(t)={g.sup_scaled:.4f}")


if __name__ == "__main__":
    main()
