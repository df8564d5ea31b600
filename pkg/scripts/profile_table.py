"""Bobkov constants c_n and the sphere-versus-Gauss profile gap."""
import argparse
import math

from gammalab import profiles as P


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[2, 3, 5, 10, 20, 50, 100, 200])
    args = ap.parse_args()
    print(f"{'n':>5} {'c_n':>12} {'c_n-sqrt(n-1)':>14} {'sup gap':>10} {'n*gap':>8} {'argmax v':>9}")
    for n in args.n:
        c = P.bobkov_constant(n)
        g = P.profile_gap(n)
        print(f"{n:5d} {c:12.8f} {c - math.sqrt(n - 1):14.6e} {g.sup_gap:10.4e} {n * g.sup_gap:8.4f} "
              f"{g.argmax_v:9.4f}")


if __name__ == "__main__":
    main()
