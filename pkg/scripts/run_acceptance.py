"""Run the acceptance criteria and print one verdict line per criterion."""
import argparse
import json
import sys

from gammalab import criteria as Cr


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("ids", nargs="*", type=int, help="criterion ids (default: all)")
    ap.add_argument("--json", help="write full results to this file")
    args = ap.parse_args()
    ids = args.ids or sorted(Cr.ALL)
    results = []
    for i in ids:
        r = Cr.ALL[i]()
        print(r.line(), flush=True)
        results.append(r.to_dict())
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    failed = [r["id"] for r in results if not r["passed"]]
    print(f"{len(results) - len(failed)}/{len(results)} passed" + (f"; failing: {failed}" if failed else ""))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
