"""Parameter counts by module for the reference configuration, at both encoder depths."""
from magcrn.model import VARIANTS, param_breakdown, pemsd4_config

MODULES = ("agl", "gcrn", "nmpl", "nawg", "output")


def main():
    for depth in (2, 1):
        print(f"recurrent layers = {depth}")
        print(f"  {'variant':8s}" + "".join(f"{m:>10s}" for m in MODULES) + f"{'total':>11s}")
        full = None
        for variant in VARIANTS:
            b = param_breakdown(pemsd4_config(gcrn_layers=depth, variant=variant))
            total = sum(b.values())
            full = full or total
            print(f"  {variant:8s}" + "".join(f"{b[m]:10d}" for m in MODULES) + f"{total:11d}"
                  + (f"   full/this = {full / total:.2f}" if total != full else ""))


if __name__ == "__main__":
    main()
