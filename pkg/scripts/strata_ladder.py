"""Dense deviation matrices of the dyadic design as strata are added.

With 0 strata the two halves of the sorted population never co-occur; each
added level of stratification confines the non-factoring pairs to smaller
diagonal blocks.
"""

import argparse
from pathlib import Path

from infosamp import designs as D
from infosamp import inclusion as I
from infosamp.synthpop import PopulationConfig, generate_population


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--N", type=int, default=128)
    ap.add_argument("--strata", type=int, nargs="+", default=[0, 2, 4, 8, 16, 32])
    ap.add_argument("--out", default="out/strata_ladder")
    a = ap.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)

    pop = generate_population(PopulationConfig(N=a.N), seed=a.seed)
    lines = ["n_strata,s1_size,s1_ratio"]
    for k in a.strata:
        tab = I.exact_inclusion(D.StratifiedDyadic(n_strata=k), pop)
        dev = I.deviation_matrix(tab)
        dev.to_dense_csv(out / f"deviations_strata_{k}.csv")
        rep = I.condition_report(dev, tab)
        lines.append(f"{k},{rep.s1_size},{rep.s1_ratio!r}")
        print(f"strata={k:>3}  |S1|={rep.s1_size:>6}  |S1|/N={rep.s1_ratio:.4g}")
    (out / "strata_ladder.csv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
