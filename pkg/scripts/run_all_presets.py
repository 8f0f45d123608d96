"""Run every preset into runs/<name> and print one summary line per seed."""
import argparse
import json
import time
import warnings

from gradflow_tensor.harness import PRESETS, preset, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("names", nargs="*", default=sorted(PRESETS))
    args = ap.parse_args()
    for name in args.names:
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            status, summary = run_experiment(preset(name), f"{args.out}/{name}", jobs=args.jobs)
        print(f"== {name}: status {status}, {time.perf_counter() - t0:.1f}s")
        for s in summary["seeds"]:
            keep = {k: v for k, v in s.items()
                    if k in ("seed", "final_loss", "fit_times", "epochs_used", "converged",
                             "saddle_losses", "misalignment", "coefficients", "all_negative")}
            print("  " + json.dumps(keep))


if __name__ == "__main__":
    main()
