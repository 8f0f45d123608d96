"""Epoch-0 partition census for the desk preset.

Counts good/pot/bad components over many initialization seeds and prints the
thresholds Gamma_i against 1/d (the mean of a random squared coordinate).
Thresholds below 1/d label most random directions bad.
"""
import argparse
from dataclasses import replace

import numpy as np

from gradflow_tensor import diagnostics as diag
from gradflow_tensor.harness import make_orthogonal_truth
from gradflow_tensor.modified_flow import AlgoParams, EpochSchedule, init_model
from gradflow_tensor.tensor_core import residual_frobenius


def census(params, truth, seeds):
    d = truth.dim
    bad_empty, n_bad, n_good = 0, [], []
    for seed in seeds:
        model = init_model(params, d, seed)
        sched = EpochSchedule.from_beta(residual_frobenius(truth, model), params, d)
        rep = diag.classify_partition(model, diag.DiscoverySets(truth.r), params, sched, truth)
        n_bad.append(len(rep.bad()))
        n_good.append(sum(len(rep.good(i)) for i in range(truth.r)))
        bad_empty += not rep.bad()
    return rep.gamma_thresholds, bad_empty, np.mean(n_bad), np.mean(n_good)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    truth = make_orthogonal_truth(10, 5, 1.2, "frobenius_one")
    print(f"1/d = {1 / truth.dim:.3f}")
    for c in (1.0, 0.25, 0.1, 0.05):
        p = replace(AlgoParams(), c_t1a=c)
        gamma, ok, bad, good = census(p, truth, range(args.seeds))
        print(f"c_t1a={c:<5} Gamma={np.round(gamma, 3).tolist()} bad-empty {ok}/{args.seeds} "
              f"mean bad {bad:.1f} mean good {good:.1f}")


if __name__ == "__main__":
    main()
