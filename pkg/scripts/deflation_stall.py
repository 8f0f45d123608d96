"""Greedy deflation on a rank-2 tensor with correlated directions.

Prints the residual after each accepted term and the largest value of
R(u^4) over random unit vectors once deflation stops.  When that maximum is
not positive, no nonnegative rank-one term can lower the residual.
"""
import warnings

import numpy as np

from gradflow_tensor.algorithms import PowerConfig, tensor_deflation
from gradflow_tensor.tensor_core import (
    ComponentModel,
    GroundTruth,
    contract4_many,
    frobenius,
    frobenius_distance,
    residual,
    sample_sphere,
)


def main():
    for cos in (0.3, np.sqrt(0.3)):
        for a2 in (1.0, 0.7, 0.2):
            u1 = np.array([1.0, 0.0, 0.0, 0.0])
            u2 = np.array([cos, np.sqrt(1 - cos ** 2), 0.0, 0.0])
            truth = GroundTruth([1.0, a2], [u1, u2])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = tensor_deflation(truth, 0.0, PowerConfig(max_iters=3000, tol=1e-15),
                                         rng=0, max_components=4)
            path = [frobenius_distance(truth, ComponentModel(model.directions[:k],
                                                             model.sq_norms[:k], 4))
                    for k in range(model.m + 1)]
            V = sample_sphere(np.random.default_rng(5), 500_000, 4)
            peak = contract4_many(residual(truth, model), V).max()
            print(f"cos={cos:.3f} a2={a2}: terms {model.m}, relative residual "
                  f"{np.round(np.array(path) / frobenius(truth), 4).tolist()}, "
                  f"max R(u^4) {peak:.2e}")


if __name__ == "__main__":
    main()
