"""
Compare surrogate-guided acquisition with random selection over the same
candidate pools: hypervolume of the final front against (1, 1) after the
same evaluation budget, per seed.
"""
import argparse
import json
import logging

import numpy as np
from tqdm import tqdm

from meeso.engine import EvaluatorKind, RunConfig, Selection, run
from meeso.search_space import get_heuristic


def final_hypervolume(rc):
    archive, _ = run(rc)
    return archive.hypervolume()


if __name__ == "__main__":
    parser = argparse.ArgumentParser(
        "Surrogate-guided search against random search"
    )
    parser.add_argument(
        "-r", "--runs", type=int, default=20, help="number of seeds"
    )
    parser.add_argument("-k", "--k", type=int, default=4)
    parser.add_argument("-i", "--iters", type=int, default=10)
    parser.add_argument("--init", type=int, default=20)
    parser.add_argument(
        "--heuristic", type=str, default="residual", help="preset name"
    )
    parser.add_argument(
        "-o", "--out", type=str, default=None, help="write results as json"
    )
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING)

    base = RunConfig(
        heuristics=(get_heuristic(args.heuristic), ),
        arches_per_iter=args.k,
        inner_iterations=args.iters,
        initial_space_size=args.init,
        evaluator_kind=EvaluatorKind.Oracle
    )
    results = {"surrogate": [], "random": []}
    for seed in tqdm(range(args.runs)):
        for selection in Selection:
            rc = RunConfig.from_dict(
                dict(base.to_dict(), run_seed=seed, selection=selection.value)
            )
            results[selection.value].append(final_hypervolume(rc))

    surrogate_volumes = np.array(results["surrogate"])
    random_volumes = np.array(results["random"])
    wins = int(np.sum(surrogate_volumes >= random_volumes))
    print(
        f"surrogate at least as good in {wins} of {args.runs} runs, mean\
 hypervolume {round(np.mean(surrogate_volumes), 4)} vs\
 {round(np.mean(random_volumes), 4)}"
    )
    if args.out is not None:
        with open(args.out, "w") as outfile:
            json.dump(results, outfile, indent=4)
