"""
Training budget sweep: evaluate one candidate with 100 to 1000 epochs and
write error, uncertainty and wall time per budget to a csv.
"""
import argparse
import json
import logging

import numpy as np
import pandas as pd
from tqdm import tqdm

from meeso.core_types import Candidate, with_config
from meeso.dataset import load_csv, two_blobs
from meeso.evaluator import EvalOptions, run_pipeline
from meeso.search_space import generate, get_heuristic


def sweep(candidate, dataset, budgets, opts, seed=0):
    res_df = []
    for epochs in tqdm(budgets):
        result = run_pipeline(
            with_config(candidate, epochs=int(epochs)), dataset, opts, seed
        )
        res_dict = result.record.objectives.to_dict()
        res_dict["wall_seconds"] = result.record.wall_seconds
        res_dict["epochs"] = int(epochs)
        res_df.append(res_dict)
    return pd.DataFrame(res_df)


if __name__ == "__main__":
    parser = argparse.ArgumentParser("Candidate trained with growing budgets")
    parser.add_argument(
        "-c",
        "--candidate",
        type=str,
        default=None,
        help="candidate json, default: first residual draw"
    )
    parser.add_argument(
        "-d", "--dataset", type=str, default=None, help="csv, default: blobs"
    )
    parser.add_argument("--has-header", action="store_true")
    parser.add_argument("-s", "--seed", type=int, default=0)
    parser.add_argument(
        "-e",
        "--epochs",
        type=int,
        nargs=3,
        default=[100, 1001, 100],
        metavar=("START", "STOP", "STEP")
    )
    parser.add_argument("-o", "--out", type=str, default="evaluate_epochs.csv")
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING)

    if args.candidate is None:
        candidate = generate(get_heuristic("residual"), 1, seed=0).candidates[0]
    else:
        with open(args.candidate, "r") as infile:
            candidate = Candidate.from_dict(json.load(infile))
    if args.dataset is None:
        dataset = two_blobs(seed=args.seed)
    else:
        dataset = load_csv(args.dataset, args.has_header, seed=args.seed)

    res_df = sweep(
        candidate, dataset, np.arange(*args.epochs), EvalOptions(), args.seed
    )
    res_df.set_index("epochs").to_csv(args.out)
