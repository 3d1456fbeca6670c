import numpy as np
import pytest

from rantwin import anomaly, mlp, ran_sim
from rantwin.cli import main

DATASET_SEED = 7
SPLIT_SEED = 13
TRAIN_SEED = 21


@pytest.fixture(scope="session")
def default_dataset():
    """The default 2505-sample dataset, generated once per session."""
    return anomaly.generate_dataset(
        ran_sim.SimConfig(),
        2505,
        (0.25, 0.25, 0.25, 0.25),
        anomaly.default_fault_specs(),
        seed=DATASET_SEED,
    )


def standardized_arrays(samples, stats):
    x = np.stack([anomaly.standardize(s.features, stats) for s in samples])
    y = np.array([int(s.label) for s in samples], dtype=np.int64)
    return x, y


@pytest.fixture(scope="session")
def pipeline(default_dataset):
    """Split/standardize/train once; shared by evaluation-heavy tests."""
    train_set, test_set = anomaly.split_dataset(default_dataset, 0.8, seed=SPLIT_SEED)
    stats = anomaly.FeatureStats.from_samples(train_set)
    x_train, y_train = standardized_arrays(train_set, stats)
    x_test, y_test = standardized_arrays(test_set, stats)
    model = mlp.init_model([16, 16], seed=TRAIN_SEED)
    model, report = mlp.train(
        model,
        list(zip(x_train, y_train)),
        list(zip(x_test, y_test)),
        mlp.TrainConfig(seed=TRAIN_SEED),
    )
    return {
        "samples": default_dataset,
        "train": train_set,
        "test": test_set,
        "stats": stats,
        "x_test": x_test,
        "y_test": y_test,
        "model": model,
        "report": report,
    }


@pytest.fixture(scope="session")
def cli_artifacts(tmp_path_factory):
    """Dataset, model, stats and report files produced through the CLI."""
    root = tmp_path_factory.mktemp("artifacts")
    dataset = root / "dataset.csv"
    model = root / "model.txt"
    stats = root / "stats.csv"
    report = root / "report.csv"
    rc = main(["gen-dataset", "--out", str(dataset), "--seed", str(DATASET_SEED)])
    assert rc == 0
    rc = main(
        [
            "train",
            "--dataset", str(dataset),
            "--model-out", str(model),
            "--stats-out", str(stats),
            "--report-out", str(report),
            "--split-seed", str(SPLIT_SEED),
            "--train-seed", str(TRAIN_SEED),
        ]
    )
    assert rc == 0
    return {"root": root, "dataset": dataset, "model": model, "stats": stats, "report": report}
