import numpy as np
import pytest

from sgde.schema import LabeledDataset


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def blobs(n_per_class=(40, 40), dim=3, gap=0.4, seed=0, spread=0.08) -> LabeledDataset:
    """Two or more Gaussian blobs clipped to the unit cube."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c, n in enumerate(n_per_class):
        centre = np.full(dim, 0.5) + (c - (len(n_per_class) - 1) / 2) * gap / max(1, len(n_per_class) - 1)
        xs.append(np.clip(rng.normal(centre, spread, size=(n, dim)), 0, 1))
        ys.append(np.full(n, c))
    return LabeledDataset(np.vstack(xs), np.concatenate(ys),
                          tuple(f"c{c}" for c in range(len(n_per_class))),
                          1 if len(n_per_class) == 2 else None)


@pytest.fixture
def two_blobs() -> LabeledDataset:
    return blobs()


def small_schema(width: int = 3):
    from sgde.schema import Feature, LabelSpec, TabularSchema
    feats = tuple(Feature(f"x{i}", "numeric", 0.0, 10.0) for i in range(width))
    return TabularSchema(feats, LabelSpec("y", ("neg", "pos"), "pos"), fitted_on="train")


def tiny_artifact(client_id="alice", class_label="pos", seed=0, n=60, epochs=2,
                  max_epsilon=1.5):
    """A real, quickly trained generator for protocol tests."""
    from sgde.dp_optim import DpTrainingConfig
    from sgde.generator import VaeConfig, train_class_generator
    from sgde.requirements import ServerRequirements
    data = np.random.default_rng(seed).uniform(0.2, 0.8, size=(n, 3))
    cfg = VaeConfig.tabular(3, latent_dim=2, dp=DpTrainingConfig(batch_size=20, epochs=epochs))
    req = ServerRequirements(max_epsilon=max_epsilon, schema=small_schema())
    return train_class_generator(data, cfg, req, seed, client_id=client_id, class_label=class_label)


MIXED_SCHEMA = {
    "features": [
        {"name": "x0", "kind": "numeric", "min": None, "max": None},
        {"name": "x1", "kind": "numeric", "min": None, "max": None},
        {"name": "colour", "kind": "categorical", "categories": ["red", "green", "blue"]},
    ],
    "label": {"name": "y", "classes": ["no", "yes"], "positive_class": "yes"},
}


def write_mixed_csv(path, n=400, seed=0):
    """Two numeric columns and one categorical whose distribution depends on the label."""
    rng = np.random.default_rng(seed)
    y = rng.random(n) < 0.4
    x0 = rng.normal(np.where(y, 3.0, 1.0), 0.7)
    x1 = rng.normal(np.where(y, -1.0, 1.0), 1.0)
    colours = np.array(["red", "green", "blue"])
    col = np.where(y, rng.choice(colours, n, p=[.1, .3, .6]), rng.choice(colours, n, p=[.6, .3, .1]))
    lines = ["x0,x1,colour,y"]
    lines += [f"{float(a)!r},{float(b)!r},{c},{'yes' if t else 'no'}" for a, b, c, t in zip(x0, x1, col, y)]
    path.write_text("\n".join(lines) + "\n")
    return path


def quick_config(csv_path, **overrides):
    """Scenario settings small enough for a unit test."""
    doc = {
        "dataset_path": str(csv_path), "schema": MIXED_SCHEMA, "dataset_name": "toy",
        "n_clients": 3, "client_fraction": 0.3, "seeds": [0], "cv_folds": 3,
        "samples_per_generator_per_class": 40,
        "generator": {"latent_dim": 2},
        "dp": {"epochs": 2, "batch_size": 16, "learning_rate": 0.01},
        "classifier": {"epochs": 40},
        "federated": {"rounds_max": 20, "patience": 3},
    }
    doc.update(overrides)
    return doc


CRITERIA_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    CRITERIA_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}")
    print(CRITERIA_LINES[-1])


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
