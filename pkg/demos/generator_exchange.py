"""Two sites train class generators, trade them through a registry, and
build a balanced synthetic training set.

The registry runs over HTTP on localhost, exactly as `sgde serve` would.
"""

import tempfile

import numpy as np

from sgde.downstream import evaluate, train_logreg
from sgde.dp_optim import DpTrainingConfig
from sgde.exchange import HttpClient, Registry, RegistryServer
from sgde.generator import VaeConfig, train_class_generator
from sgde.harness import synthesize
from sgde.nn import AdamHyper
from sgde.requirements import ServerRequirements
from sgde.schema import Feature, LabeledDataset, LabelSpec, TabularSchema

rng = np.random.default_rng(0)
schema = TabularSchema((Feature("a", "numeric", 0.0, 1.0), Feature("b", "numeric", 0.0, 1.0)),
                       LabelSpec("y", ("low", "high"), "high"), fitted_on="train")


def site(n_low, n_high):
    low = np.clip(rng.normal([0.3, 0.6], 0.1, (n_low, 2)), 0, 1)
    high = np.clip(rng.normal([0.7, 0.4], 0.1, (n_high, 2)), 0, 1)
    return LabeledDataset(np.vstack([low, high]), [0] * n_low + [1] * n_high, ("low", "high"))


# site A is short on "high" rows, site B on "low" rows
sites = {"site-a": site(120, 15), "site-b": site(20, 110)}
cfg = VaeConfig.tabular(2, latent_dim=2, dp=DpTrainingConfig(
    batch_size=16, epochs=30, adam=AdamHyper(learning_rate=0.01)))

pool_dir = tempfile.mkdtemp(prefix="sgde-pool-")
registry = Registry(ServerRequirements(max_epsilon=1.5, schema=schema), pool_dir)

with RegistryServer(registry) as server:
    print("registry at", server.url, "pool in", pool_dir)
    clients = {name: HttpClient(server.url, name) for name in sites}
    for name, data in sites.items():
        req = clients[name].subscribe()
        for c, label in enumerate(schema.label.classes):
            art = train_class_generator(data.of_class(c), cfg, req, seed=c, client_id=name,
                                        class_label=label, schema=schema)
            res = clients[name].push(art)
            print(f"{name} pushes {label:4s} generator eps={art.certificate.epsilon:.3f} "
                  f"n={art.certificate.dataset_class_size:3d} -> {res.code}")

    for row in clients["site-a"].list_generators():
        print("  catalog:", row["generator_id"], row["client_id"], row["class_label"])

    synth, _ = synthesize(clients["site-a"], schema, samples_per_generator=150, seed=1)
    print("synthetic class counts:", synth.class_counts().tolist())

local = sites["site-a"]
for label, train in (("own data", local), ("synthetic", synth)):
    m = evaluate(train_logreg(train), sites["site-b"])
    print(f"trained on {label:9s}: acc={m.accuracy:.3f} f1={m.f1:.3f} auc={m.auc:.3f} on site B")
