"""Scenario orchestration: Local, Federated and Synthetic runs over one dataset."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .downstream import (ClientSplit, FederationPlan, Metrics, evaluate, kfold_cv, logreg_arch,
                         run_fedavg, train_logreg)
from .dp_optim import DpTrainingConfig, rng_stream
from .errors import ConfigurationError, DataError, SgdeError
from .exchange import HttpClient, LocalClient, Registry
from .generator import VaeConfig, sample, train_class_generator
from .requirements import ServerRequirements
from .schema import (LabeledDataset, RawDataset, TabularSchema, decode_to_domain, encode,
                     fit_schema, load_csv, preprocess)

log = logging.getLogger(__name__)

SCENARIOS = ("local", "federated", "synthetic")


def partition(dataset: LabeledDataset, n_clients: int, fraction: float,
              seed: int) -> list[LabeledDataset]:
    """Disjoint random client splits of ``floor(fraction * n)`` examples each."""
    if n_clients < 1 or not 0 < fraction <= 1:
        raise ConfigurationError("need n_clients >= 1 and fraction in (0, 1]")
    if n_clients * fraction > 1 + 1e-9:
        raise ConfigurationError(f"{n_clients} clients x {fraction} exceeds the dataset")
    n = len(dataset)
    size = math.floor(fraction * n + 1e-9)
    order = rng_stream(seed, "partition").permutation(n)
    clients = []
    for k in range(n_clients):
        part = dataset.subset(np.sort(order[k * size:(k + 1) * size]))
        if np.count_nonzero(part.class_counts()) < 2:
            log.warning("client %d holds fewer than two classes", k)
        clients.append(part)
    return clients


def split_train_test(raw: RawDataset, test_split: float, seed: int) -> tuple[RawDataset, RawDataset]:
    n = len(raw)
    n_test = int(round(test_split * n))
    order = rng_stream(seed, "test-split").permutation(n)
    return raw.subset(np.sort(order[n_test:])), raw.subset(np.sort(order[:n_test]))


@dataclass
class ClassifierConfig:
    epochs: int = 300
    learning_rate: float = 0.05


@dataclass
class FederatedConfig:
    rounds_max: int = 500
    local_epochs: int = 1
    patience: int = 10
    validation_fraction: float = 0.2
    learning_rate: float = 0.05


@dataclass
class GeneratorConfig:
    latent_dim: int = 8
    beta: float = 1.0
    min_class_size: int = 10
    slope: float = 0.2


@dataclass
class ScenarioConfig:
    dataset_path: str
    schema: dict
    dataset_name: str = "dataset"
    n_clients: int = 20
    client_fraction: float = 0.05
    test_split: float = 0.10
    scenarios: tuple[str, ...] = SCENARIOS
    seeds: tuple[int, ...] = (0,)
    cv_folds: int = 10
    samples_per_generator_per_class: int = 200
    max_epsilon: float = 1.5
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    dp: DpTrainingConfig = field(default_factory=DpTrainingConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    federated: FederatedConfig = field(default_factory=FederatedConfig)
    server_url: Optional[str] = None  # None: in-process registry

    def __post_init__(self):
        self.scenarios = tuple(self.scenarios)
        self.seeds = tuple(int(s) for s in self.seeds)
        bad = [s for s in self.scenarios if s not in SCENARIOS]
        if bad:
            raise ConfigurationError(f"unknown scenarios {bad}")
        if self.n_clients * self.client_fraction > 1 + 1e-9:
            raise ConfigurationError("n_clients * client_fraction must not exceed 1")
        if not 0 < self.test_split < 1:
            raise ConfigurationError("test_split must lie in (0, 1)")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("dp",)}
        d["scenarios"], d["seeds"] = list(self.scenarios), list(self.seeds)
        d["dp"] = self.dp.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path | None = None) -> "ScenarioConfig":
        d = dict(d)
        try:
            schema = d.pop("schema")
            if isinstance(schema, str):
                p = Path(schema)
                if base_dir is not None and not p.is_absolute():
                    p = Path(base_dir) / p
                schema = json.loads(p.read_text())
            path = d.pop("dataset_path")
            if base_dir is not None and not Path(path).is_absolute():
                path = str(Path(base_dir) / path)
            nested = {
                "generator": GeneratorConfig(**d.pop("generator", {})),
                "dp": DpTrainingConfig.from_dict(d.pop("dp", {})),
                "classifier": ClassifierConfig(**d.pop("classifier", {})),
                "federated": FederatedConfig(**d.pop("federated", {})),
            }
            return cls(dataset_path=path, schema=schema, **nested, **d)
        except (TypeError, KeyError, OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"invalid scenario config: {exc}") from None

    def config_hash(self) -> str:
        doc = self.to_dict()
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def vae_config(self, data_width: int) -> VaeConfig:
        g = self.generator
        return VaeConfig.tabular(data_width, g.latent_dim, g.beta, self.dp, g.slope,
                                 g.min_class_size)


@dataclass
class ScenarioReport:
    dataset: str
    config_hash: str
    seeds: list[int]
    # scenario -> {"local_eval": Metrics, "test_eval": Metrics}
    aggregate: dict = field(default_factory=dict)
    per_seed: list[dict] = field(default_factory=list)
    per_client: list[dict] = field(default_factory=list)
    privacy: list[dict] = field(default_factory=list)
    synthetic_class_counts: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "aggregate": {s: {k: m.to_dict() for k, m in v.items()}
                          for s, v in self.aggregate.items()},
            "per_seed": self.per_seed,
            "per_client": self.per_client,
            "privacy": self.privacy,
            "synthetic_class_counts": self.synthetic_class_counts,
            "failures": self.failures,
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioReport":
        agg = {s: {k: Metrics(**m) for k, m in v.items()} for s, v in d["aggregate"].items()}
        return cls(d["dataset"], d["config_hash"], list(d["seeds"]), agg,
                   d.get("per_seed", []), d.get("per_client", []), d.get("privacy", []),
                   d.get("synthetic_class_counts", []), d.get("failures", []),
                   d.get("warnings", []))


def _trainer(cfg: ClassifierConfig):
    return lambda data, seed: train_logreg(data, cfg.epochs, cfg.learning_rate, seed)


def _has_two_classes(data: LabeledDataset) -> bool:
    return np.count_nonzero(data.class_counts()) >= 2


def run_local(clients: Sequence[LabeledDataset], test: LabeledDataset, cfg: ScenarioConfig,
              seed: int, notes: list) -> list[dict]:
    train = _trainer(cfg.classifier)
    rows = []
    for k, data in enumerate(clients):
        if not _has_two_classes(data) or len(data) < cfg.cv_folds:
            notes.append(f"seed {seed}: client {k} skipped in local scenario")
            continue
        cv = kfold_cv(data, cfg.cv_folds, train, seed * 1000 + k)
        model = train(data, seed * 1000 + k)
        rows.append({"client": k, "local_eval": cv, "test_eval": evaluate(model, test)})
    return rows


def _client_split(data: LabeledDataset, fraction: float, seed: int) -> ClientSplit:
    n = len(data)
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    order = rng_stream(seed, "validation").permutation(n)
    return ClientSplit(data.subset(np.sort(order[n_val:])), data.subset(np.sort(order[:n_val])))


def run_federated(clients: Sequence[LabeledDataset], test: LabeledDataset, cfg: ScenarioConfig,
                  seed: int, notes: list) -> list[dict]:
    fc = cfg.federated
    splits = [_client_split(d, fc.validation_fraction, seed * 1000 + k)
              for k, d in enumerate(clients) if len(d) >= 2]
    plan = FederationPlan(splits, rounds_max=fc.rounds_max, local_epochs=fc.local_epochs,
                          patience=fc.patience, learning_rate=fc.learning_rate)
    arch = logreg_arch(test.features.shape[1], test.n_classes)
    result = run_fedavg(plan, arch, seed)
    notes.append(f"seed {seed}: fedavg ran {result.rounds_run} rounds (best {result.best_round})")
    test_metrics = evaluate(result.model, test)
    return [{"client": k, "local_eval": evaluate(result.model, s.validation),
             "test_eval": test_metrics} for k, s in enumerate(splits)]


def _exchange_client(cfg: ScenarioConfig, registry: Optional[Registry], client_id: str):
    if cfg.server_url:
        return HttpClient(cfg.server_url, client_id)
    return LocalClient(registry, client_id)


def synthesize(client, schema: TabularSchema, samples_per_generator: int,
               seed: int) -> tuple[LabeledDataset, list[dict]]:
    """Pull every available generator and draw the same number of rows from each."""
    catalog = sorted(client.list_generators(), key=lambda g: g["generator_id"])
    feats, labels = [], []
    classes = schema.label.classes
    for j, entry in enumerate(catalog):
        art = client.pull(entry["generator_id"])
        raw = sample(art, samples_per_generator, seed * 100003 + j)
        # snap categorical groups to one-hot, keep numerics
        rows = encode(decode_to_domain(raw, schema), schema)
        feats.append(rows)
        labels.append(np.full(samples_per_generator, classes.index(art.class_label)))
    if not feats:
        raise DataError("no generators available in the pool")
    data = LabeledDataset(np.vstack(feats), np.concatenate(labels), classes,
                          schema.positive_index)
    return data, catalog


def run_synthetic(clients: Sequence[LabeledDataset], test: LabeledDataset, schema: TabularSchema,
                  cfg: ScenarioConfig, seed: int, report: ScenarioReport) -> list[dict]:
    requirements = ServerRequirements(max_epsilon=cfg.max_epsilon, schema=schema)
    registry = None if cfg.server_url else Registry(requirements)
    vae_cfg = cfg.vae_config(schema.encoded_width)
    handles = []
    for k, data in enumerate(clients):
        cid = f"s{seed}-client{k:02d}"
        client = _exchange_client(cfg, registry, cid)
        req = client.subscribe()
        pushed = 0
        for c, label in enumerate(schema.label.classes):
            class_rows = data.of_class(c)
            try:
                art = train_class_generator(class_rows, vae_cfg, req,
                                            seed * 1000 + k * 37 + c, cid, label, schema)
            except SgdeError as exc:
                report.failures.append({"seed": seed, "client": k, "class": label,
                                        "stage": "train", "reason": str(exc)})
                continue
            res = client.push(art)
            if not res.accepted:
                report.failures.append({"seed": seed, "client": k, "class": label,
                                        "stage": "push", "reason": res.reason})
                continue
            pushed += 1
            cert = art.certificate
            report.privacy.append({
                "seed": seed, "client": k, "class": label, "generator_id": art.generator_id,
                "epsilon": cert.epsilon, "delta": cert.delta, "optimal_order": cert.optimal_order,
                "noise_multiplier": cert.mechanism.noise_multiplier,
                "sampling_rate": cert.mechanism.sampling_rate, "steps": cert.mechanism.steps,
                "class_size": cert.dataset_class_size,
            })
        handles.append((k, client, pushed))
    train = _trainer(cfg.classifier)
    rows = []
    for k, client, pushed in handles:
        if pushed == 0 and requirements.require_push:
            report.failures.append({"seed": seed, "client": k, "class": None, "stage": "pull",
                                    "reason": "no accepted push; pool access denied"})
            continue
        synth, _ = synthesize(client, schema, cfg.samples_per_generator_per_class,
                              seed * 1000 + k)
        report.synthetic_class_counts.append(
            {"seed": seed, "client": k, "counts": synth.class_counts().tolist()})
        if not _has_two_classes(synth):
            report.failures.append({"seed": seed, "client": k, "class": None, "stage": "train",
                                    "reason": "synthetic data covers fewer than two classes"})
            continue
        model = train(synth, seed * 1000 + k)
        rows.append({"client": k, "local_eval": evaluate(model, clients[k]),
                     "test_eval": evaluate(model, test)})
    return rows


def _mean_rows(rows: list[dict]) -> dict:
    return {key: Metrics.mean([r[key] for r in rows]) for key in ("local_eval", "test_eval")}


def prepare(cfg: ScenarioConfig, seed: int):
    """Split, fit the encoding on the training part, encode, and partition."""
    schema = TabularSchema.from_dict(cfg.schema)
    raw = load_csv(cfg.dataset_path, schema)
    if len(raw) == 0:
        raise DataError(f"{cfg.dataset_path}: no usable rows")
    train_raw, test_raw = split_train_test(raw, cfg.test_split, seed)
    fitted = fit_schema(train_raw)
    train = preprocess(train_raw, fitted)
    test = preprocess(test_raw, fitted)
    clients = partition(train, cfg.n_clients, cfg.client_fraction, seed)
    return fitted, train, test, clients


def run_scenario(cfg: ScenarioConfig) -> ScenarioReport:
    report = ScenarioReport(cfg.dataset_name, cfg.config_hash(), list(cfg.seeds))
    per_scenario: dict[str, list[dict]] = {s: [] for s in cfg.scenarios}
    for seed in cfg.seeds:
        fitted, _, test, clients = prepare(cfg, seed)
        for k, c in enumerate(clients):
            if not _has_two_classes(c):
                report.warnings.append(f"seed {seed}: client {k} holds fewer than two classes")
        seed_row = {"seed": seed}
        for scen in cfg.scenarios:
            if scen == "local":
                rows = run_local(clients, test, cfg, seed, report.warnings)
            elif scen == "federated":
                rows = run_federated(clients, test, cfg, seed, report.warnings)
            else:
                rows = run_synthetic(clients, test, fitted, cfg, seed, report)
            if not rows:
                report.warnings.append(f"seed {seed}: no results for scenario {scen}")
                continue
            means = _mean_rows(rows)
            per_scenario[scen].append(means)
            seed_row[scen] = {k: m.to_dict() for k, m in means.items()}
            for r in rows:
                report.per_client.append({"seed": seed, "scenario": scen, "client": r["client"],
                                          **{k: r[k].to_dict() for k in ("local_eval", "test_eval")}})
        report.per_seed.append(seed_row)
    for scen, seeds in per_scenario.items():
        if seeds:
            report.aggregate[scen] = {key: Metrics.mean([s[key] for s in seeds])
                                      for key in ("local_eval", "test_eval")}
    return report


_COLUMNS = (("accuracy", "Accuracy"), ("f1", "F1 score"), ("auc", "AUC"))
_SCEN_TITLES = (("local", "Local"), ("federated", "Federated"), ("synthetic", "Synthetic"))


def _cell(report: ScenarioReport, scen: str, evaluation: str, metric: str) -> Optional[float]:
    m = report.aggregate.get(scen, {}).get(evaluation)
    return None if m is None else 100.0 * getattr(m, metric)


def markdown_table(reports: Sequence[ScenarioReport], evaluation: str = "local_eval") -> str:
    """Accuracy/F1/AUC x Local/Federated/Synthetic, plus an Avg. Improvement row."""
    header = ["Dataset"] + [f"{title} {s}" for _, title in _COLUMNS for _, s in _SCEN_TITLES]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in reports:
        cells = [r.dataset]
        for metric, _ in _COLUMNS:
            for scen, _ in _SCEN_TITLES:
                v = _cell(r, scen, evaluation, metric)
                cells.append("-" if v is None else f"{v:.2f}")
        lines.append("| " + " | ".join(cells) + " |")
    imp = ["Avg. Improvement"]
    for metric, _ in _COLUMNS:
        for scen, _ in _SCEN_TITLES:
            if scen == "local":
                imp.append("")
                continue
            diffs = [_cell(r, scen, evaluation, metric) - _cell(r, "local", evaluation, metric)
                     for r in reports
                     if _cell(r, scen, evaluation, metric) is not None
                     and _cell(r, "local", evaluation, metric) is not None]
            imp.append("-" if not diffs else f"{np.mean(diffs):+.2f}")
    lines.append("| " + " | ".join(imp) + " |")
    return "\n".join(lines) + "\n"


def improvement(reports: Sequence[ScenarioReport], scen: str, metric: str,
                evaluation: str = "local_eval") -> float:
    return float(np.mean([_cell(r, scen, evaluation, metric) - _cell(r, "local", evaluation, metric)
                          for r in reports]))


def emit_report(report: ScenarioReport | Sequence[ScenarioReport], fmt: str = "json",
                path: str | Path | None = None) -> str:
    reports = [report] if isinstance(report, ScenarioReport) else list(report)
    if fmt == "json":
        text = reports[0].to_json() if len(reports) == 1 else json.dumps(
            [r.to_dict() for r in reports], sort_keys=True, indent=2) + "\n"
    elif fmt in ("markdown", "markdown-table", "md"):
        text = ("Evaluated on local data splits\n\n" + markdown_table(reports, "local_eval")
                + "\nEvaluated on the test set\n\n" + markdown_table(reports, "test_eval"))
    else:
        raise ConfigurationError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text
