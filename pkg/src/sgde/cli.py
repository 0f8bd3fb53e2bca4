"""Command line entry point: ``sgde <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 policy or gate
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .downstream import Model, evaluate, train_logreg
from .dp_optim import DpTrainingConfig
from .errors import ConfigurationError, SgdeError
from .exchange import HttpClient, Registry, RegistryServer
from .generator import VaeConfig, deserialize, serialize, train_class_generator
from .nn import NetworkArch
from .requirements import ServerRequirements
from .schema import LabeledDataset, TabularSchema, fit_schema, load_csv, preprocess

log = logging.getLogger("sgde")


def save_dataset(path, data: LabeledDataset) -> None:
    np.savez(path, features=data.features, labels=data.labels,
             class_names=np.array(data.class_names),
             positive_index=-1 if data.positive_index is None else data.positive_index)


def load_dataset(path) -> LabeledDataset:
    with np.load(path) as z:
        pos = int(z["positive_index"])
        return LabeledDataset(z["features"], z["labels"], tuple(str(c) for c in z["class_names"]),
                              None if pos < 0 else pos)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, pairs) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as JSON when possible."""
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigurationError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        node = doc
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = _parse_value(value)
    return doc


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text}")


def cmd_ingest(args) -> None:
    schema = TabularSchema.load(args.schema)
    raw = load_csv(args.csv, schema)
    train_raw, test_raw = harness.split_train_test(raw, args.test_split, args.seed)
    fitted = fit_schema(train_raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "schema.json").write_text(json.dumps(fitted.to_dict(), indent=2))
    save_dataset(out / "train.npz", preprocess(train_raw, fitted))
    save_dataset(out / "test.npz", preprocess(test_raw, fitted))
    print(json.dumps({"rows": len(raw), "train": len(train_raw), "test": len(test_raw),
                      "dropped": {k: len(v) for k, v in raw.dropped.items()}}))


def cmd_partition(args) -> None:
    data = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, part in enumerate(harness.partition(data, args.clients, args.fraction, args.seed)):
        save_dataset(out / f"client_{k:02d}.npz", part)
    print(json.dumps({"clients": args.clients, "size": int(args.fraction * len(data))}))


def _requirements(args) -> ServerRequirements:
    if args.server:
        return HttpClient(args.server, args.client_id).subscribe()
    schema = TabularSchema.load(args.schema) if args.schema else None
    return ServerRequirements(max_epsilon=args.max_epsilon, schema=schema)


def cmd_train_generators(args) -> None:
    data = load_dataset(args.data)
    req = _requirements(args)
    schema = TabularSchema.load(args.schema) if args.schema else req.schema
    if schema is None:
        raise ConfigurationError("a schema is needed (--schema or from the server)")
    dp = DpTrainingConfig.from_dict(json.loads(Path(args.dp_config).read_text())) \
        if args.dp_config else DpTrainingConfig(epochs=args.epochs, batch_size=args.batch_size)
    cfg = VaeConfig.tabular(schema.encoded_width, args.latent_dim, args.beta, dp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    for c, label in enumerate(schema.label.classes):
        rows = data.of_class(c)
        try:
            art = train_class_generator(rows, cfg, req, args.seed + c, args.client_id, label, schema)
        except SgdeError as exc:
            log.error("class %s: %s", label, exc)
            status = max(status, exc.exit_code)
            continue
        path = out / f"{art.generator_id}.json"
        path.write_bytes(serialize(art))
        print(json.dumps({"class": label, "file": str(path), "epsilon": art.certificate.epsilon}))
    if status:
        raise SystemExit(status)


def cmd_serve(args) -> None:
    schema = TabularSchema.load(args.schema) if args.schema else None
    req = ServerRequirements(max_epsilon=args.max_epsilon, require_push=args.require_push,
                             schema=schema)
    registry = Registry.restore(args.pool_dir, req) if args.pool_dir else Registry(req)
    host, _, port = args.listen.rpartition(":")
    server = RegistryServer(registry, host or "127.0.0.1", int(port))
    print(f"serving on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


def _artifact_files(paths):
    for p in map(Path, paths):
        yield from (sorted(p.glob("*.json")) if p.is_dir() else [p])


def cmd_push(args) -> None:
    client = HttpClient(args.server, args.client_id)
    client.subscribe()
    rejected = False
    for path in _artifact_files(args.artifacts):
        res = client.push(path.read_bytes())
        print(json.dumps({"file": str(path), "accepted": res.accepted,
                          "generator_id": res.generator_id, "reason": res.reason}))
        rejected |= not res.accepted
    if rejected:
        raise SystemExit(4)


def cmd_pull(args) -> None:
    client = HttpClient(args.server, args.client_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = args.ids or [g["generator_id"] for g in client.list_generators()]
    for gid in ids:
        (out / f"{gid}.json").write_bytes(client.pull_bytes(gid))
    print(json.dumps({"pulled": len(ids)}))


def cmd_synthesize(args) -> None:
    from .generator import sample
    from .schema import decode_to_domain, encode
    feats, labels = [], []
    schema = None
    for j, path in enumerate(_artifact_files(args.artifacts)):
        art = deserialize(path.read_bytes())
        schema = schema or art.schema
        rows = encode(decode_to_domain(sample(art, args.n, args.seed * 100003 + j), schema), schema)
        feats.append(rows)
        labels.append(np.full(args.n, schema.label.classes.index(art.class_label)))
    if schema is None:
        raise ConfigurationError("no artifacts given")
    save_dataset(args.out, LabeledDataset(np.vstack(feats), np.concatenate(labels),
                                          schema.label.classes, schema.positive_index))


def cmd_train(args) -> None:
    model = train_logreg(load_dataset(args.data), args.epochs, args.lr, args.seed)
    Path(args.out).write_text(json.dumps({"arch": model.arch.to_list(),
                                          "params": model.params.tolist()}))


def cmd_evaluate(args) -> None:
    doc = json.loads(Path(args.model).read_text())
    model = Model(NetworkArch.from_list(doc["arch"]), np.array(doc["params"]))
    print(json.dumps(evaluate(model, load_dataset(args.data)).to_dict()))


def cmd_run(args) -> None:
    path = Path(args.config)
    doc = apply_overrides(json.loads(path.read_text()), args.set)
    if args.seeds:
        doc["seeds"] = args.seeds
    cfg = harness.ScenarioConfig.from_dict(doc, base_dir=path.parent)
    report = harness.run_scenario(cfg)
    text = harness.emit_report(report, "json", args.out)
    if args.out is None:
        sys.stdout.write(text)


def cmd_report(args) -> None:
    reports = []
    for p in args.inputs:
        doc = json.loads(Path(p).read_text())
        reports.extend(harness.ScenarioReport.from_dict(d)
                       for d in (doc if isinstance(doc, list) else [doc]))
    text = harness.emit_report(reports, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgde", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a CSV, split train/test, fit the encoding")
    p.add_argument("--csv", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-split", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("partition", help="split an encoded dataset among clients")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clients", type=int, default=20)
    p.add_argument("--fraction", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train-generators", help="train one DP generator per class")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--client-id", required=True)
    p.add_argument("--schema")
    p.add_argument("--server")
    p.add_argument("--max-epsilon", type=float, default=1.5)
    p.add_argument("--dp-config")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_generators)

    p = sub.add_parser("serve", help="run the generator registry")
    p.add_argument("--listen", default="127.0.0.1:8750")
    p.add_argument("--pool-dir")
    p.add_argument("--max-epsilon", type=float, default=1.5)
    p.add_argument("--require-push", type=_bool, default=True)
    p.add_argument("--schema")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("push", help="upload generator artifacts")
    p.add_argument("--server", required=True)
    p.add_argument("--client-id", required=True)
    p.add_argument("artifacts", nargs="+")
    p.set_defaults(func=cmd_push)

    p = sub.add_parser("pull", help="download generator artifacts")
    p.add_argument("--server", required=True)
    p.add_argument("--client-id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("ids", nargs="*")
    p.set_defaults(func=cmd_pull)

    p = sub.add_parser("synthesize", help="sample a synthetic dataset from artifacts")
    p.add_argument("artifacts", nargs="+")
    p.add_argument("--n", type=int, default=200, help="rows per generator")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", help="fit logistic regression on an encoded dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="accuracy, F1 and AUC of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="run a full scenario from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render scenario reports")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--format", choices=("json", "markdown"), default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except SgdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
