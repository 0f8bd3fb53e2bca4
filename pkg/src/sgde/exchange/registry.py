"""Generator pool with Subscribe / Push / Pull semantics and on-disk persistence."""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .. import accountant
from ..accountant import PrivacyCertificate
from ..errors import (AuthError, DomainError, IntegrityError, NotFoundError, RequestError,
                      StartupError)
from ..generator import GeneratorArtifact, deserialize, serialize
from ..requirements import ServerRequirements

log = logging.getLogger(__name__)

_CLIENT_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.:-]{0,127}$")
INDEX_FILE = "index.json"
ARTIFACT_DIR = "artifacts"


@dataclass
class ClientRecord:
    client_id: str
    subscribed: bool = True
    accepted_push_count: int = 0


@dataclass(frozen=True)
class PoolEntry:
    artifact: GeneratorArtifact
    blob: bytes
    received_at: float
    status: str = "accepted"


@dataclass(frozen=True)
class PushResult:
    accepted: bool
    generator_id: str
    reason: str = ""
    code: str = "accepted"
    recomputed_epsilon: Optional[float] = None

    def __bool__(self) -> bool:
        return self.accepted


def check_client_id(client_id) -> str:
    if not isinstance(client_id, str) or not _CLIENT_ID.match(client_id):
        raise RequestError(f"malformed client id {client_id!r}")
    return client_id


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class Registry:
    """Server-side state of one federation.

    Reads take a snapshot under the lock, so a catalog never mixes pre- and
    post-push pool states. Writes are serialised by the same lock.
    """

    def __init__(self, requirements: ServerRequirements | None = None,
                 pool_dir: str | os.PathLike | None = None, clock=time.time):
        self.requirements = requirements or ServerRequirements()
        self.pool_dir = Path(pool_dir) if pool_dir is not None else None
        self.clients: dict[str, ClientRecord] = {}
        self.pool: dict[str, PoolEntry] = {}
        self.quarantined: list[str] = []
        self._lock = threading.RLock()
        self._clock = clock

    # -- protocol -----------------------------------------------------------

    def subscribe(self, client_id: str) -> ServerRequirements:
        check_client_id(client_id)
        with self._lock:
            if client_id not in self.clients:
                self.clients[client_id] = ClientRecord(client_id)
                self._persist_index()
            return self.requirements

    def _client(self, client_id: str) -> ClientRecord:
        check_client_id(client_id)
        rec = self.clients.get(client_id)
        if rec is None or not rec.subscribed:
            raise AuthError(f"client {client_id!r} is not subscribed")
        return rec

    def _authorize_pull(self, client_id: str) -> None:
        rec = self._client(client_id)
        if self.requirements.require_push and rec.accepted_push_count < 1:
            raise AuthError(f"client {client_id!r} must push an accepted generator before pulling")

    def push(self, client_id: str, artifact: GeneratorArtifact | bytes) -> PushResult:
        """Verify and store a generator; policy failures are returned, not raised."""
        with self._lock:
            self._client(client_id)
        if isinstance(artifact, (bytes, bytearray)):
            try:
                art = deserialize(bytes(artifact))
            except IntegrityError as exc:
                return PushResult(False, "", str(exc), "integrity_reject")
        else:
            art = artifact
            try:
                art.verify()
            except IntegrityError as exc:
                return PushResult(False, art.generator_id, str(exc), "integrity_reject")
        blob = serialize(art)
        if art.client_id != client_id:
            return PushResult(False, art.generator_id,
                              f"artifact belongs to {art.client_id!r}", "policy_reject")
        verdict = self.check_policy(art)
        if verdict is not None:
            return verdict
        with self._lock:
            if art.generator_id in self.pool:
                return PushResult(False, art.generator_id, "duplicate generator id", "duplicate")
            self.pool[art.generator_id] = PoolEntry(art, blob, self._clock())
            self.clients[client_id].accepted_push_count += 1
            self._persist_entry(art.generator_id)
            self._persist_index()
        return PushResult(True, art.generator_id, recomputed_epsilon=art.certificate.epsilon)

    def check_policy(self, art: GeneratorArtifact) -> Optional[PushResult]:
        """Re-derive the privacy claim and check every server requirement."""
        req = self.requirements
        gid = art.generator_id
        cert: PrivacyCertificate = art.certificate
        try:
            eps, curve = accountant.recompute_epsilon(cert)
        except DomainError as exc:
            return PushResult(False, gid, f"invalid certificate: {exc}", "policy_reject")
        if not math.isclose(eps, cert.epsilon, rel_tol=1e-9, abs_tol=1e-9):
            return PushResult(False, gid,
                              f"certificate inconsistent: claims epsilon={cert.epsilon:.6g}, "
                              f"mechanism yields {eps:.6g}", "policy_reject", eps)
        for a, v in curve.points.items():
            if not math.isclose(v, cert.rdp.points[a], rel_tol=1e-9, abs_tol=1e-12):
                return PushResult(False, gid, f"certificate RDP curve inconsistent at order {a}",
                                  "policy_reject", eps)
        if eps > req.max_epsilon:
            return PushResult(False, gid, f"epsilon {eps:.6g} exceeds {req.max_epsilon}",
                              "policy_reject", eps)
        if cert.delta > accountant.default_delta(cert.dataset_class_size):
            return PushResult(False, gid, f"delta {cert.delta:.3g} violates {req.delta_rule}",
                              "policy_reject", eps)
        if req.min_optimal_order is not None and cert.optimal_order < req.min_optimal_order:
            return PushResult(False, gid, f"optimal order {cert.optimal_order} below "
                              f"{req.min_optimal_order}", "policy_reject", eps)
        arch = art.decoder_arch
        if req.allowed_arch is not None:
            c = req.allowed_arch
            if c.max_layers is not None and len(arch.layers) > c.max_layers:
                return PushResult(False, gid, "decoder has too many layers", "policy_reject", eps)
            if c.max_width is not None and max(l.n_out for l in arch.layers) > c.max_width:
                return PushResult(False, gid, "decoder layer too wide", "policy_reject", eps)
        if req.schema is not None and art.schema.to_dict() != req.schema.to_dict():
            return PushResult(False, gid, "artifact schema differs from the federation schema",
                              "policy_reject", eps)
        return None

    def list_generators(self, client_id: str) -> list[dict]:
        with self._lock:
            self._authorize_pull(client_id)
            entries = [self.pool[gid] for gid in sorted(self.pool)]
        return [e.artifact.summary() for e in entries]

    def pull_bytes(self, client_id: str, generator_id: str) -> bytes:
        with self._lock:
            self._authorize_pull(client_id)
            entry = self.pool.get(generator_id)
        if entry is None:
            raise NotFoundError(f"unknown generator {generator_id!r}")
        # integrity is re-checked at serve time
        deserialize(entry.blob)
        return entry.blob

    def pull(self, client_id: str, generator_id: str) -> GeneratorArtifact:
        return deserialize(self.pull_bytes(client_id, generator_id))

    # -- persistence --------------------------------------------------------

    def _persist_entry(self, generator_id: str) -> None:
        if self.pool_dir is None:
            return
        d = self.pool_dir / ARTIFACT_DIR
        d.mkdir(parents=True, exist_ok=True)
        _atomic_write(d / f"{generator_id}.json", self.pool[generator_id].blob)

    def index_document(self) -> dict:
        with self._lock:
            return {
                "requirements": self.requirements.to_dict(),
                "clients": [
                    {"client_id": c.client_id, "subscribed": c.subscribed,
                     "accepted_push_count": c.accepted_push_count}
                    for c in sorted(self.clients.values(), key=lambda c: c.client_id)
                ],
                "entries": [
                    {"generator_id": gid, "file": f"{ARTIFACT_DIR}/{gid}.json",
                     "received_at": e.received_at,
                     "checksum_sha256": e.artifact.checksum}
                    for gid, e in sorted(self.pool.items())
                ],
            }

    def _persist_index(self) -> None:
        if self.pool_dir is None:
            return
        self.pool_dir.mkdir(parents=True, exist_ok=True)
        _atomic_write(self.pool_dir / INDEX_FILE,
                      json.dumps(self.index_document(), indent=1, sort_keys=True).encode())

    def persist(self, pool_dir=None) -> None:
        with self._lock:
            if pool_dir is not None:
                self.pool_dir = Path(pool_dir)
            for gid in self.pool:
                self._persist_entry(gid)
            self._persist_index()

    @classmethod
    def restore(cls, pool_dir, requirements: ServerRequirements | None = None) -> "Registry":
        """Load a persisted pool; tampered artifact files are quarantined.

        Persisted requirements are used unless ``requirements`` overrides them.
        """
        pool_dir = Path(pool_dir)
        index_path = pool_dir / INDEX_FILE
        if not index_path.exists():
            return cls(requirements, pool_dir)
        try:
            doc = json.loads(index_path.read_text())
            stored_req = ServerRequirements.from_dict(doc["requirements"])
            clients = [ClientRecord(c["client_id"], bool(c["subscribed"]),
                                    int(c["accepted_push_count"])) for c in doc["clients"]]
            entries = doc["entries"]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise StartupError(f"corrupt pool index {index_path}: {exc}") from None
        reg = cls(requirements or stored_req, pool_dir)
        reg.clients = {c.client_id: c for c in clients}
        bad = []
        for i, e in enumerate(entries):
            if not isinstance(e, dict) or not {"generator_id", "file", "received_at"} <= set(e):
                bad.append(f"entry {i}: {e!r}")
                continue
            try:
                blob = (pool_dir / e["file"]).read_bytes()
                art = deserialize(blob)
                if art.generator_id != e["generator_id"] or (
                        e.get("checksum_sha256") not in (None, art.checksum)):
                    raise IntegrityError("artifact does not match its index entry")
            except (OSError, IntegrityError) as exc:
                log.warning("quarantining %s: %s", e["generator_id"], exc)
                reg.quarantined.append(e["generator_id"])
                continue
            reg.pool[art.generator_id] = PoolEntry(art, blob, float(e["received_at"]))
        if bad:
            raise StartupError("corrupt pool index entries: " + "; ".join(bad))
        return reg
