"""Per-class beta-VAE generators and their decoder-only artifacts."""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import accountant
from .accountant import PrivacyCertificate, make_certificate
from .dp_optim import (DpStepLog, DpTrainingConfig, dp_train, rng_stream, sampling_rate,
                       steps_per_epoch)
from .errors import ConfigurationError, DataError, GateError, IntegrityError
from .nn import NetworkArch, backprop, forward, glorot_uniform, sigmoid
from .requirements import ServerRequirements
from .schema import TabularSchema

FORMAT_VERSION = 1
ENCODER_HIDDEN = (64, 32)
DECODER_HIDDEN = (64, 128)


@dataclass(frozen=True)
class LatentSpec:
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("latent dim must be >= 1")


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int
    beta: float
    encoder_arch: NetworkArch
    decoder_arch: NetworkArch
    dp: DpTrainingConfig = field(default_factory=DpTrainingConfig)
    min_class_size: int = 10

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigurationError("beta must be positive")
        if self.encoder_arch.output_width != 2 * self.latent_dim:
            raise ConfigurationError("encoder must output mean and log-variance heads")
        if self.decoder_arch.input_width != self.latent_dim:
            raise ConfigurationError("decoder input width must equal latent_dim")
        if self.encoder_arch.input_width != self.decoder_arch.output_width:
            raise ConfigurationError("encoder input and decoder output widths differ")
        if self.decoder_arch.layers[-1].activation != "sigmoid":
            raise ConfigurationError("decoder must end in a sigmoid layer")

    @classmethod
    def tabular(cls, data_width: int, latent_dim: int = 8, beta: float = 1.0,
                dp: DpTrainingConfig | None = None, slope: float = 0.2,
                min_class_size: int = 10) -> "VaeConfig":
        """Dense(64)-Dense(32) encoder and Dense(64)-Dense(128) decoder with LeakyReLU."""
        enc = NetworkArch.dense((data_width, *ENCODER_HIDDEN, 2 * latent_dim),
                                output="linear", slope=slope)
        dec = NetworkArch.dense((latent_dim, *DECODER_HIDDEN, data_width),
                                output="sigmoid", slope=slope)
        return cls(latent_dim, beta, enc, dec, dp or DpTrainingConfig(), min_class_size)

    @property
    def data_width(self) -> int:
        return self.decoder_arch.output_width

    @property
    def param_count(self) -> int:
        return self.encoder_arch.param_count + self.decoder_arch.param_count

    def split(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = self.encoder_arch.param_count
        return params[:k], params[k:]

    def init_params(self, seed: int) -> np.ndarray:
        rng = rng_stream(seed, "init")
        return np.concatenate([glorot_uniform(self.encoder_arch, rng),
                               glorot_uniform(self.decoder_arch, rng)])


@dataclass(frozen=True)
class VaeLoss:
    total: float
    reconstruction: float
    kl: float
    per_example_grads: np.ndarray

    def __iter__(self):
        return iter((self.total, self.reconstruction, self.kl, self.per_example_grads))


def vae_loss(config: VaeConfig, params: np.ndarray, batch, rng=None,
             eta: np.ndarray | None = None) -> VaeLoss:
    """beta-VAE loss with one reparameterised latent sample per example.

    Reconstruction is binary cross-entropy summed over features; the KL term
    is taken against a standard normal prior. Both are batch means. Pass
    ``eta`` to fix the reparameterisation noise.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise DataError("VAE inputs must be encoded into [0, 1]")
    enc_p, dec_p = config.split(params)
    d = config.latent_dim
    n = x.shape[0]
    if eta is None:
        eta = (rng if rng is not None else np.random.default_rng(0)).standard_normal((n, d))

    efp = forward(config.encoder_arch, enc_p, x)
    mu, logvar = efp.output[:, :d], efp.output[:, d:]
    std = np.exp(0.5 * logvar)
    z = mu + std * eta
    dfp = forward(config.decoder_arch, dec_p, z)
    logits = dfp.pre[-1]

    # BCE from logits: softplus(l) - x*l
    rec_i = np.sum(np.logaddexp(0.0, logits) - x * logits, axis=1)
    kl_i = 0.5 * np.sum(mu ** 2 + np.exp(logvar) - 1.0 - logvar, axis=1)

    dec_grads, dz = backprop(config.decoder_arch, dec_p, dfp, sigmoid(logits) - x, wrt="logits")
    beta = config.beta
    dmu = dz + beta * mu
    dlogvar = dz * eta * 0.5 * std + beta * 0.5 * (np.exp(logvar) - 1.0)
    enc_grads, _ = backprop(config.encoder_arch, enc_p, efp, np.hstack([dmu, dlogvar]))

    rec, kl = float(rec_i.mean()), float(kl_i.mean())
    return VaeLoss(rec + beta * kl, rec, kl, np.hstack([enc_grads, dec_grads]))


def _vae_loss_spec(config, params, batch, rng):
    res = vae_loss(config, params, batch, rng)
    return res.total, res.per_example_grads


def train_vae(class_data, config: VaeConfig, seed: int | None = None
              ) -> tuple[np.ndarray, DpStepLog]:
    """Train encoder and decoder jointly with DP-Adam; returns all parameters."""
    dp = config.dp if seed is None else replace(config.dp, seed=seed)
    params = config.init_params(dp.seed)
    return dp_train(config, params, class_data, _vae_loss_spec, dp)


def planned_mechanism(n: int, dp: DpTrainingConfig) -> tuple[float, int]:
    """Sampling rate and step count a DP run over ``n`` examples will take."""
    return sampling_rate(n, dp.batch_size), dp.epochs * steps_per_epoch(n, dp.batch_size)


@dataclass(frozen=True)
class GeneratorArtifact:
    generator_id: str
    client_id: str
    class_label: str
    decoder_arch: NetworkArch
    weights: np.ndarray  # float32, decoder layout order
    latent: LatentSpec
    schema: TabularSchema
    certificate: PrivacyCertificate
    checksum: str = ""

    def content(self) -> dict:
        """Canonical JSON document without the checksum field."""
        w = np.ascontiguousarray(self.weights, dtype="<f4")
        return {
            "format_version": FORMAT_VERSION,
            "generator_id": self.generator_id,
            "client_id": self.client_id,
            "class_label": self.class_label,
            "decoder_arch": self.decoder_arch.to_list(),
            "latent": {"dim": self.latent.dim},
            "schema": self.schema.to_dict(),
            "certificate": self.certificate.to_dict(),
            "weights_b64": base64.b64encode(w.tobytes()).decode("ascii"),
        }

    def compute_checksum(self) -> str:
        return hashlib.sha256(_canonical(self.content())).hexdigest()

    def verify(self) -> None:
        if self.checksum != self.compute_checksum():
            raise IntegrityError(f"artifact {self.generator_id}: checksum mismatch")

    def summary(self) -> dict:
        return {
            "generator_id": self.generator_id,
            "client_id": self.client_id,
            "class_label": self.class_label,
            "epsilon": self.certificate.epsilon,
            "delta": self.certificate.delta,
            "arch": [l.n_out for l in self.decoder_arch.layers],
        }


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False).encode("utf-8")


def build_artifact(decoder_arch: NetworkArch, decoder_params: np.ndarray, latent_dim: int,
                   schema: TabularSchema, certificate: PrivacyCertificate,
                   client_id: str, class_label: str) -> GeneratorArtifact:
    weights = np.asarray(decoder_params, dtype="<f4")
    if weights.size != decoder_arch.param_count:
        raise IntegrityError("decoder weights do not match the decoder architecture")
    h = hashlib.sha256()
    for part in (client_id, class_label, json.dumps(certificate.to_dict(), sort_keys=True)):
        h.update(part.encode("utf-8"))
        h.update(b"\0")
    h.update(weights.tobytes())
    gid = f"g-{h.hexdigest()[:20]}"
    art = GeneratorArtifact(gid, client_id, class_label, decoder_arch, weights,
                            LatentSpec(latent_dim), schema, certificate)
    return replace(art, checksum=art.compute_checksum())


def train_class_generator(class_dataset, vae_config: VaeConfig,
                          requirement: ServerRequirements, seed: int,
                          client_id: str = "client", class_label: str = "0",
                          schema: TabularSchema | None = None,
                          delta_policy: float | None = None) -> GeneratorArtifact:
    """Train one DP beta-VAE on a single class and package its decoder.

    When the config carries no noise multiplier, one is calibrated so the
    certificate meets ``requirement.max_epsilon``.
    """
    data = np.asarray(class_dataset, dtype=np.float64)
    n = data.shape[0]
    if n < max(1, vae_config.min_class_size):
        raise DataError(f"class {class_label!r} has {n} examples; "
                        f"minimum is {vae_config.min_class_size}")
    schema = schema or requirement.schema
    if schema is None:
        raise ConfigurationError("a schema is required to build an artifact")
    dp = vae_config.dp
    q, steps = planned_mechanism(n, dp)
    delta = accountant.default_delta(n) if delta_policy is None else min(
        accountant.default_delta(n), delta_policy)
    if dp.noise_multiplier is None:
        sigma = accountant.calibrate_sigma(requirement.max_epsilon, delta, q, steps)
        dp = replace(dp, noise_multiplier=sigma)
    if not dp.noise_multiplier or math.isinf(dp.clip_norm):
        raise GateError("generators must be trained with noise and finite clipping")
    params, steplog = train_vae(data, replace(vae_config, dp=dp), seed)
    cert = make_certificate(steplog.mechanism, n, delta_policy)
    if cert.epsilon > requirement.max_epsilon:
        raise GateError(f"epsilon {cert.epsilon:.4f} exceeds the required "
                        f"{requirement.max_epsilon}")
    if requirement.min_optimal_order is not None and cert.optimal_order < requirement.min_optimal_order:
        raise GateError(f"optimal RDP order {cert.optimal_order} below "
                        f"{requirement.min_optimal_order}")
    _, dec = vae_config.split(params)
    return build_artifact(vae_config.decoder_arch, dec, vae_config.latent_dim, schema, cert,
                          client_id, class_label)


def decoder_params(artifact: GeneratorArtifact) -> np.ndarray:
    return np.asarray(artifact.weights, dtype=np.float64)


def sample(artifact: GeneratorArtifact, n: int, seed: int) -> np.ndarray:
    """Decode ``n`` standard-normal latent draws into [0, 1]-encoded rows."""
    artifact.verify()
    if n < 0:
        raise DataError("n must be >= 0")
    arch = artifact.decoder_arch
    if n == 0:
        return np.zeros((0, arch.output_width))
    z = np.random.default_rng(seed).standard_normal((n, artifact.latent.dim))
    return forward(arch, decoder_params(artifact), z).output


def serialize(artifact: GeneratorArtifact) -> bytes:
    doc = artifact.content()
    doc["checksum_sha256"] = artifact.checksum
    return _canonical(doc)


def deserialize(data: bytes) -> GeneratorArtifact:
    try:
        doc = json.loads(data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"artifact is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise IntegrityError("artifact must be a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(f"unknown artifact format version {doc.get('format_version')!r}")
    claimed = doc.pop("checksum_sha256", None)
    if claimed != hashlib.sha256(_canonical(doc)).hexdigest():
        raise IntegrityError("artifact checksum mismatch")
    try:
        arch = NetworkArch.from_list(doc["decoder_arch"])
        raw = base64.b64decode(doc["weights_b64"], validate=True)
        if len(raw) != 4 * arch.param_count:
            raise IntegrityError(
                f"weights hold {len(raw) // 4} values; architecture needs {arch.param_count}")
        weights = np.frombuffer(raw, dtype="<f4").copy()
        latent = LatentSpec(int(doc["latent"]["dim"]))
        schema = TabularSchema.from_dict(doc["schema"])
        cert = PrivacyCertificate.from_dict(doc["certificate"])
        art = GeneratorArtifact(doc["generator_id"], doc["client_id"], doc["class_label"],
                                arch, weights, latent, schema, cert, claimed)
    except IntegrityError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"malformed artifact: {exc}") from None
    if arch.input_width != latent.dim or arch.output_width != schema.encoded_width:
        raise IntegrityError("decoder widths disagree with latent dim or schema")
    return art
