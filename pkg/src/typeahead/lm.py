"""Character-level GRU language model over query text.

Two stacked GRU layers with inter-layer dropout, written directly in numpy
so that training, decoding and persistence have no framework dependency.
The candidate activation is configurable; the update uses the convex
combination h' = (1 - z) * h + z * c.

Loss is the mean over queries of the summed negative log-likelihood of each
following character: the first character is conditioning only, and a final
end-of-query marker is the last target.
"""

from __future__ import annotations

import json
import struct
import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import QueryRecord
from .encoding import InputSpec, Vocabulary, encode_query, pad_batch, target_indices
from .errors import ArtifactError, TrainingDivergedError
from .time_encoding import TIME_FEATURE_DIM, time_vector

MODEL_MAGIC = b"NQACLM01"

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _global_norm(arrays) -> float:
    total = 0.0
    for a in arrays:
        total += float((a * a).sum())
    return float(np.sqrt(total))


def _snap_f32(params: dict) -> dict:
    # Storage is float32; snapping keeps the live model bit-identical to a reload.
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


def _as_record(item) -> QueryRecord:
    if isinstance(item, QueryRecord):
        return item
    return QueryRecord(user_id="", query=item, timestamp=None)


class CharGruLm(BaseEstimator):
    """Stacked-GRU next-character model with word, user and time context slots."""

    def __init__(
        self,
        hidden_size: int = 64,
        num_layers: int = 2,
        word_dim: int = 50,
        user_dim: int = 30,
        dropout: float = 0.5,
        candidate_activation: str = "relu",
        learning_rate: float = 3e-3,
        clip_norm: float = 0.5,
        epochs: int = 10,
        batch_size: int = 32,
        min_char_count: int = 5,
        max_len: int = 100,
        seed: int = 0,
    ):
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.word_dim = word_dim
        self.user_dim = user_dim
        self.dropout = dropout
        self.candidate_activation = candidate_activation
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.epochs = epochs
        self.batch_size = batch_size
        self.min_char_count = min_char_count
        self.max_len = max_len
        self.seed = seed

    # -- construction ---------------------------------------------------

    def _check_config(self) -> None:
        if self.num_layers < 1:
            raise ValueError("num_layers must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.candidate_activation not in ("relu", "tanh"):
            raise ValueError(f"unknown candidate_activation {self.candidate_activation!r}")

    def _init_params(self, rng: np.random.Generator) -> dict:
        spec = self.input_spec_
        h = self.hidden_size
        params: dict[str, np.ndarray] = {}

        def uniform(fan_in: int, shape) -> np.ndarray:
            a = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-a, a, size=shape)

        for layer in range(self.num_layers):
            d = spec.total_dim if layer == 0 else h
            for gate in ("z", "r", "c"):
                params[f"gru{layer}.W{gate}"] = uniform(d, (d, h))
                params[f"gru{layer}.U{gate}"] = uniform(h, (h, h))
                params[f"gru{layer}.b{gate}"] = np.zeros(h)
        params["out.W"] = uniform(h, (h, len(self.vocab_)))
        params["out.b"] = np.zeros(len(self.vocab_))
        return params

    def init(self, vocab: Vocabulary) -> "CharGruLm":
        """Initialize parameters for a given vocabulary without training."""
        self._check_config()
        self.vocab_ = vocab
        self.input_spec_ = InputSpec(
            vocab_size=len(vocab),
            word_dim=self.word_dim,
            user_dim=self.user_dim,
            time_dim=TIME_FEATURE_DIM,
        )
        rng = np.random.default_rng(self.seed)
        self.params_ = _snap_f32(self._init_params(rng))
        return self

    # -- forward --------------------------------------------------------

    def _activation(self, a: np.ndarray) -> np.ndarray:
        if self.candidate_activation == "relu":
            return np.maximum(a, 0.0)
        return np.tanh(a)

    def _forward(self, x: np.ndarray, train: bool = False, dropout_rng=None):
        """Run the full stack over a padded batch.

        Returns log-probabilities (batch, steps, vocab) and the caches needed
        for backpropagation.
        """
        p = self.params_
        batch, steps, _ = x.shape
        h_size = self.hidden_size
        keep = 1.0 - self.dropout
        use_dropout = train and self.dropout > 0.0
        if use_dropout and dropout_rng is None:
            raise ValueError("dropout_rng required for a training-mode forward pass")

        layer_caches = []
        layer_input = x
        for layer in range(self.num_layers):
            wz, uz, bz = p[f"gru{layer}.Wz"], p[f"gru{layer}.Uz"], p[f"gru{layer}.bz"]
            wr, ur, br = p[f"gru{layer}.Wr"], p[f"gru{layer}.Ur"], p[f"gru{layer}.br"]
            wc, uc, bc = p[f"gru{layer}.Wc"], p[f"gru{layer}.Uc"], p[f"gru{layer}.bc"]
            # Input-to-gate products for all steps at once; recurrence stays sequential.
            xz = layer_input @ wz + bz
            xr = layer_input @ wr + br
            xc = layer_input @ wc + bc
            h_full = np.zeros((batch, steps + 1, h_size))
            z_all = np.empty((batch, steps, h_size))
            r_all = np.empty((batch, steps, h_size))
            a_all = np.empty((batch, steps, h_size))
            c_all = np.empty((batch, steps, h_size))
            for t in range(steps):
                h_prev = h_full[:, t]
                z = _sigmoid(xz[:, t] + h_prev @ uz)
                r = _sigmoid(xr[:, t] + h_prev @ ur)
                a = xc[:, t] + (r * h_prev) @ uc
                c = self._activation(a)
                h_full[:, t + 1] = (1.0 - z) * h_prev + z * c
                z_all[:, t] = z
                r_all[:, t] = r
                a_all[:, t] = a
                c_all[:, t] = c
            out = h_full[:, 1:]
            if use_dropout:
                mask = (dropout_rng.random(out.shape) < keep) / keep
                out = out * mask
            else:
                mask = None
            layer_caches.append(
                {"x": layer_input, "h": h_full, "z": z_all, "r": r_all,
                 "a": a_all, "c": c_all, "mask": mask}
            )
            layer_input = out

        logits = layer_input @ p["out.W"] + p["out.b"]
        logp = _log_softmax(logits)
        cache = {"layers": layer_caches, "top": layer_input}
        return logp, cache

    def log_proba(self, x: np.ndarray) -> np.ndarray:
        """Inference-mode log-probabilities for a padded batch (batch, steps, vocab)."""
        check_is_fitted(self, "params_")
        logp, _ = self._forward(x, train=False)
        return logp

    def forward(self, x: np.ndarray, train: bool = False, dropout_rng=None) -> np.ndarray:
        """Per-step probability distributions (batch, steps, vocab)."""
        check_is_fitted(self, "params_")
        logp, _ = self._forward(x, train=train, dropout_rng=dropout_rng)
        return np.exp(logp)

    # -- loss and gradients ----------------------------------------------

    @staticmethod
    def _nll(logp: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
        batch, steps, _ = logp.shape
        rows = np.arange(batch)[:, None], np.arange(steps)[None, :], targets
        return float(-(logp[rows] * mask).sum())

    def loss(self, x: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
        """Mean per-query summed negative log-likelihood of a padded batch."""
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        logp = self.log_proba(x)
        return self._nll(logp, targets, mask) / x.shape[0]

    def loss_and_gradients(
        self, x, targets, mask, train=False, dropout_rng=None, return_input_grads=False
    ):
        p = self.params_
        batch, steps, _ = x.shape
        if batch == 0:
            raise ValueError("empty batch")
        logp, cache = self._forward(x, train=train, dropout_rng=dropout_rng)
        loss = self._nll(logp, targets, mask) / batch

        probs = np.exp(logp)
        rows = np.arange(batch)[:, None], np.arange(steps)[None, :], targets
        d_logits = probs * mask[:, :, None]
        d_logits[rows] -= mask
        d_logits /= batch

        grads = {k: np.zeros_like(v) for k, v in p.items()}
        top = cache["top"]
        flat_h = top.reshape(-1, self.hidden_size)
        flat_d = d_logits.reshape(-1, len(self.vocab_))
        grads["out.W"] = flat_h.T @ flat_d
        grads["out.b"] = flat_d.sum(axis=0)
        d_out = d_logits @ p["out.W"].T

        for layer in reversed(range(self.num_layers)):
            lc = cache["layers"][layer]
            if lc["mask"] is not None:
                d_out = d_out * lc["mask"]
            d_out = self._backward_layer(layer, lc, d_out, grads)
        if return_input_grads:
            return loss, grads, d_out
        return loss, grads

    def _backward_layer(self, layer: int, lc: dict, d_out: np.ndarray, grads: dict):
        """Backpropagate one GRU layer through time; returns gradient w.r.t. its input."""
        p = self.params_
        uz, ur, uc = p[f"gru{layer}.Uz"], p[f"gru{layer}.Ur"], p[f"gru{layer}.Uc"]
        wz, wr, wc = p[f"gru{layer}.Wz"], p[f"gru{layer}.Wr"], p[f"gru{layer}.Wc"]
        x, h_full = lc["x"], lc["h"]
        z_all, r_all, a_all, c_all = lc["z"], lc["r"], lc["a"], lc["c"]
        steps = x.shape[1]
        d_x = np.zeros_like(x)
        d_h_next = np.zeros((x.shape[0], self.hidden_size))

        g_wz = grads[f"gru{layer}.Wz"]; g_uz = grads[f"gru{layer}.Uz"]; g_bz = grads[f"gru{layer}.bz"]
        g_wr = grads[f"gru{layer}.Wr"]; g_ur = grads[f"gru{layer}.Ur"]; g_br = grads[f"gru{layer}.br"]
        g_wc = grads[f"gru{layer}.Wc"]; g_uc = grads[f"gru{layer}.Uc"]; g_bc = grads[f"gru{layer}.bc"]

        for t in reversed(range(steps)):
            d_h = d_out[:, t] + d_h_next
            h_prev = h_full[:, t]
            z, r, a, c = z_all[:, t], r_all[:, t], a_all[:, t], c_all[:, t]
            x_t = x[:, t]

            d_z = d_h * (c - h_prev)
            d_c = d_h * z
            d_h_prev = d_h * (1.0 - z)

            if self.candidate_activation == "relu":
                d_a = d_c * (a > 0.0)
            else:
                d_a = d_c * (1.0 - c * c)
            rh = r * h_prev
            g_wc += x_t.T @ d_a
            g_uc += rh.T @ d_a
            g_bc += d_a.sum(axis=0)
            d_rh = d_a @ uc.T
            d_r = d_rh * h_prev
            d_h_prev += d_rh * r
            d_x_t = d_a @ wc.T

            d_z_pre = d_z * z * (1.0 - z)
            g_wz += x_t.T @ d_z_pre
            g_uz += h_prev.T @ d_z_pre
            g_bz += d_z_pre.sum(axis=0)
            d_x_t += d_z_pre @ wz.T
            d_h_prev += d_z_pre @ uz.T

            d_r_pre = d_r * r * (1.0 - r)
            g_wr += x_t.T @ d_r_pre
            g_ur += h_prev.T @ d_r_pre
            g_br += d_r_pre.sum(axis=0)
            d_x_t += d_r_pre @ wr.T
            d_h_prev += d_r_pre @ ur.T

            d_x[:, t] = d_x_t
            d_h_next = d_h_prev
        return d_x

    # -- stepwise interface for decoding ---------------------------------

    def initial_states(self, batch: int = 1) -> list[np.ndarray]:
        return [np.zeros((batch, self.hidden_size)) for _ in range(self.num_layers)]

    def advance(self, x: np.ndarray, states: list[np.ndarray]):
        """One inference step.

        x: (batch, input_dim) rows as produced by encode_query.
        Returns (log-probabilities (batch, vocab), new states).
        """
        check_is_fitted(self, "params_")
        p = self.params_
        new_states = []
        layer_input = x
        for layer in range(self.num_layers):
            h_prev = states[layer]
            z = _sigmoid(layer_input @ p[f"gru{layer}.Wz"] + h_prev @ p[f"gru{layer}.Uz"] + p[f"gru{layer}.bz"])
            r = _sigmoid(layer_input @ p[f"gru{layer}.Wr"] + h_prev @ p[f"gru{layer}.Ur"] + p[f"gru{layer}.br"])
            a = layer_input @ p[f"gru{layer}.Wc"] + (r * h_prev) @ p[f"gru{layer}.Uc"] + p[f"gru{layer}.bc"]
            c = self._activation(a)
            h = (1.0 - z) * h_prev + z * c
            new_states.append(h)
            layer_input = h
        logits = layer_input @ p["out.W"] + p["out.b"]
        return _log_softmax(logits), new_states

    # -- training ---------------------------------------------------------

    def _encode_record(self, record: QueryRecord, word_table, user_vectors):
        user_vec = None
        if user_vectors is not None and record.user_id:
            vec = user_vectors[record.user_id]
            if np.any(vec):
                user_vec = vec
        return encode_query(
            record.query,
            self.vocab_,
            self.input_spec_,
            word_table=word_table,
            user_vec=user_vec,
            time_vec=time_vector(record.timestamp),
        )

    def _batch_arrays(self, records, word_table, user_vectors):
        encoded = [self._encode_record(r, word_table, user_vectors) for r in records]
        targets = [target_indices(r.query, self.vocab_) for r in records]
        return pad_batch(encoded, targets, pad_target=self.vocab_.pad_index)

    def dataset_loss(self, records, word_table=None, user_vectors=None) -> float:
        """Inference-mode loss: mean per-query summed NLL over all records."""
        check_is_fitted(self, "params_")
        records = [_as_record(r) for r in records]
        total = 0.0
        for start in range(0, len(records), self.batch_size):
            chunk = records[start : start + self.batch_size]
            x, y, mask = self._batch_arrays(chunk, word_table, user_vectors)
            logp, _ = self._forward(x, train=False)
            total += self._nll(logp, y, mask)
        return total / len(records)

    def fit(
        self,
        records,
        word_table=None,
        user_vectors=None,
        validation=None,
        metrics_path=None,
    ) -> "CharGruLm":
        """Train with Adam.

        Both the raw gradient and the applied update are capped at clip_norm
        in global norm, so no single step can move the parameters further
        than clip_norm even after Adam rescaling.
        """
        self._check_config()
        records = [_as_record(r) for r in records]
        records = [r for r in records if 0 < len(r.query) <= self.max_len]
        if not records:
            raise ValueError("no usable training records")
        if validation is not None:
            validation = [_as_record(r) for r in validation]

        self.vocab_ = Vocabulary.from_queries(
            (r.query for r in records), min_char_count=self.min_char_count
        )
        self.input_spec_ = InputSpec(
            vocab_size=len(self.vocab_),
            word_dim=self.word_dim,
            user_dim=self.user_dim,
            time_dim=TIME_FEATURE_DIM,
        )
        rng = np.random.default_rng(self.seed)
        self.params_ = self._init_params(rng)

        adam_m = {k: np.zeros_like(v) for k, v in self.params_.items()}
        adam_v = {k: np.zeros_like(v) for k, v in self.params_.items()}
        adam_t = 0
        names = sorted(self.params_)

        self.loss_history_ = []
        self.update_norms_ = []
        metrics_file = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
        try:
            for epoch in range(1, self.epochs + 1):
                started = time.perf_counter()
                order = rng.permutation(len(records))
                total_nll = 0.0
                total_chars = 0
                for start in range(0, len(order), self.batch_size):
                    chunk = [records[i] for i in order[start : start + self.batch_size]]
                    x, y, mask = self._batch_arrays(chunk, word_table, user_vectors)
                    loss, grads = self.loss_and_gradients(
                        x, y, mask, train=True, dropout_rng=rng
                    )
                    if not np.isfinite(loss):
                        raise TrainingDivergedError(epoch)
                    total_nll += loss * len(chunk)
                    total_chars += int(mask.sum())

                    g_norm = _global_norm(grads.values())
                    if g_norm > self.clip_norm:
                        scale = self.clip_norm / g_norm
                        for k in names:
                            grads[k] *= scale
                    adam_t += 1
                    steps = {}
                    bias1 = 1.0 - _ADAM_BETA1**adam_t
                    bias2 = 1.0 - _ADAM_BETA2**adam_t
                    for k in names:
                        adam_m[k] = _ADAM_BETA1 * adam_m[k] + (1.0 - _ADAM_BETA1) * grads[k]
                        adam_v[k] = _ADAM_BETA2 * adam_v[k] + (1.0 - _ADAM_BETA2) * grads[k] ** 2
                        steps[k] = (
                            self.learning_rate
                            * (adam_m[k] / bias1)
                            / (np.sqrt(adam_v[k] / bias2) + _ADAM_EPS)
                        )
                    s_norm = _global_norm(steps.values())
                    if s_norm > self.clip_norm:
                        scale = self.clip_norm / s_norm
                        for k in names:
                            steps[k] *= scale
                        s_norm = self.clip_norm
                    self.update_norms_.append(s_norm)
                    for k in names:
                        self.params_[k] -= steps[k]

                train_loss = total_nll / len(records)
                val_loss = None
                if validation:
                    val_loss = self.dataset_loss(validation, word_table, user_vectors)
                entry = {
                    "epoch": epoch,
                    "train_loss": train_loss,
                    "train_loss_per_char": total_nll / max(total_chars, 1),
                    "val_loss": val_loss,
                    "wall_seconds": time.perf_counter() - started,
                }
                self.loss_history_.append(entry)
                if metrics_file:
                    metrics_file.write(json.dumps(entry) + "\n")
                    metrics_file.flush()
        finally:
            if metrics_file:
                metrics_file.close()
        self.params_ = _snap_f32(self.params_)
        return self

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        header = {
            "hidden_size": self.hidden_size,
            "num_layers": self.num_layers,
            "word_dim": self.word_dim,
            "user_dim": self.user_dim,
            "dropout": self.dropout,
            "candidate_activation": self.candidate_activation,
            "min_char_count": self.min_char_count,
            "max_len": self.max_len,
            "vocab": self.vocab_.to_dict(),
        }
        blob = json.dumps(header).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", len(self.params_)))
            for name in sorted(self.params_):
                tensor = self.params_[name].astype(np.float32)
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<B", tensor.ndim))
                for dim in tensor.shape:
                    fh.write(struct.pack("<I", dim))
                fh.write(tensor.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "CharGruLm":
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise ArtifactError(f"cannot read model file {path}: {exc}") from exc
        if data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
            raise ArtifactError(
                f"{path}: not a model file or unsupported version "
                f"(expected magic {MODEL_MAGIC!r})"
            )
        offset = len(MODEL_MAGIC)
        try:
            (header_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            header = json.loads(data[offset : offset + header_len].decode("utf-8"))
            offset += header_len
            (n_tensors,) = struct.unpack_from("<I", data, offset)
            offset += 4
            params = {}
            for _ in range(n_tensors):
                (name_len,) = struct.unpack_from("<H", data, offset)
                offset += 2
                name = data[offset : offset + name_len].decode("utf-8")
                offset += name_len
                (ndim,) = struct.unpack_from("<B", data, offset)
                offset += 1
                shape = struct.unpack_from(f"<{ndim}I", data, offset)
                offset += 4 * ndim
                count = int(np.prod(shape)) if ndim else 1
                end = offset + 4 * count
                if end > len(data):
                    raise ArtifactError(f"{path}: truncated tensor data for {name!r}")
                tensor = np.frombuffer(data[offset:end], dtype="<f4").reshape(shape)
                offset = end
                params[name] = tensor.astype(np.float64)
        except (struct.error, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ArtifactError(f"{path}: corrupt model file: {exc}") from exc
        if offset != len(data):
            raise ArtifactError(f"{path}: {len(data) - offset} trailing bytes")

        model = cls(
            hidden_size=header["hidden_size"],
            num_layers=header["num_layers"],
            word_dim=header["word_dim"],
            user_dim=header["user_dim"],
            dropout=header["dropout"],
            candidate_activation=header["candidate_activation"],
            min_char_count=header.get("min_char_count", 5),
            max_len=header.get("max_len", 100),
        )
        model.vocab_ = Vocabulary.from_dict(header["vocab"])
        model.input_spec_ = InputSpec(
            vocab_size=len(model.vocab_),
            word_dim=model.word_dim,
            user_dim=model.user_dim,
            time_dim=TIME_FEATURE_DIM,
        )
        expected = {
            name: arr.shape
            for name, arr in model._init_params(np.random.default_rng(0)).items()
        }
        if set(expected) != set(params):
            raise ArtifactError(f"{path}: tensor names do not match the declared layout")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ArtifactError(
                    f"{path}: tensor {name!r} has shape {params[name].shape}, "
                    f"expected {shape}"
                )
        model.params_ = params
        return model
