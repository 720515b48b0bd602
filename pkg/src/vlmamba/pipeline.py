"""End-to-end toy vision-language model: byte tokenizer, patch encoder,
connector, Mamba LM and greedy decoding.

The LM input is the connector output (image tokens) first, then ``BOS``
followed by the query bytes.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mamba_block import MambaLayerWeights, MambaLmWeights, init_mamba_lm, mamba_lm_forward
from .mmc import MlpWeights, MmcConfig, MmcWeights, connector_forward, init_connector
from .tensor_core import Prng, TensorError, load_vlmf, save_vlmf
from .vision import PatchGrid, patchify_encode
from .vision_scan import MECHANISMS, VssWeights

BOS, EOS, IMG = 256, 257, 258
SPECIALS = (BOS, EOS, IMG)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    patch: int = 4
    d_vision: int = 64
    d_model: int = 64
    n_layers: int = 4
    d_state: int = 16
    expand: int = 2
    conv_width: int = 4
    vocab: int = 259
    mmc_variant: str = "VSS_L2"
    mmc_mechanism: str = "CSM"
    mmc_hidden: int | None = None
    vss_shared: bool = True
    b_discretization: str = "zoh_exact"
    scan_method: str = "sequential"
    dtype: str = "float32"
    seed: int = 0

    # JSON key -> field; nested "mmc" keys are flattened with a dot
    _ALIASES = {"mmc.variant": "mmc_variant", "mmc.mechanism": "mmc_mechanism",
                "mmc.hidden": "mmc_hidden", "mmc.shared_vss": "vss_shared"}

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError("n_layers must be at least 1")
        if self.vocab < 259:
            raise ConfigError("vocab must be at least 259 (256 bytes + BOS, EOS, IMG)")
        if self.image_size % self.patch:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch {self.patch}")
        if self.b_discretization not in ("zoh_exact", "euler"):
            raise ConfigError(f"unknown b_discretization {self.b_discretization!r}")
        if self.scan_method not in ("sequential", "parallel"):
            raise ConfigError(f"unknown scan_method {self.scan_method!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.mmc_mechanism not in MECHANISMS:
            raise ConfigError(f"unknown mmc.mechanism {self.mmc_mechanism!r}")
        try:
            self.mmc_config()
        except TensorError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        flat = {}
        for key, value in data.items():
            if key == "mmc" and isinstance(value, dict):
                for sub, v in value.items():
                    flat[f"mmc.{sub}"] = v
            else:
                flat[key] = value
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in flat.items():
            name = cls._ALIASES.get(key, key)
            if name not in names:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[name] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        inverse = {v: k for k, v in self._ALIASES.items()}
        mmc = {}
        for name in list(out):
            if name in inverse:
                mmc[inverse[name].split(".", 1)[1]] = out.pop(name)
        out["mmc"] = mmc
        return out

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def run_id(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def mmc_config(self) -> MmcConfig:
        return MmcConfig(self.mmc_variant, self.mmc_mechanism, self.d_vision, self.d_model,
                         self.mmc_hidden)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch


def load_config(path) -> ModelConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return ModelConfig.from_dict(data)


# --- tokenizer ---------------------------------------------------------------

@dataclass(frozen=True)
class TokenStream:
    ids: tuple[int, ...]

    def __post_init__(self):
        for t in self.ids:
            if not 0 <= t < 259:
                raise TensorError(f"token id {t} outside [0, 259)")
        if self.ids.count(IMG) > 1:
            raise TensorError("IMG token may appear at most once")

    def __len__(self):
        return len(self.ids)


def tokenize(text: str | bytes) -> TokenStream:
    """UTF-8 bytes as token ids. Undecodable bytes survive via surrogateescape."""
    raw = text if isinstance(text, bytes) else text.encode("utf-8", "surrogateescape")
    return TokenStream(tuple(raw))


def detokenize_bytes(stream) -> bytes:
    ids = stream.ids if isinstance(stream, TokenStream) else stream
    return bytes(t for t in ids if t < 256)


def detokenize(stream) -> str:
    return detokenize_bytes(stream).decode("utf-8", "surrogateescape")


# --- model -------------------------------------------------------------------

@dataclass
class VlModel:
    config: ModelConfig
    w_proj: np.ndarray  # (3*P*P, d_vision)
    connector: MmcWeights
    lm: MambaLmWeights

    def named_tensors(self) -> dict[str, np.ndarray]:
        t = {"vision.w_proj": self.w_proj}
        c = self.connector
        if c.mlp is not None:
            for k in ("w1", "b1", "w2", "b2"):
                t[f"mmc.mlp.{k}"] = getattr(c.mlp, k)
        if c.vss is not None:
            for i, layer in enumerate(c.vss.layers):
                t.update(layer.named(f"mmc.vss{i}."))
            t["mmc.norm"] = c.norm
        if c.w_lin1 is not None:
            t["mmc.w_lin1"] = c.w_lin1
            t["mmc.w_lin2"] = c.w_lin2
        t["lm.embedding"] = self.lm.embedding
        for i, (gain, layer) in enumerate(zip(self.lm.norms, self.lm.layers)):
            t[f"lm.norm{i}"] = gain
            t.update(layer.named(f"lm.layer{i}."))
        t["lm.final_norm"] = self.lm.final_norm
        return t

    @classmethod
    def from_named(cls, config: ModelConfig, t: dict[str, np.ndarray]) -> "VlModel":
        mcfg = config.mmc_config()
        mlp = vss = norm = lin1 = lin2 = None
        if "mmc.mlp.w1" in t:
            mlp = MlpWeights(t["mmc.mlp.w1"], t["mmc.mlp.b1"], t["mmc.mlp.w2"], t["mmc.mlp.b2"])
        if mcfg.variant != "MLP":
            n = 1 if config.vss_shared else len(MECHANISMS[mcfg.mechanism])
            vss = VssWeights([MambaLayerWeights.from_named(t, f"mmc.vss{i}.") for i in range(n)],
                             config.b_discretization)
            norm = t["mmc.norm"]
        if mcfg.variant == "VSS_L2":
            lin1, lin2 = t["mmc.w_lin1"], t["mmc.w_lin2"]
        lm = MambaLmWeights(
            t["lm.embedding"], [t[f"lm.norm{i}"] for i in range(config.n_layers)],
            [MambaLayerWeights.from_named(t, f"lm.layer{i}.") for i in range(config.n_layers)],
            t["lm.final_norm"], config.b_discretization)
        return cls(config, t["vision.w_proj"], MmcWeights(mlp, vss, norm, lin1, lin2), lm)


def build_model(config: ModelConfig) -> VlModel:
    """Randomly initialised model; a pure function of ``config``."""
    rng = Prng(config.seed)
    dt = config.np_dtype
    w_proj = rng.normal((3 * config.patch ** 2, config.d_vision), (3 * config.patch ** 2) ** -0.5, dt)
    connector = init_connector(rng, config.mmc_config(), config.d_state, config.expand,
                               config.conv_width, config.vss_shared, config.b_discretization, dt)
    lm = init_mamba_lm(rng, config.vocab, config.d_model, config.n_layers, config.d_state,
                       config.expand, config.conv_width, config.b_discretization, dt)
    return VlModel(config, w_proj, connector, lm)


def save_checkpoint(model: VlModel, directory) -> None:
    """Directory of VLMF tensors plus ``manifest.json`` (name -> file, dims, config)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in model.named_tensors().items():
        fname = f"{name}.vlmf"
        save_vlmf(d / fname, arr)
        entries[name] = {"file": fname, "dims": list(arr.shape), "dtype": str(arr.dtype)}
    manifest = {"config": model.config.to_dict(), "run_id": model.config.run_id(), "tensors": entries}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_checkpoint(directory) -> VlModel:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    config = ModelConfig.from_dict(manifest["config"])
    tensors = {}
    for name, entry in manifest["tensors"].items():
        arr = load_vlmf(d / entry["file"])
        if list(arr.shape) != entry["dims"]:
            raise TensorError(f"checkpoint tensor {name}: dims {list(arr.shape)} != manifest {entry['dims']}")
        tensors[name] = arr
    return VlModel.from_named(config, tensors)


# --- inference ---------------------------------------------------------------

def encode_image(model: VlModel, img: np.ndarray) -> PatchGrid:
    return patchify_encode(img, model.config.patch, model.w_proj)


def assemble(v_out: np.ndarray, q: TokenStream, d_model: int | None = None):
    """Image-first LM input: ``(prefix_embeds, [BOS] + query ids)``."""
    if v_out.ndim != 2 or (d_model is not None and v_out.shape[1] != d_model):
        raise TensorError(f"connector output {v_out.shape} does not match LM dim {d_model}")
    return v_out, [BOS, *q.ids]


def _visual_prefix(model: VlModel, grid: PatchGrid | None, trace):
    if grid is None:
        return np.zeros((0, model.config.d_model), model.config.np_dtype)
    return connector_forward(model.config.mmc_config(), model.connector, grid,
                             model.config.scan_method, trace)


def generate_ids(model: VlModel, grid: PatchGrid | None, query: str | bytes, max_new: int,
                 trace: dict | None = None):
    """Greedy decoding. Returns ``(new_ids, first_step_logits)``.

    Ties go to the lowest token id; decoding stops after ``EOS`` (which is
    kept in the returned ids) or ``max_new`` tokens.
    """
    if max_new < 1:
        raise TensorError("max_new must be at least 1")
    prefix, tokens = assemble(_visual_prefix(model, grid, trace), tokenize(query), model.config.d_model)
    new: list[int] = []
    first = None
    for step in range(max_new):
        logits = mamba_lm_forward(tokens + new, prefix, model.lm, model.config.scan_method,
                                  trace if step == 0 else None)
        last = logits[-1]
        if first is None:
            first = last.copy()
        nxt = int(np.argmax(last))  # first maximum = lowest id
        new.append(nxt)
        if nxt == EOS:
            break
    return new, first


def generate_greedy(config_or_model, image_or_features, query: str | bytes, max_new: int,
                    trace: dict | None = None) -> str:
    """Generate a text response for an image (``(H, W, 3)`` array), a
    :class:`PatchGrid` of precomputed features, or ``None`` (text only)."""
    model = config_or_model if isinstance(config_or_model, VlModel) else build_model(config_or_model)
    src = image_or_features
    if src is None or isinstance(src, PatchGrid):
        grid = src
    else:
        grid = encode_image(model, np.asarray(src, dtype=model.config.np_dtype))
    if trace is not None and grid is not None:
        trace["vision.features"] = grid.features.copy()
    ids, _ = generate_ids(model, grid, query, max_new, trace)
    return detokenize(ids)


def save_trace(trace: dict, directory) -> list[str]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for name, arr in trace.items():
        fname = f"{name}.vlmf"
        save_vlmf(d / fname, np.asarray(arr))
        names.append(fname)
    (d / "index.json").write_text(json.dumps(
        {n: list(np.shape(a)) for n, a in trace.items()}, indent=1, sort_keys=True))
    return names


def demo_image(config: ModelConfig, seed: int = 0) -> np.ndarray:
    """Deterministic pseudo-random RGB image in [0, 1) sized for ``config``."""
    rng = Prng(seed ^ 0x1A6E)
    s = config.image_size
    return rng.uniform(s * s * 3).reshape(s, s, 3).astype(config.np_dtype)


def env_seed(default: int) -> int:
    raw = os.environ.get("VLMAMBA_SEED")
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"VLMAMBA_SEED must be an integer, got {raw!r}") from None
