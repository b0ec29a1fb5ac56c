"""Versioned plain-text model files.

Format version 1 is a plain classifier, version 2 a three-head selective
classifier. Arrays are written as decimal with 17 significant digits, which
round-trips float64 exactly, so a saved model reloads bit-identically.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError
from .nn import LayerSpec, NetworkParams
from .selnet import SelNetParams

MAGIC = "acelab-model"


def _fmt_array(arr: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in np.asarray(arr).ravel())


def _parse_array(text: str, shape) -> np.ndarray:
    vals = np.array([float(v) for v in text.split()], dtype=np.float64)
    return vals.reshape(shape)


def _layer_line(tag: str, i: int, spec: LayerSpec) -> str:
    return f"{tag} {i} {spec.in_dim} {spec.out_dim} {spec.activation} {spec.dropout_rate:.17g}"


def _parse_layer_line(parts) -> LayerSpec:
    return LayerSpec(int(parts[2]), int(parts[3]), parts[4], float(parts[5]))


def _stack_lines(tag: str, specs, weights, biases) -> list[str]:
    lines = [f"{tag}_count {len(specs)}"]
    for i, spec in enumerate(specs):
        lines.append(_layer_line(tag, i, spec))
        lines.append(f"{tag}_weights {i} {_fmt_array(weights[i])}")
        lines.append(f"{tag}_bias {i} {_fmt_array(biases[i])}")
    return lines


def model_to_text(model, seed: int | None = None) -> str:
    version = 2 if isinstance(model, SelNetParams) else 1
    lines = [f"{MAGIC} {version}",
             f"seed {'none' if seed is None else int(seed)}",
             f"class_count {model.class_count}"]
    if version == 1:
        lines += _stack_lines("layer", model.specs, model.weights, model.biases)
    else:
        lines += _stack_lines("layer", model.backbone_specs,
                              model.backbone_weights, model.backbone_biases)
        lines += _stack_lines("selector", model.selector_specs,
                              model.selector_weights, model.selector_biases)
        lines.append(f"pred_weight {_fmt_array(model.pred_weight)}")
        lines.append(f"pred_bias {_fmt_array(model.pred_bias)}")
        lines.append(f"aux_weight {_fmt_array(model.aux_weight)}")
        lines.append(f"aux_bias {_fmt_array(model.aux_bias)}")
    return "\n".join(lines) + "\n"


def _read_stack(fields: dict, tag: str):
    count = int(fields[f"{tag}_count"])
    specs, weights, biases = [], [], []
    for i in range(count):
        spec = _parse_layer_line(fields[f"{tag} {i}"].split())
        specs.append(spec)
        weights.append(_parse_array(fields[f"{tag}_weights {i}"].split(None, 2)[2],
                                    (spec.out_dim, spec.in_dim)))
        biases.append(_parse_array(fields[f"{tag}_bias {i}"].split(None, 2)[2],
                                   (spec.out_dim,)))
    return tuple(specs), tuple(weights), tuple(biases)


def model_from_text(text: str):
    """Returns (model, seed); the model type follows the format version."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(MAGIC):
        raise ConfigError(f"not a model file (missing '{MAGIC}' header)")
    version = int(lines[0].split()[1])
    if version not in (1, 2):
        raise ConfigError(f"unsupported model format version {version}")

    indexed = ("layer", "selector", "layer_weights", "layer_bias",
               "selector_weights", "selector_bias")
    fields: dict[str, str] = {}
    for line in lines[1:]:
        parts = line.split()
        if parts[0] in indexed and len(parts) >= 2 and parts[1].isdigit():
            fields[f"{parts[0]} {parts[1]}"] = line
        else:
            fields[parts[0]] = line.split(None, 1)[1] if len(parts) > 1 else ""

    seed_text = fields["seed"]
    seed = None if seed_text == "none" else int(seed_text)
    class_count = int(fields["class_count"])

    if version == 1:
        specs, weights, biases = _read_stack(fields, "layer")
        return NetworkParams(specs, weights, biases, class_count), seed

    b_specs, b_w, b_b = _read_stack(fields, "layer")
    s_specs, s_w, s_b = _read_stack(fields, "selector")
    feat = b_specs[-1].out_dim
    model = SelNetParams(
        backbone_specs=b_specs, backbone_weights=b_w, backbone_biases=b_b,
        selector_specs=s_specs, selector_weights=s_w, selector_biases=s_b,
        pred_weight=_parse_array(fields["pred_weight"], (class_count, feat)),
        pred_bias=_parse_array(fields["pred_bias"], (class_count,)),
        aux_weight=_parse_array(fields["aux_weight"], (class_count, feat)),
        aux_bias=_parse_array(fields["aux_bias"], (class_count,)),
        class_count=class_count,
    )
    return model, seed


def save_model(path, model, seed: int | None = None) -> None:
    Path(path).write_text(model_to_text(model, seed))


def load_model(path):
    return model_from_text(Path(path).read_text())
