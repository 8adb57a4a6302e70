"""Model builders and the line-oriented model description format.

Two fixed 28x28-grayscale / 10-class architectures are built in:

* ``model1_tp``      -- conv(3x3,32)+ReLU, 2x2 average pooling,
                        conv(3x3,64)+ReLU, tensor projection of the
                        14x14x64 activation to 7x7x64 (spatial modes only),
                        flatten, dense 640+ReLU, dropout 0.5, dense 10.
* ``model2_avgpool`` -- identical except the projection stage is a second
                        2x2 average pooling.

Anything else passed to :func:`build_model` is treated as the path of a
model description file: one layer per line, ``kind key=value ...``, with a
mandatory leading ``input h w c`` line. Example::

    input 28 28 1
    conv2d filters=8 kernel=3,3 stride=1,1 padding=same
    relu
    avgpool pool=2,2
    tensor_projection out=7,7,8
    flatten
    dense units=10
    softmax_ce_head
"""

import os
from dataclasses import dataclass, field

from .nn import (
    AvgPool2D,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Network,
    ReLU,
    SoftmaxCrossEntropy,
    TensorProjection,
)

__all__ = ["LayerSpec", "ModelSpecError", "MODEL_NAMES", "build_model",
           "parse_model_spec", "build_from_specs"]

MODEL_NAMES = ("model1_tp", "model2_avgpool")


class ModelSpecError(ValueError):
    pass


@dataclass
class LayerSpec:
    """One parsed line of a model description."""

    kind: str
    options: dict = field(default_factory=dict)
    line: int = 0


def _model1_tp(seed=0, tp_eps=0.01, jacobian_mode="exact"):
    return Network(
        input_shape=(28, 28, 1),
        layers=[
            Conv2D(1, 32, kernel=(3, 3), stride=(1, 1), padding="same", seed=(seed, 0)),
            ReLU(),
            AvgPool2D((2, 2)),
            Conv2D(32, 64, kernel=(3, 3), stride=(1, 1), padding="same", seed=(seed, 1)),
            ReLU(),
            TensorProjection((14, 14, 64), (7, 7, 64), eps=tp_eps,
                             jacobian_mode=jacobian_mode, seed=(seed, 2)),
            Flatten(),
            Dense(3136, 640, seed=(seed, 3)),
            ReLU(),
            Dropout(0.5, seed=seed, layer_id=4),
            Dense(640, 10, seed=(seed, 5)),
        ],
    )


def _model2_avgpool(seed=0, tp_eps=0.01, jacobian_mode="exact"):
    return Network(
        input_shape=(28, 28, 1),
        layers=[
            Conv2D(1, 32, kernel=(3, 3), stride=(1, 1), padding="same", seed=(seed, 0)),
            ReLU(),
            AvgPool2D((2, 2)),
            Conv2D(32, 64, kernel=(3, 3), stride=(1, 1), padding="same", seed=(seed, 1)),
            ReLU(),
            AvgPool2D((2, 2)),
            Flatten(),
            Dense(3136, 640, seed=(seed, 3)),
            ReLU(),
            Dropout(0.5, seed=seed, layer_id=4),
            Dense(640, 10, seed=(seed, 5)),
        ],
    )


_BUILDERS = {"model1_tp": _model1_tp, "model2_avgpool": _model2_avgpool}


def build_model(model, seed=0, tp_eps=0.01, jacobian_mode="exact"):
    """Build a named model or one described by a spec file path."""
    if model in _BUILDERS:
        return _BUILDERS[model](seed=seed, tp_eps=tp_eps, jacobian_mode=jacobian_mode)
    if not os.path.exists(model):
        raise ModelSpecError(
            f"model {model!r} is neither one of {MODEL_NAMES} nor an existing "
            "model description file"
        )
    with open(model, "r", encoding="utf-8") as f:
        input_shape, specs = parse_model_spec(f.read(), path=model)
    return build_from_specs(input_shape, specs, seed=seed, tp_eps=tp_eps,
                            jacobian_mode=jacobian_mode)


_KNOWN_KINDS = ("conv2d", "avgpool", "tensor_projection", "flatten", "dense",
                "dropout", "relu", "softmax_ce_head")


def parse_model_spec(text, path="<model>"):
    """Parse a model description into (input_shape, [LayerSpec...])."""
    input_shape = None
    specs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kind, opts = tokens[0], tokens[1:]
        if kind == "input":
            if input_shape is not None:
                raise ModelSpecError(f"{path}:{lineno}: duplicate input line")
            if len(opts) != 3:
                raise ModelSpecError(f"{path}:{lineno}: input needs 'input h w c'")
            try:
                input_shape = tuple(int(t) for t in opts)
            except ValueError:
                raise ModelSpecError(f"{path}:{lineno}: input dims must be integers") from None
            continue
        if kind not in _KNOWN_KINDS:
            raise ModelSpecError(f"{path}:{lineno}: unknown layer kind {kind!r}")
        options = {}
        for tok in opts:
            if "=" not in tok:
                raise ModelSpecError(f"{path}:{lineno}: expected key=value, got {tok!r}")
            key, value = tok.split("=", 1)
            options[key] = value
        specs.append(LayerSpec(kind=kind, options=options, line=lineno))
    if input_shape is None:
        raise ModelSpecError(f"{path}: missing 'input h w c' line")
    if not specs or specs[-1].kind != "softmax_ce_head":
        raise ModelSpecError(f"{path}: model must end with a softmax_ce_head line")
    return input_shape, specs


def _opt_ints(spec, key, count, default=None):
    if key not in spec.options:
        if default is not None:
            return default
        raise ModelSpecError(f"line {spec.line}: {spec.kind} requires {key}=...")
    try:
        values = tuple(int(v) for v in spec.options[key].split(","))
    except ValueError:
        raise ModelSpecError(
            f"line {spec.line}: {key} must be {count} comma-separated integers"
        ) from None
    if len(values) != count:
        raise ModelSpecError(
            f"line {spec.line}: {key} must have {count} components, got {len(values)}"
        )
    return values


def _opt_float(spec, key, default):
    if key not in spec.options:
        return default
    try:
        return float(spec.options[key])
    except ValueError:
        raise ModelSpecError(f"line {spec.line}: {key} must be a number") from None


def build_from_specs(input_shape, specs, seed=0, tp_eps=0.01, jacobian_mode="exact"):
    """Instantiate a Network from parsed LayerSpecs, validating the shape
    chain as it is built."""
    layers = []
    shape = tuple(input_shape)
    for idx, spec in enumerate(specs):
        known = set()
        if spec.kind == "conv2d":
            known = {"filters", "kernel", "stride", "padding"}
            filters = _opt_ints(spec, "filters", 1)[0]
            kernel = _opt_ints(spec, "kernel", 2, default=(3, 3))
            stride = _opt_ints(spec, "stride", 2, default=(1, 1))
            padding = spec.options.get("padding", "same")
            if len(shape) != 3:
                raise ModelSpecError(f"line {spec.line}: conv2d needs an image input")
            layer = Conv2D(shape[2], filters, kernel=kernel, stride=stride,
                           padding=padding, seed=(seed, idx))
        elif spec.kind == "avgpool":
            known = {"pool"}
            layer = AvgPool2D(_opt_ints(spec, "pool", 2, default=(2, 2)))
        elif spec.kind == "tensor_projection":
            known = {"out", "eps", "modes", "jacobian_mode"}
            out = _opt_ints(spec, "out", 3)
            eps = _opt_float(spec, "eps", tp_eps)
            enabled = None
            if "modes" in spec.options:
                picked = _opt_ints(spec, "modes", len(spec.options["modes"].split(",")))
                if not set(picked) <= {1, 2, 3}:
                    raise ModelSpecError(f"line {spec.line}: modes must be among 1,2,3")
                enabled = tuple(k in picked for k in (1, 2, 3))
            mode = spec.options.get("jacobian_mode", jacobian_mode)
            if len(shape) != 3:
                raise ModelSpecError(
                    f"line {spec.line}: tensor_projection needs an image input"
                )
            layer = TensorProjection(shape, out, eps=eps, enabled=enabled,
                                     jacobian_mode=mode, seed=(seed, idx))
        elif spec.kind == "flatten":
            layer = Flatten()
        elif spec.kind == "dense":
            known = {"units"}
            if len(shape) != 1:
                raise ModelSpecError(
                    f"line {spec.line}: dense needs a flat input (add a flatten line)"
                )
            layer = Dense(shape[0], _opt_ints(spec, "units", 1)[0], seed=(seed, idx))
        elif spec.kind == "dropout":
            known = {"p"}
            layer = Dropout(_opt_float(spec, "p", 0.5), seed=seed, layer_id=idx)
        elif spec.kind == "relu":
            layer = ReLU()
        elif spec.kind == "softmax_ce_head":
            if idx != len(specs) - 1:
                raise ModelSpecError(
                    f"line {spec.line}: softmax_ce_head must be the last line"
                )
            if spec.options:
                raise ModelSpecError(f"line {spec.line}: softmax_ce_head takes no options")
            continue
        else:  # pragma: no cover - parse_model_spec already rejects these
            raise ModelSpecError(f"line {spec.line}: unknown kind {spec.kind!r}")
        extra = set(spec.options) - known
        if extra:
            raise ModelSpecError(
                f"line {spec.line}: unknown option(s) {sorted(extra)} for {spec.kind}"
            )
        try:
            shape = tuple(layer.output_shape(shape))
        except ValueError as exc:
            raise ModelSpecError(f"line {spec.line}: {exc}") from None
        layers.append(layer)
    return Network(input_shape=input_shape, layers=layers, head=SoftmaxCrossEntropy())
