"""Feature-map shapes and parameter counts of a dense-block segmentation net.

Nothing is built or executed: a list of layer descriptions is walked once,
tracking (H, W, C). Layer file grammar, one layer per line::

    <name> <kind> [key=value ...]      # comment

``kind`` is ``conv``, ``dense_block``, ``max_pool`` or ``up_conv``. Keys:

* ``out=<int>``          output channels (conv; up_conv defaults to its input)
* ``kernel=<kh>x<kw>``   default 3x3
* ``reps=<int>``         layers in a dense block
* ``growth=<int>``       channels added per dense layer
* ``separable=yes|no``   depthwise-separable convolutions
* ``new_only=yes|no``    dense block emits only the maps it grew
* ``skip=<name>``        concatenate that layer's output onto this layer's input

Convolutions keep the spatial size, ``max_pool`` halves it (floor), ``up_conv``
doubles it.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .scan_io import PathLike

log = logging.getLogger(__name__)

KINDS = ("conv", "dense_block", "max_pool", "up_conv")


class NetSpecError(ValueError):
    pass


class SpecSyntaxError(NetSpecError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    kernel: tuple[int, int] = (3, 3)
    out_channels: int | None = None
    repetitions: int = 1
    growth_rate: int = 0
    depth_separable: bool = False
    emit_new_only: bool = False
    skip_from: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise NetSpecError(f"{self.name}: unknown layer kind {self.kind!r}")
        if min(self.kernel) < 1:
            raise NetSpecError(f"{self.name}: kernel dimensions must be positive")
        if self.kind == "dense_block":
            if self.repetitions < 1:
                raise NetSpecError(f"{self.name}: dense block needs reps >= 1")
            if self.growth_rate < 1:
                raise NetSpecError(f"{self.name}: dense block needs growth > 0")
        if self.kind == "conv" and self.out_channels is None:
            raise NetSpecError(f"{self.name}: conv needs out=<channels>")
        if self.out_channels is not None and self.out_channels < 1:
            raise NetSpecError(f"{self.name}: out must be positive")


@dataclass(frozen=True)
class LayerShape:
    name: str
    kind: str
    input: tuple[int, int, int]  # after any skip concatenation
    output: tuple[int, int, int]


@dataclass
class ShapeReport:
    layers: list[LayerShape]
    warnings: list[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> LayerShape:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)


def derive_shapes(specs: Sequence[LayerSpec], input_shape: tuple[int, int, int]) -> ShapeReport:
    h, w, c = input_shape
    if min(h, w, c) < 1:
        raise NetSpecError(f"input shape must be positive, got {input_shape}")
    outputs: dict[str, tuple[int, int, int]] = {}
    layers, warnings = [], []
    pool_inputs: list[tuple[str, int, int]] = []
    for spec in specs:
        if spec.name in outputs:
            raise NetSpecError(f"duplicate layer name {spec.name!r}")
        if spec.skip_from is not None:
            if spec.skip_from not in outputs:
                raise NetSpecError(
                    f"{spec.name}: skip source {spec.skip_from!r} is not an earlier layer")
            sh, sw, sc = outputs[spec.skip_from]
            if (sh, sw) != (h, w):
                raise NetSpecError(
                    f"cannot concatenate {spec.skip_from} ({sh}x{sw}) onto the input of "
                    f"{spec.name} ({h}x{w})")
            c += sc
        shape_in = (h, w, c)

        if spec.kind == "conv":
            c = spec.out_channels
        elif spec.kind == "dense_block":
            grown = spec.repetitions * spec.growth_rate
            c = grown if spec.emit_new_only else c + grown
        elif spec.kind == "max_pool":
            if h % 2 or w % 2:
                msg = f"{spec.name}: pooling odd size {h}x{w} drops a row/column"
                warnings.append(msg)
                log.warning(msg)
            pool_inputs.append((spec.name, h, w))
            h, w = h // 2, w // 2
        elif spec.kind == "up_conv":
            if spec.out_channels is not None:
                c = spec.out_channels
            h, w = 2 * h, 2 * w
            if pool_inputs:
                pname, ph, pw = pool_inputs.pop()
                if (ph, pw) != (h, w):
                    msg = (f"{spec.name}: up-sampling to {h}x{w} does not invert "
                           f"{pname} (input {ph}x{pw})")
                    warnings.append(msg)
                    log.warning(msg)
        outputs[spec.name] = (h, w, c)
        layers.append(LayerShape(spec.name, spec.kind, shape_in, (h, w, c)))
    return ShapeReport(layers, warnings)


# --------------------------------------------------------------------------
# Parameter counting


@dataclass(frozen=True)
class ParamCount:
    weights: int = 0
    biases: int = 0
    norm: int = 0

    def __add__(self, other: "ParamCount") -> "ParamCount":
        return ParamCount(self.weights + other.weights, self.biases + other.biases,
                          self.norm + other.norm)

    def total(self, include_bias: bool = False, include_norm: bool = False) -> int:
        return self.weights + include_bias * self.biases + include_norm * self.norm


def conv_weights(kh: int, kw: int, c_in: int, c_out: int, separable: bool = False) -> int:
    """Weights of one convolution: ``kh*kw*Cin*Cout``, or ``kh*kw*Cin + Cin*Cout`` separable."""
    if separable:
        return kh * kw * c_in + c_in * c_out
    return kh * kw * c_in * c_out


def _conv_unit(kh, kw, c_in, c_out, separable) -> ParamCount:
    # bias per output map; pre-activation batch norm (scale, shift) per input map
    return ParamCount(conv_weights(kh, kw, c_in, c_out, separable), c_out, 2 * c_in)


def layer_params(spec: LayerSpec, shape: LayerShape, separable: bool | None = None) -> ParamCount:
    sep = spec.depth_separable if separable is None else separable
    kh, kw = spec.kernel
    c_in = shape.input[2]
    c_out = shape.output[2]
    if spec.kind == "max_pool":
        return ParamCount()
    if spec.kind == "dense_block":
        total = ParamCount()
        for i in range(spec.repetitions):
            total += _conv_unit(kh, kw, c_in + i * spec.growth_rate, spec.growth_rate, sep)
        return total
    return _conv_unit(kh, kw, c_in, c_out, sep)


@dataclass
class LayerParams:
    name: str
    specified: ParamCount  # with the separable flags as written
    standard: ParamCount   # every convolution standard


@dataclass
class ParamReport:
    layers: list[LayerParams]
    specified: ParamCount
    standard: ParamCount

    def __getitem__(self, name: str) -> LayerParams:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)


def count_params(specs: Sequence[LayerSpec], input_shape: tuple[int, int, int]) -> ParamReport:
    shapes = derive_shapes(specs, input_shape)
    rows = []
    spec_total, std_total = ParamCount(), ParamCount()
    for spec, shape in zip(specs, shapes.layers):
        specified = layer_params(spec, shape)
        standard = layer_params(spec, shape, separable=False)
        rows.append(LayerParams(spec.name, specified, standard))
        spec_total += specified
        std_total += standard
    return ParamReport(rows, spec_total, std_total)


def millions(n: int) -> str:
    return f"{n / 1e6:.2f}M"


# --------------------------------------------------------------------------
# Layer files

_BOOL = {"yes": True, "true": True, "1": True, "no": False, "false": False, "0": False}


def _parse_line(line_no: int, tokens: list[str]) -> LayerSpec:
    if len(tokens) < 2:
        raise SpecSyntaxError(line_no, "expected '<name> <kind> [key=value ...]'")
    name, kind = tokens[0], tokens[1]
    if kind not in KINDS:
        raise SpecSyntaxError(line_no, f"unknown layer kind {kind!r}")
    kw: dict = {}
    for tok in tokens[2:]:
        if "=" not in tok:
            raise SpecSyntaxError(line_no, f"expected key=value, got {tok!r}")
        key, val = tok.split("=", 1)
        try:
            if key == "out":
                kw["out_channels"] = int(val)
            elif key == "kernel":
                kh, kw_ = val.lower().split("x")
                kw["kernel"] = (int(kh), int(kw_))
            elif key == "reps":
                kw["repetitions"] = int(val)
            elif key == "growth":
                kw["growth_rate"] = int(val)
            elif key in ("separable", "new_only"):
                field_name = "depth_separable" if key == "separable" else "emit_new_only"
                kw[field_name] = _BOOL[val.lower()]
            elif key == "skip":
                kw["skip_from"] = val
            else:
                raise SpecSyntaxError(line_no, f"unknown key {key!r}")
        except (ValueError, KeyError) as exc:
            if isinstance(exc, SpecSyntaxError):
                raise
            raise SpecSyntaxError(line_no, f"bad value in {tok!r}") from None
    try:
        return LayerSpec(name, kind, **kw)
    except NetSpecError as exc:
        raise SpecSyntaxError(line_no, str(exc)) from None


def parse_spec(text: str) -> list[LayerSpec]:
    specs = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            specs.append(_parse_line(line_no, line.split()))
    if not specs:
        raise NetSpecError("layer file defines no layers")
    return specs


def load_spec(path: PathLike) -> list[LayerSpec]:
    return parse_spec(Path(path).read_text())


def shipped_spec_path(variant: str = "dblidarnet") -> Path:
    """Path of a layer file bundled with the package (``dblidarnet`` or ``dblidarnet_table``)."""
    return Path(str(resources.files("lts") / "data" / f"{variant}.spec"))


def with_separable(specs: Sequence[LayerSpec], names: Sequence[str], value: bool = True):
    """Copy of ``specs`` with the separable flag set on the named layers."""
    return [dataclasses.replace(s, depth_separable=value) if s.name in names else s
            for s in specs]


def parse_input_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ValueError(f"input shape must look like HxWxC, got {text!r}")
    h, w, c = (int(p) for p in parts)
    if min(h, w, c) < 1:
        raise ValueError(f"input shape must be positive, got {text!r}")
    return h, w, c


def format_report(specs: Sequence[LayerSpec], shapes: ShapeReport, params: ParamReport) -> str:
    lines = [f"{'layer':<12}{'H x W x C':>18}{'params':>12}{'all-standard':>14}"]
    for spec, shape, p in zip(specs, shapes.layers, params.layers):
        h, w, c = shape.output
        dims = f"{h}x{w}x{c}"
        sep = " (sep)" if spec.depth_separable else ""
        lines.append(f"{spec.name:<12}{dims:>18}{p.specified.weights:>12,}"
                     f"{p.standard.weights:>14,}{sep}")
    lines.append(f"total weights as specified: {params.specified.weights:,} "
                 f"({millions(params.specified.weights)})")
    lines.append(f"total weights all-standard: {params.standard.weights:,} "
                 f"({millions(params.standard.weights)})")
    lines.append(f"biases {params.specified.biases:,}, batch-norm {params.specified.norm:,} "
                 f"(not in totals)")
    lines.extend(f"warning: {w}" for w in shapes.warnings)
    return "\n".join(lines)
