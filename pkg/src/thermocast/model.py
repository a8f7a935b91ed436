"""Convolutional-LSTM forecaster for temperature fields.

A window of w frames runs through a stack of ConvLSTM cells (hidden state
threaded across the window, zeroed at the start of every window). The last
hidden map is the temporal summary; the laser flux matrix joins it as an
extra channel, a few conv+tanh blocks mix the result, and a final 1-filter
linear convolution emits the prediction. Temperatures are normalized to
[0, 1] inside forward and the output is mapped back, so callers only ever
see physical units.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatchError, ValidationError
from .physics import FluxField


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and normalization settings.

    normalization is the (t_min, t_max) range mapped onto [0, 1];
    flux_scale divides the flux channel (use the laser's peak flux so the
    channel lands in [0, 1] as well).
    """

    normalization: tuple
    flux_scale: float = 1.0
    n_convlstm_layers: int = 3
    n_conv_layers: int = 2
    filters: int = 10
    kernel_size: int = 3
    window: int = 3
    horizon: int = 1
    input_channels: int = 1
    flux_channels: int = 1

    def __post_init__(self):
        t_min, t_max = (float(v) for v in self.normalization)
        object.__setattr__(self, "normalization", (t_min, t_max))
        if not (np.isfinite(t_min) and np.isfinite(t_max) and t_min < t_max):
            raise ValidationError("normalization", f"need t_min < t_max, got ({t_min}, {t_max})")
        if not (np.isfinite(self.flux_scale) and self.flux_scale > 0):
            raise ValidationError("flux_scale", f"must be positive, got {self.flux_scale}")
        for name, low in (("n_convlstm_layers", 1), ("n_conv_layers", 0), ("filters", 1),
                          ("window", 1), ("horizon", 1), ("input_channels", 1),
                          ("flux_channels", 0)):
            v = getattr(self, name)
            if not isinstance(v, int) or v < low:
                raise ValidationError(name, f"must be an integer >= {low}, got {v!r}")
        k = self.kernel_size
        if not isinstance(k, int) or k < 1 or k % 2 == 0:
            raise ValidationError("kernel_size", f"must be an odd integer >= 1, got {k!r}")
        if self.flux_channels > 1:
            raise ValidationError("flux_channels", "at most one flux channel is supported")

    @property
    def span(self):
        t_min, t_max = self.normalization
        return t_max - t_min


def normalize(config, t):
    t_min, _ = config.normalization
    return (np.asarray(t, dtype=np.float64) - t_min) / config.span


def denormalize(config, u):
    t_min, _ = config.normalization
    return np.asarray(u, dtype=np.float64) * config.span + t_min


@dataclass(frozen=True)
class ConvLSTMCellParams:
    """One cell: four gate kernels over concat(x_t, h_prev), four biases.

    Fields hold plain arrays between updates and Tensors during a forward
    pass that needs gradients.
    """

    w_in: object
    w_forget: object
    w_cell: object
    w_out: object
    b_in: object
    b_forget: object
    b_cell: object
    b_out: object


@dataclass(frozen=True)
class ConvParams:
    kernel: object
    bias: object


@dataclass(frozen=True)
class ModelParams:
    """cells run in order; head holds the post-flux conv stack, its last
    entry being the 1-filter linear output layer."""

    cells: tuple
    head: tuple


_GATES = ("in", "forget", "cell", "out")


def _cell_in_channels(config, layer):
    base = config.input_channels if layer == 0 else config.filters
    return base + config.filters


def _head_in_channels(config, layer):
    if layer == 0:
        return config.filters + config.flux_channels
    return config.filters


def expected_shapes(config):
    """Name -> shape for every parameter array, in storage order."""
    f, k = config.filters, config.kernel_size
    shapes = {}
    for layer in range(config.n_convlstm_layers):
        cin = _cell_in_channels(config, layer)
        for gate in _GATES:
            shapes[f"cell{layer}.w_{gate}"] = (f, cin, k, k)
            shapes[f"cell{layer}.b_{gate}"] = (f,)
    for layer in range(config.n_conv_layers):
        shapes[f"head{layer}.kernel"] = (f, _head_in_channels(config, layer), k, k)
        shapes[f"head{layer}.bias"] = (f,)
    out_in = _head_in_channels(config, config.n_conv_layers) if config.n_conv_layers else \
        config.filters + config.flux_channels
    shapes["out.kernel"] = (1, out_in, k, k)
    shapes["out.bias"] = (1,)
    return shapes


def init_params(config, seed):
    """Uniform kernels in +-sqrt(1/fan_in); biases zero except the forget
    gate, which starts open at 1 so early training does not dump cell state."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in expected_shapes(config).items():
        if name.endswith(".bias") or ".b_" in name:
            fill = 1.0 if name.endswith(".b_forget") else 0.0
            arrays[name] = np.full(shape, fill)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            bound = np.sqrt(1.0 / fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return from_named_arrays(config, arrays)


def named_arrays(params):
    """Flatten to an ordered name -> array dict (the checkpoint layout)."""
    arrays = {}
    for layer, cell in enumerate(params.cells):
        for gate in _GATES:
            arrays[f"cell{layer}.w_{gate}"] = getattr(cell, f"w_{gate}")
            arrays[f"cell{layer}.b_{gate}"] = getattr(cell, f"b_{gate}")
    for layer, conv in enumerate(params.head[:-1]):
        arrays[f"head{layer}.kernel"] = conv.kernel
        arrays[f"head{layer}.bias"] = conv.bias
    arrays["out.kernel"] = params.head[-1].kernel
    arrays["out.bias"] = params.head[-1].bias
    return arrays


def from_named_arrays(config, arrays):
    """Rebuild ModelParams, checking every name and shape against config."""
    want = expected_shapes(config)
    missing = sorted(set(want) - set(arrays))
    extra = sorted(set(arrays) - set(want))
    if missing or extra:
        raise ValidationError("params", f"missing {missing}, unexpected {extra}")
    for name, shape in want.items():
        got = np.shape(arrays[name]) if not isinstance(arrays[name], ad.Tensor) \
            else arrays[name].data.shape
        if tuple(got) != shape:
            raise ShapeMismatchError(f"params[{name}]", tuple(got), shape)
    cells = []
    for layer in range(config.n_convlstm_layers):
        fields = {}
        for gate in _GATES:
            fields[f"w_{gate}"] = arrays[f"cell{layer}.w_{gate}"]
            fields[f"b_{gate}"] = arrays[f"cell{layer}.b_{gate}"]
        cells.append(ConvLSTMCellParams(**fields))
    head = [ConvParams(arrays[f"head{layer}.kernel"], arrays[f"head{layer}.bias"])
            for layer in range(config.n_conv_layers)]
    head.append(ConvParams(arrays["out.kernel"], arrays["out.bias"]))
    return ModelParams(cells=tuple(cells), head=tuple(head))


def leaf_params(tape, params):
    """Twin of params with every array registered as a leaf on tape."""
    cells = tuple(
        replace(cell, **{f: tape.leaf(np.asarray(getattr(cell, f), dtype=np.float64))
                         for g in _GATES for f in (f"w_{g}", f"b_{g}")})
        for cell in params.cells)
    head = tuple(ConvParams(tape.leaf(np.asarray(c.kernel, dtype=np.float64)),
                            tape.leaf(np.asarray(c.bias, dtype=np.float64)))
                 for c in params.head)
    return ModelParams(cells=cells, head=head)


def _join_channels(a, b):
    if isinstance(a, ad.Tensor) or isinstance(b, ad.Tensor):
        return ad.concat_channels(a, b)
    sa, sb = np.shape(a), np.shape(b)
    if len(sa) != 4 or len(sb) != 4:
        raise ValidationError("concat_channels", "expects 4-d [batch, channel, h, w] tensors")
    if sa[0] != sb[0] or sa[2:] != sb[2:]:
        raise ShapeMismatchError("concat_channels", sa, sb)
    return np.concatenate([np.asarray(a, dtype=np.float64),
                           np.asarray(b, dtype=np.float64)], axis=1)


def cell_forward(x_t, h_prev, c_prev, params):
    """One ConvLSTM step (peephole-free gating).

    z = concat(x_t, h_prev); i, f, o = sigmoid gates, g = tanh candidate;
    c_t = f*c_prev + i*g; h_t = o*tanh(c_t). Inputs may be Tensors or plain
    arrays; parameters must be Tensors for gradients to flow.
    """
    z = _join_channels(x_t, h_prev)
    gate_in = ad.sigmoid(ad.conv2d(z, params.w_in, params.b_in))
    gate_forget = ad.sigmoid(ad.conv2d(z, params.w_forget, params.b_forget))
    candidate = ad.tanh(ad.conv2d(z, params.w_cell, params.b_cell))
    gate_out = ad.sigmoid(ad.conv2d(z, params.w_out, params.b_out))
    c_t = ad.add(ad.mul(gate_forget, c_prev), ad.mul(gate_in, candidate))
    h_t = ad.mul(gate_out, ad.tanh(c_t))
    return h_t, c_t


def _batched_frames(frames, config):
    """Frames as a list of [B, C, m, n] arrays plus whether input was bare."""
    if len(frames) != config.window:
        raise ValidationError(
            "window", f"expected {config.window} frames, got {len(frames)}")
    out = []
    bare = None
    for fr in frames:
        a = np.asarray(fr, dtype=np.float64)
        if a.ndim == 2:
            a, was_bare = a[None, None], True
        elif a.ndim == 3:
            a, was_bare = a[None], True
        elif a.ndim == 4:
            was_bare = False
        else:
            raise ValidationError("frames", f"frame has {a.ndim} dimensions")
        if bare is None:
            bare = was_bare
            ref = a.shape
        elif was_bare != bare or a.shape != ref:
            raise ShapeMismatchError("frames", ref, a.shape)
        out.append(a)
    if out[0].shape[1] != config.input_channels:
        raise ShapeMismatchError(
            "frames channels", out[0].shape, (out[0].shape[0], config.input_channels) + out[0].shape[2:])
    return out, bare


def _batched_flux(flux, config, batch, spatial):
    if isinstance(flux, FluxField):
        flux = flux.values
    q = np.asarray(flux, dtype=np.float64)
    if q.ndim == 2:
        q = np.broadcast_to(q[None], (batch,) + q.shape)
    if q.ndim != 3 or q.shape != (batch,) + spatial:
        raise ShapeMismatchError("flux", q.shape, (batch,) + spatial)
    return (q / config.flux_scale)[:, None]


def forward(params, config, frames, flux=None):
    """Predict the frame config.horizon steps past the window's end.

    frames: window of temperature fields in physical units, each [m, n],
    [C, m, n], or batched [B, C, m, n]. flux: the laser flux matrix at the
    predicted timestamp ([m, n] or [B, m, n]); ignored when the config has
    no flux channel. Returns a Tensor in physical units, [m, n] for bare
    inputs and [B, m, n] for batched ones.
    """
    xs, bare = _batched_frames(frames, config)
    batch, _, m, n = xs[0].shape
    if config.flux_channels:
        if flux is None:
            raise ValidationError("flux", "config expects a flux channel")
        fluxes = _batched_flux(flux, config, batch, (m, n))

    h = [np.zeros((batch, config.filters, m, n)) for _ in params.cells]
    c = [np.zeros((batch, config.filters, m, n)) for _ in params.cells]
    for x in xs:
        feed = normalize(config, x)
        for layer, cell in enumerate(params.cells):
            h[layer], c[layer] = cell_forward(feed, h[layer], c[layer], cell)
            feed = h[layer]

    z = ad.concat_channels(h[-1], fluxes) if config.flux_channels else h[-1]
    for conv in params.head[:-1]:
        z = ad.tanh(ad.conv2d(z, conv.kernel, conv.bias))
    y = ad.conv2d(z, params.head[-1].kernel, params.head[-1].bias)
    y = ad.reshape(y, (m, n) if bare else (batch, m, n))
    return ad.add(ad.scale(y, config.span), config.normalization[0])
