"""TCN decoder and the full encoder-decoder forecasting model."""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import numkernel as nk
from .exceptions import ConfigurationError, DimensionError
from .layers import Encoder, InputProjection, channel_map, default_widths

RESIDUAL_MODES = ("offset_from_last_frame", "absolute")


class TcnDecoder(nk.Module):
    """Dilated causal convolutions over frames, then a learned ``T -> t`` map.

    Every block computes ``x + act(sum_k W_k shift(x, k * d) + b)`` per joint,
    so frame ``f`` only sees frames ``<= f``.  The output projection starts
    at zero, so an untrained decoder emits exact zeros.
    """

    def __init__(self, width, channels, frames_in, frames_out, kernel=3, dilations=(1, 2, 4),
                 activation="tanh", rng=None, prefix="decoder", dtype=np.float64):
        rng = rng if rng is not None else nk.Rng(0)
        self.width, self.channels = width, channels
        self.frames_in, self.frames_out = frames_in, frames_out
        self.kernel = kernel
        self.dilations = tuple(dilations)
        self.activation = activation
        if self.receptive_field < frames_in:
            raise ConfigurationError(
                f"TCN receptive field {self.receptive_field} is shorter than the {frames_in} input frames")
        fan_in = width * kernel
        self.blocks = []
        for b, _ in enumerate(self.dilations):
            brng = rng.child(b)
            taps = [nk.Parameter(nk.init_uniform(brng, (width, width), fan_in, dtype), f"{prefix}.block{b}.W{k}")
                    for k in range(kernel)]
            bias = nk.Parameter(nk.init_uniform(brng, (width,), fan_in, dtype), f"{prefix}.block{b}.bias")
            self.blocks.append((taps, bias))
        erng = rng.child(len(self.dilations))
        self.expand_weight = nk.Parameter(nk.init_uniform(erng, (frames_in, frames_out), frames_in, dtype),
                                          f"{prefix}.expand.weight")
        self.expand_bias = nk.Parameter(nk.init_uniform(erng, (frames_out,), frames_in, dtype),
                                        f"{prefix}.expand.bias")
        self.out_weight = nk.Parameter(np.zeros((width, channels)), f"{prefix}.out.weight", dtype=dtype)
        self.out_bias = nk.Parameter(np.zeros(channels), f"{prefix}.out.bias", dtype=dtype)

    @property
    def receptive_field(self):
        return 1 + (self.kernel - 1) * sum(self.dilations)

    def blocks_forward(self, z):
        """Causal block stack on ``(B, w, N, T)`` features, before temporal expansion."""
        if z.shape[1] != self.width or z.shape[-1] != self.frames_in:
            raise DimensionError(
                f"decoder expects (B, {self.width}, N, {self.frames_in}) features, got {z.shape}")
        x = z
        for (taps, bias), dilation in zip(self.blocks, self.dilations):
            conv = None
            for k, weight in enumerate(taps):
                term = channel_map(nk.shift(x, k * dilation), weight)
                conv = term if conv is None else conv + term
            conv = conv + nk.reshape(bias, (1, self.width, 1, 1))
            x = x + nk.activation(conv, self.activation)
        return x

    def forward(self, z):
        squeeze = z.ndim == 3
        if squeeze:
            z = nk.reshape(z, (1,) + z.shape)
        x = self.blocks_forward(z)
        x = x @ self.expand_weight + self.expand_bias
        out = channel_map(x, self.out_weight, self.out_bias)
        return out[0] if squeeze else out

    __call__ = forward


def tcn_forward(decoder, z):
    return decoder(z)


@dataclass
class ModelConfig:
    joints: int
    channels: int = 3
    frames_in: int = 10
    frames_out: int = 25
    width: int = 64
    depth: int = 6
    n: int = 4
    m: int = 3
    gated: bool = True
    activation: str = "tanh"
    kernel: int = 3
    dilations: tuple = (1, 2, 4)
    residual: str = "offset_from_last_frame"
    center_joint: int = 0          # joint whose last observed position is subtracted; -1 disables
    scale: float = 1.0             # raw units per model unit
    precision: str = "binary32"
    seed: int = 0
    widths: list = field(default=None)

    def __post_init__(self):
        self.dilations = tuple(self.dilations)
        if self.widths is None:
            self.widths = default_widths(self.channels, self.width, self.depth)
        self.widths = list(self.widths)
        if self.residual not in RESIDUAL_MODES:
            raise ConfigurationError(f"residual must be one of {RESIDUAL_MODES}, got {self.residual!r}")
        if self.precision not in nk.PRECISIONS:
            raise ConfigurationError(f"precision must be one of {sorted(nk.PRECISIONS)}")
        for key in ("joints", "channels", "frames_in", "frames_out", "n", "m"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"{key} must be positive, got {getattr(self, key)}")
        if self.scale <= 0:
            raise ConfigurationError("scale must be positive")
        if len(self.widths) < 2:
            raise ConfigurationError("widths must describe at least one layer")

    def to_dict(self):
        out = asdict(self)
        out["dilations"] = list(self.dilations)
        return out


class GagcnModel(nk.Module):
    """Input projection, GAGCN encoder and TCN decoder.

    Windows are ``(C, N, T)`` or ``(B, C, N, T)`` in raw units.  Inputs are
    re-centred on ``center_joint`` at the last observed frame and divided by
    ``scale``; decoder outputs are multiplied back by ``scale``.  In offset
    mode they are added to the last observed frame.
    """

    def __init__(self, config):
        self.config = config
        dtype = nk.resolve_dtype(config.precision)
        rng = nk.Rng(config.seed)
        self.embed = InputProjection(config.channels, config.widths[0], rng.child(0), dtype)
        self.encoder = Encoder(config.widths, config.joints, config.frames_in, config.n, config.m,
                               rng.child(1), config.activation, config.gated, dtype=dtype)
        self.decoder = TcnDecoder(config.widths[-1], config.channels, config.frames_in, config.frames_out,
                                  config.kernel, config.dilations, config.activation, rng.child(2), dtype=dtype)

    @property
    def dtype(self):
        return nk.resolve_dtype(self.config.precision)

    def _check_window(self, window):
        c = self.config
        expected = (c.channels, c.joints, c.frames_in)
        if tuple(window.shape[-3:]) != expected:
            raise DimensionError(f"window shape {tuple(window.shape)} does not match model (C, N, T) = {expected}")

    def forward(self, window, log=None):
        c = self.config
        window = nk.as_tensor(window if isinstance(window, nk.Tensor) else np.asarray(window, dtype=self.dtype))
        self._check_window(window)
        squeeze = window.ndim == 3
        if squeeze:
            window = nk.reshape(window, (1,) + window.shape)
        raw = window.data
        if c.center_joint >= 0:
            ref = raw[:, :, c.center_joint:c.center_joint + 1, -1:]
        else:
            ref = np.zeros_like(raw[:, :, :1, -1:])
        x = (window - ref) * (1.0 / c.scale)
        offsets = self.decoder(self.encoder(self.embed(x), log)) * c.scale
        if c.residual == "offset_from_last_frame":
            out = offsets + raw[:, :, :, -1:]
        else:
            out = offsets + ref
        return out[0] if squeeze else out

    __call__ = forward

    def predict(self, window):
        with nk.no_grad():
            return self.forward(window).data.copy()


def build_model(config=None, **kwargs):
    if config is None:
        config = ModelConfig(**kwargs)
    return GagcnModel(config)


def predict(model, window):
    return model.predict(window)
