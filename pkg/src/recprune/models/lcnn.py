"""Linear circular CNN: a stack of convolutions with no nonlinearity."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tensor import ShapeError, circ_conv


@dataclass
class Lcnn:
    layers: list[np.ndarray]
    init_std: float = 1.0
    widths: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        self.layers = [np.asarray(w, dtype=np.float64) for w in self.layers]
        if not self.layers:
            raise ShapeError("an LCNN needs at least one layer")
        for depth, (prev, nxt) in enumerate(zip(self.layers, self.layers[1:])):
            if nxt.shape[1] != prev.shape[0]:
                raise ShapeError(
                    f"layer {depth + 1} expects {nxt.shape[1]} channels, layer {depth} emits {prev.shape[0]}"
                )
        self.widths = (self.layers[0].shape[1],) + tuple(w.shape[0] for w in self.layers)

    @classmethod
    def random(cls, widths, s: int, init_std: float, rng: np.random.Generator) -> "Lcnn":
        """Draw every weight i.i.d. from ``N(0, init_std**2)``.

        ``widths`` lists channel counts from input to output, so an LCNN with
        ``len(widths) - 1`` layers results.
        """
        layers = [
            rng.normal(0.0, init_std, size=(c_out, c_in, 2 * s + 1))
            for c_in, c_out in zip(widths[:-1], widths[1:])
        ]
        return cls(layers, init_std)

    @property
    def depth(self) -> int:
        return len(self.layers)


def lcnn_forward(model: Lcnn, x) -> np.ndarray:
    """Compose the layer convolutions, first layer applied first."""
    out = np.asarray(x, dtype=np.float64)
    for w in model.layers:
        out = circ_conv(w, out)
    return out
