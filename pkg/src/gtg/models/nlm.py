"""Neural Logic Machine layer restricted to arity <= 2, with ReLU outputs.

Shapes (leading batch axis ``B``): nullary ``g`` is ``(B, Dg)``, unary ``v`` is
``(B, N, Dv)``, binary ``r`` is ``(B, N, N, Dr)`` with ``r[:, a, b]`` the
relation vector of the ordered pair ``(a, b)``. Cross-arity reductions are
elementwise maxima::

    v_.      = max_a v_a
    r_{a,.}  = max_b r_{a,b}
    r_{.,a}  = max_b r_{b,a}

    g'    = relu(MLP0[g, v_.])
    v'_a  = relu(MLP1[g, v_a, r_{a,.}, r_{.,a}])
    r'_ab = relu(MLP2[v_a, v_b, r_ab, r_ba])
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensornet import MlpParams, mlp_backward, mlp_forward


def _max_along(x: np.ndarray, axis: int):
    idx = np.argmax(x, axis=axis)
    return np.take_along_axis(x, np.expand_dims(idx, axis), axis=axis).squeeze(axis), idx


def _max_along_backward(idx: np.ndarray, axis: int, size: int, dy: np.ndarray) -> np.ndarray:
    shape = list(dy.shape)
    shape.insert(axis, size)
    dx = np.zeros(shape)
    np.put_along_axis(dx, np.expand_dims(idx, axis), np.expand_dims(dy, axis), axis=axis)
    return dx


@dataclass
class NlmLayer:
    nullary: MlpParams
    unary: MlpParams
    binary: MlpParams | None  # None when the layer's binary output is unused

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        dims_in: tuple[int, int, int],
        dims_out: tuple[int, int, int],
        hidden: tuple[int, ...] = (),
        with_binary: bool = True,
    ) -> "NlmLayer":
        dg, dv, dr = dims_in
        og, ov, orr = dims_out
        nullary = MlpParams.init(rng, [dg + dv, *hidden, og], final_relu=True)
        unary = MlpParams.init(rng, [dg + dv + 2 * dr, *hidden, ov], final_relu=True)
        binary = (
            MlpParams.init(rng, [2 * dv + 2 * dr, *hidden, orr], final_relu=True)
            if with_binary
            else None
        )
        return cls(nullary, unary, binary)

    def named(self, prefix: str) -> dict[str, np.ndarray]:
        out = self.nullary.named(f"{prefix}.nullary")
        out.update(self.unary.named(f"{prefix}.unary"))
        if self.binary is not None:
            out.update(self.binary.named(f"{prefix}.binary"))
        return out

    def num_parameters(self) -> int:
        n = self.nullary.num_parameters() + self.unary.num_parameters()
        return n + (self.binary.num_parameters() if self.binary is not None else 0)


def nlm_layer_forward(layer: NlmLayer, g: np.ndarray, v: np.ndarray, r: np.ndarray):
    b, n, dv = v.shape
    if r.shape[:3] != (b, n, n):
        raise ValueError(f"binary tensor shape {r.shape} does not match {n} nodes")
    if g.shape[0] != b:
        raise ValueError("nullary batch size does not match")
    if g.shape[1] + dv != layer.nullary.sizes[0]:
        raise ValueError("nullary/unary input dims do not match the layer")
    v_dot, v_idx = _max_along(v, 1)
    r_out, out_idx = _max_along(r, 2)
    r_in, in_idx = _max_along(r, 1)

    g_new, c0 = mlp_forward(layer.nullary, np.concatenate([g, v_dot], axis=-1))
    g_b = np.broadcast_to(g[:, None, :], (b, n, g.shape[1]))
    v_new, c1 = mlp_forward(layer.unary, np.concatenate([g_b, v, r_out, r_in], axis=-1))
    r_new, c2 = None, None
    if layer.binary is not None:
        va = np.broadcast_to(v[:, :, None, :], (b, n, n, dv))
        vb = np.broadcast_to(v[:, None, :, :], (b, n, n, dv))
        pair = np.concatenate([va, vb, r, r.transpose(0, 2, 1, 3)], axis=-1)
        r_new, c2 = mlp_forward(layer.binary, pair)
    cache = (g.shape[1], dv, r.shape[-1], n, v_idx, out_idx, in_idx, c0, c1, c2)
    return (g_new, v_new, r_new), cache


def nlm_layer_backward(layer: NlmLayer, cache, dg_new, dv_new, dr_new, prefix: str = "nlm"):
    dg_dim, dv, dr, n, v_idx, out_idx, in_idx, c0, c1, c2 = cache
    grads = {}
    d0, gr = mlp_backward(layer.nullary, c0, dg_new, f"{prefix}.nullary")
    grads.update(gr)
    d1, gr = mlp_backward(layer.unary, c1, dv_new, f"{prefix}.unary")
    grads.update(gr)

    dg = d0[:, :dg_dim] + d1[..., :dg_dim].sum(axis=1)
    dv_total = _max_along_backward(v_idx, 1, n, d0[:, dg_dim:])
    dv_total = dv_total + d1[..., dg_dim : dg_dim + dv]
    dr_total = _max_along_backward(out_idx, 2, n, d1[..., dg_dim + dv : dg_dim + dv + dr])
    dr_total = dr_total + _max_along_backward(in_idx, 1, n, d1[..., dg_dim + dv + dr :])

    if layer.binary is not None:
        if dr_new is None:
            dr_new = np.zeros(c2[1][-1].shape)
        d2, gr = mlp_backward(layer.binary, c2, dr_new, f"{prefix}.binary")
        grads.update(gr)
        dv_total = dv_total + d2[..., :dv].sum(axis=2) + d2[..., dv : 2 * dv].sum(axis=1)
        dr_total = dr_total + d2[..., 2 * dv : 2 * dv + dr]
        dr_total = dr_total + d2[..., 2 * dv + dr :].transpose(0, 2, 1, 3)
    return dg, dv_total, dr_total, grads


def nlm_forward(layer: NlmLayer, g_vec: np.ndarray, node_feats: np.ndarray, rel_feats: np.ndarray):
    """Unbatched convenience wrapper: ``(Dg,), (N, Dv), (N, N, Dr)``."""
    (g, v, r), _ = nlm_layer_forward(layer, g_vec[None], node_feats[None], rel_feats[None])
    return g[0], v[0], (None if r is None else r[0])
