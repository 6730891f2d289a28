"""E(n)-equivariant graph vector field ``v(t, x)``.

Layer ``l`` computes, for every ordered pair ``i != j``::

    m_ij   = phi_e(h_i, h_j, d_ij^2, d0_ij^2)
    x_i   <- x_i + sum_j (x_i - x_j) / (d_ij + 1) * phi_d(m_ij)
    m_i    = sum_j phi_m(m_ij) * m_ij
    h_i   <- h_i + phi_h(h_i, m_i)

with ``h_i^0 = W (t, a_i, b_i, c_i) + b``.  ``d0`` is the input-layer
distance, fed to every layer as an edge attribute.  The velocity is
``x^L - x^0`` with its per-configuration centroid removed.

The same function body is evaluated on ndarrays, tape ``Var`` parameters
(training) and ``Dual`` coordinates (divergence).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ContractViolation, NumericError
from ..numcore import ops
from ..numcore.dual import Dual
from ..numcore.params import Layout

__all__ = [
    "EgnnConfig", "PRESETS", "param_layout", "init_params", "n_parameters",
    "egnn_forward", "egnn_divergence", "velocity_and_divergence", "divergence_reference", "EgnnField",
]


@dataclass(frozen=True)
class EgnnConfig:
    n_layers: int = 3
    n_hidden: int = 32
    n_embedding: int = 5
    variant: str = "tbg"
    attention: bool = True
    dist_eps: float = 1e-12

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# (L, n_hidden, n_embedding) of the standard dipeptide and alanine models
PRESETS = {
    "2aa/tbg": EgnnConfig(9, 128, 5, "tbg"),
    "2aa/tbg+backbone": EgnnConfig(9, 128, 13, "tbg+backbone"),
    "2aa/tbg+full": EgnnConfig(9, 128, 76, "tbg+full"),
    "ad/tbg+full": EgnnConfig(5, 64, 15, "tbg+full"),
}


def param_layout(cfg: EgnnConfig) -> Layout:
    h, e = cfg.n_hidden, cfg.n_embedding
    items = [("embed.W", (e + 1, h)), ("embed.b", (h,))]
    for l in range(cfg.n_layers):
        items += [
            (f"{l}.e1.W", (2 * h + 2, h)), (f"{l}.e1.b", (h,)),
            (f"{l}.e2.W", (h, h)), (f"{l}.e2.b", (h,)),
            (f"{l}.d1.W", (h, h)), (f"{l}.d1.b", (h,)),
            (f"{l}.d2.W", (h, 1)),
            (f"{l}.m.W", (h, 1)), (f"{l}.m.b", (1,)),
            (f"{l}.h1.W", (2 * h, h)), (f"{l}.h1.b", (h,)),
            (f"{l}.h2.W", (h, h)), (f"{l}.h2.b", (h,)),
        ]
    return Layout.build(items)


def n_parameters(cfg: EgnnConfig, with_feature_readout: bool = False) -> int:
    """Parameter count; the optional readout is a linear map from the last
    hidden features back to embedding width, unused by the velocity."""
    n = param_layout(cfg).size
    if with_feature_readout:
        n += (cfg.n_hidden + 1) * (cfg.n_embedding + 1)
    return n


def init_params(cfg: EgnnConfig, seed: int = 0) -> np.ndarray:
    """Uniform(+-1/sqrt(fan_in)) init; the coordinate head starts near zero."""
    rng = np.random.default_rng(seed)
    layout = param_layout(cfg)
    arrays = {}
    fan = {}
    for name, shape in layout.segments:
        if name.endswith(".W"):
            fan[name[:-2]] = shape[0]
    for name, shape in layout.segments:
        base = name[:-2]
        bound = 1.0 / np.sqrt(fan[base])
        if name.endswith("d2.W"):
            # xavier with small gain keeps the initial flow close to identity
            bound = 0.001 * np.sqrt(6.0 / (shape[0] + shape[1]))
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return layout.pack(arrays)


def _as_batch(x):
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ContractViolation(f"coordinates must be (N, D) or (B, N, D), got {x.shape}")


def _edges(P, l: int, cfg: EgnnConfig, pre_nodes, d2, d2_0, mask, message: bool = True):
    """Gated message ``phi_m(m_ij) m_ij`` and coordinate coefficient
    ``phi_d(m_ij) / (d_ij + 1)`` of every edge.

    ``pre_nodes`` holds the ``h_i`` and ``h_j`` parts of the first edge
    layer, already broadcast to edge shape.
    """
    hdim = cfg.n_hidden
    W = P[f"{l}.e1.W"]
    pre = pre_nodes + d2 * W[2 * hdim] + d2_0 * W[2 * hdim + 1] + P[f"{l}.e1.b"]
    m = ops.silu(ops.silu(pre) @ P[f"{l}.e2.W"] + P[f"{l}.e2.b"])
    phi_d = ops.silu(m @ P[f"{l}.d1.W"] + P[f"{l}.d1.b"]) @ P[f"{l}.d2.W"]
    coef = phi_d * mask / (ops.sqrt(d2 + cfg.dist_eps) + 1.0)
    if not message:
        return None, coef
    gate = ops.sigmoid(m @ P[f"{l}.m.W"] + P[f"{l}.m.b"]) * mask if cfg.attention else mask
    return m * gate, coef


def _node_update(P, l: int, h, mi):
    upd = ops.silu(ops.concat([h, mi], axis=-1) @ P[f"{l}.h1.W"] + P[f"{l}.h1.b"])
    return h + upd @ P[f"{l}.h2.W"] + P[f"{l}.h2.b"]


def _layer(P, l: int, cfg: EgnnConfig, h, xl, d2_0, mask):
    hdim = cfg.n_hidden
    W = P[f"{l}.e1.W"]
    diff = xl[:, :, None, :] - xl[:, None, :, :]
    d2 = (diff * diff).sum(axis=-1, keepdims=True)
    if d2_0 is None:
        d2_0 = d2
    hi = h @ W[:hdim]
    hj = h @ W[hdim : 2 * hdim]
    last = l == cfg.n_layers - 1
    mg, coef = _edges(P, l, cfg, hi[:, :, None, :] + hj[:, None, :, :], d2, d2_0, mask, message=not last)
    xl = xl + (diff * coef).sum(axis=2)
    if not last:
        # the last layer's feature update never reaches the velocity
        h = _node_update(P, l, h, mg.sum(axis=2))
    return h, xl, d2_0


def _embed(P, cfg, t, emb, b, n):
    tt = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (b,))
    h0 = np.concatenate(
        [np.broadcast_to(tt[:, None, None], (b, n, 1)), np.broadcast_to(emb, (b, n, cfg.n_embedding))],
        axis=-1,
    )
    return h0 @ P["embed.W"] + P["embed.b"]


def _check_inputs(cfg, x, emb):
    x, squeeze = _as_batch(x)
    n = x.shape[1]
    if n < 2:
        raise ContractViolation("the vector field needs at least two atoms")
    emb = np.asarray(emb, dtype=float)
    if emb.shape != (n, cfg.n_embedding):
        raise ContractViolation(f"embedding shape {emb.shape} != ({n}, {cfg.n_embedding})")
    return x, squeeze, emb


def egnn_forward(params, cfg: EgnnConfig, t, x, emb):
    """Velocity for coordinates ``x`` of shape ``(N, D)`` or ``(B, N, D)``."""
    x, squeeze, emb = _check_inputs(cfg, x, emb)
    b, n, _ = x.shape
    P = param_layout(cfg).unpack(params)
    h = _embed(P, cfg, t, emb, b, n)
    mask = (1.0 - np.eye(n))[None, :, :, None]
    xl, d2_0 = x, None
    for l in range(cfg.n_layers):
        h, xl, d2_0 = _layer(P, l, cfg, h, xl, d2_0, mask)
    v = xl - x
    v = v - v.mean(axis=1, keepdims=True)
    if squeeze:
        v = v[0]
    return v


def _projected_basis(n: int, d: int) -> np.ndarray:
    """Mean-free projections of the ``n*d`` coordinate unit vectors."""
    eye = np.eye(n * d).reshape(n * d, n, d)
    return eye - eye.mean(axis=1, keepdims=True)


def divergence_reference(params, cfg: EgnnConfig, t, x, emb):
    """Velocity and ``tr(J P)`` from ``N*D`` projected forward-mode
    directions pushed through the whole network.  Slow; kept as the
    oracle for :func:`velocity_and_divergence`."""
    x = np.asarray(x, dtype=float)
    xb, squeeze = _as_batch(x)
    b, n, d = xb.shape
    basis = _projected_basis(n, d)
    tangent = np.broadcast_to(basis[:, None], (n * d, b, n, d))
    out = egnn_forward(params, cfg, t, Dual(xb, tangent), emb)
    k = np.arange(n * d)
    jt = out.t.reshape(n * d, b, n * d)
    div = jt[k, :, k].sum(axis=0)
    if squeeze:
        return out.p[0], float(div[0])
    return out.p, div


def velocity_and_divergence(params, cfg: EgnnConfig, t, x, emb):
    """Velocity and exact divergence on the mean-free subspace.

    Because the velocity is translation invariant, ``tr(J P) = tr(J)`` and
    plain unit directions ``e_(a,c)`` may be used.  Three facts keep the
    forward-mode sweep cheap:

    * in the first layer every edge depends on ``x`` only through its own
      squared distance, so one scalar derivative per edge gives all
      ``N*D`` tangents in closed form;
    * middle layers carry the ``N*D`` tangents densely;
    * in the last layer direction ``(a, c)`` needs only the output
      ``(a, c)``, i.e. the ``N - 1`` edges leaving atom ``a``.
    """
    x, squeeze, emb = _check_inputs(cfg, np.asarray(x, dtype=float), emb)
    b, n, d = x.shape
    K = n * d
    L = cfg.n_layers
    hdim = cfg.n_hidden
    P = param_layout(cfg).unpack(params)
    mask = (1.0 - np.eye(n))[None, :, :, None]
    ar = np.arange(n)

    h0 = _embed(P, cfg, t, emb, b, n)
    diff0 = x[:, :, None, :] - x[:, None, :, :]
    d2_0 = (diff0 * diff0).sum(axis=-1, keepdims=True)

    # layer 0: derivative of every edge term with respect to its own d2
    W = P["0.e1.W"]
    pre_nodes = (h0 @ W[:hdim])[:, :, None, :] + (h0 @ W[hdim : 2 * hdim])[:, None, :, :]
    s = Dual(d2_0, np.ones((1,) + d2_0.shape))
    mg, coef = _edges(P, 0, cfg, pre_nodes, s, s, mask, message=L > 1)
    cp, cd = coef.p, coef.t[0]
    x1 = x + (diff0 * cp).sum(axis=2)
    if L == 1:
        # d x1_(a,c) / d x_(a,c) = 1 + sum_j coef_aj + 2 sum_j coef'_aj diff_ajc^2
        jac = cp.sum(axis=(1, 2))[:, 0] * d + 2.0 * (cd * diff0 * diff0).sum(axis=(1, 2, 3))
        v = x1 - x
        return _finish(v, jac, squeeze)

    # tangents of x1, indexed (a, c, batch, atom, dim)
    q = 2.0 * cd[..., None] * diff0[..., :, None] * diff0[..., None, :]  # (b, i, j, e, c)
    x1t = -q.transpose(2, 4, 0, 1, 3).copy()
    x1t[ar, :, :, ar, :] += q.sum(axis=2).transpose(1, 3, 0, 2)
    diag = 1.0 + cp[..., 0].sum(axis=2)  # (b, a)
    for c in range(d):
        x1t[:, c, :, :, c] -= cp[..., 0].transpose(2, 0, 1)
        x1t[ar, c, :, ar, c] += diag.T
    # message tangents, indexed (a, c, batch, atom, hidden)
    g = mg.t[0]
    mt = -2.0 * (g[:, :, :, None, :] * diff0[..., None]).transpose(2, 3, 0, 1, 4)
    mt[ar, :, :, ar, :] += 2.0 * np.einsum("bijh,bijc->icbh", g, diff0)
    mi = Dual(mg.p.sum(axis=2), mt.reshape((K, b, n, hdim)))
    h = _node_update(P, 0, h0, mi)
    xl = Dual(x1, x1t.reshape(K, b, n, d))
    # tangents of the input-layer squared distances
    dd = 2.0 * diff0.transpose(3, 0, 1, 2)  # (c, b, i, j)
    d0t = np.zeros((n, d, b, n, n))
    d0t[ar, :, :, ar, :] += dd.transpose(2, 0, 1, 3)
    d0t[ar, :, :, :, ar] -= dd.transpose(3, 0, 1, 2)
    d0 = Dual(d2_0, d0t.reshape(K, b, n, n, 1))

    for l in range(1, L - 1):
        h, xl, _ = _layer(P, l, cfg, h, xl, d0, mask)

    # last layer: for direction k = (a, c) only edges (a, j) matter
    l = L - 1
    ka = np.repeat(ar, d)
    kc = np.tile(np.arange(d), n)
    kk = np.arange(K)
    W = P[f"{l}.e1.W"]
    hi = h @ W[:hdim]
    hj = h @ W[hdim : 2 * hdim]
    hi_p = hi.p[:, ka].transpose(1, 0, 2)  # (K, b, H)
    hi_t = hi.t[kk, :, ka]
    pre_nodes = Dual(hi_p[:, :, None, :] + hj.p[None], (hi_t[:, :, None, :] + hj.t)[None])
    xa_p = xl.p[:, ka].transpose(1, 0, 2)  # (K, b, D)
    xa_t = xl.t[kk, :, ka]
    diff = Dual(xa_p[:, :, None, :] - xl.p[None], (xa_t[:, :, None, :] - xl.t)[None])
    d2 = (diff * diff).sum(axis=-1, keepdims=True)
    d0_row = Dual(d2_0[:, ka].transpose(1, 0, 2, 3), d0.t[kk, :, ka][None])
    _, coef = _edges(P, l, cfg, pre_nodes, d2, d0_row, mask[0][ka][:, None], message=False)
    upd = (diff * coef).sum(axis=2)  # (K, b, D), one tangent
    jac = (xa_t[kk, :, kc] + upd.t[0][kk, :, kc]).sum(axis=0)
    # every row of atom a carries the same primal update; take the c = 0 one
    v = xl.p + upd.p[kc == 0].transpose(1, 0, 2) - x
    return _finish(v, jac, squeeze, K)


def _finish(v, jac, squeeze, nd=None):
    v = v - v.mean(axis=1, keepdims=True)
    div = jac - (nd if nd is not None else 0.0)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(div))):
        raise NumericError("non-finite velocity or divergence")
    if squeeze:
        return v[0], float(div[0])
    return v, div


def egnn_divergence(params, cfg: EgnnConfig, t, x, emb):
    return velocity_and_divergence(params, cfg, t, x, emb)[1]


class EgnnField:
    """Vector field bound to parameters and one molecule's embedding."""

    def __init__(self, params, cfg: EgnnConfig, emb, chunk: int = 16):
        self.params = np.asarray(params, dtype=float)
        self.cfg = cfg
        self.emb = np.asarray(emb, dtype=float)
        self.chunk = chunk

    def velocity(self, t, x):
        return egnn_forward(self.params, self.cfg, t, x, self.emb)

    def velocity_and_divergence(self, t, x):
        # fixed-size chunks: results per sample do not depend on batch size
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            return velocity_and_divergence(self.params, self.cfg, t, x, self.emb)
        vs, divs = [], []
        for s in range(0, len(x), self.chunk):
            v, dv = velocity_and_divergence(self.params, self.cfg, t, x[s : s + self.chunk], self.emb)
            vs.append(v)
            divs.append(dv)
        return np.concatenate(vs), np.concatenate(divs)
