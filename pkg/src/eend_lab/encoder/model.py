"""TB-EEND / CB-EEND forward and reverse-mode passes.

    X'' = frontend(X)            conv subsampling or stacked frames + linear
    E   = blocks(X'')            P Transformer or Conformer blocks
    Z   = sigmoid(Linear(LayerNorm(E)))
"""

from dataclasses import dataclass

import numpy as np

from eend_lab.encoder import layers as L
from eend_lab.encoder.config import SUBSAMPLE_KERNELS
from eend_lab.errors import ConfigurationError, InternalError
from eend_lab.features import FeatureMatrix, stack_and_decimate
from eend_lab.numerics.ops import sigmoid

OUTPUT_SHIFT = 0.100


@dataclass
class PosteriorMatrix:
    values: np.ndarray
    frame_shift: float = OUTPUT_SHIFT

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def speakers(self):
        return self.values.shape[1]


def _feature_values(x, cfg):
    values = x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != cfg.input_dims:
        raise ConfigurationError(
            f"features of shape {values.shape} do not match input_dims={cfg.input_dims}")
    if values.shape[0] < 1:
        raise ConfigurationError("empty feature matrix")
    return values


# -- frontend ---------------------------------------------------------------

def _frontend_forward(values, p, cfg):
    if cfg.frontend == "stacked":
        stacked = stack_and_decimate(FeatureMatrix(values)).values
        out, _ = L.linear_forward(stacked, p, "frontend.proj")
        return out, ("stacked", stacked)
    (k1, k2), (s1, s2) = SUBSAMPLE_KERNELS, cfg.subsample_strides
    r1, c1 = L.dwsep_forward(values[:, :, None], p, "frontend.conv1", k1, s1)
    r2, c2 = L.dwsep_forward(r1, p, "frontend.conv2", k2, s2)
    flat = r2.reshape(r2.shape[0], -1)
    out, _ = L.linear_forward(flat, p, "frontend.proj")
    return out, ("conv", c1, c2, flat, r2.shape)


def _frontend_backward(dout, cache, p, grads):
    if cache[0] == "stacked":
        L.linear_backward(dout, cache[1], p, "frontend.proj", grads)
        return
    _, c1, c2, flat, r2_shape = cache
    dflat = L.linear_backward(dout, flat, p, "frontend.proj", grads)
    dr1 = L.dwsep_backward(dflat.reshape(r2_shape), c2, p, "frontend.conv2", grads)
    L.dwsep_backward(dr1, c1, p, "frontend.conv1", grads)


def conv_subsample_frontend(x, params):
    """(T, F) features to (T', D) frame embeddings, T' = ceil(ceil(T/2)/5)."""
    cfg = params.config
    if cfg.frontend != "conv_subsample":
        raise ConfigurationError("model does not use the conv_subsample frontend")
    return _frontend_forward(_feature_values(x, cfg), params, cfg)[0]


# -- blocks -----------------------------------------------------------------

def _transformer_forward(e, p, cfg, i, rng):
    pre = f"blocks.{i}"
    n1, cn1 = L.layer_norm_forward(e, p, f"{pre}.attn_norm", cfg.ln_eps)
    att, catt = L.mhsa_forward(n1, p, f"{pre}.attn", cfg.n_heads)
    att, m1 = L.dropout_forward(att, cfg.dropout, rng)
    e1 = e + att
    n2, cn2 = L.layer_norm_forward(e1, p, f"{pre}.ffn_norm", cfg.ln_eps)
    ff, cff = L.ffn_forward(n2, p, f"{pre}.ffn", "relu")
    ff, m2 = L.dropout_forward(ff, cfg.dropout, rng)
    return e1 + ff, (cn1, catt, m1, cn2, cff, m2)


def _transformer_backward(dout, cache, p, i, grads):
    pre = f"blocks.{i}"
    cn1, catt, m1, cn2, cff, m2 = cache
    dff = L.dropout_backward(dout, m2)
    dn2 = L.ffn_backward(dff, cff, p, f"{pre}.ffn", grads)
    de1 = dout + L.layer_norm_backward(dn2, cn2, p, f"{pre}.ffn_norm", grads)
    datt = L.dropout_backward(de1, m1)
    dn1 = L.mhsa_backward(datt, catt, p, f"{pre}.attn", grads)
    return de1 + L.layer_norm_backward(dn1, cn1, p, f"{pre}.attn_norm", grads)


def _conformer_forward(e, p, cfg, i, rng):
    pre = f"blocks.{i}"
    eps = cfg.ln_eps
    n1, cn1 = L.layer_norm_forward(e, p, f"{pre}.ffn1_norm", eps)
    f1, cf1 = L.ffn_forward(n1, p, f"{pre}.ffn1", "swish")
    f1, m1 = L.dropout_forward(f1, cfg.dropout, rng)
    e1 = e + 0.5 * f1
    n2, cn2 = L.layer_norm_forward(e1, p, f"{pre}.attn_norm", eps)
    att, catt = L.mhsa_forward(n2, p, f"{pre}.attn", cfg.n_heads)
    att, m2 = L.dropout_forward(att, cfg.dropout, rng)
    e2 = e1 + att
    n3, cn3 = L.layer_norm_forward(e2, p, f"{pre}.conv_norm", eps)
    cv, ccv = L.conv_module_forward(n3, p, f"{pre}.conv", eps)
    cv, m3 = L.dropout_forward(cv, cfg.dropout, rng)
    e3 = e2 + cv
    n4, cn4 = L.layer_norm_forward(e3, p, f"{pre}.ffn2_norm", eps)
    f2, cf2 = L.ffn_forward(n4, p, f"{pre}.ffn2", "swish")
    f2, m4 = L.dropout_forward(f2, cfg.dropout, rng)
    e4 = e3 + 0.5 * f2
    out, cout = L.layer_norm_forward(e4, p, f"{pre}.out_norm", eps)
    return out, (cn1, cf1, m1, cn2, catt, m2, cn3, ccv, m3, cn4, cf2, m4, cout)


def _conformer_backward(dout, cache, p, i, grads):
    pre = f"blocks.{i}"
    cn1, cf1, m1, cn2, catt, m2, cn3, ccv, m3, cn4, cf2, m4, cout = cache
    de4 = L.layer_norm_backward(dout, cout, p, f"{pre}.out_norm", grads)
    df2 = L.dropout_backward(0.5 * de4, m4)
    dn4 = L.ffn_backward(df2, cf2, p, f"{pre}.ffn2", grads)
    de3 = de4 + L.layer_norm_backward(dn4, cn4, p, f"{pre}.ffn2_norm", grads)
    dcv = L.dropout_backward(de3, m3)
    dn3 = L.conv_module_backward(dcv, ccv, p, f"{pre}.conv", grads)
    de2 = de3 + L.layer_norm_backward(dn3, cn3, p, f"{pre}.conv_norm", grads)
    datt = L.dropout_backward(de2, m2)
    dn2 = L.mhsa_backward(datt, catt, p, f"{pre}.attn", grads)
    de1 = de2 + L.layer_norm_backward(dn2, cn2, p, f"{pre}.attn_norm", grads)
    df1 = L.dropout_backward(0.5 * de1, m1)
    dn1 = L.ffn_backward(df1, cf1, p, f"{pre}.ffn1", grads)
    return de1 + L.layer_norm_backward(dn1, cn1, p, f"{pre}.ffn1_norm", grads)


def _check_block(e, params, index, arch):
    cfg = params.config
    if cfg.arch != arch:
        raise ConfigurationError(f"model is a {cfg.arch}, not a {arch}")
    if not 0 <= index < cfg.n_blocks:
        raise ConfigurationError(f"block index {index} out of range")
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != cfg.d_model:
        raise ConfigurationError(f"block input shape {e.shape}, expected (T, {cfg.d_model})")
    return e


def transformer_block(e, params, index=0):
    """Pre-norm block: e + MHSA(LN(e)), then + FFN(LN(.)) with a ReLU FFN."""
    e = _check_block(e, params, index, "transformer")
    return _transformer_forward(e, params, params.config, index, None)[0]


def conformer_block(e, params, index=0):
    """Half-step FFN, MHSA, convolution module, half-step FFN, LayerNorm."""
    e = _check_block(e, params, index, "conformer")
    return _conformer_forward(e, params, params.config, index, None)[0]


# -- full model -------------------------------------------------------------

@dataclass
class ForwardCache:
    params: object
    frontend: tuple
    blocks: list
    final_norm: tuple
    final: np.ndarray
    posteriors: np.ndarray


def forward(x, params, training=False, rng=None, return_cache=False):
    """Posteriors for one recording.

    Dropout (when configured) is only active with ``training=True`` and an
    ``rng``. With ``return_cache=True`` the result is ``(posteriors, cache)``.
    """
    cfg = params.config
    values = _feature_values(x, cfg)
    drop_rng = rng if training else None
    e, fcache = _frontend_forward(values, params, cfg)
    block_fwd = _transformer_forward if cfg.arch == "transformer" else _conformer_forward
    bcaches = []
    for i in range(cfg.n_blocks):
        e, c = block_fwd(e, params, cfg, i, drop_rng)
        bcaches.append(c)
    final, ncache = L.layer_norm_forward(e, params, "encoder_norm", cfg.ln_eps)
    logits, _ = L.linear_forward(final, params, "head")
    z = sigmoid(logits)
    post = PosteriorMatrix(z)
    if not return_cache:
        return post
    return post, ForwardCache(params, fcache, bcaches, ncache, final, z)


def backward(cache, params, dz):
    """Gradients of a scalar loss w.r.t. every parameter, given dL/dZ."""
    if params is not cache.params:
        same = all(np.array_equal(a, cache.params[n]) for n, a in params.items()) \
            if list(params) == list(cache.params) else False
        if not same:
            raise InternalError("forward cache was produced with different parameters")
    cfg = params.config
    dz = np.asarray(dz, dtype=np.float64)
    if dz.shape != cache.posteriors.shape:
        raise InternalError(f"upstream gradient shape {dz.shape} != {cache.posteriors.shape}")
    grads = {}
    z = cache.posteriors
    dlogits = dz * z * (1.0 - z)
    dfinal = L.linear_backward(dlogits, cache.final, params, "head", grads)
    de = L.layer_norm_backward(dfinal, cache.final_norm, params, "encoder_norm", grads)
    block_bwd = _transformer_backward if cfg.arch == "transformer" else _conformer_backward
    for i in reversed(range(cfg.n_blocks)):
        de = block_bwd(de, cache.blocks[i], params, i, grads)
    _frontend_backward(de, cache.frontend, params, grads)
    return {name: grads[name] for name in params}


# -- staged evaluation (used by the gradient checker) ------------------------

def stage_of(name, cfg):
    """Stage index owning a parameter: 0 frontend, 1..P blocks, P+1 output norm/head."""
    if name.startswith("frontend."):
        return 0
    if name.startswith("blocks."):
        return int(name.split(".")[1]) + 1
    return cfg.n_blocks + 1


def stage_inputs(x, params):
    """Inputs to every stage for the given parameters: [features, e_0, ..., e_P]."""
    cfg = params.config
    values = _feature_values(x, cfg)
    acts = [values]
    e = _frontend_forward(values, params, cfg)[0]
    acts.append(e)
    block_fwd = _transformer_forward if cfg.arch == "transformer" else _conformer_forward
    for i in range(cfg.n_blocks):
        e = block_fwd(e, params, cfg, i, None)[0]
        acts.append(e)
    return acts


def run_from(stage, a, params):
    """Posterior values computed from the input ``a`` of ``stage`` onwards."""
    cfg = params.config
    if stage == 0:
        a = _frontend_forward(a, params, cfg)[0]
        stage = 1
    block_fwd = _transformer_forward if cfg.arch == "transformer" else _conformer_forward
    for i in range(stage - 1, cfg.n_blocks):
        a = block_fwd(a, params, cfg, i, None)[0]
    final = L.layer_norm_forward(a, params, "encoder_norm", cfg.ln_eps)[0]
    return sigmoid(L.linear_forward(final, params, "head")[0])
