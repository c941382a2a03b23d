"""Learnable components: feature encoder, conditioning assembly and the
ConvNeXt-V2 U-Net vector field estimator (VFE).

Tensor layout inside the model is (batch, channel, frequency, time); band
grids F x T x 2 map to (2, F, T) with `grid_to_tensor`.
"""

# import
## batteries
import logging
from collections import OrderedDict
## 3rd party
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
## application
from FMSR.Utils import DataError, NumericError
from FMSR.RunConfig import VfeConfig

# logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


# embeddings
def freq_positional_embedding(num_bins, dim):
    """
    Sinusoidal positional embedding of frequency bins.

    Row k = [sin(k w_0), cos(k w_0), sin(k w_1), cos(k w_1), ...]
    with w_i = 1 / 10000^(2i/dim).

    Returns
    -------
    np.ndarray, shape (num_bins, dim)
    """
    if dim % 2 != 0:
        raise DataError('Embedding dimension must be even; got {}'.format(dim))
    pos = np.arange(num_bins, dtype=np.float64)
    return _sinusoid(pos[:, None], dim, np)

def sinusoidal_embedding(positions, dim):
    """Torch version of the same construction for arbitrary (real) positions"""
    if dim % 2 != 0:
        raise DataError('Embedding dimension must be even; got {}'.format(dim))
    return _sinusoid(positions.reshape(-1, 1), dim, torch)

def _sinusoid(pos, dim, xp):
    i = xp.arange(dim // 2, dtype=pos.dtype) if xp is np else \
        torch.arange(dim // 2, dtype=pos.dtype, device=pos.device)
    freqs = 1.0 / 10000.0 ** (2 * i / dim)
    angles = pos * freqs[None, :]
    emb = xp.stack([xp.sin(angles), xp.cos(angles)], -1)
    return emb.reshape(pos.shape[0], dim)

def grid_to_tensor(coeffs):
    """F x T x 2 grid -> float32 tensor (2, F, T)"""
    coeffs = np.ascontiguousarray(np.transpose(coeffs, (2, 0, 1)))
    return torch.from_numpy(coeffs).float()

def tensor_to_grid(x):
    """(2, F, T) tensor -> float64 F x T x 2 grid"""
    return x.detach().cpu().double().numpy().transpose(1, 2, 0)


# building blocks
class GRN(nn.Module):
    """
    Global response normalization (ConvNeXt V2), channels-last input.
    `dims` are the spatial axes the L2 response is aggregated over:
    (1, 2) = frequency and time, (1,) = frequency only (frame-local).
    """
    def __init__(self, dim, dims=(1, 2)):
        super(GRN, self).__init__()
        self.dims = tuple(dims)
        self.gamma = nn.Parameter(torch.zeros(1, 1, 1, dim))
        self.beta = nn.Parameter(torch.zeros(1, 1, 1, dim))

    def forward(self, x):
        gx = torch.norm(x, p=2, dim=self.dims, keepdim=True)
        nx = gx / (gx.mean(dim=-1, keepdim=True) + 1e-6)
        return self.gamma * (x * nx) + self.beta + x


class ConvNeXtV2Block(nn.Module):
    """
    Depthwise k x k conv -> LayerNorm -> pointwise expansion -> GELU -> GRN
    -> pointwise projection, with a residual connection. If `emb_dim` is
    set, a linear projection of the global embedding is added to the input
    of the block.
    """
    def __init__(self, dim, emb_dim=None, kernel_size=7, expansion=4,
                 grn_dims=(1, 2)):
        super(ConvNeXtV2Block, self).__init__()
        self.emb_proj = nn.Linear(emb_dim, dim) if emb_dim else None
        self.dwconv = nn.Conv2d(dim, dim, kernel_size,
                                padding=kernel_size // 2, groups=dim)
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self.pwconv1 = nn.Linear(dim, expansion * dim)
        self.act = nn.GELU()
        self.grn = GRN(expansion * dim, dims=grn_dims)
        self.pwconv2 = nn.Linear(expansion * dim, dim)

    def forward(self, x, emb=None):
        h = x
        if self.emb_proj is not None and emb is not None:
            h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.dwconv(h)
        h = h.permute(0, 2, 3, 1)
        h = self.pwconv2(self.grn(self.act(self.pwconv1(self.norm(h)))))
        return x + h.permute(0, 3, 1, 2)


class FeatureEncoder(nn.Module):
    """
    Low-band encoder: stem conv, additive conditioning on the low-band
    positional slice p_lf and the rate embedding e_sr, a stack of
    frame-local ConvNeXt-V2 layers, adaptive average pooling of the
    frequency axis to a fixed number of bins and a projection to D.
    Output c_lf has shape (B, T, D) whatever the input band size F1.
    """
    def __init__(self, cfg):
        super(FeatureEncoder, self).__init__()
        C, D = cfg.encoder_channels, cfg.d_cond
        self.stem = nn.Conv2d(2, C, 3, padding=1)
        self.pos_proj = nn.Linear(D, C)
        self.sr_proj = nn.Linear(D, C)
        self.layers = nn.ModuleList([
            ConvNeXtV2Block(C, kernel_size=cfg.kernel_size,
                            expansion=cfg.expansion, grn_dims=(1,))
            for _ in range(cfg.encoder_layers)])
        self.pool = nn.AdaptiveAvgPool2d((cfg.encoder_pool_bins, None))
        self.proj = nn.Linear(C * cfg.encoder_pool_bins, D)
        self.norm = nn.LayerNorm(D)

    def forward(self, x_l, p_lf, e_sr):
        h = self.stem(x_l)
        h = h + self.pos_proj(p_lf).t()[None, :, :, None]
        h = h + self.sr_proj(e_sr)[:, :, None, None]
        for layer in self.layers:
            h = layer(h)
        h = self.pool(h)
        B, C, P, T = h.shape
        h = h.permute(0, 3, 1, 2).reshape(B, T, C * P)
        return self.norm(self.proj(h))


class FiLM(nn.Module):
    """
    Per-frequency-row affine parameters (gamma, beta) from the high-band
    positional embedding; identity at initialization (gamma=1, beta=0).
    """
    def __init__(self, dim):
        super(FiLM, self).__init__()
        self.dim = dim
        self.linear = nn.Linear(dim, 2 * dim)
        nn.init.zeros_(self.linear.weight)
        with torch.no_grad():
            self.linear.bias.copy_(torch.cat([torch.ones(dim), torch.zeros(dim)]))

    def forward(self, p):
        gamma, beta = self.linear(p).chunk(2, dim=-1)
        return gamma, beta


class VectorFieldEstimator(nn.Module):
    """
    U-Net over the generation band. Encoder stages of ConvNeXt-V2 blocks
    are separated by strided 2x2 convolutions (resolution halves, channels
    double); a bottleneck and a mirrored decoder with transposed-conv
    upsampling and skip connections restore the input resolution.
    """
    def __init__(self, cfg):
        super(VectorFieldEstimator, self).__init__()
        D = cfg.d_cond
        chs = cfg.channels
        n = cfg.n_stages
        block = lambda c: ConvNeXtV2Block(c, emb_dim=D,
                                          kernel_size=cfg.kernel_size,
                                          expansion=cfg.expansion)
        self.film = FiLM(D)
        self.time_mlp = nn.Sequential(nn.Linear(D, 4 * D), nn.GELU(),
                                      nn.Linear(4 * D, D))
        self.stem = nn.Conv2d(2 + D, chs[0], 3, padding=1)
        self.enc_stages = nn.ModuleList([
            nn.ModuleList([block(chs[i]) for _ in range(cfg.stage_depths[i])])
            for i in range(n)])
        self.downs = nn.ModuleList([
            nn.Conv2d(chs[i], chs[i + 1], 2, stride=2) for i in range(n - 1)])
        self.bottleneck = nn.ModuleList([
            block(chs[-1]) for _ in range(cfg.bottleneck_depth)])
        self.ups = nn.ModuleList([
            nn.ConvTranspose2d(chs[i + 1], chs[i], 2, stride=2)
            for i in range(n - 1)])
        self.merges = nn.ModuleList([
            nn.Conv2d(2 * chs[i], chs[i], 1) for i in range(n)])
        self.dec_stages = nn.ModuleList([
            nn.ModuleList([block(chs[i]) for _ in range(cfg.stage_depths[i])])
            for i in range(n)])
        self.head = nn.Conv2d(chs[0], 2, 1)

    def forward(self, x_t, spatial, emb):
        n = len(self.enc_stages)
        h = self.stem(torch.cat([x_t, spatial], dim=1))
        skips = []
        for i, stage in enumerate(self.enc_stages):
            for blk in stage:
                h = blk(h, emb)
            skips.append(h)
            if i < n - 1:
                h = self.downs[i](h)
        for blk in self.bottleneck:
            h = blk(h, emb)
        for i in reversed(range(n)):
            if i < n - 1:
                h = self.ups[i](h)
            h = self.merges[i](torch.cat([h, skips[i]], dim=1))
            for blk in self.dec_stages[i]:
                h = blk(h, emb)
        return self.head(h)


class ConditioningSet(object):
    """
    Condition bundle for one batch: the frame-wise acoustic feature c_lf
    (B, T, D), the rate-embedding indices (B,) and a per-item flag that
    swaps c_lf for the learnable null embedding.
    """
    def __init__(self, c_lf, sr_index, use_null=None):
        self.c_lf = c_lf
        self.sr_index = sr_index
        if use_null is None:
            use_null = torch.zeros(c_lf.shape[0], dtype=torch.bool,
                                   device=c_lf.device)
        self.use_null = use_null

    @property
    def n_frames(self):
        return self.c_lf.shape[1]

    def with_null(self, use_null=True):
        """Copy with every item's null flag set to `use_null`"""
        flags = torch.full_like(self.use_null, bool(use_null))
        return ConditioningSet(self.c_lf, self.sr_index, flags)

    def repeat(self, other):
        """Concatenate with another set along the batch axis"""
        return ConditioningSet(torch.cat([self.c_lf, other.c_lf]),
                               torch.cat([self.sr_index, other.sr_index]),
                               torch.cat([self.use_null, other.use_null]))


class FlowSR(nn.Module):
    """
    Full conditional vector field v(t, X_t, c): rate embedding (shared by
    the encoder and the global embedding), null embedding, frequency
    positional embedding, feature encoder and U-Net.
    """
    def __init__(self, cfg=None):
        super(FlowSR, self).__init__()
        cfg = cfg or VfeConfig()
        self.config = cfg
        D = cfg.d_cond
        self.sr_embedding = nn.Embedding(cfg.n_rates, D)
        self.null_embedding = nn.Parameter(torch.randn(D) * 0.02)
        pos = freq_positional_embedding(cfg.total_bins, D)
        self.register_buffer('freq_pos', torch.from_numpy(pos).float(),
                             persistent=False)
        self.encoder = FeatureEncoder(cfg)
        self.vfe = VectorFieldEstimator(cfg)

    @property
    def min_cutoff_bins(self):
        return self.config.total_bins - self.config.gen_bins

    def feature_encode(self, x_l, sr_index):
        """
        Parameters
        ----------
        x_l : tensor (B, 2, F1, T)
            Compressed low band
        sr_index : tensor (B,)
            Rate embedding indices

        Returns
        -------
        c_lf : tensor (B, T, D)
        """
        f1 = x_l.shape[2]
        if f1 < self.min_cutoff_bins:
            msg = 'Low band has {} bins; at least {} required'
            raise DataError(msg.format(f1, self.min_cutoff_bins))
        p_lf = self.freq_pos[:f1]
        e_sr = self.sr_embedding(sr_index)
        return self.encoder(x_l, p_lf, e_sr)

    def null_condition(self, n_frames, batch=1):
        """Null vector broadcast to (batch, n_frames, D)"""
        return self.null_embedding[None, None, :].expand(batch, n_frames, -1)

    def assemble_condition(self, c_lf):
        """
        FiLM of the frequency-broadcast c_lf by the high-band positional
        slice: out[f, t] = gamma(p_hf[f]) * c_lf[t] + beta(p_hf[f]).

        Returns
        -------
        tensor (B, D, F - F1_min, T)
        """
        p_hf = self.freq_pos[self.min_cutoff_bins:]
        gamma, beta = self.vfe.film(p_hf)
        out = gamma[None, :, None, :] * c_lf[:, None, :, :] + beta[None, :, None, :]
        return out.permute(0, 3, 1, 2)

    def global_embedding(self, t, sr_index):
        """Time embedding e_t plus rate embedding e_sr, shape (B, D)"""
        te = sinusoidal_embedding(t * self.config.time_scale, self.config.d_cond)
        return self.vfe.time_mlp(te.to(self.null_embedding.dtype)) + \
            self.sr_embedding(sr_index)

    def forward(self, t, x_t, cond):
        """
        Vector field estimate.

        Parameters
        ----------
        t : float or tensor (B,)
        x_t : tensor (B, 2, F - F1_min, T)
        cond : ConditioningSet

        Returns
        -------
        tensor shaped like x_t
        """
        B, _, Fg, T = x_t.shape
        if Fg != self.config.gen_bins:
            msg = 'Generation band has {} bins; model expects {}'
            raise DataError(msg.format(Fg, self.config.gen_bins))
        if cond.c_lf.shape[:2] != (B, T):
            msg = 'Condition shape {} does not match input batch/frames ({}, {})'
            raise DataError(msg.format(tuple(cond.c_lf.shape), B, T))
        if not torch.is_tensor(t):
            t = torch.tensor(float(t))
        t = t.to(x_t).reshape(-1).expand(B)
        c_lf = torch.where(cond.use_null[:, None, None],
                           self.null_condition(T, B), cond.c_lf)
        # right-pad time to a multiple of the U-Net downsampling factor
        pad = (-T) % self.config.downsample_factor
        if pad:
            x_t = F.pad(x_t, (0, pad))
            c_lf = F.pad(c_lf, (0, 0, 0, pad))
        spatial = self.assemble_condition(c_lf)
        emb = self.global_embedding(t, cond.sr_index)
        out = self.vfe(x_t, spatial, emb)[..., :T]
        if not torch.isfinite(out).all():
            raise NumericError('Non-finite activations in the vector field estimator')
        return out


def build_model(cfg=None, seed=None):
    """FlowSR from a VfeConfig (or a validated run config)"""
    if cfg is not None and not isinstance(cfg, VfeConfig):
        cfg = VfeConfig.from_config(cfg)
    if seed is not None:
        torch.manual_seed(int(seed))
    return FlowSR(cfg)

def count_parameters(model):
    """
    Number of learnable scalars per top-level component.

    Returns
    -------
    OrderedDict : {component : count, ..., 'total' : count}
    """
    counts = OrderedDict()
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        component = name.split('.')[0]
        counts[component] = counts.get(component, 0) + p.numel()
    counts['total'] = sum(counts.values())
    return counts
