"""End-to-end super-resolution: LR waveform -> 48 kHz waveform"""

# import
## batteries
import logging
## 3rd party
import numpy as np
import torch
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
## application
from FMSR import SpecDSP
from FMSR import FlowCore
from FMSR.Utils import DataError, check_finite
from FMSR.SpecDSP import Waveform, BandLayout, HR_RATE
from FMSR.VfeModel import ConditioningSet, grid_to_tensor, tensor_to_grid

# logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


LIMITER_DBFS = -1.0


class InferenceOptions(object):
    """
    Sampling options of `super_resolve`.
    """
    def __init__(self, omega=1.5, steps=4, seed=None, rate_mapping='nearest',
                 chunk_seconds=10.0, overlap_seconds=0.5, limiter=False,
                 alpha=0.2, rates=SpecDSP.SUPPORTED_RATES,
                 cutoffs=SpecDSP.SUPPORTED_CUTOFFS, n_fft=SpecDSP.N_FFT,
                 hop=SpecDSP.HOP):
        self.omega = float(omega)
        self.steps = int(steps)
        self.seed = seed
        self.rate_mapping = rate_mapping
        self.chunk_seconds = float(chunk_seconds)
        self.overlap_seconds = float(overlap_seconds)
        self.limiter = bool(limiter)
        self.alpha = float(alpha)
        self.rates = [int(x) for x in rates]
        self.cutoffs = [int(x) for x in cutoffs]
        self.n_fft = int(n_fft)
        self.hop = int(hop)
        if self.omega < 0:
            raise DataError('omega must be >= 0; got {}'.format(omega))
        if self.steps < 1:
            raise DataError('steps must be >= 1; got {}'.format(steps))
        if self.overlap_seconds >= self.chunk_seconds:
            raise DataError('Chunk overlap must be shorter than the chunk')

    @classmethod
    def from_config(cls, cfg, **kwargs):
        """Options from a validated run config; keyword args override"""
        i = cfg['inference']
        opts = {'omega' : i['omega'], 'steps' : i['steps'],
                'rate_mapping' : i['rate_mapping'],
                'chunk_seconds' : i['chunk_seconds'],
                'overlap_seconds' : i['overlap_seconds'],
                'limiter' : i['limiter'], 'alpha' : cfg['stft']['alpha'],
                'rates' : cfg['data']['rates'],
                'cutoffs' : cfg['data']['cutoff_bins'],
                'n_fft' : cfg['stft']['n_fft'], 'hop' : cfg['stft']['hop']}
        opts.update({k:v for k,v in kwargs.items() if v is not None})
        return cls(**opts)


def resolve_seed(seed=None):
    """Noise seed; drawn from entropy when not given"""
    if seed is None:
        seed = int(np.random.default_rng().integers(0, 2 ** 31 - 1))
        logging.info('Noise seed drawn from entropy: {}'.format(seed))
    return int(seed)

def conditional_field(model, c_lf, sr_index, omega):
    """
    Guided vector field for the ODE solver. omega = 1 evaluates the
    conditional branch only; otherwise the conditional and null branches
    run as one batch and are combined with `FlowCore.cfg_combine`.
    """
    cond = ConditioningSet(c_lf, sr_index)
    if omega == 1:
        return lambda t, x: model(t, x, cond)
    both = cond.repeat(cond.with_null(True))
    def field(t, x):
        v = model(t, torch.cat([x, x]), both)
        v_cond, v_uncond = v.chunk(2)
        return FlowCore.cfg_combine(v_cond, v_uncond, omega)
    return field

def generate_spectrogram(w_hr, layout, sr_index, model, omega=1.5, steps=4,
                         seed=0, alpha=0.2, n_fft=SpecDSP.N_FFT, hop=SpecDSP.HOP):
    """
    Spectral-domain half of the chain on an already upsampled input.

    Parameters
    ----------
    w_hr : Waveform
        Input upsampled to 48 kHz
    layout : BandLayout
    sr_index : int
        Rate embedding index
    model : FlowSR

    Returns
    -------
    (spliced : ComplexSpectrogram, x_l : ComplexSpectrogram)
        Both compressed; bins [0, F1) of `spliced` are `x_l`
    """
    spec = SpecDSP.compress(SpecDSP.stft(w_hr, n_fft, hop), alpha)
    x_l, _ = SpecDSP.split_bands(spec, layout)
    check_finite(x_l.coeffs, 'stft')
    param = next(model.parameters())
    x_l_t = grid_to_tensor(x_l.coeffs)[None].to(param)
    sr = torch.tensor([sr_index], dtype=torch.long, device=param.device)
    shape = (1, 2, layout.gen_bins, x_l.n_frames)
    generator = torch.Generator().manual_seed(int(seed))
    x_0 = torch.randn(shape, generator=generator).to(param)
    model.eval()
    with torch.no_grad():
        c_lf = model.feature_encode(x_l_t, sr)
        check_finite(c_lf, 'feature_encode')
        field = conditional_field(model, c_lf, sr, omega)
        x_1 = FlowCore.midpoint_solve(field, x_0, steps)
    gen = tensor_to_grid(x_1[0])
    return SpecDSP.splice_bands(x_l, gen, layout), x_l

def _synthesize(spliced, alpha, length):
    out = SpecDSP.istft(SpecDSP.expand(spliced, alpha), length=length)
    check_finite(out.samples, 'istft')
    return out

def _chunk_bounds(n, chunk, overlap):
    """
    [(start, end), ...] covering [0, n); every chunk has `chunk` samples
    (the last one is aligned to the end) and neighbours overlap by at
    least `overlap` samples.
    """
    if n <= chunk:
        return [(0, n)]
    step = chunk - overlap
    bounds = []
    start = 0
    while start + chunk < n:
        bounds.append((start, start + chunk))
        start += step
    bounds.append((n - chunk, n))
    return bounds

def _crossfade(pieces, bounds, n):
    out = np.zeros(n)
    for i, ((start, end), y) in enumerate(zip(bounds, pieces)):
        gain = np.ones(end - start)
        if i > 0:
            ov = bounds[i - 1][1] - start
            if ov > 0:
                gain[:ov] = np.linspace(0, 1, ov + 2)[1:-1]
        if i < len(bounds) - 1:
            ov = end - bounds[i + 1][0]
            if ov > 0:
                gain[-ov:] = 1 - np.linspace(0, 1, ov + 2)[1:-1]
        out[start:end] += y * gain
    return out

def apply_limiter(w, ceiling_dbfs=LIMITER_DBFS):
    """Scale down so that the peak does not exceed `ceiling_dbfs`"""
    ceiling = 10 ** (ceiling_dbfs / 20.0)
    peak = np.abs(w.samples).max() if len(w) > 0 else 0.0
    if peak <= ceiling:
        return w
    logging.info('Limiter: peak {:.3f} scaled to {:.1f} dBFS'.format(peak, ceiling_dbfs))
    return Waveform(w.samples * (ceiling / peak), w.sample_rate)

def super_resolve(w_lr, model, opts=None, return_spectrogram=False, **kwargs):
    """
    Super-resolve a band-limited waveform to 48 kHz.

    Chain: sinc upsampling to 48 kHz, STFT, power-law compression, split at
    the input cutoff bin, feature encoding, guided midpoint ODE solve from
    seeded Gaussian noise, splice, expansion and inverse STFT. Inputs
    longer than `chunk_seconds` are processed in overlapping chunks joined
    by linear cross-fades (chunk i uses seed + i).

    Parameters
    ----------
    w_lr : Waveform
        Input at a supported (or mappable) rate
    model : FlowSR
    opts : InferenceOptions
        Keyword args build one if not given (omega, steps, seed, ...)
    return_spectrogram : bool
        Also return the compressed output grid: the spliced pre-iSTFT grid
        for single-chunk inputs, the STFT of the output otherwise

    Returns
    -------
    Waveform at 48 kHz of round(len * 48000 / rate) samples
    (and the ComplexSpectrogram)
    """
    opts = opts or InferenceOptions(**kwargs)
    if len(opts.rates) != model.config.n_rates:
        msg = 'Model has {} rate embeddings; {} input rates configured'
        raise DataError(msg.format(model.config.n_rates, len(opts.rates)))
    if opts.n_fft // 2 != model.config.total_bins:
        msg = 'Model has {} frequency bins; n_fft={} gives {}'
        raise DataError(msg.format(model.config.total_bins, opts.n_fft,
                                   opts.n_fft // 2))
    layout, mapped = BandLayout.for_rate(w_lr.sample_rate, policy=opts.rate_mapping,
                                         rates=opts.rates, cutoffs=opts.cutoffs,
                                         min_cutoff_bins=model.min_cutoff_bins,
                                         total_bins=model.config.total_bins)
    sr_index = opts.rates.index(mapped)
    seed = resolve_seed(opts.seed)
    msg = 'Super-resolving {:.2f} s at {} Hz (cutoff bin {}): omega={} steps={} seed={}'
    logging.info(msg.format(w_lr.duration, w_lr.sample_rate, layout.cutoff_bins,
                            opts.omega, opts.steps, seed))
    w_hr = SpecDSP.sinc_resample(w_lr, HR_RATE)
    check_finite(w_hr.samples, 'sinc_resample')
    if len(w_hr) < opts.n_fft:
        msg = 'Input is too short: {} samples at 48 kHz; at least {} required'
        raise DataError(msg.format(len(w_hr), opts.n_fft))

    chunk = int(round(opts.chunk_seconds * HR_RATE))
    overlap = int(round(opts.overlap_seconds * HR_RATE))
    bounds = _chunk_bounds(len(w_hr), chunk, overlap)
    spliced = None
    if len(bounds) == 1:
        spliced, _ = generate_spectrogram(w_hr, layout, sr_index, model,
                                          omega=opts.omega, steps=opts.steps,
                                          seed=seed, alpha=opts.alpha,
                                          n_fft=opts.n_fft, hop=opts.hop)
        out = _synthesize(spliced, opts.alpha, len(w_hr))
    else:
        logging.info('Processing {} chunks of {} samples'.format(len(bounds), chunk))
        pieces = []
        for i, (start, end) in enumerate(bounds):
            piece = Waveform(w_hr.samples[start:end], HR_RATE)
            s, _ = generate_spectrogram(piece, layout, sr_index, model,
                                        omega=opts.omega, steps=opts.steps,
                                        seed=seed + i, alpha=opts.alpha,
                                        n_fft=opts.n_fft, hop=opts.hop)
            pieces.append(_synthesize(s, opts.alpha, end - start).samples)
        out = Waveform(_crossfade(pieces, bounds, len(w_hr)), HR_RATE)
    if opts.limiter:
        out = apply_limiter(out)
    if return_spectrogram:
        if spliced is None:
            spliced = SpecDSP.compress(SpecDSP.stft(out, opts.n_fft, opts.hop),
                                       opts.alpha)
        return out, spliced
    return out


# inspection
def magnitude_db(s, floor=1e-10):
    """Magnitude grid (F x T) in dB of an (optionally compressed) spectrogram"""
    if s.compressed:
        s = SpecDSP.expand(s, s.alpha)
    mag = np.sqrt(np.sum(s.coeffs ** 2, axis=-1))
    return 20 * np.log10(np.maximum(mag, floor))

def emit_spectrogram_image(s, out_file, cmap='magma', dynamic_range=80.0):
    """
    Render the dB magnitude to a raster image (height F, width T, low
    frequencies at the bottom). The color scale spans
    [max - dynamic_range, max] dB of the grid.

    Parameters
    ----------
    s : ComplexSpectrogram
    out_file : str
        Image file; format from the extension
    cmap : str
        Matplotlib colormap name
    dynamic_range : float
        dB shown below the maximum
    """
    db = magnitude_db(s)
    vmax = float(db.max())
    plt.imsave(out_file, db, cmap=cmap, vmin=vmax - dynamic_range, vmax=vmax,
               origin='lower')
    logging.info('File written: {}'.format(out_file))
    return out_file
