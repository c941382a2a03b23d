"""Spectral signal processing: resampling, filtering, STFT/iSTFT,
power-law compression and band split/splice"""

# import
## batteries
import os
import logging
from fractions import Fraction
## 3rd party
import numpy as np
from scipy import signal
## application
from FMSR.Utils import DataError

# logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


# constants
HR_RATE = 48000
N_FFT = 1024
HOP = 512
WINDOW = 'hann'
SINC_ZERO_CROSSINGS = 64
SINC_KAISER_BETA = 8.6    # >= 80 dB stopband
LOWPASS_TAPS = 513
SUPPORTED_RATES = (8000, 12000, 16000, 24000)
SUPPORTED_CUTOFFS = (80, 128, 170, 256)
MIN_CUTOFF_BINS = 80


class Waveform(object):
    """
    Mono audio: 1-D float64 samples and a sample rate (Hz).
    """
    def __init__(self, samples, sample_rate):
        self.samples = samples
        self.sample_rate = sample_rate

    @property
    def samples(self):
        return self._samples
    @samples.setter
    def samples(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise DataError('Waveform samples must be 1-D; got shape {}'.format(x.shape))
        if not np.isfinite(x).all():
            raise DataError('Waveform samples must be finite (NaN/Inf found)')
        self._samples = x
    @property
    def sample_rate(self):
        return self._sample_rate
    @sample_rate.setter
    def sample_rate(self, x):
        if int(x) != x or int(x) <= 0:
            raise DataError('Sample rate must be a positive integer; got {}'.format(x))
        self._sample_rate = int(x)

    @property
    def duration(self):
        """Duration in seconds"""
        return len(self) / float(self.sample_rate)

    def __len__(self):
        return self._samples.shape[0]

    def __repr__(self):
        return 'Waveform(n={}, sample_rate={})'.format(len(self), self.sample_rate)


class ComplexSpectrogram(object):
    """
    One-sided STFT grid, shape F x T x 2 (real, imaginary),
    with the Nyquist bin discarded.
    """
    def __init__(self, coeffs, n_fft=N_FFT, hop=HOP, window=WINDOW,
                 compressed=False, alpha=1.0, sample_rate=HR_RATE):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.ndim != 3 or coeffs.shape[2] != 2:
            raise DataError('Spectrogram grid must be F x T x 2; got {}'.format(coeffs.shape))
        if not np.isfinite(coeffs).all():
            raise DataError('Spectrogram coefficients must be finite')
        if compressed and not 0 < alpha <= 1:
            raise DataError('Compression exponent must be in (0, 1]; got {}'.format(alpha))
        self.coeffs = coeffs
        self.n_fft = int(n_fft)
        self.hop = int(hop)
        self.window = window
        self.compressed = bool(compressed)
        self.alpha = float(alpha)
        self.sample_rate = int(sample_rate)

    @property
    def n_bins(self):
        return self.coeffs.shape[0]
    @property
    def n_frames(self):
        return self.coeffs.shape[1]

    def complex(self):
        """Coefficients as a complex F x T array"""
        return self.coeffs[..., 0] + 1j * self.coeffs[..., 1]

    def like(self, coeffs, **kwargs):
        """New spectrogram sharing this one's STFT parameters"""
        params = dict(n_fft=self.n_fft, hop=self.hop, window=self.window,
                      compressed=self.compressed, alpha=self.alpha,
                      sample_rate=self.sample_rate)
        params.update(kwargs)
        return ComplexSpectrogram(coeffs, **params)

    def header(self):
        return {'F' : self.n_bins, 'T' : self.n_frames, 'n_fft' : self.n_fft,
                'hop' : self.hop, 'window' : self.window,
                'compressed' : self.compressed, 'alpha' : self.alpha,
                'sample_rate' : self.sample_rate}

    def __repr__(self):
        return 'ComplexSpectrogram({})'.format(self.header())


class BandLayout(object):
    """
    Frequency band bookkeeping: total bins F, cutoff bin F1 of the input
    bandwidth, and the smallest supported cutoff F1_min which fixes the
    size of the generated band (F - F1_min).
    """
    def __init__(self, cutoff_bins, total_bins=N_FFT // 2,
                 min_cutoff_bins=MIN_CUTOFF_BINS):
        self.total_bins = int(total_bins)
        self.min_cutoff_bins = int(min_cutoff_bins)
        self.cutoff_bins = cutoff_bins

    @property
    def cutoff_bins(self):
        return self._cutoff_bins
    @cutoff_bins.setter
    def cutoff_bins(self, x):
        x = int(x)
        if not self.min_cutoff_bins <= x < self.total_bins:
            msg = 'Cutoff bin {} outside [{}, {})'
            raise DataError(msg.format(x, self.min_cutoff_bins, self.total_bins))
        self._cutoff_bins = x
    @property
    def gen_bins(self):
        return self.total_bins - self.min_cutoff_bins
    @property
    def overlap_bins(self):
        """Generated bins that fall inside the known low band"""
        return self.cutoff_bins - self.min_cutoff_bins

    @classmethod
    def for_rate(cls, rate, policy='nearest', rates=SUPPORTED_RATES,
                 cutoffs=SUPPORTED_CUTOFFS, **kwargs):
        """
        Layout for an input sample rate.

        Parameters
        ----------
        rate : int
            Input sample rate (Hz)
        policy : str
            'strict' = only the supported rates;
            'nearest' = map to the nearest supported rate (ties go low);
            'floor' = map to the largest supported rate <= `rate`
        rates, cutoffs : sequences
            Supported rates and their cutoff bins

        Returns
        -------
        (BandLayout, supported rate used)
        """
        rates = [int(r) for r in rates]
        supported = ', '.join(str(r) for r in rates)
        if rate in rates:
            mapped = int(rate)
        elif policy == 'strict' or rate < min(rates) or rate >= HR_RATE:
            msg = 'Unsupported input rate {} Hz; supported rates: {}'
            raise DataError(msg.format(rate, supported))
        elif policy == 'floor':
            mapped = max(r for r in rates if r <= rate)
        elif policy == 'nearest':
            mapped = min(rates, key=lambda r: (abs(r - rate), r))
        else:
            raise DataError('Unknown rate mapping policy: {}'.format(policy))
        if mapped != rate:
            msg = 'Input rate {} Hz mapped to supported rate {} Hz ({} policy)'
            logging.warning(msg.format(rate, mapped, policy))
        cutoff = dict(zip(rates, cutoffs))[mapped]
        return cls(cutoff, **kwargs), mapped

    def __repr__(self):
        msg = 'BandLayout(F={}, F1={}, F1_min={}, gen_bins={})'
        return msg.format(self.total_bins, self.cutoff_bins,
                          self.min_cutoff_bins, self.gen_bins)


# resampling / filtering
def sinc_resample(w, target_rate, zero_crossings=SINC_ZERO_CROSSINGS,
                  beta=SINC_KAISER_BETA):
    """
    Band-limited resampling with a Kaiser-windowed sinc kernel.

    Parameters
    ----------
    w : Waveform
    target_rate : int
        Output sample rate (Hz)
    zero_crossings : int
        Kernel half-width in zero crossings of the anti-aliasing sinc
    beta : float
        Kaiser window shape

    Returns
    -------
    Waveform with length round(len(w) * target_rate / w.sample_rate)
    """
    if int(target_rate) <= 0:
        raise DataError('Target rate must be positive; got {}'.format(target_rate))
    target_rate = int(target_rate)
    n_out = int(round(len(w) * target_rate / float(w.sample_rate)))
    if len(w) == 0:
        return Waveform(np.zeros(0), target_rate)
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), target_rate)
    ratio = Fraction(target_rate, w.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    max_rate = max(up, down)
    h = signal.firwin(2 * zero_crossings * max_rate + 1, 1.0 / max_rate,
                      window=('kaiser', beta))
    y = signal.resample_poly(w.samples, up, down, window=h)
    return Waveform(_fit_length(y, n_out), target_rate)

def _fit_length(x, n):
    if x.shape[0] >= n:
        return x[:n]
    return np.pad(x, (0, n - x.shape[0]))

def hann_lowpass_taps(cutoff_hz, sample_rate, n_taps=LOWPASS_TAPS):
    """Hann-windowed ideal low-pass FIR (linear phase, odd length)"""
    if not 0 < cutoff_hz < sample_rate / 2.0:
        msg = 'Cutoff {} Hz must lie in (0, {}) Hz'
        raise DataError(msg.format(cutoff_hz, sample_rate / 2.0))
    return signal.firwin(n_taps, cutoff_hz, window='hann', fs=sample_rate)

def lowpass_hann(w, cutoff_hz, n_taps=LOWPASS_TAPS):
    """
    Linear-phase low-pass with a Hann-windowed sinc; the group delay
    ((n_taps - 1) / 2 samples) is removed so output aligns with input.

    Parameters
    ----------
    w : Waveform
    cutoff_hz : float
        Cutoff frequency, 0 < cutoff_hz < w.sample_rate / 2

    Returns
    -------
    Waveform of the same length and rate
    """
    h = hann_lowpass_taps(cutoff_hz, w.sample_rate, n_taps)
    if len(w) == 0:
        return Waveform(np.zeros(0), w.sample_rate)
    y = np.convolve(w.samples, h, mode='full')
    delay = (len(h) - 1) // 2
    return Waveform(y[delay:delay + len(w)], w.sample_rate)


# STFT
def analysis_window(n_fft=N_FFT, window=WINDOW):
    """Periodic analysis window"""
    return signal.get_window(window, n_fft, fftbins=True)

def n_frames(n_samples, hop=HOP):
    """Frame count of the centered STFT"""
    return 1 + n_samples // hop

def stft(w, n_fft=N_FFT, hop=HOP, window=WINDOW):
    """
    Centered one-sided STFT (reflect padding of n_fft/2 on both sides);
    the Nyquist bin is dropped, so F = n_fft/2 and T = 1 + len(w)//hop.

    Parameters
    ----------
    w : Waveform
        len(w) >= n_fft

    Returns
    -------
    ComplexSpectrogram (uncompressed)
    """
    if len(w) < n_fft:
        msg = 'Input of {} samples is shorter than the STFT window ({})'
        raise DataError(msg.format(len(w), n_fft))
    x = np.pad(w.samples, n_fft // 2, mode='reflect')
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]
    frames = frames[:n_frames(len(w), hop)]
    spec = np.fft.rfft(frames * analysis_window(n_fft, window), axis=-1)
    spec = spec[:, :n_fft // 2].T
    coeffs = np.stack([spec.real, spec.imag], axis=-1)
    return ComplexSpectrogram(coeffs, n_fft=n_fft, hop=hop, window=window,
                              sample_rate=w.sample_rate)

def istft(s, length=None):
    """
    Inverse of `stft`: a zero Nyquist bin is re-appended, frames are
    windowed, overlap-added and divided by the summed squared window.

    Parameters
    ----------
    s : ComplexSpectrogram
        Uncompressed grid
    length : int
        Output length; default (T - 1) * hop

    Returns
    -------
    Waveform at the sample rate of the analysed signal
    """
    if s.compressed:
        raise DataError('istft needs an uncompressed spectrogram; expand() it first')
    n_fft, hop = s.n_fft, s.hop
    if s.n_bins != n_fft // 2:
        msg = 'Spectrogram has {} bins; expected {} for n_fft={}'
        raise DataError(msg.format(s.n_bins, n_fft // 2, n_fft))
    if length is None:
        length = (s.n_frames - 1) * hop
    spec = s.complex()
    spec = np.concatenate([spec, np.zeros((1, spec.shape[1]))], axis=0)
    frames = np.fft.irfft(spec.T, n=n_fft, axis=-1)
    win = analysis_window(n_fft, s.window)
    n_total = n_fft + hop * (s.n_frames - 1)
    y = np.zeros(n_total)
    env = np.zeros(n_total)
    for i, frame in enumerate(frames):
        y[i * hop:i * hop + n_fft] += frame * win
        env[i * hop:i * hop + n_fft] += win ** 2
    nz = env > 1e-11
    y[nz] /= env[nz]
    y = y[n_fft // 2:]
    return Waveform(_fit_length(y, length), s.sample_rate)


# power-law compression
def compress(s, alpha):
    """
    Power-law magnitude compression |X| -> |X|^alpha, phase kept.
    Zero coefficients stay zero.
    """
    if s.compressed:
        raise DataError('Spectrogram is already compressed (alpha={})'.format(s.alpha))
    if not 0 < alpha <= 1:
        raise DataError('alpha must be in (0, 1]; got {}'.format(alpha))
    return s.like(_scale_magnitude(s.coeffs, alpha), compressed=True, alpha=alpha)

def expand(s, alpha):
    """Inverse of `compress`: |X| -> |X|^(1/alpha), phase kept"""
    if not s.compressed:
        raise DataError('Spectrogram is not compressed')
    if not np.isclose(s.alpha, alpha, rtol=0, atol=1e-12):
        msg = 'alpha mismatch: spectrogram compressed with {}, expand called with {}'
        raise DataError(msg.format(s.alpha, alpha))
    return s.like(_scale_magnitude(s.coeffs, 1.0 / alpha), compressed=False, alpha=1.0)

def _scale_magnitude(coeffs, power):
    mag = np.sqrt(np.sum(coeffs ** 2, axis=-1, keepdims=True))
    gain = np.zeros_like(mag)
    nz = mag > 0
    gain[nz] = mag[nz] ** (power - 1.0)
    return coeffs * gain


# band split / splice
def split_bands(s, layout):
    """
    Split at the cutoff bin F1.

    Returns
    -------
    (low, high) : bins [0, F1) and [F1, F)
    """
    if layout.cutoff_bins >= s.n_bins:
        msg = 'Cutoff bin {} must be < the number of bins ({})'
        raise DataError(msg.format(layout.cutoff_bins, s.n_bins))
    f1 = layout.cutoff_bins
    return s.like(s.coeffs[:f1].copy()), s.like(s.coeffs[f1:].copy())

def splice_bands(low, gen_high, layout):
    """
    Join the known low band with the generated band: the first
    (F1 - F1_min) generated bins overlap the low band and are dropped.

    Parameters
    ----------
    low : ComplexSpectrogram
        F1 bins
    gen_high : ComplexSpectrogram or array
        F - F1_min generated bins
    layout : BandLayout

    Returns
    -------
    ComplexSpectrogram with F bins; bins [0, F1) are `low` unchanged
    """
    gen = gen_high.coeffs if hasattr(gen_high, 'coeffs') else np.asarray(gen_high)
    if low.n_bins != layout.cutoff_bins:
        msg = 'Low band has {} bins; layout cutoff is {}'
        raise DataError(msg.format(low.n_bins, layout.cutoff_bins))
    if gen.shape != (layout.gen_bins, low.n_frames, 2):
        msg = 'Generated band has shape {}; expected {}'
        raise DataError(msg.format(gen.shape, (layout.gen_bins, low.n_frames, 2)))
    coeffs = np.concatenate([low.coeffs, gen[layout.overlap_bins:]], axis=0)
    return low.like(coeffs)


# spectrogram dump
def save_spectrogram(out_file, s):
    """Write the grid plus its header {F, T, n_fft, hop, ...} to a .npz file"""
    header = s.header()
    np.savez(out_file, coeffs=s.coeffs,
             **{k : np.asarray(v) for k,v in header.items()})
    if not out_file.endswith('.npz'):
        out_file += '.npz'
    logging.info('File written: {}'.format(out_file))
    return out_file

def load_spectrogram(in_file):
    """Read a spectrogram written by `save_spectrogram`"""
    if not os.path.isfile(in_file):
        raise DataError('"{}" does not exist'.format(in_file))
    try:
        with np.load(in_file) as d:
            s = ComplexSpectrogram(d['coeffs'], n_fft=int(d['n_fft']),
                                   hop=int(d['hop']), window=str(d['window']),
                                   compressed=bool(d['compressed']),
                                   alpha=float(d['alpha']),
                                   sample_rate=int(d['sample_rate'])
                                   if 'sample_rate' in d else HR_RATE)
            F, T = int(d['F']), int(d['T'])
    except (KeyError, ValueError, OSError) as e:
        raise DataError('Cannot read spectrogram file "{}": {}'.format(in_file, e))
    if (F, T) != (s.n_bins, s.n_frames):
        raise DataError('Spectrogram header {}x{} does not match grid'.format(F, T))
    return s
