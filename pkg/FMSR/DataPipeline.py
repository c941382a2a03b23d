"""Corpus ingestion and training-pair synthesis"""

# import
## batteries
import os
import sys
import hashlib
import logging
from functools import partial
from multiprocessing import Pool
## 3rd party
import numpy as np
import pandas as pd
import torch
## application
from FMSR import Utils
from FMSR import SpecDSP
from FMSR.Utils import DataError
from FMSR.SpecDSP import Waveform, BandLayout, HR_RATE
from FMSR.VfeModel import grid_to_tensor

# logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


SILENCE_FRAME = 1024
SILENCE_HOP = 512
MANIFEST_COLUMNS = ['path', 'domain', 'duration']


class RateDistribution(object):
    """
    Categorical distribution of training input rates and their paired
    cutoff bins.
    """
    def __init__(self, rates=SpecDSP.SUPPORTED_RATES, probs=(0.7, 0.1, 0.1, 0.1),
                 cutoff_bins=SpecDSP.SUPPORTED_CUTOFFS, total_bins=512):
        self.rates = [int(x) for x in rates]
        self.probs = np.asarray(probs, dtype=np.float64)
        self.cutoff_bins = [int(x) for x in cutoff_bins]
        if not len(self.rates) == len(self.probs) == len(self.cutoff_bins):
            raise DataError('rates, probs and cutoff_bins must have equal length')
        if not np.isclose(self.probs.sum(), 1.0):
            raise DataError('Rate probabilities must sum to 1; got {}'.format(self.probs.sum()))
        if (self.probs < 0).any():
            raise DataError('Rate probabilities must be non-negative')
        if np.any(np.diff(self.rates) <= 0) or np.any(np.diff(self.cutoff_bins) <= 0):
            raise DataError('rates and cutoff_bins must be strictly increasing')
        if self.cutoff_bins[-1] >= total_bins:
            raise DataError('cutoff bins must be < {}'.format(total_bins))

    @classmethod
    def from_config(cls, cfg):
        d = cfg['data']
        return cls(d['rates'], d['rate_probs'], d['cutoff_bins'],
                   total_bins=cfg['stft']['n_fft'] // 2)

    def cutoff_for(self, rate):
        return dict(zip(self.rates, self.cutoff_bins))[int(rate)]

    def index_of(self, rate):
        """Rate-embedding index of a supported rate"""
        return self.rates.index(int(rate))

    def sample(self, rng):
        """Categorical draw -> (rate, cutoff_bins)"""
        i = rng.choice(len(self.rates), p=self.probs)
        return self.rates[i], self.cutoff_bins[i]


def sample_input_rate(rng, dist=None):
    """
    Draw an input rate and its paired cutoff bin.

    Parameters
    ----------
    rng : np.random.Generator
        Seeded generator
    dist : RateDistribution

    Returns
    -------
    (rate, cutoff_bins)
    """
    dist = dist or RateDistribution()
    return dist.sample(rng)


class TrainingPair(object):
    """
    One training example: the HR segment, the LR input rate, the
    compressed low band x_l (F1 x T x 2) and the compressed ground-truth
    generation band x_h_target ((F - F1_min) x T x 2).
    """
    def __init__(self, hr_segment, lr_input_rate, x_l, x_h_target):
        self.hr_segment = hr_segment
        self.lr_input_rate = int(lr_input_rate)
        self.x_l = x_l
        self.x_h_target = x_h_target

    @property
    def n_frames(self):
        return self.x_l.n_frames

    def __repr__(self):
        msg = 'TrainingPair(rate={}, x_l={}, target={})'
        return msg.format(self.lr_input_rate, self.x_l.coeffs.shape,
                          self.x_h_target.coeffs.shape)


# preprocessing
def frame_rms_db(x, frame=SILENCE_FRAME, hop=SILENCE_HOP):
    """RMS (dBFS, full scale 1.0) of the frame starting at every hop block"""
    n_blocks = int(np.ceil(len(x) / float(hop)))
    xp = np.pad(x, (0, n_blocks * hop + frame - len(x)))
    frames = np.lib.stride_tricks.sliding_window_view(xp, frame)[::hop][:n_blocks]
    # partial tail frames are measured over their valid samples only
    valid = np.clip(len(x) - np.arange(n_blocks) * hop, 1, frame)
    rms = np.sqrt(np.sum(frames ** 2, axis=1) / valid)
    return 20 * np.log10(np.maximum(rms, 1e-12))

def prepare_hr(w, silence_db=-35.0):
    """
    HR ground truth: resample to 48 kHz, then drop the 512-sample hop
    blocks whose 1024-sample frame RMS is below `silence_db` dBFS.

    Parameters
    ----------
    w : Waveform
        Any rate
    silence_db : float
        Trimming threshold (dBFS)

    Returns
    -------
    Waveform at 48 kHz (empty if the input is silent)
    """
    hr = SpecDSP.sinc_resample(w, HR_RATE)
    if len(hr) == 0:
        return hr
    keep = frame_rms_db(hr.samples) >= silence_db
    blocks = np.repeat(keep, SILENCE_HOP)[:len(hr)]
    return Waveform(hr.samples[blocks], HR_RATE)

def make_lr(hr, input_rate, lowpass_ratio=0.95):
    """
    LR input synthesis: Hann-window low-pass at lowpass_ratio * (rate/2),
    then decimation to `input_rate`.

    Parameters
    ----------
    hr : Waveform at 48 kHz
    input_rate : int
        Target LR rate (< 48 kHz)

    Returns
    -------
    Waveform at `input_rate`
    """
    if hr.sample_rate != HR_RATE:
        raise DataError('make_lr expects 48 kHz input; got {}'.format(hr.sample_rate))
    if not 0 < input_rate < HR_RATE:
        msg = 'LR rate must be below {} Hz; got {}'
        raise DataError(msg.format(HR_RATE, input_rate))
    filtered = SpecDSP.lowpass_hann(hr, lowpass_ratio * input_rate / 2.0)
    n_out = int(round(len(hr) * input_rate / float(HR_RATE)))
    if HR_RATE % input_rate == 0:
        y = filtered.samples[::HR_RATE // input_rate][:n_out]
        return Waveform(y, input_rate)
    return SpecDSP.sinc_resample(filtered, input_rate)

def build_pair(hr_segment, rate, cutoff, alpha=0.2, n_frames=None,
               min_cutoff_bins=SpecDSP.MIN_CUTOFF_BINS, lowpass_ratio=0.95,
               n_fft=SpecDSP.N_FFT, hop=SpecDSP.HOP):
    """
    Training pair from one HR segment: the LR chain (make_lr, sinc
    upsampling back to 48 kHz, STFT, compression) gives the low band;
    the target is the compressed HR spectrum over bins [F1_min, F).

    Parameters
    ----------
    hr_segment : Waveform at 48 kHz
    rate : int
        LR input rate
    cutoff : int
        Cutoff bin F1 paired with `rate`
    alpha : float
        Compression exponent
    n_frames : int
        Expected frame count; None skips the check
    n_fft, hop : int
        STFT window and hop (F = n_fft / 2)

    Returns
    -------
    TrainingPair
    """
    seg_frames = SpecDSP.n_frames(len(hr_segment), hop)
    if n_frames is not None and seg_frames != n_frames:
        msg = 'Segment of {} samples gives {} frames; expected {}'
        raise DataError(msg.format(len(hr_segment), seg_frames, n_frames))
    layout = BandLayout(cutoff, total_bins=n_fft // 2,
                        min_cutoff_bins=min_cutoff_bins)
    lr = make_lr(hr_segment, rate, lowpass_ratio=lowpass_ratio)
    up = SpecDSP.sinc_resample(lr, HR_RATE)
    if len(up) != len(hr_segment):
        up = Waveform(SpecDSP._fit_length(up.samples, len(hr_segment)), HR_RATE)
    lr_spec = SpecDSP.compress(SpecDSP.stft(up, n_fft, hop), alpha)
    x_l, _ = SpecDSP.split_bands(lr_spec, layout)
    hr_spec = SpecDSP.compress(SpecDSP.stft(hr_segment, n_fft, hop), alpha)
    target = hr_spec.like(hr_spec.coeffs[min_cutoff_bins:].copy())
    return TrainingPair(hr_segment, rate, x_l, target)

def collate_pairs(pairs, dist=None):
    """
    Stack pairs sharing one input rate into model tensors.

    Returns
    -------
    dict : {x_l : (B, 2, F1, T), x_h : (B, 2, F - F1_min, T),
            sr_index : (B,), rate : int}
    """
    dist = dist or RateDistribution()
    rates = set(p.lr_input_rate for p in pairs)
    if len(rates) != 1:
        raise DataError('A batch must share one input rate; got {}'.format(sorted(rates)))
    rate = rates.pop()
    return {'x_l' : torch.stack([grid_to_tensor(p.x_l.coeffs) for p in pairs]),
            'x_h' : torch.stack([grid_to_tensor(p.x_h_target.coeffs) for p in pairs]),
            'sr_index' : torch.full((len(pairs),), dist.index_of(rate), dtype=torch.long),
            'rate' : rate}


# manifests / corpus
def load_manifest(in_file):
    """
    Load a dataset manifest
    Parameters
    ----------
    in_file : str
        tab-delimited file with columns: path, domain, duration
        (optional: estimate). Relative paths are taken relative to the
        manifest's directory.
    """
    Utils.checkExists(in_file)
    try:
        df = pd.read_csv(in_file, sep='\t')
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=MANIFEST_COLUMNS)
    ## check headers
    diff = set(MANIFEST_COLUMNS) - set(df.columns.values)
    if len(diff) > 0:
        diff = ','.join(sorted(diff))
        raise DataError('Cannot find manifest columns: {}'.format(diff))
    base = os.path.dirname(os.path.abspath(in_file))
    to_abs = lambda x: x if os.path.isabs(str(x)) else os.path.join(base, str(x))
    df['path'] = df['path'].apply(to_abs)
    if 'estimate' in df.columns:
        df['estimate'] = df['estimate'].apply(lambda x: to_abs(x) if isinstance(x, str) else x)
    df['domain'] = df['domain'].astype(str)
    return df

def write_manifest(df, out_file):
    """Write a manifest table (tab-delimited)"""
    df.to_csv(out_file, sep='\t', index=False)
    logging.info('File written: {}'.format(out_file))
    return out_file

def _cache_file(path, silence_db):
    cache = Utils.cache_dir()
    if cache is None:
        return None
    stat = os.stat(path)
    key = '{}:{}:{}:{}'.format(os.path.abspath(path), stat.st_size,
                               stat.st_mtime, silence_db)
    name = hashlib.sha1(key.encode()).hexdigest() + '.npy'
    return os.path.join(Utils.make_dir(cache), name)

def _load_clip(path, silence_db=-35.0):
    cache_file = _cache_file(path, silence_db)
    if cache_file is not None and os.path.isfile(cache_file):
        return Waveform(np.load(cache_file), HR_RATE)
    hr = prepare_hr(Utils.read_audio(path), silence_db=silence_db)
    if cache_file is not None:
        np.save(cache_file, hr.samples)
    return hr


class Corpus(object):
    """
    In-memory set of prepared HR clips, with random segment cropping and
    per-batch pair synthesis.
    """
    def __init__(self, clips, segment_samples=130560, dist=None, alpha=0.2,
                 min_cutoff_bins=SpecDSP.MIN_CUTOFF_BINS, lowpass_ratio=0.95,
                 nproc=1, n_fft=SpecDSP.N_FFT, hop=SpecDSP.HOP):
        self.clips = [c for c in clips if len(c) > 0]
        if len(self.clips) == 0:
            raise DataError('Corpus has no non-silent clips')
        self.segment_samples = int(segment_samples)
        self.dist = dist or RateDistribution()
        self.alpha = float(alpha)
        self.min_cutoff_bins = int(min_cutoff_bins)
        self.lowpass_ratio = float(lowpass_ratio)
        self.nproc = int(nproc)
        self.n_fft = int(n_fft)
        self.hop = int(hop)
        for i,c in enumerate(self.clips):
            if len(c) < self.segment_samples:
                msg = ('Clip {} is shorter than a training segment '
                       '({} < {} samples); zero-padded')
                logging.warning(msg.format(i, len(c), self.segment_samples))

    @classmethod
    def from_manifest(cls, manifest_file, cfg, nproc=None):
        """Read and prepare every clip of a manifest"""
        df = load_manifest(manifest_file)
        silence_db = cfg['data']['silence_db']
        logging.info('Preparing {} clips from: {}'.format(df.shape[0], manifest_file))
        clips = []
        for i,x in df.iterrows():
            hr = _load_clip(x['path'], silence_db=silence_db)
            if len(hr) == 0:
                logging.warning('Skipping silent clip: {}'.format(x['path']))
                continue
            clips.append(hr)
        return cls(clips, segment_samples=cfg['data']['segment_samples'],
                   dist=RateDistribution.from_config(cfg),
                   alpha=cfg['stft']['alpha'],
                   min_cutoff_bins=cfg['stft']['min_cutoff_bins'],
                   lowpass_ratio=cfg['data']['lowpass_ratio'],
                   nproc=nproc or cfg['data']['nproc'],
                   n_fft=cfg['stft']['n_fft'], hop=cfg['stft']['hop'])

    @property
    def n_frames(self):
        return SpecDSP.n_frames(self.segment_samples, self.hop)

    def __len__(self):
        return len(self.clips)

    def crop(self, clip_index, rng):
        """Random segment of `segment_samples`; short clips are zero-padded"""
        x = self.clips[clip_index].samples
        n = self.segment_samples
        if len(x) <= n:
            return Waveform(np.pad(x, (0, n - len(x))), HR_RATE)
        start = rng.integers(0, len(x) - n + 1)
        return Waveform(x[start:start + n], HR_RATE)

    def sample_batch(self, step, batch_size, seed=0):
        """
        Training batch for `step`; reproducible from (seed, step) alone,
        whatever the number of worker processes.

        Returns
        -------
        dict (see collate_pairs)
        """
        rng = np.random.default_rng([int(seed), int(step)])
        rate, cutoff = self.dist.sample(rng)
        items = rng.integers(0, len(self.clips), size=batch_size)
        segments = [self.crop(i, np.random.default_rng([int(seed), int(step), j]))
                    for j,i in enumerate(items)]
        func = partial(build_pair, rate=rate, cutoff=cutoff, alpha=self.alpha,
                       n_frames=self.n_frames,
                       min_cutoff_bins=self.min_cutoff_bins,
                       lowpass_ratio=self.lowpass_ratio,
                       n_fft=self.n_fft, hop=self.hop)
        if self.nproc > 1:
            with Pool(self.nproc) as p:
                pairs = p.map(func, segments)
        else:
            pairs = [func(x) for x in segments]
        return collate_pairs(pairs, self.dist)
