#!/usr/bin/env python
# import
## batteries
import os
import sys
import time
import pytest
## 3rd party
import numpy as np
import torch
import matplotlib.pyplot as plt
## package
from FMSR import SpecDSP
from FMSR import FlowCore
from FMSR import RunConfig
from FMSR import Inference
from FMSR.Inference import InferenceOptions, super_resolve
from FMSR.SpecDSP import Waveform, ComplexSpectrogram, BandLayout
from FMSR.VfeModel import ConditioningSet, build_model
from FMSR.RunConfig import VfeConfig
from FMSR.Utils import DataError
from tests.conftest import harmonic_signal


@pytest.fixture
def w_8k():
    return Waveform(harmonic_signal(220.0, seconds=0.5, rate=8000, seed=3), 8000)


# options
def test_inference_options():
    opts = InferenceOptions()
    assert (opts.omega, opts.steps, opts.seed) == (1.5, 4, None)
    with pytest.raises(DataError):
        InferenceOptions(omega=-1)
    with pytest.raises(DataError):
        InferenceOptions(steps=0)
    with pytest.raises(DataError):
        InferenceOptions(chunk_seconds=1.0, overlap_seconds=1.0)

def test_inference_options_from_config():
    cfg = RunConfig.load_config()
    opts = InferenceOptions.from_config(cfg, omega=None, steps=8, seed=3)
    assert opts.omega == 1.5
    assert opts.steps == 8
    assert opts.seed == 3
    assert opts.rates == [8000, 12000, 16000, 24000]

def test_resolve_seed():
    assert Inference.resolve_seed(5) == 5
    seed = Inference.resolve_seed(None)
    assert isinstance(seed, int) and 0 <= seed < 2 ** 31


# guidance
def test_conditional_field(tiny_model):
    x_l = torch.randn(1, 2, 80, 16, generator=torch.Generator().manual_seed(0))
    sr = torch.tensor([0])
    x = torch.randn(1, 2, 432, 16, generator=torch.Generator().manual_seed(1))
    with torch.no_grad():
        c_lf = tiny_model.feature_encode(x_l, sr)
        cond = ConditioningSet(c_lf, sr)
        v_c = tiny_model(0.25, x, cond)
        v_u = tiny_model(0.25, x, cond.with_null())
        # omega = 1: conditional branch only
        v1 = Inference.conditional_field(tiny_model, c_lf, sr, 1.0)(0.25, x)
        assert torch.equal(v1, v_c)
        v2 = Inference.conditional_field(tiny_model, c_lf, sr, 2.0)(0.25, x)
    torch.testing.assert_close(v2, FlowCore.cfg_combine(v_c, v_u, 2.0),
                               rtol=1e-4, atol=1e-5)


# end to end
def test_super_resolve_length(tiny_model, w_8k):
    out = super_resolve(w_8k, tiny_model, seed=0)
    assert out.sample_rate == 48000
    assert len(out) == 6 * len(w_8k)
    assert np.isfinite(out.samples).all()
    w = Waveform(np.zeros(3000), 12000)
    assert len(super_resolve(w, tiny_model, seed=0)) == 12000

def test_super_resolve_keeps_low_band(tiny_model, w_8k):
    out, spliced = super_resolve(w_8k, tiny_model, seed=0, return_spectrogram=True)
    up = SpecDSP.sinc_resample(w_8k, 48000)
    x_l = SpecDSP.compress(SpecDSP.stft(up), 0.2)
    assert spliced.n_bins == 512
    assert spliced.n_frames == SpecDSP.stft(out).n_frames
    assert np.array_equal(spliced.coeffs[:80], x_l.coeffs[:80])

def test_resynthesis_keeps_low_band(w_8k):
    """Splice with a silent generated band; iSTFT then STFT again"""
    up = SpecDSP.sinc_resample(w_8k, 48000)
    layout = BandLayout(80)
    x_l, _ = SpecDSP.split_bands(SpecDSP.compress(SpecDSP.stft(up), 0.2), layout)
    spliced = SpecDSP.splice_bands(x_l, np.zeros((layout.gen_bins, x_l.n_frames, 2)),
                                   layout)
    out = SpecDSP.istft(SpecDSP.expand(spliced, 0.2), length=len(up))
    re = SpecDSP.stft(out).coeffs[:64]
    ref = SpecDSP.stft(up).coeffs[:64]
    assert np.linalg.norm(re - ref) / np.linalg.norm(ref) < 1e-2

def test_super_resolve_deterministic(tiny_model, w_8k):
    a = super_resolve(w_8k, tiny_model, seed=0).samples
    b = super_resolve(w_8k, tiny_model, seed=0).samples
    c = super_resolve(w_8k, tiny_model, seed=1).samples
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)

def test_super_resolve_omega(tiny_model, w_8k):
    outs = [super_resolve(w_8k, tiny_model, omega=w, seed=0).samples
            for w in (1.0, 1.5, 2.0)]
    assert not np.allclose(outs[0], outs[1])
    assert not np.allclose(outs[1], outs[2])
    assert not np.allclose(outs[0], outs[2])

def test_super_resolve_rate_mapping(tiny_model):
    w = Waveform(harmonic_signal(220.0, seconds=0.3, rate=11025), 11025)
    out = super_resolve(w, tiny_model, seed=0)
    assert len(out) == int(round(len(w) * 48000 / 11025.0))
    with pytest.raises(DataError, match='8000, 12000, 16000, 24000'):
        super_resolve(w, tiny_model, seed=0, rate_mapping='strict')

def test_super_resolve_errors(tiny_model, w_8k):
    with pytest.raises(DataError):
        super_resolve(Waveform(np.zeros(2000), 4000), tiny_model, seed=0)
    with pytest.raises(DataError):
        super_resolve(Waveform(np.zeros(100), 8000), tiny_model, seed=0)
    opts = InferenceOptions(seed=0, rates=[8000, 16000, 24000], cutoffs=[80, 170, 256])
    with pytest.raises(DataError, match='rate embeddings'):
        super_resolve(w_8k, tiny_model, opts)

def test_super_resolve_chunked(tiny_model):
    w = Waveform(harmonic_signal(220.0, seconds=2.5, rate=8000), 8000)
    opts = InferenceOptions(seed=0, chunk_seconds=1.0, overlap_seconds=0.25)
    out, s = super_resolve(w, tiny_model, opts, return_spectrogram=True)
    assert len(out) == 6 * len(w)
    assert np.isfinite(out.samples).all()
    assert s.compressed and s.n_bins == 512
    assert s.n_frames == SpecDSP.n_frames(len(out))

def test_super_resolve_chunked_no_overlap(tiny_model):
    w = Waveform(harmonic_signal(220.0, seconds=2.0, rate=8000), 8000)
    opts = InferenceOptions(seed=0, chunk_seconds=1.0, overlap_seconds=0.0)
    out = super_resolve(w, tiny_model, opts)
    assert len(out) == 6 * len(w)
    assert np.isfinite(out.samples).all()

def test_super_resolve_stft_config(tiny_model, w_8k):
    cfg = RunConfig.load_config(toy=True)
    cfg['stft']['n_fft'] = 2048
    cfg['stft']['hop'] = 1024
    model = build_model(VfeConfig.from_config(cfg), seed=0)
    assert (model.config.total_bins, model.config.gen_bins) == (1024, 944)
    opts = InferenceOptions.from_config(cfg, seed=0)
    assert (opts.n_fft, opts.hop) == (2048, 1024)
    out, s = super_resolve(w_8k, model, opts, return_spectrogram=True)
    assert len(out) == 6 * len(w_8k)
    assert (s.n_bins, s.n_fft, s.hop) == (1024, 2048, 1024)
    assert s.n_frames == SpecDSP.n_frames(len(out), 1024)
    with pytest.raises(DataError, match='frequency bins'):
        super_resolve(w_8k, tiny_model, opts)

def test_chunk_bounds_and_crossfade():
    assert Inference._chunk_bounds(100, 200, 10) == [(0, 100)]
    bounds = Inference._chunk_bounds(250, 100, 20)
    assert bounds[0] == (0, 100)
    assert bounds[-1] == (150, 250)
    for (s0, e0), (s1, e1) in zip(bounds[:-1], bounds[1:]):
        assert e1 - s1 == 100
        assert e0 - s1 >= 20
    pieces = [np.ones(e - s) for s, e in bounds]
    np.testing.assert_allclose(Inference._crossfade(pieces, bounds, 250), 1.0)
    # adjacent chunks without overlap are joined as is
    bounds = Inference._chunk_bounds(200, 100, 0)
    assert bounds == [(0, 100), (100, 200)]
    pieces = [np.ones(100), 2 * np.ones(100)]
    np.testing.assert_array_equal(Inference._crossfade(pieces, bounds, 200),
                                  np.concatenate(pieces))

def test_limiter(tiny_model, w_8k):
    w = Waveform(np.array([0.0, 2.0, -1.0]), 48000)
    out = Inference.apply_limiter(w)
    assert np.abs(out.samples).max() == pytest.approx(10 ** (-1 / 20.0))
    np.testing.assert_allclose(out.samples[2] / out.samples[1], -0.5)
    quiet = Waveform(np.array([0.1, -0.2]), 48000)
    assert Inference.apply_limiter(quiet) is quiet
    out = super_resolve(w_8k, tiny_model, seed=0, limiter=True)
    assert np.abs(out.samples).max() <= 10 ** (-1 / 20.0) + 1e-12


# spectrogram images
def test_magnitude_db():
    coeffs = np.zeros((4, 2, 2))
    coeffs[1, 0, 0] = 10.0
    db = Inference.magnitude_db(ComplexSpectrogram(coeffs))
    assert db.shape == (4, 2)
    assert db[1, 0] == pytest.approx(20.0)
    assert db[0, 0] == pytest.approx(-200.0)
    s = SpecDSP.compress(ComplexSpectrogram(coeffs), 0.2)
    np.testing.assert_allclose(Inference.magnitude_db(s), db, atol=1e-9)

def test_spectrogram_image_zero(tmp_path):
    s = ComplexSpectrogram(np.zeros((512, 20, 2)))
    f = Inference.emit_spectrogram_image(s, str(tmp_path / 'zero.png'))
    img = plt.imread(f)
    assert img.shape[:2] == (512, 20)
    assert (img == img[0, 0]).all()

def test_spectrogram_image_monotone(tmp_path):
    F, T = 512, 10
    mag = np.repeat(10 ** np.linspace(-3, 0, F)[:, None], T, axis=1)
    coeffs = np.stack([mag, np.zeros_like(mag)], axis=-1)
    f = Inference.emit_spectrogram_image(ComplexSpectrogram(coeffs),
                                         str(tmp_path / 'ramp.png'), cmap='gray')
    img = plt.imread(f)[:, 0, 0]
    # top row of the image is the highest frequency
    assert (np.diff(img) <= 0).all()
    assert img[0] > img[-1]


# trained model
@pytest.mark.slow
def test_overfit_model_fills_high_band(overfit_run, w_8k):
    model = overfit_run['model']
    layout = BandLayout(80)
    def hf_rms(w):
        s = SpecDSP.stft(w).coeffs[layout.cutoff_bins:]
        return np.sqrt(np.mean(np.sum(s ** 2, axis=-1)))
    sinc = SpecDSP.sinc_resample(w_8k, 48000)
    outs = [super_resolve(w_8k, model, omega=w, seed=0) for w in (1.0, 1.5, 2.0)]
    assert hf_rms(outs[1]) > 10 * hf_rms(sinc)
    x = [o.samples for o in outs]
    assert not np.allclose(x[0], x[1])
    assert not np.allclose(x[1], x[2])
    assert not np.allclose(x[0], x[2])

@pytest.mark.slow
def test_super_resolve_runtime_linear(tiny_model):
    opts = InferenceOptions(seed=0, chunk_seconds=30.0)
    runtimes = []
    for seconds in (1.0, 2.0, 4.0):
        w = Waveform(harmonic_signal(220.0, seconds=seconds, rate=8000), 8000)
        best = np.inf
        for _ in range(3):
            start = time.perf_counter()
            super_resolve(w, tiny_model, opts)
            best = min(best, time.perf_counter() - start)
        runtimes.append(best)
    # doubling the duration doubles the runtime, within 20%
    for a, b in zip(runtimes[:-1], runtimes[1:]):
        assert 1.6 <= b / a <= 2.4
