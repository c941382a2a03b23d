#!/usr/bin/env python
# import
## batteries
import os
import pytest
## 3rd party
import numpy as np
import pandas as pd
import soundfile as sf
import torch
## package
from FMSR import RunConfig
from FMSR import Trainer
from FMSR.RunConfig import VfeConfig, TrainConfig
from FMSR.SpecDSP import Waveform
from FMSR.VfeModel import build_model
from FMSR.DataPipeline import Corpus

# single-threaded torch for bit-exact comparisons
torch.set_num_threads(1)

CLIP_F0 = [110.0, 165.0, 220.0, 330.0]
CLIP_DOMAINS = ['speech', 'music', 'speech', 'music']


def harmonic_signal(f0, seconds=1.0, rate=48000, seed=0, peak=0.5):
    """Harmonic tone up to 20 kHz with 1/k partials plus a little noise"""
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * rate)) / float(rate)
    x = np.zeros(t.shape[0])
    for k in range(1, int(min(20000.0, 0.45 * rate) // f0) + 1):
        x += np.sin(2 * np.pi * f0 * k * t + rng.uniform(0, 2 * np.pi)) / k
    x += 0.01 * rng.standard_normal(t.shape[0])
    return peak * x / np.abs(x).max()

def band_limited_noise(n, rate=48000, max_hz=12000.0, n_tones=40, seed=0):
    """Random sum of sinusoids below `max_hz`"""
    rng = np.random.default_rng(seed)
    t = np.arange(n) / float(rate)
    freqs = rng.uniform(50, max_hz, n_tones)
    phases = rng.uniform(0, 2 * np.pi, n_tones)
    amps = rng.uniform(0.1, 1.0, n_tones)
    x = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(0)
    return x / np.abs(x).max() * 0.5


def write_toy_corpus(base_dir):
    """4 synthetic 48 kHz clips and their manifest; returns the manifest path"""
    clip_dir = base_dir / 'clips'
    clip_dir.mkdir()
    rows = []
    for i, (f0, domain) in enumerate(zip(CLIP_F0, CLIP_DOMAINS)):
        name = 'clip{}.wav'.format(i)
        sf.write(str(clip_dir / name), harmonic_signal(f0, seed=i), 48000,
                 subtype='FLOAT')
        rows.append([os.path.join('clips', name), domain, 1.0])
    manifest = base_dir / 'manifest.tsv'
    pd.DataFrame(rows, columns=['path', 'domain', 'duration']).to_csv(
        str(manifest), sep='\t', index=False)
    return str(manifest)


@pytest.fixture
def toy_corpus(tmp_path):
    return write_toy_corpus(tmp_path)

@pytest.fixture
def toy_config(tmp_path, toy_corpus):
    """Run config file pointing at the toy corpus (use with toy=True / --toy)"""
    cfg_file = tmp_path / 'toy.ini'
    cfg_file.write_text('\n'.join([
        'seed = 0',
        '[data]',
        'train_manifest = {}'.format(toy_corpus),
        '[train]',
        'total_steps = 50',
        'log_every = 10',
        'ckpt_every = 25',
        'out_dir = {}'.format(str(tmp_path / 'run')),
        '']))
    return str(cfg_file)

def tiny_vfe_config():
    return VfeConfig(stage_depths=[1, 1, 1, 1], base_channels=8, d_cond=16,
                     bottleneck_depth=1, encoder_channels=16, encoder_layers=4)

@pytest.fixture
def tiny_cfg():
    return tiny_vfe_config()

@pytest.fixture
def tiny_model(tiny_cfg):
    return build_model(tiny_cfg, seed=0)

@pytest.fixture
def toy_checkpoint(tmp_path, tiny_model):
    """Checkpoint of the (untrained) tiny model with the toy run config"""
    run_config = RunConfig.load_config(toy=True)
    train_cfg = TrainConfig.from_config(run_config)
    state = Trainer.TrainState(tiny_model, Trainer.make_optimizer(tiny_model, train_cfg),
                               train_cfg, run_config=run_config)
    return Trainer.save_checkpoint(str(tmp_path / 'toy.pt'), state)

@pytest.fixture
def lr_wav(tmp_path):
    """0.5 s harmonic input at 8 kHz"""
    w = harmonic_signal(220.0, seconds=0.5, rate=8000, seed=3)
    out = str(tmp_path / 'input_8k.wav')
    sf.write(out, w, 8000, subtype='FLOAT')
    return out

@pytest.fixture(scope='session')
def overfit_run(tmp_path_factory):
    """Tiny model trained for 2000 steps on the toy corpus (slow tests only)"""
    base_dir = tmp_path_factory.mktemp('overfit')
    manifest = write_toy_corpus(base_dir)
    corpus = Corpus.from_manifest(manifest, RunConfig.load_config(toy=True))
    train_cfg = TrainConfig(lr_peak=1e-3, warmup_steps=100, total_steps=2000,
                            batch_size=2, log_every=100, ckpt_every=1000, seed=0)
    model = build_model(tiny_vfe_config(), seed=0)
    state = Trainer.TrainState(model, Trainer.make_optimizer(model, train_cfg),
                               train_cfg)
    losses = Trainer.train(corpus, state, str(base_dir / 'run'), quiet=True)
    return {'model' : model, 'losses' : losses, 'manifest' : manifest}
