#!/usr/bin/env python
# import
## batteries
import os
import sys
import json
import pytest
## 3rd party
import numpy as np
import pandas as pd
## package
from FMSR import SpecDSP
from FMSR import EvalMetrics
from FMSR import DataPipeline
from FMSR.SpecDSP import Waveform
from FMSR.Utils import DataError
from tests.conftest import harmonic_signal


@pytest.fixture
def ref():
    return Waveform(harmonic_signal(165.0, seconds=0.5, seed=1), 48000)

@pytest.fixture
def manifest(toy_corpus):
    return DataPipeline.load_manifest(toy_corpus)


# LSD
def test_cutoff_bin():
    assert EvalMetrics.cutoff_bin(4000) == 85
    assert EvalMetrics.cutoff_bin(12000) == 256
    assert EvalMetrics.cutoff_bin(0) == 0

def test_lsd_identity(ref):
    assert EvalMetrics.lsd(ref, ref) == 0
    assert EvalMetrics.lsd_hf(ref, ref, 4000) == 0

def test_lsd_scaled(ref):
    est = Waveform(10 * ref.samples, 48000)
    # power x100 -> log10 difference of 2 in every bin
    assert EvalMetrics.lsd(ref, est) == pytest.approx(2.0, abs=1e-6)
    assert EvalMetrics.lsd_hf(ref, est, 6000) == pytest.approx(2.0, abs=1e-6)

def test_lsd_symmetric(ref):
    lr = DataPipeline.make_lr(ref, 8000)
    est = SpecDSP.sinc_resample(lr, 48000)
    a = EvalMetrics.lsd_hf(ref, est, 4000)
    assert a > 0
    assert a == pytest.approx(EvalMetrics.lsd_hf(est, ref, 4000))

def test_lsd_polarity_invariant(ref):
    assert EvalMetrics.lsd(ref, Waveform(-ref.samples, 48000)) == 0

def test_lsd_hf_per_bin_oracle(ref):
    est = Waveform(np.zeros(len(ref)), 48000)
    s = SpecDSP.stft(ref).coeffs
    k = EvalMetrics.cutoff_bin(4000)
    per_frame = []
    for t in range(s.shape[1]):
        d = []
        for f in range(k, s.shape[0]):
            p = max(s[f, t, 0] ** 2 + s[f, t, 1] ** 2, 1e-10)
            d.append((np.log10(p) - np.log10(1e-10)) ** 2)
        per_frame.append(np.sqrt(np.mean(d)))
    expected = np.mean(per_frame)
    assert EvalMetrics.lsd_hf(ref, est, 4000) == pytest.approx(expected, rel=1e-9)

def test_lsd_errors(ref):
    with pytest.raises(DataError, match='Length mismatch'):
        EvalMetrics.lsd(ref, Waveform(ref.samples[:-1], 48000))
    with pytest.raises(DataError):
        EvalMetrics.lsd(ref, Waveform(ref.samples, 16000))
    with pytest.raises(DataError):
        EvalMetrics.lsd_hf(ref, ref, 24000)


# reports
def test_check_rates():
    assert EvalMetrics.check_rates(['8000', 16000]) == [8000, 16000]
    with pytest.raises(DataError, match='8000, 12000, 16000, 24000'):
        EvalMetrics.check_rates([8000, 11025])

def test_evaluate_estimate_self(manifest):
    manifest['estimate'] = manifest['path']
    report = EvalMetrics.evaluate_manifest(manifest, rates=[8000, 24000],
                                           system='estimate')
    assert report.shape[0] == 4 * 2
    assert report.columns.tolist() == EvalMetrics.REPORT_COLUMNS
    assert (report['lsd_hf'] == 0).all()
    assert (report['lsd_full'] == 0).all()
    assert report['cutoff_bin'].tolist() == [85, 256] * 4

def test_evaluate_sinc(manifest):
    report = EvalMetrics.evaluate_manifest(manifest, rates=[8000, 16000],
                                           system='sinc')
    assert report.shape[0] == 8
    assert (report['lsd_hf'] > 0).all()
    assert np.isfinite(report['lsd_full']).all()
    assert report['score_2f'].isna().all()
    summary = EvalMetrics.summarize(report)
    assert summary.shape[0] == 2 * 2
    assert (summary['n_items'] == 2).all()

def test_evaluate_model(manifest, tiny_model):
    report = EvalMetrics.evaluate_manifest(manifest.head(2), model=tiny_model,
                                           rates=[12000], opts=None)
    assert report.shape[0] == 2
    assert np.isfinite(report['lsd_hf']).all()
    assert (report['runtime_ms'] > 0).all()

def test_evaluate_errors(manifest):
    with pytest.raises(DataError):
        EvalMetrics.evaluate_manifest(manifest, rates=[11025], system='sinc')
    with pytest.raises(DataError, match='checkpoint'):
        EvalMetrics.evaluate_manifest(manifest, system='model')
    with pytest.raises(DataError, match='estimate'):
        EvalMetrics.evaluate_manifest(manifest, system='estimate')
    with pytest.raises(DataError):
        EvalMetrics.evaluate_manifest(manifest, system='oracle')

def test_evaluate_empty(tmp_path):
    empty = pd.DataFrame(columns=DataPipeline.MANIFEST_COLUMNS)
    report = EvalMetrics.evaluate_manifest(empty, system='sinc')
    assert report.shape[0] == 0
    csv_file, json_file = EvalMetrics.write_report(report, str(tmp_path / 'empty'))
    with open(json_file) as inF:
        doc = json.load(inF)
    assert doc['rows'] == [] and doc['summary'] == []

def test_write_report(tmp_path, manifest):
    report = EvalMetrics.evaluate_manifest(manifest, rates=[8000], system='sinc')
    config = {'system' : 'sinc', 'rates' : [8000]}
    csv_file, json_file = EvalMetrics.write_report(report, str(tmp_path / 'out' / 'report'),
                                                   config=config)
    df = pd.read_csv(csv_file)
    assert df.columns.tolist() == EvalMetrics.REPORT_COLUMNS
    assert df.shape[0] == 4
    with open(json_file) as inF:
        doc = json.load(inF)
    assert doc['config'] == config
    assert len(doc['rows']) == 4
    assert doc['rows'][0]['lsd_hf'] == pytest.approx(df['lsd_hf'][0])
    assert sorted(x['domain'] for x in doc['summary']) == ['music', 'speech']

@pytest.mark.slow
def test_trained_model_beats_sinc(overfit_run):
    manifest = DataPipeline.load_manifest(overfit_run['manifest'])
    rates = [8000]
    sinc = EvalMetrics.evaluate_manifest(manifest, rates=rates, system='sinc')
    fm = EvalMetrics.evaluate_manifest(manifest, model=overfit_run['model'],
                                       rates=rates)
    assert fm.shape[0] == sinc.shape[0] == 4
    assert fm['item'].tolist() == sinc['item'].tolist()
    assert (fm['lsd_hf'].values < sinc['lsd_hf'].values).all()
