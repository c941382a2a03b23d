"""Objective evaluation: LSD / LSD-HF and evaluation reports"""

# import
## batteries
import os
import json
import time
import logging
## 3rd party
import numpy as np
import pandas as pd
## application
from FMSR import Utils
from FMSR import SpecDSP
from FMSR import Inference
from FMSR.Utils import DataError
from FMSR.SpecDSP import Waveform, HR_RATE
from FMSR.DataPipeline import make_lr

# logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


POWER_FLOOR = 1e-10
REPORT_COLUMNS = ['item', 'domain', 'input_rate', 'cutoff_bin', 'lsd_hf',
                  'lsd_full', 'runtime_ms', 'score_2f']
SYSTEMS = ('model', 'sinc', 'estimate')


def cutoff_bin(cutoff_hz, n_fft=SpecDSP.N_FFT, sample_rate=HR_RATE):
    """Nearest STFT bin of a frequency"""
    return int(round(cutoff_hz / (sample_rate / float(n_fft))))

def _log_power(w):
    s = SpecDSP.stft(w)
    power = np.sum(s.coeffs ** 2, axis=-1)
    return np.log10(np.maximum(power, POWER_FLOOR))

def lsd(ref, est, cutoff_hz=None):
    """
    Log spectral distance: mean over frames of
    sqrt(mean over bins of (log10 P_ref - log10 P_est)^2),
    with P = |X|^2 floored at 1e-10.

    Parameters
    ----------
    ref, est : Waveform
        Same length and sample rate (48 kHz)
    cutoff_hz : float
        Only bins from the nearest bin of `cutoff_hz` upwards are used;
        None = all bins

    Returns
    -------
    float
    """
    if len(ref) != len(est):
        msg = 'Length mismatch: reference has {} samples, estimate {}'
        raise DataError(msg.format(len(ref), len(est)))
    if ref.sample_rate != est.sample_rate:
        msg = 'Sample rate mismatch: {} vs {}'
        raise DataError(msg.format(ref.sample_rate, est.sample_rate))
    k = 0
    if cutoff_hz is not None:
        if not 0 <= cutoff_hz < ref.sample_rate / 2.0:
            msg = 'Cutoff {} Hz must lie below the Nyquist frequency ({} Hz)'
            raise DataError(msg.format(cutoff_hz, ref.sample_rate / 2.0))
        k = cutoff_bin(cutoff_hz, sample_rate=ref.sample_rate)
    diff = (_log_power(ref) - _log_power(est))[k:]
    return float(np.mean(np.sqrt(np.mean(diff ** 2, axis=0))))

def lsd_hf(ref, est, cutoff_hz):
    """LSD over the bins at or above `cutoff_hz`"""
    return lsd(ref, est, cutoff_hz=cutoff_hz)


# reports
def _to_hr(w):
    if w.sample_rate == HR_RATE:
        return w
    return SpecDSP.sinc_resample(w, HR_RATE)

def _align(est, n):
    return Waveform(SpecDSP._fit_length(est.samples, n), HR_RATE)

def check_rates(rates, supported=SpecDSP.SUPPORTED_RATES):
    """Every requested input rate must be a supported one"""
    rates = [int(x) for x in rates]
    supported = [int(x) for x in supported]
    for rate in rates:
        if rate not in supported:
            msg = 'Unsupported input rate {} Hz; supported rates: {}'
            raise DataError(msg.format(rate, ', '.join(str(r) for r in supported)))
    return rates

def evaluate_manifest(manifest, model=None, rates=SpecDSP.SUPPORTED_RATES,
                      system='model', opts=None):
    """
    Evaluate each manifest item at each input rate.

    Parameters
    ----------
    manifest : pandas.DataFrame
        See DataPipeline.load_manifest
    model : FlowSR
        Required for system='model'
    rates : list of int
        Input rates to simulate
    system : str
        'model' = super_resolve; 'sinc' = sinc-upsampled input;
        'estimate' = precomputed files from the manifest's `estimate` column
    opts : Inference.InferenceOptions

    Returns
    -------
    pandas.DataFrame (REPORT_COLUMNS), one row per item x rate
    """
    if system not in SYSTEMS:
        msg = 'Unknown system "{}"; choose from: {}'
        raise DataError(msg.format(system, ', '.join(SYSTEMS)))
    opts = opts or Inference.InferenceOptions()
    rates = check_rates(rates, supported=opts.rates)
    if system == 'model' and model is None:
        raise DataError('system "model" needs a model checkpoint')
    if system == 'estimate' and manifest.shape[0] > 0 and \
       'estimate' not in manifest.columns:
        raise DataError('Cannot find manifest columns: estimate')

    rows = []
    for i,x in manifest.iterrows():
        ref = _to_hr(Utils.read_audio(x['path']))
        if len(ref) < SpecDSP.N_FFT:
            msg = 'Reference "{}" is shorter than one STFT frame'
            raise DataError(msg.format(x['path']))
        for rate in rates:
            start = time.time()
            if system == 'estimate':
                est = _to_hr(Utils.read_audio(x['estimate']))
            else:
                lr = make_lr(ref, rate)
                if system == 'sinc':
                    est = SpecDSP.sinc_resample(lr, HR_RATE)
                else:
                    est = Inference.super_resolve(lr, model, opts)
            runtime = (time.time() - start) * 1000.0
            est = _align(est, len(ref))
            cutoff_hz = rate / 2.0
            rows.append({'item' : os.path.basename(x['path']),
                         'domain' : x['domain'],
                         'input_rate' : rate,
                         'cutoff_bin' : cutoff_bin(cutoff_hz),
                         'lsd_hf' : lsd_hf(ref, est, cutoff_hz),
                         'lsd_full' : lsd(ref, est),
                         'runtime_ms' : runtime,
                         'score_2f' : np.nan})
            msg = '{} @ {} Hz: LSD-HF={:.4f}'
            logging.info(msg.format(rows[-1]['item'], rate, rows[-1]['lsd_hf']))
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)

def summarize(report):
    """Mean LSD-HF per (domain, input_rate)"""
    if report.shape[0] == 0:
        return pd.DataFrame(columns=['domain', 'input_rate', 'lsd_hf', 'n_items'])
    return report.groupby(['domain', 'input_rate']).agg(
        lsd_hf=('lsd_hf', 'mean'), n_items=('item', 'count')).reset_index()

def write_report(report, out_prefix, config=None):
    """
    Write the report as `<out_prefix>.csv` and a JSON mirror
    `<out_prefix>.json` = {config, rows, summary}.

    Returns
    -------
    (csv_file, json_file)
    """
    Utils.make_dir(os.path.dirname(os.path.abspath(out_prefix)))
    csv_file = out_prefix + '.csv'
    json_file = out_prefix + '.json'
    report.to_csv(csv_file, index=False)
    logging.info('File written: {}'.format(csv_file))
    records = lambda df: json.loads(df.to_json(orient='records'))
    doc = {'config' : config or {},
           'rows' : records(report),
           'summary' : records(summarize(report))}
    with open(json_file, 'w') as outF:
        json.dump(doc, outF, indent=2)
    logging.info('File written: {}'.format(json_file))
    return csv_file, json_file
