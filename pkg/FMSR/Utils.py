"""Utility functions for application"""

# import
## batteries
import os,sys
import re
import logging
## 3rd party
import numpy as np
import soundfile as sf

# logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


# errors
class FMSRError(Exception):
    """Base class for all application errors"""
    pass

class DataError(FMSRError, ValueError):
    """Invalid input data: files, shapes, sample rates, tables"""
    pass

class NumericError(FMSRError, ArithmeticError):
    """Non-finite values produced by a numerical stage"""
    pass

class CheckpointError(DataError):
    """Unreadable or mismatched checkpoint file"""
    pass

# exit codes used by the command line
EXIT_SUCCESS = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def checkExists(f):
    """ Check that the file `f` exists."""
    if not os.path.isfile(f):
        msg = '"{}" not found. Did you provide the full PATH?'
        raise DataError(msg.format(f))

def make_dir(path):
    """Create directory `path` (and parents) if needed; returns the path"""
    if path not in (None, '') and not os.path.isdir(path):
        os.makedirs(path)
    return path

def output_dir(default=None):
    """Default output directory: $FMSR_OUTPUT_DIR, else `default`, else cwd"""
    return os.environ.get('FMSR_OUTPUT_DIR', default or os.getcwd())

def cache_dir():
    """Prepared-audio cache directory ($FMSR_CACHE_DIR); None if unset"""
    return os.environ.get('FMSR_CACHE_DIR')

def parse_list(x, dtype=float):
    """Parse a string in format: 'v1,v2,vN' into a list of `dtype`.

    Parameters
    ----------
    x : str or iterable
        Comma (or whitespace) separated values. Iterables are cast as-is.
    dtype : type
        Value type

    Returns
    -------
    list : [value, ...]
    """
    if x is None or x == 'None':
        return []
    if not hasattr(x, 'split'):
        return [dtype(v) for v in x]
    x = x.replace(' ', ',')
    try:
        return [dtype(float(v)) if dtype is int else dtype(v)
                for v in re.split('[,;]+', x) if v != '']
    except ValueError:
        raise DataError('Cannot parse "{}" as a list of {}'.format(x, dtype.__name__))

def check_finite(x, stage):
    """Raise NumericError naming `stage` if array-like `x` holds NaN/Inf"""
    if hasattr(x, 'detach'):
        ok = bool(x.detach().isfinite().all())
    else:
        ok = bool(np.isfinite(np.asarray(x)).all())
    if not ok:
        raise NumericError('Non-finite values produced at stage: {}'.format(stage))
    return x


# audio I/O
def read_audio(in_file, multichannel='downmix'):
    """Read a WAV (or FLAC) file as a mono Waveform.

    Parameters
    ----------
    in_file : str
        Audio file path
    multichannel : str
        'downmix' = average the channels; 'reject' = raise DataError

    Returns
    -------
    FMSR.SpecDSP.Waveform
    """
    from FMSR.SpecDSP import Waveform
    checkExists(in_file)
    try:
        samples, rate = sf.read(in_file, dtype='float64', always_2d=True)
    except RuntimeError as e:
        raise DataError('Cannot read audio file "{}": {}'.format(in_file, e))
    if samples.shape[1] > 1:
        if multichannel == 'reject':
            msg = '"{}" has {} channels; only mono input is accepted'
            raise DataError(msg.format(in_file, samples.shape[1]))
        logging.warning('Downmixing {} channels: {}'.format(samples.shape[1], in_file))
    return Waveform(samples.mean(axis=1), rate)

def write_wav(out_file, wave, subtype='PCM_16'):
    """Write a Waveform to a WAV file.

    Parameters
    ----------
    out_file : str
        Output path
    wave : FMSR.SpecDSP.Waveform
    subtype : str
        'PCM_16' or 'FLOAT'
    """
    if subtype not in ('PCM_16', 'FLOAT'):
        raise DataError('WAV subtype must be PCM_16 or FLOAT, not {}'.format(subtype))
    out_dir = os.path.dirname(out_file)
    make_dir(out_dir)
    samples = wave.samples
    if subtype == 'PCM_16':
        samples = np.clip(samples, -1.0, 1.0)
    sf.write(out_file, samples, wave.sample_rate, subtype=subtype)
    return out_file
