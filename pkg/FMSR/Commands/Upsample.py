#!/usr/bin/env python

"""
upsample: super-resolve an audio file to 48 kHz

Usage:
  upsample [options] --checkpoint=<c> <input> <output>
  upsample -h | --help
  upsample --version

Options:
  <input>              Input WAV/FLAC file (8, 12, 16 or 24 kHz).
  <output>             Output WAV file (48 kHz).
  --checkpoint=<c>     Model checkpoint (see `train`).
  --omega=<w>          Classifier-free guidance scale.
                       [Default: None]
  --steps=<s>          Number of midpoint solver steps.
                       [Default: None]
  --seed=<s>           Noise seed. If None, drawn at random (and logged).
                       [Default: None]
  --config=<c>         Run config with [inference] settings; by default
                       the config stored in the checkpoint.
                       [Default: None]
  --rate-mapping=<p>   Handling of unsupported input rates:
                       nearest, floor or strict.
                       [Default: None]
  --limiter            Limit the output peak to -1 dBFS.
  --multichannel=<m>   Multichannel input: downmix or reject.
                       [Default: downmix]
  --subtype=<t>        Output WAV sample format: PCM_16 or FLOAT.
                       [Default: PCM_16]
  --spec-image=<png>   Also write an image of the output spectrogram.
                       [Default: None]
  --spec-dump=<npz>    Also write the compressed output spectrogram.
                       [Default: None]
  -h --help            Show this screen.
  --version            Show version.

Description:
  Upsample a band-limited recording to 48 kHz: the known low band is kept
  as is and the missing high band is generated by the flow-matching model
  (omega=1.5, steps=4 unless set by the config or the options above).
  Inputs longer than inference.chunk_seconds are processed in overlapping
  chunks.
"""

# import
## batteries
from docopt import docopt
import logging
## application
from FMSR import Utils
from FMSR import RunConfig
from FMSR import Trainer
from FMSR import Inference
from FMSR import SpecDSP
## logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


def _opt(x, dtype):
    if x is None or x == 'None':
        return None
    return dtype(x)

def load_options(args, run_config=None):
    """Inference options: command line > config file > checkpoint config > defaults"""
    if _opt(args['--config'], str) is not None:
        run_config = RunConfig.load_config(args['--config'])
    elif run_config is None:
        run_config = RunConfig.load_config()
    return Inference.InferenceOptions.from_config(
        run_config,
        omega=_opt(args['--omega'], float),
        steps=_opt(args['--steps'], int),
        seed=_opt(args['--seed'], int),
        rate_mapping=_opt(args['--rate-mapping'], str),
        limiter=True if args['--limiter'] else None)

def main(args):
    # model
    logging.info('Loading checkpoint: {}'.format(args['--checkpoint']))
    state = Trainer.load_checkpoint(args['--checkpoint'], with_optimizer=False)
    opts = load_options(args, state.run_config)
    logging.info('omega={} steps={}'.format(opts.omega, opts.steps))
    # input
    logging.info('Reading input: {}'.format(args['<input>']))
    w_lr = Utils.read_audio(args['<input>'], multichannel=args['--multichannel'])
    # super-resolution
    out, spec = Inference.super_resolve(w_lr, state.model, opts,
                                        return_spectrogram=True)
    Utils.write_wav(args['<output>'], out, subtype=args['--subtype'])
    logging.info('File written: {}'.format(args['<output>']))
    # inspection
    if _opt(args['--spec-dump'], str) is not None:
        SpecDSP.save_spectrogram(args['--spec-dump'], spec)
    if _opt(args['--spec-image'], str) is not None:
        Inference.emit_spectrogram_image(spec, args['--spec-image'])

def opt_parse(args=None):
    if args is None:
        args = docopt(__doc__, version='0.1')
    else:
        args = docopt(__doc__, version='0.1', argv=args)
    main(args)
