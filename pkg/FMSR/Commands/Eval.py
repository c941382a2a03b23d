#!/usr/bin/env python

"""
eval: objective evaluation over a test manifest

Usage:
  eval [options] <manifest>
  eval -h | --help
  eval --version

Options:
  <manifest>          Test manifest (see Description).
  --checkpoint=<c>    Model checkpoint; required for --system=model.
                      [Default: None]
  --rates=<r>         Comma-separated input rates to simulate.
                      [Default: 8000,12000,16000,24000]
  --system=<s>        System evaluated: model, sinc or estimate.
                      [Default: model]
  --out-prefix=<p>    Output prefix of the report files.
                      [Default: None]
  --omega=<w>         Classifier-free guidance scale.
                      [Default: None]
  --steps=<s>         Number of midpoint solver steps.
                      [Default: None]
  --seed=<s>          Noise seed.
                      [Default: 0]
  -h --help           Show this screen.
  --version           Show version.

Description:
  Each 48 kHz reference is low-passed and decimated to every requested
  input rate, processed by the chosen system and scored with the log
  spectral distance over the full band (lsd_full) and above the input
  Nyquist frequency (lsd_hf).

  Systems
  -------
  * model = flow-matching super-resolution (needs --checkpoint)
  * sinc = band-limited (sinc) upsampling of the input only
  * estimate = precomputed outputs from the manifest's "estimate" column

  manifest
  --------
  * tab-delimited
  * must contain 3 columns
    * "path" = reference audio file path
    * "domain" = domain tag (eg., speech, music)
    * "duration" = clip duration in seconds
  * optional column: "estimate" = system output file path

  Output
  ------
  * PREFIX.csv = one row per item x rate:
    item, domain, input_rate, cutoff_bin, lsd_hf, lsd_full, runtime_ms, score_2f
  * PREFIX.json = {config, rows, summary}; summary = mean LSD-HF per
    domain and input rate
  The default PREFIX is report, in $FMSR_OUTPUT_DIR or the working directory.
"""

# import
## batteries
from docopt import docopt
import os
import logging
## application
from FMSR import Utils
from FMSR import RunConfig
from FMSR import Trainer
from FMSR import Inference
from FMSR import EvalMetrics
from FMSR import DataPipeline
from FMSR.Utils import DataError
## logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


def _opt(x, dtype):
    if x is None or x == 'None':
        return None
    return dtype(x)

def main(args):
    rates = EvalMetrics.check_rates(Utils.parse_list(args['--rates'], dtype=int))
    system = args['--system']
    # manifest
    logging.info('Reading manifest: {}'.format(args['<manifest>']))
    manifest = DataPipeline.load_manifest(args['<manifest>'])
    # model
    model, run_config = None, None
    if system == 'model':
        if _opt(args['--checkpoint'], str) is None:
            raise DataError('--checkpoint is required for --system=model')
        state = Trainer.load_checkpoint(args['--checkpoint'], with_optimizer=False)
        model, run_config = state.model, state.run_config
    run_config = run_config or RunConfig.load_config()
    opts = Inference.InferenceOptions.from_config(
        run_config, omega=_opt(args['--omega'], float),
        steps=_opt(args['--steps'], int), seed=_opt(args['--seed'], int))
    if system == 'model':
        logging.info('omega={} steps={}'.format(opts.omega, opts.steps))
    # evaluation
    report = EvalMetrics.evaluate_manifest(manifest, model=model, rates=rates,
                                           system=system, opts=opts)
    out_prefix = _opt(args['--out-prefix'], str) or \
        os.path.join(Utils.output_dir(), 'report')
    echo = {'manifest' : args['<manifest>'], 'system' : system,
            'rates' : rates, 'checkpoint' : args['--checkpoint'],
            'omega' : opts.omega, 'steps' : opts.steps, 'seed' : opts.seed}
    EvalMetrics.write_report(report, out_prefix, config=echo)

def opt_parse(args=None):
    if args is None:
        args = docopt(__doc__, version='0.1')
    else:
        args = docopt(__doc__, version='0.1', argv=args)
    main(args)
