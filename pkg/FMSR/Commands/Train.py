#!/usr/bin/env python

"""
train: train the super-resolution model

Usage:
  train [options] <config>
  train -h | --help
  train --version

Options:
  <config>            Run config file (see `inspect-config`).
  --manifest=<m>      Training manifest; overrides data.train_manifest.
                      [Default: None]
  --out-dir=<d>       Output directory for checkpoints and metrics.
                      [Default: None]
  --steps=<s>         Total number of training steps; overrides
                      train.total_steps.
                      [Default: None]
  --seed=<s>          Random seed; overrides the config seed.
                      [Default: None]
  --resume=<c>        Continue training from this checkpoint.
                      [Default: None]
  --toy               Use the tiny architecture preset.
  -n=<n>              Number of processes for training-pair synthesis.
                      If None, data.nproc from the config.
                      [Default: None]
  --quiet             No progress bar.
  -h --help           Show this screen.
  --version           Show version.

Description:
  Train the flow-matching vector field estimator on a corpus of 48 kHz
  clips. Each batch draws one input rate (8, 12, 16 or 24 kHz), simulates
  the band-limited inputs and regresses the conditional flow-matching
  target over the generation band.

  manifest
  --------
  * tab-delimited
  * must contain 3 columns
    * "path" = audio file path (relative to the manifest directory)
    * "domain" = domain tag (eg., speech, music)
    * "duration" = clip duration in seconds
  * other columns are allowed

  Output
  ------
  * OUT_DIR/config.ini = resolved run config
  * OUT_DIR/metrics.csv = step, loss, lr, wallclock
  * OUT_DIR/ckpt_STEP.pt = periodic checkpoints
  * OUT_DIR/last.pt = final checkpoint
  The default OUT_DIR is train.out_dir, else $FMSR_OUTPUT_DIR, else the
  working directory.
"""

# import
## batteries
from docopt import docopt
import os
import logging
## 3rd party
import torch
## application
from FMSR import Utils
from FMSR import RunConfig
from FMSR import Trainer
from FMSR.Utils import DataError, CheckpointError
from FMSR.RunConfig import VfeConfig, TrainConfig
from FMSR.VfeModel import build_model, count_parameters
from FMSR.DataPipeline import Corpus
## logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


def _is_set(x):
    return x is not None and x != 'None'

def _nproc(x):
    """Process count from `-n`; None defers to data.nproc"""
    return int(float(x)) if _is_set(x) else None

def apply_overrides(cfg, args):
    """Command-line values take precedence over the config file"""
    if _is_set(args['--seed']):
        cfg['seed'] = int(args['--seed'])
    if _is_set(args['--manifest']):
        cfg['data']['train_manifest'] = args['--manifest']
    if _is_set(args['--out-dir']):
        cfg['train']['out_dir'] = args['--out-dir']
    if _is_set(args['--steps']):
        cfg['train']['total_steps'] = int(args['--steps'])
        if cfg['train']['warmup_steps'] > cfg['train']['total_steps']:
            msg = 'Warmup ({}) exceeds total steps; setting warmup_steps = {}'
            logging.warning(msg.format(cfg['train']['warmup_steps'],
                                       cfg['train']['total_steps']))
            cfg['train']['warmup_steps'] = cfg['train']['total_steps']
    return RunConfig._validate(cfg)

def init_state(cfg, resume=None):
    """New training state, or the state stored in a checkpoint"""
    vfe_cfg = VfeConfig.from_config(cfg)
    train_cfg = TrainConfig.from_config(cfg)
    if resume is None:
        model = build_model(vfe_cfg, seed=cfg['seed'])
        optimizer = Trainer.make_optimizer(model, train_cfg)
        return Trainer.TrainState(model, optimizer, train_cfg, run_config=cfg)
    logging.info('Resuming from checkpoint: {}'.format(resume))
    state = Trainer.load_checkpoint(resume)
    if state.model.config != vfe_cfg:
        msg = 'Checkpoint architecture {} does not match the config {}'
        raise CheckpointError(msg.format(state.model.config, vfe_cfg))
    if state.step >= train_cfg.total_steps:
        msg = 'Checkpoint is at step {}; nothing to do for total_steps={}'
        raise DataError(msg.format(state.step, train_cfg.total_steps))
    state.cfg = train_cfg
    state.run_config = cfg
    return state

def main(args):
    # config
    logging.info('Reading config: {}'.format(args['<config>']))
    cfg = RunConfig.load_config(args['<config>'], toy=args['--toy'])
    cfg = apply_overrides(cfg, args)
    torch.set_num_threads(max(cfg['num_threads'], 1))
    manifest = cfg['data']['train_manifest']
    if not _is_set(manifest):
        raise DataError('No training manifest: set data.train_manifest or use --manifest')
    out_dir = cfg['train']['out_dir']
    out_dir = Utils.make_dir(out_dir if _is_set(out_dir) else Utils.output_dir())
    RunConfig.write_config(cfg, os.path.join(out_dir, 'config.ini'))

    # model
    resume = args['--resume'] if _is_set(args['--resume']) else None
    state = init_state(cfg, resume=resume)
    for k,v in count_parameters(state.model).items():
        logging.info('Parameters [{}]: {}'.format(k, v))

    # data
    corpus = Corpus.from_manifest(manifest, cfg, nproc=_nproc(args['-n']))
    msg = 'Corpus: {} clips; segment = {} frames; {} process(es)'
    logging.info(msg.format(len(corpus), corpus.n_frames, corpus.nproc))
    # training
    Trainer.train(corpus, state, out_dir, quiet=args['--quiet'])

def opt_parse(args=None):
    if args is None:
        args = docopt(__doc__, version='0.1')
    else:
        args = docopt(__doc__, version='0.1', argv=args)
    main(args)
