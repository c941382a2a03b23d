"""Training loop: CFM objective with conditioning dropout, learning-rate
schedule, checkpointing and metrics logging"""

# import
## batteries
import os
import math
import time
import pickle
import zipfile
import logging
## 3rd party
import pandas as pd
import torch
from tqdm import tqdm
## application
from FMSR import Utils
from FMSR import FlowCore
from FMSR.Utils import DataError, NumericError, CheckpointError
from FMSR.RunConfig import VfeConfig, TrainConfig, config_from_dict
from FMSR.VfeModel import FlowSR, ConditioningSet

# logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


CHECKPOINT_VERSION = 1
METRICS_COLUMNS = ['step', 'loss', 'lr', 'wallclock']


def lr_schedule(step, cfg):
    """
    Linear warmup from 0 to lr_peak over warmup_steps, then cosine decay
    to 0 at total_steps.

    Parameters
    ----------
    step : int
        0 <= step <= total_steps
    cfg : TrainConfig
    """
    if not 0 <= step <= cfg.total_steps:
        msg = 'step {} outside [0, {}]'
        raise DataError(msg.format(step, cfg.total_steps))
    if step < cfg.warmup_steps:
        return cfg.lr_peak * step / float(cfg.warmup_steps)
    if cfg.total_steps == cfg.warmup_steps:
        return cfg.lr_peak
    progress = (step - cfg.warmup_steps) / float(cfg.total_steps - cfg.warmup_steps)
    return cfg.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))

def make_optimizer(model, cfg):
    """AdamW (decoupled weight decay)"""
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr_peak,
                             betas=cfg.betas, weight_decay=cfg.weight_decay)

def step_generator(seed, step):
    """Torch RNG for one training step, derived from (seed, step)"""
    return torch.Generator().manual_seed(int(seed) * 1000003 + int(step))

def draw_step_noise(batch, cfg, generator):
    """
    Per-item time, Gaussian source noise and conditioning-dropout flags.

    Returns
    -------
    (t : (B,), x_0 : like batch['x_h'], drop : (B,) bool)
    """
    x_h = batch['x_h']
    B = x_h.shape[0]
    t = torch.rand(B, generator=generator)
    x_0 = torch.randn(x_h.shape, generator=generator)
    drop = torch.rand(B, generator=generator) < cfg.cond_dropout
    return t, x_0, drop

def cfm_objective(model, batch, t, x_0, drop, path_cfg):
    """
    CFM loss of one batch for fixed (t, x_0, dropout flags).

    Returns
    -------
    scalar tensor
    """
    x_h = batch['x_h']
    t = t.to(x_h)
    x_0 = x_0.to(x_h)
    tt = t[:, None, None, None]
    x_t = FlowCore.sample_path(x_h, x_0, tt, path_cfg)
    u_t = FlowCore.target_field(x_h, x_0, path_cfg)
    c_lf = model.feature_encode(batch['x_l'], batch['sr_index'])
    cond = ConditioningSet(c_lf, batch['sr_index'], drop.to(x_h.device))
    v = model(t, x_t, cond)
    return FlowCore.cfm_loss(v, u_t)


class TrainState(object):
    """
    Mutable training state owned by the optimization thread.
    """
    def __init__(self, model, optimizer, cfg, step=0, run_config=None):
        self.model = model
        self.optimizer = optimizer
        self.cfg = cfg
        self.step = int(step)
        self.run_config = run_config
        self.null_count = 0
        self.ema_loss = None

    def update_ema(self, loss, window=100):
        if self.ema_loss is None:
            self.ema_loss = loss
        else:
            self.ema_loss += (loss - self.ema_loss) / float(window)
        return self.ema_loss


def train_step(batch, state, generator=None):
    """
    One optimization step: t ~ U[0,1], x_0 ~ N(0, I), per-item null
    conditioning with probability cond_dropout, CFM loss, AdamW update at
    lr_schedule(step).

    Parameters
    ----------
    batch : dict
        See DataPipeline.collate_pairs
    state : TrainState
        Updated in place (parameters, optimizer, step)
    generator : torch.Generator
        Defaults to step_generator(seed, step)

    Returns
    -------
    float : loss before the update
    """
    cfg = state.cfg
    model, opt = state.model, state.optimizer
    if generator is None:
        generator = step_generator(cfg.seed, state.step)
    lr = lr_schedule(min(state.step, cfg.total_steps), cfg)
    for group in opt.param_groups:
        group['lr'] = lr
    device = next(model.parameters()).device
    batch = {k : v.to(device) if torch.is_tensor(v) else v for k,v in batch.items()}
    t, x_0, drop = draw_step_noise(batch, cfg, generator)
    state.null_count += int(drop.sum())

    model.train()
    opt.zero_grad()
    loss = cfm_objective(model, batch, t, x_0, drop,
                         FlowCore.PathConfig(cfg.sigma_min))
    if not torch.isfinite(loss):
        msg = 'Non-finite loss at step {} (lr={:.3e}, rate={}, t={})'
        raise NumericError(msg.format(state.step, lr, batch.get('rate'),
                                      t.tolist()))
    loss.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    opt.step()
    state.step += 1
    return float(loss.item())


# checkpoints
def save_checkpoint(out_file, state):
    """
    Atomic checkpoint write (temp file + rename): parameters, optimizer
    state, step, architecture and run config, format version.
    """
    Utils.make_dir(os.path.dirname(os.path.abspath(out_file)))
    payload = {'format_version' : CHECKPOINT_VERSION,
               'step' : state.step,
               'vfe_config' : state.model.config.as_dict(),
               'train_config' : vars(state.cfg),
               'run_config' : state.run_config.dict() if state.run_config is not None else None,
               'model' : state.model.state_dict(),
               'optimizer' : state.optimizer.state_dict() if state.optimizer is not None else None}
    tmp_file = out_file + '.tmp'
    torch.save(payload, tmp_file)
    os.replace(tmp_file, out_file)
    logging.info('File written: {}'.format(out_file))
    return out_file

def load_checkpoint(in_file, device='cpu', with_optimizer=True):
    """
    Load a checkpoint written by `save_checkpoint`; every parameter shape
    is validated against the stored architecture before loading.

    Returns
    -------
    TrainState
    """
    Utils.checkExists(in_file)
    try:
        payload = torch.load(in_file, map_location=device, weights_only=False)
    except (RuntimeError, EOFError, OSError, pickle.UnpicklingError,
            zipfile.BadZipFile) as e:
        raise CheckpointError('Cannot read checkpoint "{}": {}'.format(in_file, e))
    if not isinstance(payload, dict) or 'format_version' not in payload:
        raise CheckpointError('"{}" is not a checkpoint file'.format(in_file))
    if payload['format_version'] != CHECKPOINT_VERSION:
        msg = 'Checkpoint format version {} is not supported (expected {})'
        raise CheckpointError(msg.format(payload['format_version'], CHECKPOINT_VERSION))
    model = FlowSR(VfeConfig(**payload['vfe_config']))
    expected = model.state_dict()
    stored = payload['model']
    missing = set(expected) ^ set(stored)
    if missing:
        msg = 'Checkpoint parameters do not match the architecture: {}'
        raise CheckpointError(msg.format(', '.join(sorted(missing)[:5])))
    for k,v in expected.items():
        if tuple(stored[k].shape) != tuple(v.shape):
            msg = 'Shape mismatch for {}: checkpoint {} vs model {}'
            raise CheckpointError(msg.format(k, tuple(stored[k].shape), tuple(v.shape)))
    model.load_state_dict(stored)
    model.to(device)
    cfg = TrainConfig(**payload['train_config'])
    optimizer = None
    if with_optimizer:
        optimizer = make_optimizer(model, cfg)
        if payload['optimizer'] is not None:
            optimizer.load_state_dict(payload['optimizer'])
    run_config = None
    if payload.get('run_config') is not None:
        run_config = config_from_dict(payload['run_config'])
    return TrainState(model, optimizer, cfg, step=payload['step'],
                      run_config=run_config)


# metrics
def append_metrics(out_file, rows):
    """Append {step, loss, lr, wallclock} rows to a CSV file"""
    if len(rows) == 0:
        return out_file
    df = pd.DataFrame(rows, columns=METRICS_COLUMNS)
    write_header = not os.path.isfile(out_file)
    df.to_csv(out_file, mode='a', header=write_header, index=False,
              float_format='%.9g')
    return out_file

def train(corpus, state, out_dir, total_steps=None, quiet=False):
    """
    Run the optimization loop from state.step to `total_steps`, logging
    metrics every log_every steps and writing checkpoints every
    ckpt_every steps plus a final one (`last.pt`).

    Parameters
    ----------
    corpus : DataPipeline.Corpus
    state : TrainState
    out_dir : str
        Output directory for checkpoints and metrics.csv
    total_steps : int
        Defaults to state.cfg.total_steps

    Returns
    -------
    list : per-step losses of this run
    """
    cfg = state.cfg
    total_steps = int(total_steps or cfg.total_steps)
    Utils.make_dir(out_dir)
    metrics_file = os.path.join(out_dir, 'metrics.csv')
    start = time.time()
    losses, rows = [], []
    msg = 'Training steps {} -> {} (batch size: {}, seed: {})'
    logging.info(msg.format(state.step, total_steps, cfg.batch_size, cfg.seed))
    pbar = tqdm(total=total_steps - state.step, disable=quiet)
    while state.step < total_steps:
        step = state.step
        batch = corpus.sample_batch(step, cfg.batch_size, seed=cfg.seed)
        lr = lr_schedule(min(step, cfg.total_steps), cfg)
        loss = train_step(batch, state)
        losses.append(loss)
        ema = state.update_ema(loss)
        rows.append([step, loss, lr, time.time() - start])
        pbar.update(1)
        if state.step % cfg.log_every == 0:
            append_metrics(metrics_file, rows)
            rows = []
            msg = 'step {}: loss={:.5f} (smoothed {:.5f}) lr={:.3e}'
            logging.info(msg.format(state.step, loss, ema, lr))
        if state.step % cfg.ckpt_every == 0:
            save_checkpoint(os.path.join(out_dir, 'ckpt_{}.pt'.format(state.step)), state)
    pbar.close()
    append_metrics(metrics_file, rows)
    save_checkpoint(os.path.join(out_dir, 'last.pt'), state)
    return losses
