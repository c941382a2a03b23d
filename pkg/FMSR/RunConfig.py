"""Run configuration: configspec, loading/validation and typed views"""

# import
## batteries
import os
import sys
import logging
from io import StringIO
## 3rd party
from configobj import ConfigObj, flatten_errors
try:
    from configobj.validate import Validator
except ImportError:
    from validate import Validator
## application
from FMSR.Utils import DataError, checkExists

# logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


CONFIGSPEC = """
seed = integer(default=0)
num_threads = integer(min=0, default=1)
[stft]
    n_fft = integer(min=16, default=1024)
    hop = integer(min=1, default=512)
    alpha = float(min=0, max=1, default=0.2)
    min_cutoff_bins = integer(min=1, default=80)
[model]
    base_channels = integer(min=1, default=96)
    stage_depths = int_list(min=1, default=list(2, 2, 4, 2))
    bottleneck_depth = integer(min=0, default=2)
    d_cond = integer(min=2, default=384)
    encoder_channels = integer(min=1, default=352)
    encoder_layers = integer(min=0, default=4)
    encoder_pool_bins = integer(min=1, default=4)
    kernel_size = integer(min=1, default=7)
    expansion = integer(min=1, default=4)
    time_scale = float(default=1000.0)
[data]
    train_manifest = string(default=None)
    segment_samples = integer(min=1024, default=130560)
    rates = int_list(default=list(8000, 12000, 16000, 24000))
    rate_probs = float_list(default=list(0.7, 0.1, 0.1, 0.1))
    cutoff_bins = int_list(default=list(80, 128, 170, 256))
    silence_db = float(default=-35.0)
    lowpass_ratio = float(min=0, max=1, default=0.95)
    nproc = integer(min=1, default=1)
[train]
    lr_peak = float(min=0, default=2e-4)
    beta1 = float(min=0, max=1, default=0.9)
    beta2 = float(min=0, max=1, default=0.999)
    weight_decay = float(min=0, default=0.01)
    warmup_steps = integer(min=0, default=10000)
    total_steps = integer(min=1, default=500000)
    batch_size = integer(min=1, default=16)
    cond_dropout = float(min=0, max=1, default=0.1)
    sigma_min = float(min=0, max=1, default=0.1)
    grad_clip = float(min=0, default=1.0)
    log_every = integer(min=1, default=100)
    ckpt_every = integer(min=1, default=10000)
    out_dir = string(default=None)
[inference]
    omega = float(min=0, default=1.5)
    steps = integer(min=1, default=4)
    chunk_seconds = float(min=1, default=10.0)
    overlap_seconds = float(min=0, default=0.5)
    rate_mapping = option('nearest', 'floor', 'strict', default='nearest')
    limiter = boolean(default=False)
"""

# tiny architecture for tests and smoke runs
TOY_PRESET = {
    'model' : {'base_channels' : 8, 'stage_depths' : [1, 1, 1, 1],
               'bottleneck_depth' : 1, 'd_cond' : 16,
               'encoder_channels' : 16, 'encoder_layers' : 4},
    'data' : {'segment_samples' : 15872},
    'train' : {'batch_size' : 2, 'warmup_steps' : 20, 'lr_peak' : 1e-3,
               'log_every' : 10, 'ckpt_every' : 50},
}


def _get_configspec(strIO=True):
    """
    Return the configspec.
    Parameters
    ----------
    strIO : bool
        return configspec as a StringIO instance
    """
    if strIO == True:
        return StringIO(CONFIGSPEC)
    else:
        return CONFIGSPEC

def load_config(config_file=None, toy=False):
    """
    Load and validate a run config; missing keys take their defaults.

    Parameters
    ----------
    config_file : str
        INI-style config file. If None, only defaults are used.
    toy : bool
        Fill the values the file leaves unset from the tiny-architecture
        preset

    Returns
    -------
    ConfigObj (validated)
    """
    if config_file is not None:
        checkExists(config_file)
        infile = config_file
    else:
        infile = []
    try:
        cfg = ConfigObj(infile, configspec=_get_configspec())
    except Exception as e:
        raise DataError('Cannot parse config "{}": {}'.format(config_file, e))
    if toy is True:
        for section, params in TOY_PRESET.items():
            cfg.setdefault(section, {})
            for k,v in params.items():
                # values set in the file take precedence
                if k not in cfg[section]:
                    cfg[section][k] = v
    _validate(cfg)
    return cfg

def _validate(cfg):
    res = cfg.validate(Validator(), copy=True, preserve_errors=True)
    if res is not True:
        errs = []
        for sections, key, err in flatten_errors(cfg, res):
            name = '.'.join(list(sections) + [str(key)])
            errs.append('{} ({})'.format(name, err or 'missing'))
        raise DataError('Invalid config values: {}'.format('; '.join(errs)))
    data = cfg['data']
    if not len(data['rates']) == len(data['rate_probs']) == len(data['cutoff_bins']):
        raise DataError('data.rates, data.rate_probs and data.cutoff_bins must have equal length')
    if cfg['train']['warmup_steps'] > cfg['train']['total_steps']:
        raise DataError('train.warmup_steps must be <= train.total_steps')
    return cfg

def config_from_dict(d):
    """Rebuild a validated config from a plain dict (e.g. a checkpoint echo)"""
    cfg = ConfigObj(configspec=_get_configspec())
    cfg.merge(d)
    return _validate(cfg)

def write_config(cfg, out=None):
    """Write a config in INI form to a file path or STDOUT"""
    # ConfigObj.write() overwrites cfg.filename when it is set
    filename, cfg.filename = cfg.filename, None
    try:
        lines = cfg.write()
    finally:
        cfg.filename = filename
    text = '\n'.join(lines) + '\n'
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, 'w') as outF:
            outF.write(text)
        logging.info('File written: {}'.format(out))
    return text


class VfeConfig(object):
    """
    Architecture hyperparameters of the feature encoder and the VFE U-Net.
    """
    def __init__(self, stage_depths=(2, 2, 4, 2), base_channels=96,
                 d_cond=384, gen_bins=432, total_bins=512,
                 bottleneck_depth=2, encoder_channels=352, encoder_layers=4,
                 encoder_pool_bins=4, kernel_size=7, expansion=4,
                 time_scale=1000.0, n_rates=4):
        self.stage_depths = [int(x) for x in stage_depths]
        self.base_channels = int(base_channels)
        self.d_cond = int(d_cond)
        self.gen_bins = int(gen_bins)
        self.total_bins = int(total_bins)
        self.bottleneck_depth = int(bottleneck_depth)
        self.encoder_channels = int(encoder_channels)
        self.encoder_layers = int(encoder_layers)
        self.encoder_pool_bins = int(encoder_pool_bins)
        self.kernel_size = int(kernel_size)
        self.expansion = int(expansion)
        self.time_scale = float(time_scale)
        self.n_rates = int(n_rates)
        if self.d_cond % 2 != 0:
            raise DataError('d_cond must be even; got {}'.format(self.d_cond))
        if self.gen_bins % self.downsample_factor != 0:
            msg = 'gen_bins ({}) must be divisible by {}'
            raise DataError(msg.format(self.gen_bins, self.downsample_factor))

    @property
    def n_stages(self):
        return len(self.stage_depths)
    @property
    def downsample_factor(self):
        return 2 ** (self.n_stages - 1)
    @property
    def channels(self):
        """Channels per stage; doubling at every downsampling"""
        return [self.base_channels * 2 ** i for i in range(self.n_stages)]

    @classmethod
    def from_config(cls, cfg):
        m, s = cfg['model'], cfg['stft']
        total_bins = s['n_fft'] // 2
        return cls(stage_depths=m['stage_depths'],
                   base_channels=m['base_channels'],
                   d_cond=m['d_cond'],
                   gen_bins=total_bins - s['min_cutoff_bins'],
                   total_bins=total_bins,
                   bottleneck_depth=m['bottleneck_depth'],
                   encoder_channels=m['encoder_channels'],
                   encoder_layers=m['encoder_layers'],
                   encoder_pool_bins=m['encoder_pool_bins'],
                   kernel_size=m['kernel_size'],
                   expansion=m['expansion'],
                   time_scale=m['time_scale'],
                   n_rates=len(cfg['data']['rates']))

    def as_dict(self):
        return {'stage_depths' : list(self.stage_depths),
                'base_channels' : self.base_channels,
                'd_cond' : self.d_cond, 'gen_bins' : self.gen_bins,
                'total_bins' : self.total_bins,
                'bottleneck_depth' : self.bottleneck_depth,
                'encoder_channels' : self.encoder_channels,
                'encoder_layers' : self.encoder_layers,
                'encoder_pool_bins' : self.encoder_pool_bins,
                'kernel_size' : self.kernel_size,
                'expansion' : self.expansion,
                'time_scale' : self.time_scale,
                'n_rates' : self.n_rates}

    def __eq__(self, other):
        return isinstance(other, VfeConfig) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return 'VfeConfig({})'.format(self.as_dict())


class TrainConfig(object):
    """
    Optimization hyperparameters.
    """
    def __init__(self, lr_peak=2e-4, betas=(0.9, 0.999), warmup_steps=10000,
                 total_steps=500000, cond_dropout=0.1, alpha=0.2,
                 sigma_min=0.1, seed=0, batch_size=16, weight_decay=0.01,
                 grad_clip=1.0, log_every=100, ckpt_every=10000):
        self.lr_peak = float(lr_peak)
        self.betas = tuple(float(b) for b in betas)
        self.warmup_steps = int(warmup_steps)
        self.total_steps = int(total_steps)
        self.cond_dropout = float(cond_dropout)
        self.alpha = float(alpha)
        self.sigma_min = float(sigma_min)
        self.seed = int(seed)
        self.batch_size = int(batch_size)
        self.weight_decay = float(weight_decay)
        self.grad_clip = float(grad_clip)
        self.log_every = int(log_every)
        self.ckpt_every = int(ckpt_every)
        if not 0 <= self.cond_dropout <= 1:
            raise DataError('cond_dropout must be in [0, 1]; got {}'.format(cond_dropout))
        if self.warmup_steps > self.total_steps:
            raise DataError('warmup_steps must be <= total_steps')

    @classmethod
    def from_config(cls, cfg):
        t = cfg['train']
        return cls(lr_peak=t['lr_peak'], betas=(t['beta1'], t['beta2']),
                   warmup_steps=t['warmup_steps'],
                   total_steps=t['total_steps'],
                   cond_dropout=t['cond_dropout'],
                   alpha=cfg['stft']['alpha'], sigma_min=t['sigma_min'],
                   seed=cfg['seed'], batch_size=t['batch_size'],
                   weight_decay=t['weight_decay'], grad_clip=t['grad_clip'],
                   log_every=t['log_every'], ckpt_every=t['ckpt_every'])
