#!/usr/bin/env python

"""
inspect-config: print the fully resolved run config

Usage:
  inspect-config [options] [<config>]
  inspect-config -h | --help
  inspect-config --version

Options:
  <config>            Run config file. If not given, only defaults.
  --toy               Apply the tiny architecture preset.
  --output=<o>        Write to this file instead of STDOUT.
                      [Default: None]
  -h --help           Show this screen.
  --version           Show version.

Description:
  The config is validated and every missing value is filled with its
  default; the result is printed in the same (INI) format, so it can be
  edited and passed to `train`.
"""

# import
## batteries
from docopt import docopt
import logging
## application
from FMSR import RunConfig
## logging
logging.basicConfig(format='%(asctime)s - %(message)s', level=logging.DEBUG)


def main(args):
    cfg = RunConfig.load_config(args['<config>'], toy=args['--toy'])
    out = args['--output']
    if out is None or out == 'None':
        out = None
    RunConfig.write_config(cfg, out)

def opt_parse(args=None):
    if args is None:
        args = docopt(__doc__, version='0.1')
    else:
        args = docopt(__doc__, version='0.1', argv=args)
    main(args)
