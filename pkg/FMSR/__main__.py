#!/usr/bin/env python

# import
## batteries
import sys
import logging
## 3rd party
from docopt import docopt
## application
from FMSR import Utils
from FMSR.Utils import DataError, NumericError
from FMSR.Commands import Train
from FMSR.Commands import Upsample
from FMSR.Commands import Eval
from FMSR.Commands import Inspect_config

def main(args=None):
    """Main entry point for application
    """
    if args is None:
        args = sys.argv[1:]

    docs = """
FMSR: flow-matching audio super-resolution to 48 kHz

Usage:
  FMSR <command> [<args>...]
  FMSR -l | --list
  FMSR -h | --help
  FMSR --version

Options:
  -l --list     List subcommands.
  -h --help     Show this screen.
  --version     Show version.

Commands:
  Use the `list` option.
Description:
  Train and run a vocoder-free audio super-resolution model that generates
  the missing high band of a 8-24 kHz recording as complex STFT
  coefficients with conditional flow matching.
  See the sub-command documentation for more information on features.

Exit codes:
  0 = success; 1 = usage error; 2 = invalid input data; 3 = numerical failure
    """
    # arg parse
    args = docopt(docs, argv=args, version='0.1', options_first=True)

    # dict of all subcommands
    cmds = {'train' : Train,
            'upsample' : Upsample,
            'eval' : Eval,
            'inspect-config' : Inspect_config}

    # list subcommands
    if args['--list']:
        cmd_list = '\n'.join(sorted(cmds.keys(), key=str.lower))
        print('#-- Commands --#')
        print(cmd_list)
        sys.exit(Utils.EXIT_SUCCESS)

    # running subcommand
    try:
        func = cmds[args['<command>']]
    except KeyError:
        msg = 'ERROR: command "{}" does not exist'
        print(msg.format(args['<command>']), file=sys.stderr)
        sys.exit(Utils.EXIT_USAGE)
    try:
        func.opt_parse(args['<args>'])
    except NumericError as e:
        logging.error('Numerical failure: {}'.format(e))
        sys.exit(Utils.EXIT_NUMERIC)
    except DataError as e:
        logging.error('ERROR: {}'.format(e))
        sys.exit(Utils.EXIT_DATA)


if __name__ == '__main__':
    main()
