"""Command-line subcommands (one docopt module each)"""
