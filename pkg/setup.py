#!/usr/bin/env python
from setuptools import setup, find_packages


## install main application
desc = 'Vocoder-free audio super-resolution to 48 kHz with flow matching'
setup(
    name = 'FMSR',
    version = '0.1.0',
    description = desc,
    long_description = desc + '\n See README for more information.',
    entry_points={
        'console_scripts': [
            'FMSR = FMSR.__main__:main'
        ]
    },
    install_requires = ['docopt>=0.6.2', 'numpy>=1.20', 'pandas>=1.0',
                        'scipy>=1.6', 'configobj>=5.0.6', 'torch>=1.13',
                        'soundfile>=0.10', 'matplotlib>=3.3', 'tqdm>=4.0'],
    license = "MIT license",
    packages = find_packages(exclude=['tests']),
    package_dir={'FMSR':
                 'FMSR'},
)
