#!/usr/bin/env python
from setuptools import setup, find_packages
import sys

long_description = ''

if 'sdist' in sys.argv:
    with open('README.rst') as f:
        long_description = f.read()


setup(
    name='powerdist',
    version='0.1.0',
    description=(
        'Power bound distribution for MPI job dependency graphs: analysis,'
        ' optimal assignment, simulation and an online UDP controller'
    ),
    packages=find_packages(),
    package_data={
        'powerdist.example_data.graphs': ['*.graph'],
        'powerdist.example_data.power_tables': ['*.csv'],
        'powerdist.example_data.traces': ['*.csv'],
    },
    long_description=long_description,
    license='LGPLv3+',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'License :: OSI Approved :: GNU Lesser General Public License v3 or later (LGPLv3+)',  # noqa
        'Natural Language :: English',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3 :: Only',
        'Topic :: System :: Clustering',
        'Topic :: System :: Distributed Computing',
    ],
    python_requires='>=3.9',
    install_requires=[
        'networkx',
        'numpy',
        'scipy',
    ],
    extras_require={
        'dev': [
            'flake8',
            'mccabe',
            'pyflakes',
            'pytest',
            'click',
        ],
        'cli': [
            'click',
        ],
    },
    entry_points={
        'console_scripts': [
            'powerdist = powerdist.__main__:main',
        ],
    },
)
