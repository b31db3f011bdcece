#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""Optimizer benchmarking for tabular deep learning"""

# Always prefer setuptools over distutils
from setuptools import setup, find_packages

# Get the long description from the README file
with open('README.md', 'r', encoding='utf-8') as f:
    long_description = f.read()



requirements = ['numpy>=1.22',
                'scipy',
                'pandas>=1.5']

setup(
    name='tabopt',

    version='0.1.0',

    description='Optimizer benchmarking for tabular deep learning',
    long_description=long_description,
    long_description_content_type="text/markdown",

    license='MIT',

    # See https://pypi.python.org/pypi?%3Aaction=list_classifiers
    classifiers=[
        'Development Status :: 3 - Alpha',

        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',

        'License :: OSI Approved :: MIT License',

        'Programming Language :: Python :: 3',
    ],

    keywords='deep-learning optimizers tabular-data benchmarking',

    python_requires='>=3.8',

    packages=find_packages(exclude=['contrib', 'docs', 'tests']),

    install_requires=requirements,

    # The tabopt command runs tabopt.tabopt_CLI.main
    entry_points={
        'console_scripts': [
            'tabopt=tabopt.tabopt_CLI:main',
        ],
    },
)
