#!/usr/bin/env python
"""Setup script through setuptools. Simply run `python setup.py` to install
patchsegpy.
"""
import setuptools


with open('README.md') as fh_readme:
    LONG_DESCRIPTION = fh_readme.read()

with open('requirements.txt') as fh_requirements:
    REQUIREMENTS = list(fh_requirements)

setuptools.setup(
    name='patchsegpy',
    version='2026.10',
    author='patchsegpy developers',
    description='''3D to 2D patch conversion network for multimodal brain
 tumor segmentation''',
    long_description=LONG_DESCRIPTION,
    long_description_content_type='text/markdown',
    packages=setuptools.find_packages(exclude=['tests']),
    license='LGPLv3',
    classifiers=[
        'Programming Language :: Python :: 3',
        'License :: OSI Approved :: GNU Lesser General Public License v3 (LGPLv3)',
        'Operating System :: OS Independent',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Image Recognition',
        'Topic :: Scientific/Engineering :: Medical Science Apps.',
        ],
    install_requires=REQUIREMENTS,
    python_requires='>=3.7',
    extras_require={
        'test': ['pytest'],
        },
    entry_points={
        'console_scripts': ['patchsegpy=patchsegpy.cli:main'],
        },
    )
