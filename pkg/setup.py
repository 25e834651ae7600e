import os
import sys
from setuptools import setup
# version checking derived from https://github.com/levlaz/circleci.py/blob/master/setup.py
from setuptools.command.install import install

VERSION = '0.1.0'
TAG_ENV_VAR = 'CIRCLE_TAG'

with open("README.md", "r") as fh:
    long_description = fh.read()


class VerifyVersionCommand(install):
    """Custom command to verify that the git tag matches our version"""
    description = 'verify that the git tag matches our version'

    def run(self):
        tag = os.getenv(TAG_ENV_VAR)

        if tag != VERSION:
            info = "Git tag: {0} does not match the version of this app: {1}".format(
                tag, VERSION
            )
            sys.exit(info)


setup(
    name='dynorder',
    version=VERSION,
    description='Data-driven feature ordering and order-aware fusion for tabular data',
    install_requires=[
        'numpy>=1.24,<2',
        'scipy>=1.10',
        'networkx>=3.0',
        'PyYAML>=5.4',
        'tenacity>=8.2',
        'importlib-metadata>=4.6',
    ],
    python_requires='>=3.9',
    test_suite='nose2.collector.collector',
    tests_require=['nose2', 'freezegun', 'scikit-learn'],
    entry_points={
        'console_scripts': [
            'dynorder = dynorder.main:main'
        ]
    },
    license='MIT',
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=['dynorder',],
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Programming Language :: Python :: 3',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],
    cmdclass={
        'verify': VerifyVersionCommand,
    },
)
