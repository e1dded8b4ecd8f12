from setuptools import setup, find_packages


with open('VERSION') as infile:
    version = infile.read().strip()


setup(
    name='python-apsgd',
    description=('Perturbed asynchronous parallel SGD laboratory with '
                 'second-order convergence diagnostics'),
    version=version,
    packages=find_packages(include=['apsgdlib*']),
    install_requires=[
        'numpy>=1.22,<3',
        'scipy>=1.8,<2',
        'pandas>=1.4,<3',
    ],
    extras_require={
        'dev': [
            'pytest',
            'hypothesis',
        ],
    },
    entry_points={
        'console_scripts': [
            'apsgd=apsgdlib.cli:main',
        ],
    },
)
