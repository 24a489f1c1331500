from setuptools import setup, find_packages

setup(
    name='meeso',
    version='0.1.0',
    install_requires=[
        'torch>=2.0',
        'numpy',
        'tqdm',
        'pandas',
        'scikit-learn',
        'tensorboard',
        'joblib',
        ],
    extras_require={'test': ['pytest']},
    entry_points={'console_scripts': ['meeso=meeso.cli:main']},
    packages=find_packages(exclude=['tests'])
)
