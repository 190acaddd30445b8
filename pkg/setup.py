"""
Setup script for the epinet package.
"""

from setuptools import setup, find_packages

setup(
    name="epinet",
    version="1.0.0",
    description="Open multitype SIR epidemics on directed trade networks",
    author="Epidemiology Modelling Team",
    author_email="epi-modelling@example.com",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    install_requires=[
        "numpy>=1.20.0",
        "scipy>=1.8.0",
        "pandas>=1.5.0",
        "networkx>=2.6",
        "python-dotenv>=0.19.0",
    ],
    python_requires=">=3.8",
    entry_points={
        "console_scripts": [
            "epinet=epinet.main:main",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
    ],
)
