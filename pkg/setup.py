from setuptools import setup

setup(
    name="dcsbm",
    version="0.1.0",
    description="Exact and heuristic maximum-likelihood community detection for the degree-corrected block model",
    packages=["dcsbm"],
    python_requires=">=3.8",
    install_requires=[
        "click>=8.1",
        "matplotlib>=3.7",
        "numpy>=1.24",
        "pandas>=1.5",
        "PuLP>=2.7",
        "PyYAML>=6.0",
        "rich>=13.3",
        "scipy>=1.10",
        "typing_extensions>=4.5",
    ],
    extras_require={"test": ["pytest>=7.3", "hypothesis>=6.75"]},
    entry_points={"console_scripts": ["dcsbm=dcsbm.cli:run"]},
)
