from setuptools import setup, find_packages
from pathlib import Path

# Read requirements
requirements = []
req_file = Path(__file__).parent / "requirements.txt"
if req_file.exists():
    requirements = req_file.read_text().strip().split("\n")

setup(
    name="tapstab",
    version="0.1.0",
    description="Threshold activation problem solver with bottom-k sketch oracles (STAB) and baselines",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=requirements,
    extras_require={
        "dev": ["pytest>=7.0", "pytest-mock>=3.0", "hypothesis>=6.0"],
    },
    entry_points={
        "console_scripts": [
            "tapstab=tapstab.cli:app",
        ],
    },
    python_requires=">=3.10,<4.0",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
)
