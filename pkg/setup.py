"""
Safe Imitation Learning for Highway Car-Following - Setup Script

This package trains spline-output driving policies from expert car-following
logs, with a barrier-augmented imitation loss, and validates them against a
behavioral-cloning baseline in a closed-loop kinematic simulator.
"""
from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="safe_il",
    version="1.0.0",
    author="Safe IL Developers",
    author_email="support@example.com",
    description="Safe imitation learning for highway car-following with B-spline plans",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    py_modules=[
        "config",
        "splines",
        "policy_net",
        "losses",
        "tracker",
        "simcore",
        "datapipe",
        "training",
        "experiments",
        "main",
    ],
    package_data={"": ["scenarios/*.env"]},
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.23.0",
        "scipy>=1.10.0",
        "pandas>=1.5.0",
        "python-dotenv>=1.0.0",
        "tqdm>=4.66.0",
        "python-docx>=1.1.0",
        "reportlab>=4.0.0",
    ],
    extras_require={
        "dev": [
            "pytest>=7.0.0",
            "black>=23.0.0",
            "flake8>=6.0.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "safe-il=main:main",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    keywords=[
        "imitation learning", "behavioral cloning", "b-spline", "barrier function",
        "car following", "pure pursuit", "autonomous driving", "simulation"
    ],
)
