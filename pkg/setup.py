from setuptools import find_packages, setup

with open("requirements.txt", encoding="utf-8") as handle:
    requirements = [line.strip() for line in handle if line.strip() and not line.startswith(("pytest", "hypothesis"))]

setup(
    name="wpod-bench",
    version="0.1.0",
    description="Weighted POD reduced order models for SUPG-stabilized parametrized optimal control",
    packages=find_packages(include=["src", "src.*"]),
    python_requires=">=3.10",
    install_requires=requirements,
    extras_require={"test": ["pytest>=8.0", "hypothesis>=6.100"]},
    entry_points={"console_scripts": ["wpod-bench=src.main:main"]},
)
