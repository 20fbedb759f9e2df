from setuptools import setup, find_packages

setup(
    name="pbcfw",
    version="1.0",
    packages=find_packages(exclude=["tests", "examples"]),
    install_requires=["Cerberus", "numpy", "pandas", "scipy"],
    entry_points={"console_scripts": ["pbcfw-bench=pbcfw.bench:main"]},
)
