from setuptools import setup

setup(
    name="vip_flow",
    version="0.1.0",
    packages=["vip_flow"],
    package_data={"vip_flow": ["data/*.csv"]},
    install_requires=["numpy>=1.24", "scipy>=1.12", "pydantic>=2.0.0"],
    entry_points={"console_scripts": ["vip-flow=vip_flow.cli:main"]},
    python_requires=">=3.9",
)
