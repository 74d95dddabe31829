import setuptools

setuptools.setup(
    name="keystone-sr",
    version="0.1.0",
    description="Keystone-aware multi-channel super-resolution for pushbroom hyperspectral imagery",
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
    ],
    packages=["keystone_sr"],
    python_requires='>=3.8',
    install_requires=[
        "numpy>=1.20",
        "scipy>=1.7",
        "scikit-image>=0.19",
        "PyWavelets>=1.1",
        "spectral>=0.22",
        "matplotlib>=3.3",
    ],
    entry_points={
        "console_scripts": ["keystone-sr=keystone_sr.cli:main"],
    },
)
