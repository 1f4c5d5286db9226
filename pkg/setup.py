import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
     name='toques',
     version='0.1.0',
     description="Energy-weighted optimal transport for semi-supervised out-of-distribution detection",
     long_description=long_description,
     long_description_content_type="text/markdown",
     packages=setuptools.find_packages(exclude=["tests", "examples", "examples.*"]),
     scripts=["bin/toque"],
     python_requires=">=3.8",
     install_requires=[
        'numpy',
        'pandas',
        'scipy',
        'scikit-learn',
        'tqdm',
      ],
     extras_require={"test": ["pytest"]},
     classifiers=[
         "Programming Language :: Python :: 3",
         "License :: OSI Approved :: MIT License",
         "Operating System :: OS Independent",
     ],
 )
