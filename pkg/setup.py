from setuptools import setup

with open('requirements.txt') as f:
    requirements = f.read().splitlines()

packages = [
    'pyegd'
]

setup(
    name='pyegd',
    version='1.0.0',
    packages=packages,
    install_requires=requirements,
    extras_require={'test': ['pytest']},
    python_requires='>=3.9',
    entry_points={'console_scripts': ['pyegd=pyegd.cli:main']},
    license='',
    description='Gesture-specific executional error detection on surgical robot kinematics.'
)
