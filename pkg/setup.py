from setuptools import find_packages, setup

with open('README.md', 'r') as f:
    long_description = f.read()

dependencies = [
    'PyYAML >= 6.0.1',
]

setup(
        name='btlab',
        version='0.1.0',
        author='Raphaël',
        author_email='r@gmail.com',
        description='Blocktree protocol simulator and consistency checker',
        long_description=long_description,
        long_description_content_type='text/markdown',
        url='https://github.com/RaphaeldeGail',
        packages=find_packages('src'),
        package_dir={'': 'src'},
        data_files=[('config/btlab', ['default.yaml'])],
        install_requires=dependencies,
        extras_require={'test': ['pytest >= 7.0']},
        python_requires='>=3.9',
        entry_points={
            'console_scripts': [
                'btlab=btlab.cli:main'
            ],
        }
)
