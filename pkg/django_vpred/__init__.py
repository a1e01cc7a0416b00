try:
    from .version import version as __version__
# Running from a source checkout without setuptools_scm metadata
except ImportError:
    __version__ = '0.0.0'
