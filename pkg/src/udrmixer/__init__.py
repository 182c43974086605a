"""UHD image deraining toolkit built on a small numpy tensor engine."""
