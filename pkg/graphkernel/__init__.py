# Graph Kernel Reconstruction Toolkit
__version__ = "1.0.0"
