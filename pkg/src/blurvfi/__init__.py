"""Joint deblurring and frame-rate up-conversion of blurry low-fps video."""

__version__ = "0.1.0"
