"""Neural two-stage pipeline over superquadric range-image datasets:
instance segmentation plus a CNN parameter regressor, exchanging data
with the core toolkit purely through its file formats."""

__version__ = "0.1.0"
