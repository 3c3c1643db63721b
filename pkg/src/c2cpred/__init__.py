"""Per-point uncertainty prediction for mobile laser scanning point clouds.

The pipeline: extract 27 local geometric features per scan point, label each
point with its cloud-to-cloud distance against a reference scan, train tree
ensembles on the labeled features, and evaluate with spatially blocked
cross-validation. A synthetic scene generator provides co-registered
reference/scan pairs with planted error fields for end-to-end testing.
"""

__version__ = "0.1.0"
