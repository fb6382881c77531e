"""Generative counterfactual-outcome evaluators for prescriptive process
policies, with a ground-truth loan simulator and a statistical realism suite.
"""

__version__ = "0.1.0"
