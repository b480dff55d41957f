"""Offline option discovery with hindsight-predictable terminations.

Subpackage map:
    autodiff    reverse-mode engine over float64 numpy arrays
    nets        MLPs, distribution heads, Adam, checkpoint serialization
    options     hindsight option posterior (forward recursion) and oracles
    transition  option-terminal mixture density model
    objectives  behaviour cloning + predictability losses, identity checks
    tabular     exact finite-MDP machinery for the identity checks
    envs        pointmass maze, gridworlds, scripted data generation
    offline     offline training loop and presets
    evaluate    switch rates, held-out likelihood, option-model CE, traces
    transfer    semi-MDP critic + categorical controller on frozen options
    config      run configuration, seeding, manifests
    cli         command-line entry points
"""

__version__ = "0.1.0"
