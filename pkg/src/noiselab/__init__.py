"""noiselab: simulate and characterise non-Markovian noise in driven qubits.

Pseudoidentity gate sequences amplify coherent and environment-memory errors
into oscillatory expectation-value signatures; this package generates such
experiments synthetically under Markovian, qubit-TLS, and post-Markovian
master-equation noise, fits the models back with uncertainty estimates, and
ships independent numerical oracles for every analytic shortcut it takes.
"""

__version__ = "0.1.0"
