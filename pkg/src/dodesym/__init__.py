"""Symmetry analysis toolkit for second-order delay differential systems.

Submodules:
    expr       expression trees, parsing, differentiation
    symmetry   vector fields, delayed prolongation, brackets, invariant counts
    dods       delay system model and invariance verification
    catalog    machine-readable families of invariant systems
    linear     linear delay systems: symmetry structure, characteristic roots
    integrate  method-of-steps integrator with dense output
    reduce     group-invariant solution construction
    traffic    car-following application
    cli        command-line front end
"""

__version__ = "0.1.0"
