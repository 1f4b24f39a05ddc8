"""loopsoup-lab: exact and Monte Carlo checks for loop-soup / free-field /
boundary-excursion identities on finite lattices.

The package is organised the way the underlying theory splits:

- :mod:`loopsoup_lab.lattice` -- domains, Green operators, excursion kernels;
- :mod:`loopsoup_lab.gff` -- the discrete Gaussian free field and its
  Laplace functionals;
- :mod:`loopsoup_lab.loopsoup` -- random-walk loop soups, occupation fields,
  clusters and the rewiring move;
- :mod:`loopsoup_lab.excursions` -- Poisson ensembles of boundary
  excursions, with and without the all-arcs-even parity conditioning;
- :mod:`loopsoup_lab.identities` -- the exact coupling constants and the
  closed-form identities tying the three objects together;
- :mod:`loopsoup_lab.experiments` -- seeded Monte Carlo experiments with
  pass/fail verdicts against the exact formulas;
- :mod:`loopsoup_lab.cli` -- the ``loopsoup-lab`` command line front end.
"""

from .lattice import (
    DomainGraph,
    GreenOperator,
    ScalarField,
    arc_harmonic,
    arc_mass_matrix,
    arc_pair_mass,
    build_path_domain,
    build_rect_domain,
    dirichlet_form,
    excursion_kernel,
    green,
    harmonic_extension,
    pairing_mass,
)
from .gff import (
    laplace_centered_square,
    laplace_shifted_square,
    renormalized_square,
    sample_gff,
)
from .loopsoup import (
    LoopEnsemble,
    bridge_probability,
    clusters,
    edge_multiset,
    occupation_field,
    rewire_step,
    sample_loopsoup,
)
from .excursions import (
    Excursion,
    ExcursionEnsemble,
    occupation_functional,
    occupation_vector,
    sample_excursion_ppp,
    sample_parity_conditioned,
    sample_parity_counts,
)
from .identities import (
    CalibrationConstants,
    calibrate,
    coupling_matrix,
    crossing_formulas,
    dynkin_check,
    excursion_laplace_exact,
    random_current_identity,
    sinh_expression,
)
from .experiments import (
    EXPERIMENT_CATALOG,
    ExperimentReport,
    StripConfig,
    isomorphism_experiment,
    multi_arc_parity_experiment,
    rectangle_crossing_experiment,
    strip_parity_experiment,
)
from .cli import RunConfig, emit_config, parse_config

__version__ = "0.1.0"
