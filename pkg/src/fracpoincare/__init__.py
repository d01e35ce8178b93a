"""Grid laboratory for improved fractional Sobolev-Poincare inequalities."""

from .geometry import (
    ConstructionError,
    DomainSpec,
    GridDomain,
    TailSet,
    ahlfors_infimum,
    boundary_distance,
    build_domain,
    connected_components,
    disk_domain,
    from_mask,
    hole_count,
    john_constant,
    tail_components,
)
from .kernel import (
    FracParams,
    FunctionalValue,
    GridFunction,
    gagliardo_full,
    gagliardo_improved,
    local_density,
    lq_deviation,
    riesz_potential,
    set_threads,
    weak_quasinorm,
)

__version__ = "0.1.0"
