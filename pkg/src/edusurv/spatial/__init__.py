"""Bayesian spatiotemporal discrete-time survival model."""

from .betabinom import (  # noqa: F401
    GradeCountCell,
    beta_binomial_logpmf,
    build_cells,
)
from .graphs import (  # noqa: F401
    LatentStructure,
    SpatialGraph,
    build_latent_structure,
    icar_structure,
    load_graph,
    rw1_structure,
)
from .mcmc import (  # noqa: F401
    PosteriorDraws,
    SpatialModelParams,
    fit_mcmc,
    sample_prior_params,
    simulate_from_model,
)
from .posterior import (  # noqa: F401
    domain_hazard_draws,
    national_uys_draws,
    posterior_uys,
    uys_draws_from_hazards,
)
from .priors import PcPriorParams  # noqa: F401
