"""Self-repelling diffusions, their lattice and jump-process counterparts, and
Monte Carlo checks of the identities in law that connect them."""

__version__ = "0.1.0"

from .diffusion import (OccupationProfile, build_diffusion, exit_race, scale_from_profile,
                        transfer_path)
from .discrete import SiteProfile, run_lattice_selfrep, run_reversed_triple, run_selfrep_jump
from .field import sample_gff
from .rng import make_rng

__all__ = [
    "OccupationProfile", "SiteProfile", "build_diffusion", "exit_race", "make_rng",
    "run_lattice_selfrep", "run_reversed_triple", "run_selfrep_jump", "sample_gff",
    "scale_from_profile", "transfer_path",
]
