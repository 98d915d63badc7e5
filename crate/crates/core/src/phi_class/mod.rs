//! The convexity cone Φ, tensorisation on finite products, and the
//! technical inequalities used to pass between exponents.

mod candidate;
mod lemmas;
mod suite;
mod tensor;

pub use candidate::{
    ft_deficit, is_in_phi, log_grid, psi_convexity_check, PhiCandidate, PhiVerdict, CONCAVITY_REL_TOL,
};
pub use lemmas::{
    lemma10_check, lemma10_profile, lemma11_check, lemma11_u, lemma8_check, lemma9_check, rho_s,
    rho_triangle_margin, weighted_energy_on, Lemma10Margins, Lemma11Input, Lemma8Regime,
};
pub use suite::{run_suite, LemmaVerdict, SUITE_IDS};
pub use tensor::{cn_alternating_sum, subadditivity_margin, var_p_subadditivity, ProductGrid, CN_MAX_FACTORS};
