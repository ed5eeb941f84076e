#pragma once

#include "vidfm/types.hpp"

namespace vidfm {

// q(phi_j, sigma^2_uj) for every j from the factor moment sums. Writes mu_phi, sigma_phi, psi2_u.
void update_transition(const SmoothedMoments& moments, const ModelContext& ctx, VariationalState& state);

// q(lambda_i, sigma^2_i) for every i from state.g, state.q and the current P_i.
// Writes mu_lambda, sigma_lambda, psi2_eps and rebuilds R_i.
void update_loadings(const ModelContext& ctx, VariationalState& state);

// q(z_ik): ascending-k sweep within each i (new b for m < k, old b for m > k), then P_i.
void update_selectors(const ModelContext& ctx, VariationalState& state);

// gamma_ik for one k given the current row of b.
double selector_statistic(const VariationalState& state, int i, int k);

}  // namespace vidfm
