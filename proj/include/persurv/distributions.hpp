#pragma once

namespace persurv {

// P(Z > z) for a standard normal Z.
double normal_sf(double z);

// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a);
// series for x < a + 1, Lentz continued fraction otherwise.
double regularized_gamma_q(double a, double x);

// Upper tail of the chi-square distribution with df degrees of freedom.
double chi_square_sf(double x, double df);

}  // namespace persurv
