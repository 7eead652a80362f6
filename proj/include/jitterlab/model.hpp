#pragma once

// Hierarchical prior and synthetic observation instances.

#include "jitterlab/distributions.hpp"
#include "jitterlab/generator.hpp"

#include <optional>

namespace jitterlab {

/// Inverse-Gamma shape/scale pairs for sigma_x^2, sigma_z^2 and sigma_w^2.
///
/// `improper` marks the Jeffreys limit alpha = beta = 0. Only the conjugate
/// updates accept it; the prior means are undefined in that mode.
struct Hyperparams {
  double alpha_x = 0, beta_x = 0;
  double alpha_z = 0, beta_z = 0;
  double alpha_w = 0, beta_w = 0;
  bool improper = false;

  static Hyperparams jeffreys() {
    Hyperparams h;
    h.improper = true;
    return h;
  }

  void validate() const {
    if (improper) {
      require(alpha_x == 0 && beta_x == 0 && alpha_z == 0 && beta_z == 0 &&
                  alpha_w == 0 && beta_w == 0,
              "Hyperparams: Jeffreys mode requires all parameters to be 0");
      return;
    }
    require(alpha_x > 0 && beta_x > 0 && alpha_z > 0 && beta_z > 0 &&
                alpha_w > 0 && beta_w > 0,
            "Hyperparams: all six parameters must be > 0");
  }

  InverseGammaParams signal() const { return {alpha_x, beta_x}; }
  InverseGammaParams jitter() const { return {alpha_z, beta_z}; }
  InverseGammaParams noise() const { return {alpha_w, beta_w}; }

  double mean_sigma_x2() const { return beta_x / (alpha_x - 1.0); }
  double mean_sigma_z2() const { return beta_z / (alpha_z - 1.0); }
  double mean_sigma_w2() const { return beta_w / (alpha_w - 1.0); }
};

/// Fits the priors to the mean and variance of unbiased variance estimates
/// from K_prior standard-normal coefficients and N_prior noise samples.
inline Hyperparams hyperparams_from_expected(int K_prior, int N_prior,
                                             double e_sigma_z2,
                                             double e_sigma_w2) {
  require(K_prior > 1, "hyperparams_from_expected: K_prior must be > 1");
  require(N_prior > 1, "hyperparams_from_expected: N_prior must be > 1");
  require(e_sigma_z2 > 0 && e_sigma_w2 > 0,
          "hyperparams_from_expected: expected variances must be > 0");
  Hyperparams h;
  h.alpha_x = (K_prior + 3) / 2.0;
  h.beta_x = (K_prior + 1) / 2.0;
  h.alpha_z = h.alpha_w = (N_prior + 3) / 2.0;
  h.beta_z = (N_prior + 1) / 2.0 * e_sigma_z2;
  h.beta_w = (N_prior + 1) / 2.0 * e_sigma_w2;
  return h;
}

/// Pins for any subset of the latent draws. Pinned values are used as-is and
/// consume no random numbers.
struct SynthOverrides {
  std::optional<double> sigma_x2;
  std::optional<double> sigma_z2;
  std::optional<double> sigma_w2;
  std::optional<Vector> z;
};

struct SyntheticInstance {
  Vector x_true;
  Vector z_true;
  Vector w;
  double sigma_x2 = 0, sigma_z2 = 0, sigma_w2 = 0;
  Vector y;
  std::uint64_t seed = 0;
};

inline SyntheticInstance synthesize(const ModelConfig& cfg,
                                    const Hyperparams& hyper,
                                    std::uint64_t seed,
                                    const SynthOverrides& pins = {}) {
  cfg.validate();
  hyper.validate();
  require(!hyper.improper, "synthesize: cannot draw from improper priors");
  Rng rng(seed);
  SyntheticInstance inst;
  inst.seed = seed;
  inst.sigma_x2 = pins.sigma_x2 ? *pins.sigma_x2 : sample_inverse_gamma(hyper.signal(), rng);
  inst.sigma_z2 = pins.sigma_z2 ? *pins.sigma_z2 : sample_inverse_gamma(hyper.jitter(), rng);
  inst.sigma_w2 = pins.sigma_w2 ? *pins.sigma_w2 : sample_inverse_gamma(hyper.noise(), rng);

  const int N = cfg.N();
  inst.x_true = std::sqrt(inst.sigma_x2) * standard_normal_vector(cfg.K, rng);
  if (pins.z) {
    require(pins.z->size() == N, "synthesize: pinned z must have length N");
    inst.z_true = *pins.z;
  } else {
    inst.z_true = std::sqrt(inst.sigma_z2) * standard_normal_vector(N, rng);
  }
  inst.w = std::sqrt(inst.sigma_w2) * standard_normal_vector(N, rng);
  inst.y = build_h_matrix(inst.z_true, cfg) * inst.x_true + inst.w;
  return inst;
}

}  // namespace jitterlab
