#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>

#include "dccl/common.hpp"
#include "dccl/data.hpp"
#include "dccl/model.hpp"

namespace dccl {

struct SynthConfig {
  std::uint32_t num_users = 2000;
  std::uint32_t num_items = 1000;
  std::uint32_t latent_dim = 16;
  double density = 0.005;          // target train interaction probability
  double pop_exponent = 1.5;       // power-law exponent, > 1
  double conformity_mix = 0.4;     // 0 = pure interest, 1 = pure conformity
  double test_density_scale = 0.25;
  std::uint64_t seed = 42;

  void validate() const;  // throws ConfigError
};

/// Ground truth behind the generated interactions: each (u, i) interacts
/// with probability sigmoid(a * <interest_u, content_i> + b * conf_u * pop_i
/// + c), with c calibrated per dataset to the target density.
struct SyntheticWorld {
  Matrix user_interest;                 // unit rows, num_users x latent_dim
  Matrix item_content;                  // unit rows, num_items x latent_dim
  std::vector<double> item_pop;         // truncated power law in (0, 1]
  std::vector<double> user_conformity;  // uniform [0, 1]
  double a = 0.0;
  double b = 0.0;
  double c_train = 0.0;
  double c_iid = 0.0;
  double c_ood = 0.0;
  double ood_pop = 0.0;  // constant that replaces item_pop under intervention
};

struct SyntheticData {
  InteractionDataset train;
  InteractionDataset test_iid;  // same mechanism, train pairs excluded
  InteractionDataset test_ood;  // popularity edge severed, train pairs excluded
  SyntheticWorld world;
};

SyntheticData generate_synthetic(const SynthConfig& cfg);

/// Spearman correlations of per-item mean model score against true
/// popularity: first = conformity embeddings, second = interest embeddings.
std::pair<double, double> disentanglement_score(const DisentangledEmbeddings& emb,
                                                const SyntheticWorld& world);

/// Spearman rank correlation with average ranks on ties. Returns 0 when
/// either argument has zero rank variance.
double spearman(std::span<const double> a, std::span<const double> b);

/// Kolmogorov-Smirnov distance between samples and the truncated Pareto
/// distribution on [x_min, 1] with the given exponent.
double power_law_ks(std::span<const double> values, double exponent, double x_min);

/// item \t id \t true_pop lines, then user \t id \t conformity lines.
void write_ground_truth(const std::string& path, const SyntheticWorld& world);

}  // namespace dccl
