#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "degan/nn.hpp"
#include "degan/tensor.hpp"

namespace degan {

/// Row-wise softmax of (N, K) logits (max-subtracted, overflow safe).
Tensor softmax(const Tensor& logits);

/// Argmax per row; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

/// Fraction of rows whose argmax equals the label.
double accuracy(const Tensor& logits, const std::vector<int>& labels);

/// Mean cross entropy of (N, K) logits against integer labels.
double cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Gradient of mean cross entropy w.r.t. the logits: (softmax - onehot) / N.
Tensor cross_entropy_grad(const Tensor& logits, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Stage 1: adversarial disentanglement objectives
// ---------------------------------------------------------------------------

struct DiscriminatorLossTerms {
    double real_expr = 0;  // expression head on real images vs. true labels
    double real_id = 0;    // identity head on real images vs. true labels
    double fake = 0;       // expression head on generated images vs. the fake class
    double total = 0;      // unweighted sum of the three
};

/// The expression head carries n_expressions + 1 logits; index n_expressions
/// is the generated class. All generated samples target that class here.
DiscriminatorLossTerms discriminator_loss(const Tensor& expr_logits_real,
                                          const std::vector<int>& expr_labels,
                                          const Tensor& id_logits_real,
                                          const std::vector<int>& id_labels,
                                          const Tensor& expr_logits_fake, int n_expressions);

struct GeneratorLossTerms {
    double expr = 0;  // expression head on generated images vs. source labels
    double id = 0;    // identity head on generated images vs. conditioned ids
    double total = 0;
};

GeneratorLossTerms generator_loss(const Tensor& expr_logits_fake,
                                  const std::vector<int>& expr_labels,
                                  const Tensor& id_logits_fake,
                                  const std::vector<int>& id_targets);

// ---------------------------------------------------------------------------
// Stage 2: weighted multi-classifier objective
// ---------------------------------------------------------------------------

struct Stage2LossWeights {
    // Four intermediate-feature classifiers, then the fused classifier.
    std::array<double, 4> local{0.7, 0.6, 0.4, 0.3};
    double fused = 1.0;
};

struct Stage2LossTerms {
    std::array<double, 4> local{};
    double fused = 0;
    double total = 0;  // weighted sum
};

Stage2LossTerms stage2_total_loss(const std::array<Tensor, 4>& local_logits,
                                  const Tensor& fused_logits, const std::vector<int>& labels,
                                  const Stage2LossWeights& weights);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Compare analytic gradients against central finite differences of `loss`
/// over a deterministic random subset of elements per tensor. `loss` must
/// recompute the objective from the current values; the analytic gradients
/// must already be filled in. Returns the max relative error, where the
/// denominator is max(|analytic|, |numeric|, 1e-6) so that near-zero
/// gradients are judged on absolute error.
double gradient_check_max_error(const std::function<double()>& loss,
                                const std::vector<std::pair<Tensor*, const Tensor*>>& value_grad,
                                double eps = 1e-5, int samples_per_tensor = 24,
                                std::uint64_t seed = 1234);

/// Same, over named parameters (value/grad pairs taken from each entry).
double gradient_check_max_error(const std::function<double()>& loss,
                                const std::vector<ParamTensor*>& params, double eps = 1e-5,
                                int samples_per_tensor = 24, std::uint64_t seed = 1234);

}  // namespace degan
