#pragma once

#include <string>
#include <vector>

#include "degan/data.hpp"
#include "degan/models.hpp"
#include "degan/stage1.hpp"
#include "degan/stage2.hpp"
#include "degan/synthetic.hpp"
#include "degan/tensor.hpp"

namespace degan {

/// Eval-mode representation codes for an index subset, batched. (N, code_dim)
Tensor encode_features(Encoder& enc, const std::vector<LabeledImage>& data,
                       const std::vector<long>& indices, long batch_size);
/// Raw images flattened to (N, C*H*W); the control feature set.
Tensor pixel_features(const std::vector<LabeledImage>& data, const std::vector<long>& indices);
std::vector<int> expression_labels(const std::vector<LabeledImage>& data,
                                   const std::vector<long>& indices);
std::vector<int> identity_labels(const std::vector<LabeledImage>& data,
                                 const std::vector<long>& indices);

struct ProbeResult {
    double train_accuracy = 0;
    double test_accuracy = 0;
    long n_classes = 0;
};

/// Multinomial logistic regression on z-scored features: zero init, full-batch
/// Adam, fixed step count. The problem is convex, so the result is a
/// deterministic function of the inputs.
ProbeResult fit_linear_probe(const Tensor& train_x, const std::vector<int>& train_y,
                             const Tensor& test_x, const std::vector<int>& test_y,
                             long n_classes, long steps = 300, double lr = 0.1);

/// How much each factor can be read linearly out of the representation.
/// The expression probe is trained and tested on disjoint subjects; the
/// identity probes split images within subjects, since an identity classifier
/// must see every class during training. The pixel identity probe is the
/// control: identity is plainly visible in pixel space, so a representation
/// that hides it is doing real work.
struct DisentanglementReport {
    double expression_probe_accuracy = 0;
    double identity_probe_accuracy = 0;
    double pixel_identity_probe_accuracy = 0;
    double expression_chance = 0;
    double identity_chance = 0;
    long n_expression_test = 0;
    long n_identity_test = 0;
};

DisentanglementReport probe_disentanglement(Encoder& enc,
                                            const std::vector<LabeledImage>& data,
                                            std::uint64_t seed, long batch_size);

/// Re-synthesize each sampled source under a random target identity with zero
/// noise, then let the factor oracle judge what came out.
struct TransferReport {
    long n_transfers = 0;
    double expression_agreement = 0;  // oracle expression == source label
    double identity_agreement = 0;    // oracle identity == requested target
};

TransferReport evaluate_transfer(Encoder& enc, Decoder& dec,
                                 const std::vector<LabeledImage>& data,
                                 const std::vector<long>& indices, const FactorOracle& oracle,
                                 long n_transfers, std::uint64_t seed);

/// Expression CNN trained directly on pixels; the comparison point for the
/// two-stage pipeline.
struct BaselineConfig {
    long width = 8;
    long batch_size = 150;
    double lr = 1e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    long epochs = 50;
    long steps_per_epoch = 0;  // 0: ceil(train size / batch)
    std::uint64_t seed = 3;
};

struct BaselineResult {
    double test_accuracy = 0;
    long steps_run = 0;
};

BaselineResult train_eval_baseline(const std::vector<LabeledImage>& data,
                                   const std::vector<long>& train_indices,
                                   const std::vector<long>& test_indices, long n_expressions,
                                   const BaselineConfig& cfg);

struct KfoldConfig {
    long k = 5;
    std::uint64_t fold_seed = 17;
    Stage1Config stage1;
    long stage1_epochs = 30;
    long stage1_steps_per_epoch = 0;
    Stage2Config stage2;
    long stage2_epochs = 20;
    long stage2_steps_per_epoch = 0;
    BaselineConfig baseline;
    std::string out_dir;
    bool write_samples = false;
};

struct FoldScore {
    int fold = 0;
    long n_test = 0;
    double fused_accuracy = 0;
    double baseline_accuracy = 0;
    double seconds = 0;
};

struct KfoldResult {
    std::vector<FoldScore> folds;
    double fused_mean = 0;
    double baseline_mean = 0;  // both means weighted by fold test size
    std::vector<std::vector<long>> fused_confusion;  // row: truth, col: prediction
};

/// Full subject-independent protocol: per fold, stage-1 representation
/// training, stage-2 heads, the pixel baseline, then held-out-subject
/// accuracy for both.
KfoldResult run_kfold(const std::vector<LabeledImage>& data, const KfoldConfig& cfg);

struct ResultRow {
    std::string method;
    std::string setting;
    int fold = 0;  // -1 marks a summary row
    long n_test = 0;
    double accuracy = 0;
};

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows);
void write_confusion_csv(const std::string& path, const std::vector<std::vector<long>>& counts);

}  // namespace degan
