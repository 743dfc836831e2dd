#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "degan/data.hpp"
#include "degan/losses.hpp"
#include "degan/models.hpp"
#include "degan/nn.hpp"
#include "degan/rng.hpp"

namespace degan {

struct Stage2Config {
    long fusion_dim = 64;    // per-local feature width fed to the fusion MLP
    long local_width = 32;   // conv width inside each local classifier
    long fused_hidden = 128;
    long n_expressions = 0;  // must be set from the dataset
    long batch_size = 150;
    double lr = 1e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    Stage2LossWeights weights;
    std::uint64_t seed = 2;

    std::map<std::string, std::string> to_map() const;
};

/// Expression recognition on top of a frozen stage-1 encoder: four local
/// classifiers on the encoder's intermediate feature maps plus a fused
/// classifier over [code; local features]. The encoder is only ever run in
/// eval mode and its weights are never touched.
class Stage2Trainer {
public:
    struct StepStats {
        Stage2LossTerms loss;
        double fused_accuracy = 0;  // this batch
        long step = 0;
    };

    Stage2Trainer(Encoder& frozen_encoder, const Stage2Config& cfg);

    StepStats train_step(const Tensor& images, const std::vector<int>& expr_labels);

    /// Eval-mode fused logits (N, n_expressions).
    Tensor fused_logits(const Tensor& images);
    /// Argmax predictions; ties resolve to the lowest class index.
    std::vector<int> predict(const Tensor& images);
    /// Fused-head accuracy over an index subset, batched, deterministic.
    double evaluate_accuracy(const std::vector<LabeledImage>& data,
                             const std::vector<long>& indices);

    long global_step() const { return global_step_; }
    long epochs_done() const { return epochs_done_; }
    void set_epochs_done(long e) { epochs_done_ = e; }
    const Stage2Config& config() const { return cfg_; }
    Encoder& encoder() { return enc_; }
    LocalClassifier& local(int i) { return *locals_.at(static_cast<size_t>(i)); }
    FusedClassifier& fused() { return fused_; }

    /// Hash over the frozen encoder's parameters and running statistics.
    std::uint64_t encoder_state_hash();
    std::vector<ParamTensor*> trainable_params();

    void save(const std::string& path);
    /// Restores heads + optimizer; rejects a checkpoint written against a
    /// different config or a different encoder state.
    void load(const std::string& path);

private:
    Encoder& enc_;
    Stage2Config cfg_;
    std::vector<std::unique_ptr<LocalClassifier>> locals_;
    FusedClassifier fused_;
    Adam opt_;
    long global_step_ = 0;
    long epochs_done_ = 0;
};

struct Stage2Options {
    std::string out_dir;
    long epochs = 50;
    long steps_per_epoch = 0;  // 0: ceil(train size / batch size)
    long checkpoint_every = 10;
    std::string resume_from;
};

struct Stage2RunSummary {
    long steps_run = 0;
    long epochs_done = 0;
    double final_train_accuracy = 0;
    std::string last_checkpoint;
};

Stage2RunSummary run_stage2(Stage2Trainer& trainer, const std::vector<LabeledImage>& data,
                            const std::vector<long>& train_indices, const Stage2Options& opt);

}  // namespace degan
