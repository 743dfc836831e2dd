#pragma once

#include <map>
#include <string>
#include <vector>

#include "degan/data.hpp"
#include "degan/losses.hpp"
#include "degan/models.hpp"
#include "degan/nn.hpp"
#include "degan/rng.hpp"
#include "degan/tensor.hpp"

namespace degan {

/// Everything that shapes the produced weights. Run-length knobs (epoch
/// counts, output paths) live in Stage1Options instead, so a checkpoint can
/// be resumed for more epochs without a config mismatch.
struct Stage1Config {
    long image_size = 48;
    long channels = 1;
    long width = 8;      // first conv width; blocks use width, 2w, 4w, 8w
    long code_dim = 350;
    long noise_dim = 50;
    long n_expressions = 0;  // must be set from the dataset
    long n_identities = 0;
    long batch_size = 150;
    double lr = 1e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    /// When the rolling fake-detection accuracy of the discriminator exceeds
    /// this, the generator gets g_per_d_late updates per step instead of one.
    double d_acc_threshold = 0.75;
    int g_per_d_late = 2;
    long acc_window = 100;
    std::uint64_t seed = 1;

    std::map<std::string, std::string> to_map() const;
};

struct Batch {
    Tensor images;  // (N, C, H, W)
    std::vector<int> expr;
    std::vector<int> id;
};

/// Uniform sampling with replacement from the given index subset.
Batch sample_batch(const std::vector<LabeledImage>& data, const std::vector<long>& indices,
                   long batch_size, Rng& rng);

/// Adversarial representation learner. One train_step performs a
/// discriminator update followed by one or more generator updates, the count
/// driven by how easily the discriminator spots generated images.
class Stage1Trainer {
public:
    struct StepStats {
        DiscriminatorLossTerms d;
        GeneratorLossTerms g;
        double fake_detection_accuracy = 0;  // this batch
        double rolling_accuracy = 0;         // windowed, includes this batch
        int g_updates = 0;
        long step = 0;  // global step index after this step
    };

    explicit Stage1Trainer(const Stage1Config& cfg);

    /// noise_rng supplies the step's latent vectors and target identities.
    StepStats train_step(const Tensor& images, const std::vector<int>& expr_labels,
                         const std::vector<int>& id_labels, Rng& noise_rng);

    /// Deterministic synthesis sheet: one row per source image, columns are
    /// [source, reconstruction under each identity] with zero noise.
    Image8 sample_grid(const Tensor& sources);

    double rolling_accuracy() const;
    long global_step() const { return global_step_; }
    long epochs_done() const { return epochs_done_; }
    void set_epochs_done(long e) { epochs_done_ = e; }
    const Stage1Config& config() const { return cfg_; }

    Encoder& encoder() { return enc_; }
    Decoder& decoder() { return dec_; }
    Discriminator& discriminator() { return disc_; }

    std::uint64_t generator_param_hash();
    std::uint64_t discriminator_param_hash();

    void save(const std::string& path);
    /// Restores weights, optimizer state, counters and the accuracy window.
    /// The stored config must match exactly.
    void load(const std::string& path);

private:
    Stage1Config cfg_;
    Encoder enc_;
    Decoder dec_;
    Discriminator disc_;
    Adam opt_g_, opt_d_;
    std::vector<double> acc_window_;
    long acc_count_ = 0, acc_pos_ = 0;
    long global_step_ = 0;
    long epochs_done_ = 0;

    void push_accuracy(double a);
};

struct Stage1Options {
    std::string out_dir;       // losses.csv, checkpoints/, samples/
    long epochs = 1;           // target total; resuming continues toward it
    long steps_per_epoch = 0;  // 0: ceil(train size / batch size)
    long checkpoint_every = 1;
    long sample_rows = 6;
    bool write_samples = true;
    std::string resume_from;  // optional checkpoint path
};

struct Stage1RunSummary {
    long steps_run = 0;
    long epochs_done = 0;
    double final_rolling_accuracy = 0;
    std::string last_checkpoint;
};

/// Epoch loop: per-epoch RNG streams derived from (seed, epoch), so a run
/// resumed from an epoch checkpoint reproduces the uninterrupted run bit for
/// bit. Appends one losses.csv row per step.
Stage1RunSummary run_stage1(Stage1Trainer& trainer, const std::vector<LabeledImage>& data,
                            const std::vector<long>& train_indices, const Stage1Options& opt);

}  // namespace degan
