#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace degan {

/// Every tunable of the pipeline, flat. Parsed from `key = value` files
/// (# comments), overridable one key at a time, and round-trippable through a
/// string map so a run can be reproduced from its manifest alone.
struct RunConfig {
    // Data: an image directory tree, or the built-in synthetic set when empty.
    std::string data_dir;
    std::string out_dir = "out";
    std::string setting_label;  // results.csv "setting" column; auto when empty
    std::string stage1_checkpoint;
    long image_size = 48;
    long channels = 1;
    long last_n_frames = 3;
    bool augment = false;
    bool write_samples = true;

    long synth_identities = 5;
    long synth_expressions = 4;
    long synth_per_pair = 100;
    std::uint64_t synth_seed = 9;

    // Shared optimizer settings.
    double lr = 1e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    long batch_size = 150;

    // Stage 1: adversarial representation learning.
    long width = 8;
    long code_dim = 350;
    long noise_dim = 50;
    double d_acc_threshold = 0.75;
    long g_per_d_late = 2;
    long acc_window = 100;
    long stage1_epochs = 300;
    long stage1_steps_per_epoch = 0;
    std::uint64_t stage1_seed = 1;
    long checkpoint_every = 10;
    long sample_rows = 6;

    // Stage 2: expression heads on the frozen encoder.
    long fusion_dim = 64;
    long local_width = 32;
    long fused_hidden = 128;
    double lambda1 = 0.7;
    double lambda2 = 0.6;
    double lambda3 = 0.4;
    double lambda4 = 0.3;
    double lambda_fused = 1.0;
    long stage2_epochs = 50;
    long stage2_steps_per_epoch = 0;
    std::uint64_t stage2_seed = 2;

    // Pixel baseline.
    long baseline_width = 8;
    long baseline_epochs = 50;
    long baseline_steps_per_epoch = 0;
    std::uint64_t baseline_seed = 3;

    // Evaluation protocol.
    long kfold_k = 5;
    std::uint64_t fold_seed = 17;
    std::uint64_t probe_seed = 99;
    long transfer_count = 200;
    std::uint64_t transfer_seed = 123;
};

/// All schema keys in declaration order.
std::vector<std::string> config_keys();

/// Parse a config file. Unknown or duplicate keys, malformed values and
/// violated constraints are hard errors naming the key.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);

/// Apply a single `key=value` override.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Exact round trip: config_from_map(config_to_map(c)) == c.
std::map<std::string, std::string> config_to_map(const RunConfig& cfg);
RunConfig config_from_map(const std::map<std::string, std::string>& m);

/// Range/consistency checks shared by every entry point.
void validate_config(const RunConfig& cfg);

/// What a run was, sufficient to reproduce it: the command, the full config
/// snapshot, lifecycle status and the artifacts it wrote.
struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;
    std::string status;  // "running", "ok" or "failed"
    std::string started;
    std::string finished;
    std::vector<std::string> outputs;

    void write(const std::string& path) const;
    static RunManifest read(const std::string& path);
};

std::string utc_timestamp();

}  // namespace degan
