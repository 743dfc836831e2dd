#include "degan/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "degan/eval.hpp"
#include "degan/stage1.hpp"
#include "degan/stage2.hpp"
#include "degan/synthetic.hpp"

namespace fs = std::filesystem;

namespace degan {
namespace {

std::vector<long> all_indices(size_t n) {
    std::vector<long> idx(n);
    std::iota(idx.begin(), idx.end(), 0L);
    return idx;
}

Stage1Config to_stage1_config(const RunConfig& c, int n_expr, int n_id) {
    Stage1Config s;
    s.image_size = c.image_size;
    s.channels = c.channels;
    s.width = c.width;
    s.code_dim = c.code_dim;
    s.noise_dim = c.noise_dim;
    s.n_expressions = n_expr;
    s.n_identities = n_id;
    s.batch_size = c.batch_size;
    s.lr = c.lr;
    s.adam_beta1 = c.adam_beta1;
    s.adam_beta2 = c.adam_beta2;
    s.d_acc_threshold = c.d_acc_threshold;
    s.g_per_d_late = static_cast<int>(c.g_per_d_late);
    s.acc_window = c.acc_window;
    s.seed = c.stage1_seed;
    return s;
}

Stage2Config to_stage2_config(const RunConfig& c, int n_expr) {
    Stage2Config s;
    s.fusion_dim = c.fusion_dim;
    s.local_width = c.local_width;
    s.fused_hidden = c.fused_hidden;
    s.n_expressions = n_expr;
    s.batch_size = c.batch_size;
    s.lr = c.lr;
    s.adam_beta1 = c.adam_beta1;
    s.adam_beta2 = c.adam_beta2;
    s.weights.local = {c.lambda1, c.lambda2, c.lambda3, c.lambda4};
    s.weights.fused = c.lambda_fused;
    s.seed = c.stage2_seed;
    return s;
}

BaselineConfig to_baseline_config(const RunConfig& c) {
    BaselineConfig b;
    b.width = c.baseline_width;
    b.batch_size = c.batch_size;
    b.lr = c.lr;
    b.adam_beta1 = c.adam_beta1;
    b.adam_beta2 = c.adam_beta2;
    b.epochs = c.baseline_epochs;
    b.steps_per_epoch = c.baseline_steps_per_epoch;
    b.seed = c.baseline_seed;
    return b;
}

// Adam holds pointers into the trainer's modules, some of which live by
// value, so a trainer must never be moved after construction. Checkpoints are
// therefore restored into trainers built in place at each call site.
Stage1Config stage1_config_for(const RunConfig& cfg, const std::vector<LabeledImage>& data) {
    if (cfg.stage1_checkpoint.empty())
        throw std::invalid_argument("this command requires stage1_checkpoint");
    return to_stage1_config(cfg, count_expressions(data), count_identities(data));
}

void cmd_gen_synthetic(const RunConfig& cfg, RunManifest& manifest) {
    if (!cfg.data_dir.empty())
        throw std::invalid_argument("gen-synthetic works on the synthetic setting; unset data_dir");
    std::vector<LabeledImage> data = generate_synthetic_dataset(
        static_cast<int>(cfg.synth_identities), static_cast<int>(cfg.synth_expressions),
        static_cast<int>(cfg.synth_per_pair), cfg.synth_seed, static_cast<int>(cfg.image_size));
    std::string dir = cfg.out_dir + "/dataset";
    save_synthetic_dataset(data, dir);
    manifest.outputs.push_back("dataset");
    std::printf("gen-synthetic: %zu images (%ld identities x %ld expressions x %ld), %ldx%ld px -> %s\n",
                data.size(), cfg.synth_identities, cfg.synth_expressions, cfg.synth_per_pair,
                cfg.image_size, cfg.image_size, dir.c_str());
}

void cmd_train_stage1(const RunConfig& cfg, RunManifest& manifest) {
    std::vector<LabeledImage> data = load_dataset(cfg);
    Stage1Trainer trainer(to_stage1_config(cfg, count_expressions(data), count_identities(data)));
    Stage1Options opt;
    opt.out_dir = cfg.out_dir + "/stage1";
    opt.epochs = cfg.stage1_epochs;
    opt.steps_per_epoch = cfg.stage1_steps_per_epoch;
    opt.checkpoint_every = cfg.checkpoint_every;
    opt.sample_rows = cfg.sample_rows;
    opt.write_samples = cfg.write_samples;
    opt.resume_from = cfg.stage1_checkpoint;
    Stage1RunSummary sum = run_stage1(trainer, data, all_indices(data.size()), opt);
    manifest.outputs.push_back("stage1/losses.csv");
    if (!sum.last_checkpoint.empty())
        manifest.outputs.push_back(fs::relative(sum.last_checkpoint, cfg.out_dir).string());
    std::printf("train-stage1: %ld steps over %ld epochs on %zu images, "
                "rolling fake-detection accuracy %.4f, checkpoint %s\n",
                sum.steps_run, sum.epochs_done, data.size(), sum.final_rolling_accuracy,
                sum.last_checkpoint.c_str());
}

void cmd_train_stage2(const RunConfig& cfg, RunManifest& manifest) {
    std::vector<LabeledImage> data = load_dataset(cfg);
    Stage1Trainer s1(stage1_config_for(cfg, data));
    s1.load(cfg.stage1_checkpoint);
    Stage2Trainer trainer(s1.encoder(), to_stage2_config(cfg, count_expressions(data)));
    Stage2Options opt;
    opt.out_dir = cfg.out_dir + "/stage2";
    opt.epochs = cfg.stage2_epochs;
    opt.steps_per_epoch = cfg.stage2_steps_per_epoch;
    opt.checkpoint_every = cfg.checkpoint_every;
    Stage2RunSummary sum = run_stage2(trainer, data, all_indices(data.size()), opt);
    manifest.outputs.push_back("stage2/stage2_losses.csv");
    if (!sum.last_checkpoint.empty())
        manifest.outputs.push_back(fs::relative(sum.last_checkpoint, cfg.out_dir).string());
    std::printf("train-stage2: %ld steps over %ld epochs on %zu images, "
                "train accuracy %.4f, checkpoint %s\n",
                sum.steps_run, sum.epochs_done, data.size(), sum.final_train_accuracy,
                sum.last_checkpoint.c_str());
}

void cmd_evaluate(const RunConfig& cfg, RunManifest& manifest) {
    std::vector<LabeledImage> data = load_dataset(cfg);
    int n_expr = count_expressions(data);
    int n_id = count_identities(data);

    KfoldConfig kcfg;
    kcfg.k = cfg.kfold_k;
    kcfg.fold_seed = cfg.fold_seed;
    kcfg.stage1 = to_stage1_config(cfg, n_expr, n_id);
    kcfg.stage1_epochs = cfg.stage1_epochs;
    kcfg.stage1_steps_per_epoch = cfg.stage1_steps_per_epoch;
    kcfg.stage2 = to_stage2_config(cfg, n_expr);
    kcfg.stage2_epochs = cfg.stage2_epochs;
    kcfg.stage2_steps_per_epoch = cfg.stage2_steps_per_epoch;
    kcfg.baseline = to_baseline_config(cfg);
    kcfg.out_dir = cfg.out_dir;
    kcfg.write_samples = cfg.write_samples;
    KfoldResult res = run_kfold(data, kcfg);

    std::string setting = setting_name(cfg);
    std::vector<ResultRow> rows;
    long total_test = 0;
    for (const FoldScore& f : res.folds) {
        rows.push_back({"degan_fused", setting, f.fold, f.n_test, f.fused_accuracy});
        rows.push_back({"pixel_baseline", setting, f.fold, f.n_test, f.baseline_accuracy});
        total_test += f.n_test;
    }
    rows.push_back({"degan_fused", setting, -1, total_test, res.fused_mean});
    rows.push_back({"pixel_baseline", setting, -1, total_test, res.baseline_mean});
    write_results_csv(cfg.out_dir + "/results.csv", rows);
    write_confusion_csv(cfg.out_dir + "/confusion.csv", res.fused_confusion);
    manifest.outputs.insert(manifest.outputs.end(), {"results.csv", "confusion.csv", "folds.txt"});

    for (const FoldScore& f : res.folds)
        std::printf("evaluate: fold %d  n_test %ld  degan_fused %.4f  pixel_baseline %.4f  (%.1fs)\n",
                    f.fold, f.n_test, f.fused_accuracy, f.baseline_accuracy, f.seconds);
    std::printf("evaluate: mean over %zu folds  degan_fused %.4f  pixel_baseline %.4f\n",
                res.folds.size(), res.fused_mean, res.baseline_mean);
}

void cmd_probe(const RunConfig& cfg, RunManifest& manifest) {
    std::vector<LabeledImage> data = load_dataset(cfg);
    Stage1Trainer s1(stage1_config_for(cfg, data));
    s1.load(cfg.stage1_checkpoint);
    DisentanglementReport rep = probe_disentanglement(s1.encoder(), data, cfg.probe_seed,
                                                      cfg.batch_size);
    std::string path = cfg.out_dir + "/probes.csv";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    char line[160];
    out << "probe,accuracy,chance,n_test\n";
    std::snprintf(line, sizeof(line), "expression_code,%.10g,%.10g,%ld\n",
                  rep.expression_probe_accuracy, rep.expression_chance, rep.n_expression_test);
    out << line;
    std::snprintf(line, sizeof(line), "identity_code,%.10g,%.10g,%ld\n",
                  rep.identity_probe_accuracy, rep.identity_chance, rep.n_identity_test);
    out << line;
    std::snprintf(line, sizeof(line), "identity_pixel,%.10g,%.10g,%ld\n",
                  rep.pixel_identity_probe_accuracy, rep.identity_chance, rep.n_identity_test);
    out << line;
    manifest.outputs.push_back("probes.csv");
    std::printf("probe: expression from code %.4f (chance %.4f), identity from code %.4f, "
                "identity from pixels %.4f (chance %.4f)\n",
                rep.expression_probe_accuracy, rep.expression_chance, rep.identity_probe_accuracy,
                rep.pixel_identity_probe_accuracy, rep.identity_chance);
}

void cmd_transfer(const RunConfig& cfg, RunManifest& manifest) {
    if (!cfg.data_dir.empty())
        throw std::invalid_argument(
            "transfer scoring needs the factor oracle and only works on the synthetic setting");
    std::vector<LabeledImage> data = load_dataset(cfg);
    Stage1Trainer s1(stage1_config_for(cfg, data));
    s1.load(cfg.stage1_checkpoint);
    FactorOracle oracle(count_identities(data), count_expressions(data),
                        static_cast<int>(cfg.image_size));
    std::vector<long> idx = all_indices(data.size());
    TransferReport rep = evaluate_transfer(s1.encoder(), s1.decoder(), data, idx, oracle,
                                           cfg.transfer_count, cfg.transfer_seed);
    std::string path = cfg.out_dir + "/transfer.csv";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    char line[120];
    out << "n_transfers,expression_agreement,identity_agreement\n";
    std::snprintf(line, sizeof(line), "%ld,%.10g,%.10g\n", rep.n_transfers,
                  rep.expression_agreement, rep.identity_agreement);
    out << line;
    manifest.outputs.push_back("transfer.csv");
    std::printf("transfer: %ld re-syntheses, expression kept %.4f, target identity hit %.4f\n",
                rep.n_transfers, rep.expression_agreement, rep.identity_agreement);
}

}  // namespace

const std::vector<std::string> kCommands = {"gen-synthetic", "train-stage1", "train-stage2",
                                            "evaluate",      "probe",        "transfer"};

bool is_command(const std::string& name) {
    return std::find(kCommands.begin(), kCommands.end(), name) != kCommands.end();
}

std::string setting_name(const RunConfig& cfg) {
    if (!cfg.setting_label.empty()) return cfg.setting_label;
    return cfg.data_dir.empty() ? "synthetic" : "images";
}

std::vector<LabeledImage> load_dataset(const RunConfig& cfg) {
    std::vector<LabeledImage> data;
    if (cfg.data_dir.empty()) {
        // With augmentation the renders carry an 8 px margin so the five crop
        // anchors and the rotations have real pixels to draw from.
        int res = static_cast<int>(cfg.image_size) + (cfg.augment ? 8 : 0);
        data = generate_synthetic_dataset(static_cast<int>(cfg.synth_identities),
                                          static_cast<int>(cfg.synth_expressions),
                                          static_cast<int>(cfg.synth_per_pair), cfg.synth_seed, res);
    } else {
        IngestOptions opt;
        opt.last_n_frames = static_cast<int>(cfg.last_n_frames);
        data = load_image_dataset(cfg.data_dir, opt);
    }
    if (cfg.augment) {
        std::vector<LabeledImage> expanded;
        expanded.reserve(data.size() * augment_plan().size());
        for (const LabeledImage& img : data) {
            std::vector<LabeledImage> variants = augment(img, static_cast<int>(cfg.image_size));
            for (LabeledImage& v : variants) expanded.push_back(std::move(v));
        }
        data = std::move(expanded);
    }
    if (data.empty()) throw std::invalid_argument("dataset is empty");
    const Tensor& first = data.front().pixels;
    if (first.dim(0) != cfg.channels)
        throw std::invalid_argument("dataset has " + std::to_string(first.dim(0)) +
                                    " channel(s), config says " + std::to_string(cfg.channels));
    if (first.dim(1) != cfg.image_size || first.dim(2) != cfg.image_size)
        throw std::invalid_argument("dataset images are " + std::to_string(first.dim(1)) + "x" +
                                    std::to_string(first.dim(2)) + ", config image_size is " +
                                    std::to_string(cfg.image_size));
    return data;
}

int run_command(const std::string& command, const RunConfig& cfg) {
    if (!is_command(command)) throw std::invalid_argument("unknown command '" + command + "'");
    validate_config(cfg);
    fs::create_directories(cfg.out_dir);

    RunManifest manifest;
    manifest.command = command;
    manifest.config = config_to_map(cfg);
    manifest.status = "running";
    manifest.started = utc_timestamp();
    std::string manifest_path = cfg.out_dir + "/manifest.json";
    manifest.write(manifest_path);

    try {
        if (command == "gen-synthetic") cmd_gen_synthetic(cfg, manifest);
        else if (command == "train-stage1") cmd_train_stage1(cfg, manifest);
        else if (command == "train-stage2") cmd_train_stage2(cfg, manifest);
        else if (command == "evaluate") cmd_evaluate(cfg, manifest);
        else if (command == "probe") cmd_probe(cfg, manifest);
        else if (command == "transfer") cmd_transfer(cfg, manifest);
    } catch (...) {
        manifest.status = "failed";
        manifest.finished = utc_timestamp();
        manifest.write(manifest_path);
        throw;
    }
    manifest.status = "ok";
    manifest.finished = utc_timestamp();
    manifest.write(manifest_path);
    return 0;
}

}  // namespace degan
