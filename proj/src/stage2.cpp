#include "degan/stage2.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "degan/checkpoint.hpp"
#include "degan/stage1.hpp"

namespace degan {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

constexpr std::uint64_t kBatchStreamBase = 0x30000;

}  // namespace

std::map<std::string, std::string> Stage2Config::to_map() const {
    std::map<std::string, std::string> m;
    m["fusion_dim"] = std::to_string(fusion_dim);
    m["local_width"] = std::to_string(local_width);
    m["fused_hidden"] = std::to_string(fused_hidden);
    m["n_expressions"] = std::to_string(n_expressions);
    m["batch_size"] = std::to_string(batch_size);
    m["lr"] = fmt_double(lr);
    m["adam_beta1"] = fmt_double(adam_beta1);
    m["adam_beta2"] = fmt_double(adam_beta2);
    for (int i = 0; i < 4; ++i)
        m["lambda" + std::to_string(i + 1)] = fmt_double(weights.local[static_cast<size_t>(i)]);
    m["lambda_fused"] = fmt_double(weights.fused);
    m["seed"] = std::to_string(seed);
    return m;
}

static std::vector<std::unique_ptr<LocalClassifier>> build_locals(Encoder& enc,
                                                                  const Stage2Config& cfg) {
    std::vector<std::unique_ptr<LocalClassifier>> locals;
    for (int i = 0; i < 4; ++i)
        locals.push_back(std::make_unique<LocalClassifier>(
            "h" + std::to_string(i + 1), enc.tap_channels(i), cfg.local_width, cfg.fusion_dim,
            cfg.n_expressions));
    return locals;
}

Stage2Trainer::Stage2Trainer(Encoder& frozen_encoder, const Stage2Config& cfg)
    : enc_(frozen_encoder),
      cfg_(cfg),
      locals_(build_locals(frozen_encoder, cfg)),
      fused_(frozen_encoder.code_dim() + 4 * cfg.fusion_dim, cfg.fused_hidden,
             cfg.n_expressions),
      opt_({}, cfg.lr, cfg.adam_beta1, cfg.adam_beta2) {
    if (cfg.n_expressions < 2)
        throw std::invalid_argument("Stage2Trainer: need at least 2 expressions");
    Rng init_rng = Rng(cfg.seed).split(0);
    for (auto& l : locals_) init_parameters(l->params(), l->buffers(), init_rng);
    init_parameters(fused_.params(), fused_.buffers(), init_rng);
    opt_ = Adam(trainable_params(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
}

std::vector<ParamTensor*> Stage2Trainer::trainable_params() {
    std::vector<ParamTensor*> all;
    for (auto& l : locals_) {
        auto p = l->params();
        all.insert(all.end(), p.begin(), p.end());
    }
    auto f = fused_.params();
    all.insert(all.end(), f.begin(), f.end());
    return all;
}

std::uint64_t Stage2Trainer::encoder_state_hash() {
    auto state = enc_.params();
    auto bufs = enc_.buffers();
    state.insert(state.end(), bufs.begin(), bufs.end());
    return parameter_hash(state);
}

Stage2Trainer::StepStats Stage2Trainer::train_step(const Tensor& images,
                                                   const std::vector<int>& expr_labels) {
    const long n = images.dim(0);
    if (static_cast<long>(expr_labels.size()) != n)
        throw std::invalid_argument("train_step: label count mismatch");

    // Frozen representation: eval mode, no gradients ever reach the encoder.
    Tensor code = enc_.forward(images, false);
    const auto& taps = enc_.taps();

    opt_.zero_grad();
    std::array<Tensor, 4> local_logits;
    std::array<LocalClassifier::Out, 4> outs;
    std::vector<const Tensor*> feats{&code};
    for (int i = 0; i < 4; ++i) {
        outs[static_cast<size_t>(i)] =
            locals_[static_cast<size_t>(i)]->forward(taps[static_cast<size_t>(i)], true);
        local_logits[static_cast<size_t>(i)] = outs[static_cast<size_t>(i)].logits;
        feats.push_back(&outs[static_cast<size_t>(i)].feature);
    }
    // The fusion input is assembled from copies; the fused head trains on the
    // local features as constants rather than backpropagating into them.
    Tensor fused_in = concat_features(feats);
    Tensor flogits = fused_.forward(fused_in, true);

    StepStats out;
    out.loss = stage2_total_loss(local_logits, flogits, expr_labels, cfg_.weights);
    out.fused_accuracy = accuracy(flogits, expr_labels);

    for (int i = 0; i < 4; ++i) {
        Tensor g = cross_entropy_grad(local_logits[static_cast<size_t>(i)], expr_labels);
        g.scale_(cfg_.weights.local[static_cast<size_t>(i)]);
        locals_[static_cast<size_t>(i)]->backward(g);
    }
    Tensor gf = cross_entropy_grad(flogits, expr_labels);
    gf.scale_(cfg_.weights.fused);
    fused_.backward(gf);
    opt_.step();

    out.step = ++global_step_;
    return out;
}

Tensor Stage2Trainer::fused_logits(const Tensor& images) {
    Tensor code = enc_.forward(images, false);
    const auto& taps = enc_.taps();
    std::array<LocalClassifier::Out, 4> outs;
    std::vector<const Tensor*> feats{&code};
    for (int i = 0; i < 4; ++i) {
        outs[static_cast<size_t>(i)] =
            locals_[static_cast<size_t>(i)]->forward(taps[static_cast<size_t>(i)], false);
        feats.push_back(&outs[static_cast<size_t>(i)].feature);
    }
    return fused_.forward(concat_features(feats), false);
}

std::vector<int> Stage2Trainer::predict(const Tensor& images) {
    return argmax_rows(fused_logits(images));
}

double Stage2Trainer::evaluate_accuracy(const std::vector<LabeledImage>& data,
                                        const std::vector<long>& indices) {
    if (indices.empty()) throw std::invalid_argument("evaluate_accuracy: empty index set");
    const Tensor& first = data[static_cast<size_t>(indices[0])].pixels;
    const long stride = first.numel();
    long correct = 0;
    for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(cfg_.batch_size)) {
        const long n = std::min<long>(cfg_.batch_size,
                                      static_cast<long>(indices.size() - start));
        Tensor batch({n, first.dim(0), first.dim(1), first.dim(2)});
        std::vector<int> labels(static_cast<size_t>(n));
        for (long i = 0; i < n; ++i) {
            const LabeledImage& img = data[static_cast<size_t>(indices[start + static_cast<size_t>(i)])];
            std::memcpy(batch.data() + i * stride, img.pixels.data(),
                        static_cast<size_t>(stride) * sizeof(double));
            labels[static_cast<size_t>(i)] = img.expr_label;
        }
        auto pred = predict(batch);
        for (long i = 0; i < n; ++i)
            if (pred[static_cast<size_t>(i)] == labels[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

void Stage2Trainer::save(const std::string& path) {
    Checkpoint ckpt;
    ckpt.config = cfg_.to_map();
    ckpt.config["encoder_hash"] = std::to_string(encoder_state_hash());
    ckpt.counters["global_step"] = global_step_;
    ckpt.counters["epochs_done"] = epochs_done_;
    for (auto& l : locals_) {
        checkpoint_store(ckpt, l->params());
        checkpoint_store(ckpt, l->buffers());
    }
    checkpoint_store(ckpt, fused_.params());
    checkpoint_store(ckpt, fused_.buffers());
    checkpoint_store_adam(ckpt, opt_, "s2");
    save_checkpoint(path, ckpt);
}

void Stage2Trainer::load(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    auto stored = ckpt.config;
    auto it = stored.find("encoder_hash");
    if (it == stored.end()) throw std::runtime_error("stage2 checkpoint: missing encoder_hash");
    if (it->second != std::to_string(encoder_state_hash()))
        throw std::runtime_error(
            "stage2 checkpoint: encoder state differs from the one the heads were trained on");
    stored.erase(it);
    require_config_match(stored, cfg_.to_map());
    for (auto& l : locals_) {
        checkpoint_load_into(ckpt, l->params());
        checkpoint_load_into(ckpt, l->buffers());
    }
    checkpoint_load_into(ckpt, fused_.params());
    checkpoint_load_into(ckpt, fused_.buffers());
    checkpoint_load_adam(ckpt, opt_, "s2");
    global_step_ = ckpt.counters.at("global_step");
    epochs_done_ = ckpt.counters.at("epochs_done");
}

Stage2RunSummary run_stage2(Stage2Trainer& trainer, const std::vector<LabeledImage>& data,
                            const std::vector<long>& train_indices, const Stage2Options& opt) {
    if (opt.out_dir.empty()) throw std::invalid_argument("run_stage2: out_dir required");
    if (train_indices.empty()) throw std::invalid_argument("run_stage2: empty training set");
    if (!opt.resume_from.empty()) trainer.load(opt.resume_from);

    const Stage2Config& cfg = trainer.config();
    fs::create_directories(fs::path(opt.out_dir) / "checkpoints");
    const long steps = opt.steps_per_epoch > 0
                           ? opt.steps_per_epoch
                           : (static_cast<long>(train_indices.size()) + cfg.batch_size - 1) /
                                 cfg.batch_size;

    const fs::path csv_path = fs::path(opt.out_dir) / "stage2_losses.csv";
    const bool append = trainer.epochs_done() > 0 && fs::exists(csv_path);
    std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw std::runtime_error("run_stage2: cannot open " + csv_path.string());
    if (!append) csv << "step,epoch,total,local1,local2,local3,local4,fused,batch_acc\n";

    char num[32];
    Stage2RunSummary summary;
    for (long epoch = trainer.epochs_done(); epoch < opt.epochs; ++epoch) {
        Rng batch_rng = Rng(cfg.seed).split(kBatchStreamBase + static_cast<std::uint64_t>(epoch));
        double epoch_acc = 0;
        for (long s = 0; s < steps; ++s) {
            Batch b = sample_batch(data, train_indices, cfg.batch_size, batch_rng);
            auto st = trainer.train_step(b.images, b.expr);
            ++summary.steps_run;
            epoch_acc += st.fused_accuracy;
            csv << st.step << ',' << epoch;
            const double cols[7] = {st.loss.total,    st.loss.local[0], st.loss.local[1],
                                    st.loss.local[2], st.loss.local[3], st.loss.fused,
                                    st.fused_accuracy};
            for (double v : cols) {
                std::snprintf(num, sizeof(num), "%.10g", v);
                csv << ',' << num;
            }
            csv << '\n';
        }
        trainer.set_epochs_done(epoch + 1);
        summary.final_train_accuracy = epoch_acc / static_cast<double>(steps);
        if ((epoch + 1) % std::max<long>(1, opt.checkpoint_every) == 0 ||
            epoch + 1 == opt.epochs) {
            const std::string ckpt =
                (fs::path(opt.out_dir) / "checkpoints" /
                 ("stage2_epoch_" + std::to_string(epoch + 1) + ".ckpt"))
                    .string();
            trainer.save(ckpt);
            summary.last_checkpoint = ckpt;
        }
    }
    summary.epochs_done = trainer.epochs_done();
    return summary;
}

}  // namespace degan
