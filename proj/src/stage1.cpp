#include "degan/stage1.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "degan/checkpoint.hpp"
#include "degan/png_io.hpp"

namespace degan {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<ParamTensor*> join2(std::vector<ParamTensor*> a, const std::vector<ParamTensor*>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

Tensor slice_image(const Tensor& batch, long i) {
    Tensor out({batch.dim(1), batch.dim(2), batch.dim(3)});
    const long stride = out.numel();
    std::memcpy(out.data(), batch.data() + i * stride,
                static_cast<size_t>(stride) * sizeof(double));
    return out;
}

// Epoch-scoped RNG streams: resuming from an epoch checkpoint replays the
// exact randomness of the uninterrupted run.
constexpr std::uint64_t kBatchStreamBase = 0x10000;
constexpr std::uint64_t kNoiseStreamBase = 0x20000;

}  // namespace

std::map<std::string, std::string> Stage1Config::to_map() const {
    std::map<std::string, std::string> m;
    m["image_size"] = std::to_string(image_size);
    m["channels"] = std::to_string(channels);
    m["width"] = std::to_string(width);
    m["code_dim"] = std::to_string(code_dim);
    m["noise_dim"] = std::to_string(noise_dim);
    m["n_expressions"] = std::to_string(n_expressions);
    m["n_identities"] = std::to_string(n_identities);
    m["batch_size"] = std::to_string(batch_size);
    m["lr"] = fmt_double(lr);
    m["adam_beta1"] = fmt_double(adam_beta1);
    m["adam_beta2"] = fmt_double(adam_beta2);
    m["d_acc_threshold"] = fmt_double(d_acc_threshold);
    m["g_per_d_late"] = std::to_string(g_per_d_late);
    m["acc_window"] = std::to_string(acc_window);
    m["seed"] = std::to_string(seed);
    return m;
}

Batch sample_batch(const std::vector<LabeledImage>& data, const std::vector<long>& indices,
                   long batch_size, Rng& rng) {
    if (indices.empty()) throw std::invalid_argument("sample_batch: empty index set");
    if (batch_size <= 0) throw std::invalid_argument("sample_batch: batch_size must be positive");
    const Tensor& first = data[static_cast<size_t>(indices[0])].pixels;
    Batch b;
    b.images = Tensor({batch_size, first.dim(0), first.dim(1), first.dim(2)});
    b.expr.resize(static_cast<size_t>(batch_size));
    b.id.resize(static_cast<size_t>(batch_size));
    const long stride = first.numel();
    for (long i = 0; i < batch_size; ++i) {
        const long pick = indices[static_cast<size_t>(rng.uniform_int(
            static_cast<std::uint64_t>(indices.size())))];
        const LabeledImage& img = data[static_cast<size_t>(pick)];
        if (!img.pixels.same_shape(first))
            throw std::invalid_argument("sample_batch: mixed image shapes");
        std::memcpy(b.images.data() + i * stride, img.pixels.data(),
                    static_cast<size_t>(stride) * sizeof(double));
        b.expr[static_cast<size_t>(i)] = img.expr_label;
        b.id[static_cast<size_t>(i)] = img.identity_label;
    }
    return b;
}

Stage1Trainer::Stage1Trainer(const Stage1Config& cfg)
    : cfg_(cfg),
      enc_(cfg.channels, cfg.image_size, cfg.width, cfg.code_dim),
      dec_(cfg.channels, cfg.image_size, cfg.width, cfg.code_dim, cfg.noise_dim,
           cfg.n_identities),
      disc_(cfg.channels, cfg.image_size, cfg.width, cfg.n_expressions, cfg.n_identities),
      opt_g_(join2(enc_.params(), dec_.params()), cfg.lr, cfg.adam_beta1, cfg.adam_beta2),
      opt_d_(disc_.params(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2),
      acc_window_(static_cast<size_t>(cfg.acc_window), 0.0) {
    if (cfg.n_expressions < 2 || cfg.n_identities < 2)
        throw std::invalid_argument("Stage1Trainer: need at least 2 expressions and 2 identities");
    if (cfg.acc_window < 1) throw std::invalid_argument("Stage1Trainer: acc_window must be >= 1");
    if (cfg.g_per_d_late < 1)
        throw std::invalid_argument("Stage1Trainer: g_per_d_late must be >= 1");
    Rng init_rng = Rng(cfg.seed).split(0);
    init_parameters(enc_.params(), enc_.buffers(), init_rng);
    init_parameters(dec_.params(), dec_.buffers(), init_rng);
    init_parameters(disc_.params(), disc_.buffers(), init_rng);
}

void Stage1Trainer::push_accuracy(double a) {
    acc_window_[static_cast<size_t>(acc_pos_)] = a;
    acc_pos_ = (acc_pos_ + 1) % cfg_.acc_window;
    if (acc_count_ < cfg_.acc_window) ++acc_count_;
}

double Stage1Trainer::rolling_accuracy() const {
    if (acc_count_ == 0) return 0.0;
    double s = 0;
    for (long i = 0; i < acc_count_; ++i) s += acc_window_[static_cast<size_t>(i)];
    return s / static_cast<double>(acc_count_);
}

Stage1Trainer::StepStats Stage1Trainer::train_step(const Tensor& images,
                                                   const std::vector<int>& expr_labels,
                                                   const std::vector<int>& id_labels,
                                                   Rng& noise_rng) {
    const long n = images.dim(0);
    if (images.ndim() != 4 || images.dim(1) != cfg_.channels ||
        images.dim(2) != cfg_.image_size || images.dim(3) != cfg_.image_size)
        throw std::invalid_argument("train_step: bad image batch shape " + images.shape_str());
    if (static_cast<long>(expr_labels.size()) != n || static_cast<long>(id_labels.size()) != n)
        throw std::invalid_argument("train_step: label count mismatch");

    // The step's latent noise and synthesis identities; every generator pass
    // of this step reuses them.
    Tensor z({n, cfg_.noise_dim});
    for (long i = 0; i < z.numel(); ++i) z[i] = noise_rng.normal();
    std::vector<int> target_id(static_cast<size_t>(n));
    for (auto& t : target_id)
        t = static_cast<int>(noise_rng.uniform_int(static_cast<std::uint64_t>(cfg_.n_identities)));

    StepStats out;

    // Discriminator update: real images against their labels, generated
    // images against the dedicated generated class.
    opt_d_.zero_grad();
    auto real_heads = disc_.forward(images, true);
    disc_.backward(cross_entropy_grad(real_heads.expr_logits, expr_labels),
                   cross_entropy_grad(real_heads.id_logits, id_labels));
    Tensor code = enc_.forward(images, true);
    Tensor fake = dec_.forward(code, z, target_id, true);
    auto fake_heads = disc_.forward(fake, true);
    const std::vector<int> fake_class(static_cast<size_t>(n),
                                      static_cast<int>(cfg_.n_expressions));
    Tensor zero_id({n, cfg_.n_identities});
    disc_.backward(cross_entropy_grad(fake_heads.expr_logits, fake_class), zero_id);
    out.d = discriminator_loss(real_heads.expr_logits, expr_labels, real_heads.id_logits,
                               id_labels, fake_heads.expr_logits, cfg_.n_expressions);
    opt_d_.step();

    out.fake_detection_accuracy = accuracy(fake_heads.expr_logits, fake_class);
    push_accuracy(out.fake_detection_accuracy);
    out.rolling_accuracy = rolling_accuracy();
    out.g_updates = out.rolling_accuracy > cfg_.d_acc_threshold ? cfg_.g_per_d_late : 1;

    // Generator updates: the synthesized image should read as the source
    // expression and the requested identity.
    for (int u = 0; u < out.g_updates; ++u) {
        opt_g_.zero_grad();
        Tensor c = enc_.forward(images, true);
        Tensor xb = dec_.forward(c, z, target_id, true);
        auto heads = disc_.forward(xb, true);
        out.g = generator_loss(heads.expr_logits, expr_labels, heads.id_logits, target_id);
        Tensor dxb = disc_.backward(cross_entropy_grad(heads.expr_logits, expr_labels),
                                    cross_entropy_grad(heads.id_logits, target_id));
        Tensor dcode = dec_.backward(dxb);
        enc_.backward(dcode);
        opt_g_.step();
    }

    out.step = ++global_step_;
    return out;
}

Image8 Stage1Trainer::sample_grid(const Tensor& sources) {
    const long n = sources.dim(0);
    const long show_ids = std::min<long>(cfg_.n_identities, 7);
    Tensor code = enc_.forward(sources, false);
    Tensor zero_noise({n, cfg_.noise_dim});
    std::vector<Tensor> columns;
    columns.reserve(static_cast<size_t>(show_ids));
    for (long j = 0; j < show_ids; ++j) {
        std::vector<int> ids(static_cast<size_t>(n), static_cast<int>(j));
        columns.push_back(dec_.forward(code, zero_noise, ids, false));
    }
    std::vector<Tensor> tiles;
    tiles.reserve(static_cast<size_t>(n * (1 + show_ids)));
    for (long i = 0; i < n; ++i) {
        tiles.push_back(slice_image(sources, i));
        for (long j = 0; j < show_ids; ++j)
            tiles.push_back(slice_image(columns[static_cast<size_t>(j)], i));
    }
    return tile_grid(tiles, static_cast<int>(1 + show_ids));
}

std::uint64_t Stage1Trainer::generator_param_hash() {
    return parameter_hash(join2(enc_.params(), dec_.params()));
}

std::uint64_t Stage1Trainer::discriminator_param_hash() {
    return parameter_hash(disc_.params());
}

void Stage1Trainer::save(const std::string& path) {
    Checkpoint ckpt;
    ckpt.config = cfg_.to_map();
    ckpt.counters["global_step"] = global_step_;
    ckpt.counters["epochs_done"] = epochs_done_;
    ckpt.counters["sched.count"] = acc_count_;
    ckpt.counters["sched.pos"] = acc_pos_;
    checkpoint_store(ckpt, enc_.params());
    checkpoint_store(ckpt, enc_.buffers());
    checkpoint_store(ckpt, dec_.params());
    checkpoint_store(ckpt, dec_.buffers());
    checkpoint_store(ckpt, disc_.params());
    checkpoint_store(ckpt, disc_.buffers());
    checkpoint_store_adam(ckpt, opt_g_, "g");
    checkpoint_store_adam(ckpt, opt_d_, "d");
    Tensor window({cfg_.acc_window});
    for (long i = 0; i < cfg_.acc_window; ++i) window[i] = acc_window_[static_cast<size_t>(i)];
    ckpt.add_tensor("sched.window", window);
    save_checkpoint(path, ckpt);
}

void Stage1Trainer::load(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    require_config_match(ckpt.config, cfg_.to_map());
    checkpoint_load_into(ckpt, enc_.params());
    checkpoint_load_into(ckpt, enc_.buffers());
    checkpoint_load_into(ckpt, dec_.params());
    checkpoint_load_into(ckpt, dec_.buffers());
    checkpoint_load_into(ckpt, disc_.params());
    checkpoint_load_into(ckpt, disc_.buffers());
    checkpoint_load_adam(ckpt, opt_g_, "g");
    checkpoint_load_adam(ckpt, opt_d_, "d");
    global_step_ = ckpt.counters.at("global_step");
    epochs_done_ = ckpt.counters.at("epochs_done");
    acc_count_ = ckpt.counters.at("sched.count");
    acc_pos_ = ckpt.counters.at("sched.pos");
    const Tensor* window = ckpt.find_tensor("sched.window");
    if (!window || window->numel() != cfg_.acc_window)
        throw std::runtime_error("stage1 checkpoint: bad accuracy window");
    for (long i = 0; i < cfg_.acc_window; ++i) acc_window_[static_cast<size_t>(i)] = (*window)[i];
}

Stage1RunSummary run_stage1(Stage1Trainer& trainer, const std::vector<LabeledImage>& data,
                            const std::vector<long>& train_indices, const Stage1Options& opt) {
    if (opt.out_dir.empty()) throw std::invalid_argument("run_stage1: out_dir required");
    if (train_indices.empty()) throw std::invalid_argument("run_stage1: empty training set");
    if (!opt.resume_from.empty()) trainer.load(opt.resume_from);

    const Stage1Config& cfg = trainer.config();
    fs::create_directories(fs::path(opt.out_dir) / "checkpoints");
    if (opt.write_samples) fs::create_directories(fs::path(opt.out_dir) / "samples");

    const long steps = opt.steps_per_epoch > 0
                           ? opt.steps_per_epoch
                           : (static_cast<long>(train_indices.size()) + cfg.batch_size - 1) /
                                 cfg.batch_size;

    const fs::path csv_path = fs::path(opt.out_dir) / "losses.csv";
    const bool append = trainer.epochs_done() > 0 && fs::exists(csv_path);
    std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw std::runtime_error("run_stage1: cannot open " + csv_path.string());
    if (!append)
        csv << "step,epoch,d_total,d_real_expr,d_real_id,d_fake,g_total,g_expr,g_id,"
               "fake_acc,rolling_acc,g_updates\n";

    Tensor sample_sources;
    if (opt.write_samples) {
        const long rows = std::min<long>(opt.sample_rows,
                                         static_cast<long>(train_indices.size()));
        const Tensor& first = data[static_cast<size_t>(train_indices[0])].pixels;
        sample_sources = Tensor({rows, first.dim(0), first.dim(1), first.dim(2)});
        const long stride = first.numel();
        for (long i = 0; i < rows; ++i)
            std::memcpy(sample_sources.data() + i * stride,
                        data[static_cast<size_t>(train_indices[static_cast<size_t>(i)])]
                            .pixels.data(),
                        static_cast<size_t>(stride) * sizeof(double));
    }

    char num[32];
    Stage1RunSummary summary;
    for (long epoch = trainer.epochs_done(); epoch < opt.epochs; ++epoch) {
        Rng batch_rng = Rng(cfg.seed).split(kBatchStreamBase + static_cast<std::uint64_t>(epoch));
        Rng noise_rng = Rng(cfg.seed).split(kNoiseStreamBase + static_cast<std::uint64_t>(epoch));
        for (long s = 0; s < steps; ++s) {
            Batch b = sample_batch(data, train_indices, cfg.batch_size, batch_rng);
            auto st = trainer.train_step(b.images, b.expr, b.id, noise_rng);
            ++summary.steps_run;
            csv << st.step << ',' << epoch;
            const double cols[9] = {st.d.total,  st.d.real_expr, st.d.real_id,
                                    st.d.fake,   st.g.total,     st.g.expr,
                                    st.g.id,     st.fake_detection_accuracy,
                                    st.rolling_accuracy};
            for (double v : cols) {
                std::snprintf(num, sizeof(num), "%.10g", v);
                csv << ',' << num;
            }
            csv << ',' << st.g_updates << '\n';
        }
        trainer.set_epochs_done(epoch + 1);
        summary.final_rolling_accuracy = trainer.rolling_accuracy();

        const std::string tag = "epoch_" + std::to_string(epoch + 1);
        if ((epoch + 1) % std::max<long>(1, opt.checkpoint_every) == 0 ||
            epoch + 1 == opt.epochs) {
            const std::string ckpt =
                (fs::path(opt.out_dir) / "checkpoints" / (tag + ".ckpt")).string();
            trainer.save(ckpt);
            summary.last_checkpoint = ckpt;
        }
        if (opt.write_samples) {
            Image8 grid = trainer.sample_grid(sample_sources);
            write_png((fs::path(opt.out_dir) / "samples" / (tag + ".png")).string(), grid);
        }
    }
    summary.epochs_done = trainer.epochs_done();
    return summary;
}

}  // namespace degan
