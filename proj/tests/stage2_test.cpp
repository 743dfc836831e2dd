#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "degan/stage1.hpp"
#include "degan/stage2.hpp"
#include "degan/synthetic.hpp"
#include "doctest.h"

using namespace degan;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const char* tag) {
        path = fs::temp_directory_path() /
               (std::string("degan_s2_") + tag + "_" + std::to_string(getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<LabeledImage> toy_dataset() {
    return generate_synthetic_dataset(2, 2, 6, 909, 32);
}

Encoder make_encoder() {
    Encoder enc(1, 32, 2, 8);
    Rng r(42);
    init_parameters(enc.params(), enc.buffers(), r);
    return enc;
}

Stage2Config toy_config() {
    Stage2Config cfg;
    cfg.fusion_dim = 8;
    cfg.local_width = 4;
    cfg.fused_hidden = 16;
    cfg.n_expressions = 2;
    cfg.batch_size = 8;
    cfg.lr = 3e-3;
    cfg.seed = 12;
    return cfg;
}

Batch fixed_batch(const std::vector<LabeledImage>& data, long n) {
    Batch b;
    const Tensor& first = data[0].pixels;
    b.images = Tensor({n, first.dim(0), first.dim(1), first.dim(2)});
    const long stride = first.numel();
    for (long i = 0; i < n; ++i) {
        std::memcpy(b.images.data() + i * stride, data[static_cast<size_t>(i)].pixels.data(),
                    static_cast<size_t>(stride) * sizeof(double));
        b.expr.push_back(data[static_cast<size_t>(i)].expr_label);
        b.id.push_back(data[static_cast<size_t>(i)].identity_label);
    }
    return b;
}

std::vector<long> all_indices(const std::vector<LabeledImage>& data) {
    std::vector<long> idx(data.size());
    for (size_t i = 0; i < data.size(); ++i) idx[i] = static_cast<long>(i);
    return idx;
}

}  // namespace

TEST_CASE("stage2 training reduces the loss on a fixed batch") {
    auto data = toy_dataset();
    Encoder enc = make_encoder();
    Stage2Trainer t(enc, toy_config());
    Batch b = fixed_batch(data, 8);

    double first = 0, last = 0;
    for (int s = 0; s < 40; ++s) {
        auto st = t.train_step(b.images, b.expr);
        CHECK(std::isfinite(st.loss.total));
        if (s == 0) first = st.loss.total;
        last = st.loss.total;
    }
    CHECK(last < first * 0.9);
    CHECK(t.global_step() == 40);
}

TEST_CASE("the encoder is bit-identical after stage2 training") {
    auto data = toy_dataset();
    Encoder enc = make_encoder();
    Stage2Trainer t(enc, toy_config());
    const std::uint64_t before = t.encoder_state_hash();

    Batch b = fixed_batch(data, 8);
    for (int s = 0; s < 10; ++s) t.train_step(b.images, b.expr);
    CHECK(t.encoder_state_hash() == before);

    // No encoder parameter is reachable through the optimizer.
    for (auto* p : t.trainable_params())
        CHECK(p->name.rfind("enc.", 0) == std::string::npos);
}

TEST_CASE("local loss weights scale local gradients exactly linearly") {
    auto data = toy_dataset();
    Batch b = fixed_batch(data, 6);

    Encoder enc_a = make_encoder();
    Stage2Config cfg_a = toy_config();
    cfg_a.weights.local = {0.7, 0.6, 0.4, 0.3};
    Stage2Trainer a(enc_a, cfg_a);

    Encoder enc_b = make_encoder();
    Stage2Config cfg_b = toy_config();
    cfg_b.weights.local = {1.4, 0.6, 0.4, 0.0};
    Stage2Trainer bt(enc_b, cfg_b);

    a.train_step(b.images, b.expr);
    bt.train_step(b.images, b.expr);

    // Doubling lambda_1 doubles every gradient in local 1 (scaling by a power
    // of two is exact), and a zero lambda produces exactly zero gradients.
    auto ga = a.local(0).params();
    auto gb = bt.local(0).params();
    for (size_t p = 0; p < ga.size(); ++p)
        for (long i = 0; i < ga[p]->grad.numel(); ++i)
            CHECK(gb[p]->grad[i] == 2.0 * ga[p]->grad[i]);

    for (auto* p : bt.local(3).params())
        for (long i = 0; i < p->grad.numel(); ++i) CHECK(p->grad[i] == 0.0);

    // Unchanged lambdas see identical gradients.
    auto ma = a.local(1).params();
    auto mb = bt.local(1).params();
    for (size_t p = 0; p < ma.size(); ++p)
        for (long i = 0; i < ma[p]->grad.numel(); ++i)
            CHECK(mb[p]->grad[i] == ma[p]->grad[i]);
}

TEST_CASE("evaluation is batching invariant and matches predict") {
    auto data = toy_dataset();
    auto idx = all_indices(data);

    Encoder enc_a = make_encoder();
    Stage2Config cfg_a = toy_config();
    cfg_a.batch_size = 5;
    Stage2Trainer a(enc_a, cfg_a);

    Encoder enc_b = make_encoder();
    Stage2Config cfg_b = toy_config();
    cfg_b.batch_size = 24;
    Stage2Trainer bt(enc_b, cfg_b);

    const double acc_a = a.evaluate_accuracy(data, idx);
    const double acc_b = bt.evaluate_accuracy(data, idx);
    CHECK(acc_a == acc_b);

    // Manual single-image reference.
    long correct = 0;
    for (const auto& img : data) {
        Tensor one({1, img.pixels.dim(0), img.pixels.dim(1), img.pixels.dim(2)});
        std::memcpy(one.data(), img.pixels.data(),
                    static_cast<size_t>(img.pixels.numel()) * sizeof(double));
        if (a.predict(one)[0] == img.expr_label) ++correct;
    }
    CHECK(acc_a == doctest::Approx(static_cast<double>(correct) /
                                   static_cast<double>(data.size())));
}

TEST_CASE("stage2 checkpoints restore heads and reject mismatches") {
    auto data = toy_dataset();
    TempDir dir("ckpt");
    Encoder enc = make_encoder();
    Stage2Trainer t(enc, toy_config());
    Batch b = fixed_batch(data, 8);
    for (int s = 0; s < 3; ++s) t.train_step(b.images, b.expr);
    const std::string path = (dir.path / "s2.ckpt").string();
    t.save(path);
    const std::uint64_t trained = parameter_hash(t.trainable_params());

    Stage2Trainer fresh(enc, toy_config());
    CHECK(parameter_hash(fresh.trainable_params()) != trained);
    fresh.load(path);
    CHECK(parameter_hash(fresh.trainable_params()) == trained);
    CHECK(fresh.global_step() == 3);

    // Loading against a different encoder state is a hard error.
    Encoder other(1, 32, 2, 8);
    Rng r(43);
    init_parameters(other.params(), other.buffers(), r);
    Stage2Trainer wrong_enc(other, toy_config());
    CHECK_THROWS_AS(wrong_enc.load(path), std::runtime_error);

    Stage2Config other_cfg = toy_config();
    other_cfg.fusion_dim = 16;
    Stage2Trainer wrong_cfg(enc, other_cfg);
    CHECK_THROWS_AS(wrong_cfg.load(path), std::runtime_error);
}

TEST_CASE("stage2 epoch driver writes logs and checkpoints deterministically") {
    auto data = toy_dataset();
    auto idx = all_indices(data);

    auto run_once = [&](const char* tag) {
        TempDir dir(tag);
        Encoder enc = make_encoder();
        Stage2Trainer t(enc, toy_config());
        Stage2Options opt;
        opt.out_dir = dir.path.string();
        opt.epochs = 2;
        opt.steps_per_epoch = 3;
        opt.checkpoint_every = 1;
        auto summary = run_stage2(t, data, idx, opt);
        CHECK(summary.steps_run == 6);
        CHECK(fs::exists(dir.path / "stage2_losses.csv"));
        CHECK(fs::exists(dir.path / "checkpoints" / "stage2_epoch_2.ckpt"));
        std::ifstream csv(dir.path / "stage2_losses.csv");
        std::string line;
        long rows = 0;
        while (std::getline(csv, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 7);
        return parameter_hash(t.trainable_params());
    };
    CHECK(run_once("drv_a") == run_once("drv_b"));
}
