#include "degan/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "degan/losses.hpp"
#include "degan/nn.hpp"
#include "degan/rng.hpp"

namespace degan {

namespace fs = std::filesystem;

namespace {

Tensor stack_images(const std::vector<LabeledImage>& data, const std::vector<long>& indices,
                    size_t start, long n) {
    const Tensor& first = data[static_cast<size_t>(indices[start])].pixels;
    Tensor batch({n, first.dim(0), first.dim(1), first.dim(2)});
    const long stride = first.numel();
    for (long i = 0; i < n; ++i)
        std::memcpy(batch.data() + i * stride,
                    data[static_cast<size_t>(indices[start + static_cast<size_t>(i)])].pixels.data(),
                    static_cast<size_t>(stride) * sizeof(double));
    return batch;
}

std::vector<long> to_long(const std::vector<size_t>& v) {
    std::vector<long> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<long>(v[i]);
    return out;
}

}  // namespace

Tensor encode_features(Encoder& enc, const std::vector<LabeledImage>& data,
                       const std::vector<long>& indices, long batch_size) {
    if (indices.empty()) throw std::invalid_argument("encode_features: empty index set");
    Tensor out({static_cast<long>(indices.size()), enc.code_dim()});
    for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(batch_size)) {
        const long n = std::min<long>(batch_size, static_cast<long>(indices.size() - start));
        Tensor code = enc.forward(stack_images(data, indices, start, n), false);
        std::memcpy(out.data() + static_cast<long>(start) * enc.code_dim(), code.data(),
                    static_cast<size_t>(code.numel()) * sizeof(double));
    }
    return out;
}

Tensor pixel_features(const std::vector<LabeledImage>& data, const std::vector<long>& indices) {
    if (indices.empty()) throw std::invalid_argument("pixel_features: empty index set");
    const long d = data[static_cast<size_t>(indices[0])].pixels.numel();
    Tensor out({static_cast<long>(indices.size()), d});
    for (size_t i = 0; i < indices.size(); ++i)
        std::memcpy(out.data() + static_cast<long>(i) * d,
                    data[static_cast<size_t>(indices[i])].pixels.data(),
                    static_cast<size_t>(d) * sizeof(double));
    return out;
}

std::vector<int> expression_labels(const std::vector<LabeledImage>& data,
                                   const std::vector<long>& indices) {
    std::vector<int> y(indices.size());
    for (size_t i = 0; i < indices.size(); ++i)
        y[i] = data[static_cast<size_t>(indices[i])].expr_label;
    return y;
}

std::vector<int> identity_labels(const std::vector<LabeledImage>& data,
                                 const std::vector<long>& indices) {
    std::vector<int> y(indices.size());
    for (size_t i = 0; i < indices.size(); ++i)
        y[i] = data[static_cast<size_t>(indices[i])].identity_label;
    return y;
}

ProbeResult fit_linear_probe(const Tensor& train_x, const std::vector<int>& train_y,
                             const Tensor& test_x, const std::vector<int>& test_y,
                             long n_classes, long steps, double lr) {
    if (train_x.ndim() != 2 || test_x.ndim() != 2 || train_x.dim(1) != test_x.dim(1))
        throw std::invalid_argument("fit_linear_probe: feature matrices must be (N, D)");
    const long n = train_x.dim(0), d = train_x.dim(1);
    if (static_cast<long>(train_y.size()) != n ||
        static_cast<long>(test_y.size()) != test_x.dim(0))
        throw std::invalid_argument("fit_linear_probe: label count mismatch");

    // Column statistics from the training set only.
    std::vector<double> mean(static_cast<size_t>(d), 0), inv_sd(static_cast<size_t>(d), 0);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += train_x.at(i, j);
    for (auto& m : mean) m /= static_cast<double>(n);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j) {
            const double c = train_x.at(i, j) - mean[static_cast<size_t>(j)];
            inv_sd[static_cast<size_t>(j)] += c * c;
        }
    for (auto& v : inv_sd) v = 1.0 / std::max(std::sqrt(v / static_cast<double>(n)), 1e-8);

    auto zscore = [&](const Tensor& x) {
        Tensor z({x.dim(0), d});
        for (long i = 0; i < x.dim(0); ++i)
            for (long j = 0; j < d; ++j)
                z.at(i, j) = (x.at(i, j) - mean[static_cast<size_t>(j)]) *
                             inv_sd[static_cast<size_t>(j)];
        return z;
    };
    Tensor ztrain = zscore(train_x);
    Tensor ztest = zscore(test_x);

    // Zero-initialized logistic regression; convex, so the fixed-step Adam
    // fit is a pure function of the inputs.
    Linear head("probe.head", d, n_classes);
    for (auto* p : head.params()) {
        p->value.zero();
        p->grad.zero();
    }
    Adam opt(head.params(), lr, 0.9, 0.999);
    for (long s = 0; s < steps; ++s) {
        opt.zero_grad();
        Tensor logits = head.forward(ztrain, true);
        head.backward(cross_entropy_grad(logits, train_y));
        opt.step();
    }

    ProbeResult out;
    out.n_classes = n_classes;
    out.train_accuracy = accuracy(head.forward(ztrain, false), train_y);
    out.test_accuracy = accuracy(head.forward(ztest, false), test_y);
    return out;
}

DisentanglementReport probe_disentanglement(Encoder& enc,
                                            const std::vector<LabeledImage>& data,
                                            std::uint64_t seed, long batch_size) {
    if (data.empty()) throw std::invalid_argument("probe_disentanglement: empty dataset");
    std::map<std::string, std::vector<long>> by_subject;
    for (size_t i = 0; i < data.size(); ++i)
        by_subject[data[i].subject_id].push_back(static_cast<long>(i));
    if (by_subject.size() < 2)
        throw std::invalid_argument("probe_disentanglement: need at least 2 subjects");

    const long n_expr = count_expressions(data);
    const long n_id = count_identities(data);

    // Expression probe: held-out subjects. The probe must read expression out
    // of codes of people it never saw.
    std::vector<std::string> subjects;
    for (const auto& [s, _] : by_subject) subjects.push_back(s);
    Rng subj_rng = Rng(seed).split(1);
    for (size_t i = subjects.size(); i > 1; --i)
        std::swap(subjects[i - 1],
                  subjects[static_cast<size_t>(subj_rng.uniform_int(static_cast<std::uint64_t>(i)))]);
    const size_t n_test_subjects = std::max<size_t>(1, subjects.size() / 4);
    std::vector<long> expr_train, expr_test;
    for (size_t s = 0; s < subjects.size(); ++s) {
        auto& dst = s < n_test_subjects ? expr_test : expr_train;
        const auto& idx = by_subject[subjects[s]];
        dst.insert(dst.end(), idx.begin(), idx.end());
    }

    // Identity probes: held-out images of seen subjects, split per subject so
    // every class has training examples.
    std::vector<long> id_train, id_test;
    Rng img_rng = Rng(seed).split(2);
    for (const auto& [s, idx] : by_subject) {
        std::vector<long> shuffled = idx;
        for (size_t i = shuffled.size(); i > 1; --i)
            std::swap(shuffled[i - 1],
                      shuffled[static_cast<size_t>(img_rng.uniform_int(static_cast<std::uint64_t>(i)))]);
        const size_t held = std::max<size_t>(1, shuffled.size() / 4);
        for (size_t i = 0; i < shuffled.size(); ++i)
            (i < held ? id_test : id_train).push_back(shuffled[i]);
    }

    DisentanglementReport out;
    out.expression_chance = 1.0 / static_cast<double>(n_expr);
    out.identity_chance = 1.0 / static_cast<double>(n_id);
    out.n_expression_test = static_cast<long>(expr_test.size());
    out.n_identity_test = static_cast<long>(id_test.size());

    Tensor expr_train_f = encode_features(enc, data, expr_train, batch_size);
    Tensor expr_test_f = encode_features(enc, data, expr_test, batch_size);
    out.expression_probe_accuracy =
        fit_linear_probe(expr_train_f, expression_labels(data, expr_train), expr_test_f,
                         expression_labels(data, expr_test), n_expr)
            .test_accuracy;

    Tensor id_train_f = encode_features(enc, data, id_train, batch_size);
    Tensor id_test_f = encode_features(enc, data, id_test, batch_size);
    out.identity_probe_accuracy =
        fit_linear_probe(id_train_f, identity_labels(data, id_train), id_test_f,
                         identity_labels(data, id_test), n_id)
            .test_accuracy;

    out.pixel_identity_probe_accuracy =
        fit_linear_probe(pixel_features(data, id_train), identity_labels(data, id_train),
                         pixel_features(data, id_test), identity_labels(data, id_test), n_id)
            .test_accuracy;
    return out;
}

TransferReport evaluate_transfer(Encoder& enc, Decoder& dec,
                                 const std::vector<LabeledImage>& data,
                                 const std::vector<long>& indices, const FactorOracle& oracle,
                                 long n_transfers, std::uint64_t seed) {
    if (indices.empty()) throw std::invalid_argument("evaluate_transfer: empty index set");
    if (n_transfers <= 0) throw std::invalid_argument("evaluate_transfer: n_transfers must be positive");
    Rng rng(seed);
    TransferReport out;
    out.n_transfers = n_transfers;
    long expr_hits = 0, id_hits = 0;

    const long chunk = 50;
    long done = 0;
    while (done < n_transfers) {
        const long n = std::min(chunk, n_transfers - done);
        std::vector<long> src(static_cast<size_t>(n));
        std::vector<int> target(static_cast<size_t>(n));
        for (long i = 0; i < n; ++i) {
            src[static_cast<size_t>(i)] = indices[static_cast<size_t>(
                rng.uniform_int(static_cast<std::uint64_t>(indices.size())))];
            target[static_cast<size_t>(i)] = static_cast<int>(
                rng.uniform_int(static_cast<std::uint64_t>(dec.n_identities())));
        }
        Tensor batch({n, data[static_cast<size_t>(src[0])].pixels.dim(0),
                      data[static_cast<size_t>(src[0])].pixels.dim(1),
                      data[static_cast<size_t>(src[0])].pixels.dim(2)});
        const long stride = batch.numel() / n;
        for (long i = 0; i < n; ++i)
            std::memcpy(batch.data() + i * stride,
                        data[static_cast<size_t>(src[static_cast<size_t>(i)])].pixels.data(),
                        static_cast<size_t>(stride) * sizeof(double));

        Tensor code = enc.forward(batch, false);
        Tensor zero_noise({n, dec.noise_dim()});
        Tensor synth = dec.forward(code, zero_noise, target, false);

        for (long i = 0; i < n; ++i) {
            Tensor img({synth.dim(1), synth.dim(2), synth.dim(3)});
            std::memcpy(img.data(), synth.data() + i * stride,
                        static_cast<size_t>(stride) * sizeof(double));
            const auto [expr, id] = oracle.classify(img);
            if (expr == data[static_cast<size_t>(src[static_cast<size_t>(i)])].expr_label)
                ++expr_hits;
            if (id == target[static_cast<size_t>(i)]) ++id_hits;
        }
        done += n;
    }
    out.expression_agreement = static_cast<double>(expr_hits) / static_cast<double>(n_transfers);
    out.identity_agreement = static_cast<double>(id_hits) / static_cast<double>(n_transfers);
    return out;
}

BaselineResult train_eval_baseline(const std::vector<LabeledImage>& data,
                                   const std::vector<long>& train_indices,
                                   const std::vector<long>& test_indices, long n_expressions,
                                   const BaselineConfig& cfg) {
    if (train_indices.empty() || test_indices.empty())
        throw std::invalid_argument("train_eval_baseline: empty index set");
    const Tensor& first = data[static_cast<size_t>(train_indices[0])].pixels;
    BaselineCnn net(first.dim(0), first.dim(1), cfg.width, n_expressions);
    Rng init_rng = Rng(cfg.seed).split(0);
    init_parameters(net.params(), net.buffers(), init_rng);
    Adam opt(net.params(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);

    const long steps = cfg.steps_per_epoch > 0
                           ? cfg.steps_per_epoch
                           : (static_cast<long>(train_indices.size()) + cfg.batch_size - 1) /
                                 cfg.batch_size;
    BaselineResult out;
    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng batch_rng = Rng(cfg.seed).split(0x40000 + static_cast<std::uint64_t>(epoch));
        for (long s = 0; s < steps; ++s) {
            Batch b = sample_batch(data, train_indices, cfg.batch_size, batch_rng);
            opt.zero_grad();
            Tensor logits = net.forward(b.images, true);
            net.backward(cross_entropy_grad(logits, b.expr));
            opt.step();
            ++out.steps_run;
        }
    }

    long correct = 0;
    for (size_t start = 0; start < test_indices.size();
         start += static_cast<size_t>(cfg.batch_size)) {
        const long n = std::min<long>(cfg.batch_size,
                                      static_cast<long>(test_indices.size() - start));
        Tensor batch = stack_images(data, test_indices, start, n);
        auto pred = argmax_rows(net.forward(batch, false));
        for (long i = 0; i < n; ++i)
            if (pred[static_cast<size_t>(i)] ==
                data[static_cast<size_t>(test_indices[start + static_cast<size_t>(i)])].expr_label)
                ++correct;
    }
    out.test_accuracy = static_cast<double>(correct) / static_cast<double>(test_indices.size());
    return out;
}

KfoldResult run_kfold(const std::vector<LabeledImage>& data, const KfoldConfig& cfg) {
    if (cfg.out_dir.empty()) throw std::invalid_argument("run_kfold: out_dir required");
    FoldSpec folds = make_folds(data, static_cast<int>(cfg.k), cfg.fold_seed);
    fs::create_directories(cfg.out_dir);
    folds.save_text((fs::path(cfg.out_dir) / "folds.txt").string());

    const long n_expr = count_expressions(data);
    KfoldResult result;
    result.fused_confusion.assign(static_cast<size_t>(n_expr),
                                  std::vector<long>(static_cast<size_t>(n_expr), 0));

    double fused_weighted = 0, baseline_weighted = 0;
    long total_test = 0;
    for (int f = 0; f < static_cast<int>(cfg.k); ++f) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<long> train_idx = to_long(fold_train_indices(data, folds, f));
        const std::vector<long> test_idx = to_long(fold_test_indices(data, folds, f));
        const fs::path fold_dir = fs::path(cfg.out_dir) / ("fold_" + std::to_string(f));

        Stage1Trainer s1(cfg.stage1);
        Stage1Options s1opt;
        s1opt.out_dir = (fold_dir / "stage1").string();
        s1opt.epochs = cfg.stage1_epochs;
        s1opt.steps_per_epoch = cfg.stage1_steps_per_epoch;
        s1opt.checkpoint_every = std::max<long>(1, cfg.stage1_epochs);
        s1opt.write_samples = cfg.write_samples;
        run_stage1(s1, data, train_idx, s1opt);

        Stage2Trainer s2(s1.encoder(), cfg.stage2);
        Stage2Options s2opt;
        s2opt.out_dir = (fold_dir / "stage2").string();
        s2opt.epochs = cfg.stage2_epochs;
        s2opt.steps_per_epoch = cfg.stage2_steps_per_epoch;
        s2opt.checkpoint_every = std::max<long>(1, cfg.stage2_epochs);
        run_stage2(s2, data, train_idx, s2opt);

        FoldScore score;
        score.fold = f;
        score.n_test = static_cast<long>(test_idx.size());
        score.fused_accuracy = s2.evaluate_accuracy(data, test_idx);
        score.baseline_accuracy =
            train_eval_baseline(data, train_idx, test_idx, n_expr, cfg.baseline).test_accuracy;

        // Confusion of the fused head over this fold's held-out subjects.
        const Tensor& first = data[static_cast<size_t>(test_idx[0])].pixels;
        for (size_t start = 0; start < test_idx.size();
             start += static_cast<size_t>(cfg.stage2.batch_size)) {
            const long n = std::min<long>(cfg.stage2.batch_size,
                                          static_cast<long>(test_idx.size() - start));
            Tensor batch({n, first.dim(0), first.dim(1), first.dim(2)});
            const long stride = first.numel();
            for (long i = 0; i < n; ++i)
                std::memcpy(batch.data() + i * stride,
                            data[static_cast<size_t>(test_idx[start + static_cast<size_t>(i)])]
                                .pixels.data(),
                            static_cast<size_t>(stride) * sizeof(double));
            auto pred = s2.predict(batch);
            for (long i = 0; i < n; ++i) {
                const int truth =
                    data[static_cast<size_t>(test_idx[start + static_cast<size_t>(i)])].expr_label;
                ++result.fused_confusion[static_cast<size_t>(truth)]
                                        [static_cast<size_t>(pred[static_cast<size_t>(i)])];
            }
        }

        score.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        fused_weighted += score.fused_accuracy * static_cast<double>(score.n_test);
        baseline_weighted += score.baseline_accuracy * static_cast<double>(score.n_test);
        total_test += score.n_test;
        result.folds.push_back(score);
    }
    result.fused_mean = fused_weighted / static_cast<double>(total_test);
    result.baseline_mean = baseline_weighted / static_cast<double>(total_test);
    return result;
}

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_results_csv: cannot open " + path);
    out << "method,setting,fold,n_test,accuracy\n";
    char num[32];
    for (const auto& r : rows) {
        std::snprintf(num, sizeof(num), "%.10g", r.accuracy);
        out << r.method << ',' << r.setting << ',' << r.fold << ',' << r.n_test << ',' << num
            << '\n';
    }
}

void write_confusion_csv(const std::string& path, const std::vector<std::vector<long>>& counts) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_confusion_csv: cannot open " + path);
    for (const auto& row : counts) {
        for (size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
        out << '\n';
    }
}

}  // namespace degan
