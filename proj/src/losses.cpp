#include "degan/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace degan {

namespace {

void check_logits(const Tensor& logits, const std::vector<int>& labels, const char* who) {
    if (logits.ndim() != 2)
        throw std::invalid_argument(std::string(who) + ": want (N,K) logits, got " + logits.shape_str());
    if (logits.dim(0) != static_cast<long>(labels.size()))
        throw std::invalid_argument(std::string(who) + ": batch/label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= logits.dim(1))
            throw std::invalid_argument(std::string(who) + ": label out of range");
}

}  // namespace

Tensor softmax(const Tensor& logits) {
    if (logits.ndim() != 2) throw std::invalid_argument("softmax: want (N,K)");
    const long n = logits.dim(0), k = logits.dim(1);
    Tensor out({n, k});
    for (long i = 0; i < n; ++i) {
        double m = logits.at(i, 0L);
        for (long j = 1; j < k; ++j) m = std::max(m, logits.at(i, j));
        double z = 0;
        for (long j = 0; j < k; ++j) {
            const double e = std::exp(logits.at(i, j) - m);
            out.at(i, j) = e;
            z += e;
        }
        for (long j = 0; j < k; ++j) out.at(i, j) /= z;
    }
    return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    if (logits.ndim() != 2) throw std::invalid_argument("argmax_rows: want (N,K)");
    const long n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
        long best = 0;
        for (long j = 1; j < k; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        out[static_cast<size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    check_logits(logits, labels, "accuracy");
    const std::vector<int> pred = argmax_rows(logits);
    long hits = 0;
    for (size_t i = 0; i < labels.size(); ++i) hits += (pred[i] == labels[i]);
    return labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    check_logits(logits, labels, "cross_entropy");
    const long n = logits.dim(0), k = logits.dim(1);
    double total = 0;
    for (long i = 0; i < n; ++i) {
        double m = logits.at(i, 0L);
        for (long j = 1; j < k; ++j) m = std::max(m, logits.at(i, j));
        double z = 0;
        for (long j = 0; j < k; ++j) z += std::exp(logits.at(i, j) - m);
        total += m + std::log(z) - logits.at(i, labels[static_cast<size_t>(i)]);
    }
    return total / static_cast<double>(n);
}

Tensor cross_entropy_grad(const Tensor& logits, const std::vector<int>& labels) {
    check_logits(logits, labels, "cross_entropy_grad");
    Tensor g = softmax(logits);
    const long n = logits.dim(0);
    const double inv = 1.0 / static_cast<double>(n);
    for (long i = 0; i < n; ++i) {
        g.at(i, labels[static_cast<size_t>(i)]) -= 1.0;
        for (long j = 0; j < logits.dim(1); ++j) g.at(i, j) *= inv;
    }
    return g;
}

DiscriminatorLossTerms discriminator_loss(const Tensor& expr_logits_real,
                                          const std::vector<int>& expr_labels,
                                          const Tensor& id_logits_real,
                                          const std::vector<int>& id_labels,
                                          const Tensor& expr_logits_fake, int n_expressions) {
    if (expr_logits_real.dim(1) != n_expressions + 1 || expr_logits_fake.dim(1) != n_expressions + 1)
        throw std::invalid_argument("discriminator_loss: expression head must have N_e + 1 logits");
    DiscriminatorLossTerms t;
    t.real_expr = cross_entropy(expr_logits_real, expr_labels);
    t.real_id = cross_entropy(id_logits_real, id_labels);
    const std::vector<int> fake_labels(static_cast<size_t>(expr_logits_fake.dim(0)), n_expressions);
    t.fake = cross_entropy(expr_logits_fake, fake_labels);
    t.total = t.real_expr + t.real_id + t.fake;
    return t;
}

GeneratorLossTerms generator_loss(const Tensor& expr_logits_fake,
                                  const std::vector<int>& expr_labels,
                                  const Tensor& id_logits_fake,
                                  const std::vector<int>& id_targets) {
    GeneratorLossTerms t;
    t.expr = cross_entropy(expr_logits_fake, expr_labels);
    t.id = cross_entropy(id_logits_fake, id_targets);
    t.total = t.expr + t.id;
    return t;
}

Stage2LossTerms stage2_total_loss(const std::array<Tensor, 4>& local_logits,
                                  const Tensor& fused_logits, const std::vector<int>& labels,
                                  const Stage2LossWeights& weights) {
    Stage2LossTerms t;
    t.total = 0;
    for (int i = 0; i < 4; ++i) {
        t.local[static_cast<size_t>(i)] = cross_entropy(local_logits[static_cast<size_t>(i)], labels);
        t.total += weights.local[static_cast<size_t>(i)] * t.local[static_cast<size_t>(i)];
    }
    t.fused = cross_entropy(fused_logits, labels);
    t.total += weights.fused * t.fused;
    return t;
}

double gradient_check_max_error(const std::function<double()>& loss,
                                const std::vector<std::pair<Tensor*, const Tensor*>>& value_grad,
                                double eps, int samples_per_tensor, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0;
    for (const auto& [value, grad] : value_grad) {
        const long n = value->numel();
        if (n == 0) continue;
        for (int s = 0; s < samples_per_tensor; ++s) {
            const long j = (n <= samples_per_tensor) ? s : rng.uniform_int(n);
            if (j >= n) break;
            const double orig = (*value)[j];
            (*value)[j] = orig + eps;
            const double lp = loss();
            (*value)[j] = orig - eps;
            const double lm = loss();
            (*value)[j] = orig;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double analytic = (*grad)[j];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
        }
    }
    return worst;
}

double gradient_check_max_error(const std::function<double()>& loss,
                                const std::vector<ParamTensor*>& params, double eps,
                                int samples_per_tensor, std::uint64_t seed) {
    std::vector<std::pair<Tensor*, const Tensor*>> pairs;
    pairs.reserve(params.size());
    for (ParamTensor* p : params) pairs.emplace_back(&p->value, &p->grad);
    return gradient_check_max_error(loss, pairs, eps, samples_per_tensor, seed);
}

}  // namespace degan
