#include "degan/models.hpp"

#include <stdexcept>

namespace degan {

namespace {

void check_divisible(long image_size, const char* who) {
    if (image_size % 16 != 0 || image_size < 16)
        throw std::invalid_argument(std::string(who) + ": image_size must be a positive multiple of 16");
}

Sequential conv_block(const std::string& name, long in_ch, long out_ch, bool batch_norm) {
    Sequential s;
    s.emplace<Conv2d>(name, in_ch, out_ch, 4, 2, 1);
    if (batch_norm) s.emplace<BatchNorm2d>(name + ".bn", out_ch);
    s.emplace<LeakyReLU>(0.2);
    return s;
}

}  // namespace

Tensor one_hot(const std::vector<int>& labels, long n_classes) {
    Tensor t({static_cast<long>(labels.size()), n_classes});
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes)
            throw std::invalid_argument("one_hot: label out of range");
        t.at(static_cast<long>(i), labels[i]) = 1.0;
    }
    return t;
}

Tensor concat_features(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_features: empty input");
    const long n = parts[0]->dim(0);
    long total = 0;
    for (const Tensor* p : parts) {
        if (p->ndim() != 2 || p->dim(0) != n)
            throw std::invalid_argument("concat_features: parts must be (N,*) with equal N");
        total += p->dim(1);
    }
    Tensor out({n, total});
    for (long i = 0; i < n; ++i) {
        long off = 0;
        for (const Tensor* p : parts) {
            for (long j = 0; j < p->dim(1); ++j) out.at(i, off + j) = p->at(i, j);
            off += p->dim(1);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

Encoder::Encoder(long channels, long image_size, long width, long code_dim)
    : channels_(channels), image_size_(image_size), width_(width), code_dim_(code_dim) {
    check_divisible(image_size, "Encoder");
    blocks_[0] = conv_block("enc.b1", channels, width, true);
    blocks_[1] = conv_block("enc.b2", width, width * 2, true);
    blocks_[2] = conv_block("enc.b3", width * 2, width * 4, true);
    blocks_[3] = conv_block("enc.b4", width * 4, width * 8, true);
    const long s = image_size / 16;
    head_.emplace<Flatten>();
    head_.emplace<Linear>("enc.code", width * 8 * s * s, code_dim);
    head_.emplace<Tanh>();
}

Tensor Encoder::forward(const Tensor& x, bool training) {
    if (x.ndim() != 4 || x.dim(1) != channels_ || x.dim(2) != image_size_ || x.dim(3) != image_size_)
        throw std::invalid_argument("Encoder: bad input shape " + x.shape_str());
    Tensor h = x;
    for (int i = 0; i < 4; ++i) {
        h = blocks_[static_cast<size_t>(i)].forward(h, training);
        taps_[static_cast<size_t>(i)] = h;
    }
    return head_.forward(h, training);
}

Tensor Encoder::backward(const Tensor& grad_code) {
    Tensor g = head_.backward(grad_code);
    for (int i = 3; i >= 0; --i) g = blocks_[static_cast<size_t>(i)].backward(g);
    return g;
}

std::vector<ParamTensor*> Encoder::params() {
    std::vector<ParamTensor*> v;
    for (auto& b : blocks_) b.collect_params(v);
    head_.collect_params(v);
    return v;
}

std::vector<ParamTensor*> Encoder::buffers() {
    std::vector<ParamTensor*> v;
    for (auto& b : blocks_) b.collect_buffers(v);
    head_.collect_buffers(v);
    return v;
}

long Encoder::tap_channels(int i) const {
    if (i < 0 || i > 3) throw std::out_of_range("Encoder: tap index");
    return width_ << i;
}

long Encoder::tap_size(int i) const {
    if (i < 0 || i > 3) throw std::out_of_range("Encoder: tap index");
    return image_size_ >> (i + 1);
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

Decoder::Decoder(long channels, long image_size, long width, long code_dim, long noise_dim,
                 long n_identities)
    : channels_(channels),
      image_size_(image_size),
      width_(width),
      code_dim_(code_dim),
      noise_dim_(noise_dim),
      n_identities_(n_identities) {
    check_divisible(image_size, "Decoder");
    seed_hw_ = image_size / 16;
    project_.emplace<Linear>("dec.project", code_dim + noise_dim + n_identities,
                             width * 8 * seed_hw_ * seed_hw_);
    deconv_.emplace<BatchNorm2d>("dec.b0.bn", width * 8);
    deconv_.emplace<ReLU>();
    deconv_.emplace<ConvTranspose2d>("dec.b1", width * 8, width * 4, 4, 2, 1);
    deconv_.emplace<BatchNorm2d>("dec.b1.bn", width * 4);
    deconv_.emplace<ReLU>();
    deconv_.emplace<ConvTranspose2d>("dec.b2", width * 4, width * 2, 4, 2, 1);
    deconv_.emplace<BatchNorm2d>("dec.b2.bn", width * 2);
    deconv_.emplace<ReLU>();
    deconv_.emplace<ConvTranspose2d>("dec.b3", width * 2, width, 4, 2, 1);
    deconv_.emplace<BatchNorm2d>("dec.b3.bn", width);
    deconv_.emplace<ReLU>();
    deconv_.emplace<ConvTranspose2d>("dec.out", width, channels, 4, 2, 1);
    deconv_.emplace<Tanh>();
}

Tensor Decoder::forward(const Tensor& code, const Tensor& noise, const std::vector<int>& identity,
                        bool training) {
    if (code.ndim() != 2 || code.dim(1) != code_dim_)
        throw std::invalid_argument("Decoder: bad code shape " + code.shape_str());
    if (noise.ndim() != 2 || noise.dim(1) != noise_dim_ || noise.dim(0) != code.dim(0))
        throw std::invalid_argument("Decoder: bad noise shape " + noise.shape_str());
    if (static_cast<long>(identity.size()) != code.dim(0))
        throw std::invalid_argument("Decoder: identity count mismatch");
    const Tensor ids = one_hot(identity, n_identities_);
    const Tensor joint = concat_features({&code, &noise, &ids});
    Tensor h = project_.forward(joint, training);
    proj_shape_ = {code.dim(0), width_ * 8, seed_hw_, seed_hw_};
    h = h.reshaped(proj_shape_);
    return deconv_.forward(h, training);
}

Tensor Decoder::backward(const Tensor& grad_image) {
    Tensor g = deconv_.backward(grad_image);
    g = g.reshaped({proj_shape_[0], width_ * 8 * seed_hw_ * seed_hw_});
    Tensor gj = project_.backward(g);
    // Slice out the code part of the concatenated input gradient.
    Tensor gc({gj.dim(0), code_dim_});
    for (long i = 0; i < gj.dim(0); ++i)
        for (long j = 0; j < code_dim_; ++j) gc.at(i, j) = gj.at(i, j);
    return gc;
}

std::vector<ParamTensor*> Decoder::params() {
    std::vector<ParamTensor*> v;
    project_.collect_params(v);
    deconv_.collect_params(v);
    return v;
}

std::vector<ParamTensor*> Decoder::buffers() {
    std::vector<ParamTensor*> v;
    project_.collect_buffers(v);
    deconv_.collect_buffers(v);
    return v;
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

Discriminator::Discriminator(long channels, long image_size, long width, long n_expressions,
                             long n_identities)
    : channels_(channels),
      image_size_(image_size),
      width_(width),
      n_expressions_(n_expressions),
      n_identities_(n_identities),
      expr_head_("disc.expr", width * 8 * (image_size / 16) * (image_size / 16), n_expressions + 1),
      id_head_("disc.id", width * 8 * (image_size / 16) * (image_size / 16), n_identities) {
    check_divisible(image_size, "Discriminator");
    // No batch norm on the first block, standard for adversarial critics.
    trunk_.emplace<Conv2d>("disc.b1", channels, width, 4, 2, 1);
    trunk_.emplace<LeakyReLU>(0.2);
    trunk_.emplace<Conv2d>("disc.b2", width, width * 2, 4, 2, 1);
    trunk_.emplace<BatchNorm2d>("disc.b2.bn", width * 2);
    trunk_.emplace<LeakyReLU>(0.2);
    trunk_.emplace<Conv2d>("disc.b3", width * 2, width * 4, 4, 2, 1);
    trunk_.emplace<BatchNorm2d>("disc.b3.bn", width * 4);
    trunk_.emplace<LeakyReLU>(0.2);
    trunk_.emplace<Conv2d>("disc.b4", width * 4, width * 8, 4, 2, 1);
    trunk_.emplace<BatchNorm2d>("disc.b4.bn", width * 8);
    trunk_.emplace<LeakyReLU>(0.2);
    trunk_.emplace<Flatten>();
}

Discriminator::Heads Discriminator::forward(const Tensor& x, bool training) {
    if (x.ndim() != 4 || x.dim(1) != channels_ || x.dim(2) != image_size_ || x.dim(3) != image_size_)
        throw std::invalid_argument("Discriminator: bad input shape " + x.shape_str());
    Tensor features = trunk_.forward(x, training);
    Heads h;
    h.expr_logits = expr_head_.forward(features, training);
    h.id_logits = id_head_.forward(features, training);
    return h;
}

Tensor Discriminator::backward(const Tensor& grad_expr, const Tensor& grad_id) {
    Tensor gf = expr_head_.backward(grad_expr);
    gf.add_(id_head_.backward(grad_id));
    return trunk_.backward(gf);
}

std::vector<ParamTensor*> Discriminator::params() {
    std::vector<ParamTensor*> v;
    trunk_.collect_params(v);
    expr_head_.collect_params(v);
    id_head_.collect_params(v);
    return v;
}

std::vector<ParamTensor*> Discriminator::buffers() {
    std::vector<ParamTensor*> v;
    trunk_.collect_buffers(v);
    return v;
}

// ---------------------------------------------------------------------------
// LocalClassifier
// ---------------------------------------------------------------------------

LocalClassifier::LocalClassifier(const std::string& name, long in_channels, long trunk_width,
                                 long fusion_dim, long n_expressions)
    : head_(name + ".head", fusion_dim, n_expressions) {
    trunk_.emplace<Conv2d>(name + ".c1", in_channels, trunk_width, 3, 1, 1);
    trunk_.emplace<BatchNorm2d>(name + ".c1.bn", trunk_width);
    trunk_.emplace<ReLU>();
    trunk_.emplace<Conv2d>(name + ".c2", trunk_width, trunk_width, 3, 1, 1);
    trunk_.emplace<BatchNorm2d>(name + ".c2.bn", trunk_width);
    trunk_.emplace<ReLU>();
    trunk_.emplace<GlobalAvgPool>();
    feat_.emplace<Linear>(name + ".feat", trunk_width, fusion_dim);
    feat_.emplace<Tanh>();
}

LocalClassifier::Out LocalClassifier::forward(const Tensor& tap, bool training) {
    Tensor pooled = trunk_.forward(tap, training);
    Out o;
    o.feature = feat_.forward(pooled, training);
    o.logits = head_.forward(o.feature, training);
    return o;
}

void LocalClassifier::backward(const Tensor& grad_logits) {
    Tensor g = head_.backward(grad_logits);
    g = feat_.backward(g);
    trunk_.backward(g);  // tap gradient intentionally dropped
}

std::vector<ParamTensor*> LocalClassifier::params() {
    std::vector<ParamTensor*> v;
    trunk_.collect_params(v);
    feat_.collect_params(v);
    head_.collect_params(v);
    return v;
}

std::vector<ParamTensor*> LocalClassifier::buffers() {
    std::vector<ParamTensor*> v;
    trunk_.collect_buffers(v);
    return v;
}

// ---------------------------------------------------------------------------
// FusedClassifier
// ---------------------------------------------------------------------------

FusedClassifier::FusedClassifier(long in_dim, long hidden, long n_expressions) : in_dim_(in_dim) {
    net_.emplace<Linear>("fused.l1", in_dim, hidden);
    net_.emplace<ReLU>();
    net_.emplace<Linear>("fused.l2", hidden, n_expressions);
}

Tensor FusedClassifier::forward(const Tensor& features, bool training) {
    if (features.ndim() != 2 || features.dim(1) != in_dim_)
        throw std::invalid_argument("FusedClassifier: bad input " + features.shape_str());
    return net_.forward(features, training);
}

Tensor FusedClassifier::backward(const Tensor& grad_logits) { return net_.backward(grad_logits); }

std::vector<ParamTensor*> FusedClassifier::params() { return net_.params(); }
std::vector<ParamTensor*> FusedClassifier::buffers() { return net_.buffers(); }

// ---------------------------------------------------------------------------
// BaselineCnn
// ---------------------------------------------------------------------------

BaselineCnn::BaselineCnn(long channels, long image_size, long width, long n_expressions) {
    check_divisible(image_size, "BaselineCnn");
    net_.emplace<Conv2d>("base.b1", channels, width, 4, 2, 1);
    net_.emplace<BatchNorm2d>("base.b1.bn", width);
    net_.emplace<LeakyReLU>(0.2);
    net_.emplace<Conv2d>("base.b2", width, width * 2, 4, 2, 1);
    net_.emplace<BatchNorm2d>("base.b2.bn", width * 2);
    net_.emplace<LeakyReLU>(0.2);
    net_.emplace<Conv2d>("base.b3", width * 2, width * 4, 4, 2, 1);
    net_.emplace<BatchNorm2d>("base.b3.bn", width * 4);
    net_.emplace<LeakyReLU>(0.2);
    net_.emplace<Conv2d>("base.b4", width * 4, width * 8, 4, 2, 1);
    net_.emplace<BatchNorm2d>("base.b4.bn", width * 8);
    net_.emplace<LeakyReLU>(0.2);
    net_.emplace<Flatten>();
    net_.emplace<Linear>("base.head", width * 8 * (image_size / 16) * (image_size / 16), n_expressions);
}

Tensor BaselineCnn::forward(const Tensor& x, bool training) { return net_.forward(x, training); }

Tensor BaselineCnn::backward(const Tensor& grad_logits) { return net_.backward(grad_logits); }

std::vector<ParamTensor*> BaselineCnn::params() { return net_.params(); }
std::vector<ParamTensor*> BaselineCnn::buffers() { return net_.buffers(); }

}  // namespace degan
