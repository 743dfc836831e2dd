#pragma once

#include <array>
#include <string>
#include <vector>

#include "degan/nn.hpp"
#include "degan/tensor.hpp"

namespace degan {

/// Four stride-2 conv blocks (each halving the spatial size) and a linear
/// head squashed with tanh into a bounded representation code. The block
/// outputs are kept as taps for the stage-2 intermediate classifiers.
/// image_size must be divisible by 16.
class Encoder {
public:
    Encoder(long channels, long image_size, long width, long code_dim);

    Tensor forward(const Tensor& x, bool training);
    /// Post-activation outputs of the four blocks from the last forward.
    const std::array<Tensor, 4>& taps() const { return taps_; }

    /// Backpropagate from the code. Tap consumers never feed gradients back
    /// (the encoder is frozen whenever taps are consumed).
    Tensor backward(const Tensor& grad_code);

    std::vector<ParamTensor*> params();
    std::vector<ParamTensor*> buffers();

    long code_dim() const { return code_dim_; }
    long width() const { return width_; }
    long image_size() const { return image_size_; }
    long channels() const { return channels_; }
    /// Channels / spatial size of tap i (0-based).
    long tap_channels(int i) const;
    long tap_size(int i) const;

private:
    long channels_, image_size_, width_, code_dim_;
    std::array<Sequential, 4> blocks_;
    Sequential head_;
    std::array<Tensor, 4> taps_;
};

/// Maps [code; noise; one-hot identity] to an image via a linear projection
/// and four stride-2 transposed convolutions, tanh output.
class Decoder {
public:
    Decoder(long channels, long image_size, long width, long code_dim, long noise_dim,
            long n_identities);

    /// identity entries must lie in [0, n_identities).
    Tensor forward(const Tensor& code, const Tensor& noise, const std::vector<int>& identity,
                   bool training);
    /// Returns the gradient w.r.t. the code; noise / one-hot grads are dropped.
    Tensor backward(const Tensor& grad_image);

    std::vector<ParamTensor*> params();
    std::vector<ParamTensor*> buffers();

    long noise_dim() const { return noise_dim_; }
    long n_identities() const { return n_identities_; }

private:
    long channels_, image_size_, width_, code_dim_, noise_dim_, n_identities_;
    long seed_hw_;  // spatial size of the projected feature map
    Sequential project_;  // linear on the concatenated input
    Sequential deconv_;   // BN+ReLU, three upsampling blocks, output block
    std::vector<long> proj_shape_;
};

/// Shared conv trunk with two linear heads: expression (n_expressions + 1
/// logits, the extra class marking generated images) and identity.
class Discriminator {
public:
    struct Heads {
        Tensor expr_logits;
        Tensor id_logits;
    };

    Discriminator(long channels, long image_size, long width, long n_expressions,
                  long n_identities);

    Heads forward(const Tensor& x, bool training);
    /// Pass zero tensors for heads that receive no loss.
    Tensor backward(const Tensor& grad_expr, const Tensor& grad_id);

    std::vector<ParamTensor*> params();
    std::vector<ParamTensor*> buffers();

    long n_expressions() const { return n_expressions_; }

private:
    long channels_, image_size_, width_, n_expressions_, n_identities_;
    Sequential trunk_;
    Linear expr_head_, id_head_;
};

/// Small conv net on one encoder tap: two 3x3 conv blocks, global average
/// pooling, a tanh feature of fusion_dim, and expression logits on top.
class LocalClassifier {
public:
    struct Out {
        Tensor feature;  // (N, fusion_dim)
        Tensor logits;   // (N, n_expressions)
    };

    LocalClassifier(const std::string& name, long in_channels, long trunk_width,
                    long fusion_dim, long n_expressions);

    Out forward(const Tensor& tap, bool training);
    /// Backward from the logits only; the fused classifier consumes the
    /// feature as a constant and the tap gradient is discarded (frozen
    /// encoder upstream).
    void backward(const Tensor& grad_logits);

    std::vector<ParamTensor*> params();
    std::vector<ParamTensor*> buffers();

private:
    Sequential trunk_;  // convs + GAP
    Sequential feat_;   // linear + tanh
    Linear head_;
};

/// Two-layer MLP over [code; local features], producing expression logits.
class FusedClassifier {
public:
    FusedClassifier(long in_dim, long hidden, long n_expressions);

    Tensor forward(const Tensor& features, bool training);
    Tensor backward(const Tensor& grad_logits);

    std::vector<ParamTensor*> params();
    std::vector<ParamTensor*> buffers();

    long in_dim() const { return in_dim_; }

private:
    long in_dim_;
    Sequential net_;
};

/// Plain expression CNN on raw pixels; same trunk shape as the encoder.
/// Reference point for the representation-quality comparisons.
class BaselineCnn {
public:
    BaselineCnn(long channels, long image_size, long width, long n_expressions);

    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& grad_logits);

    std::vector<ParamTensor*> params();
    std::vector<ParamTensor*> buffers();

private:
    Sequential net_;
};

/// One-hot encode labels into (N, n_classes).
Tensor one_hot(const std::vector<int>& labels, long n_classes);

/// Concatenate 2-d tensors along features (all must share N).
Tensor concat_features(const std::vector<const Tensor*>& parts);

}  // namespace degan
