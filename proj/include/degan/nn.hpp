#pragma once

#include <memory>
#include <string>
#include <vector>

#include "degan/rng.hpp"
#include "degan/tensor.hpp"

namespace degan {

/// Named parameter with its gradient accumulator.
struct ParamTensor {
    std::string name;
    Tensor value;
    Tensor grad;

    ParamTensor(std::string n, std::vector<long> shape)
        : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

/// A differentiable layer. forward() caches whatever backward() needs;
/// backward() consumes the most recent forward, accumulates parameter
/// gradients with += and returns the gradient w.r.t. the layer input.
class Module {
public:
    virtual ~Module() = default;
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual void collect_params(std::vector<ParamTensor*>&) {}
    /// Non-learned state that still belongs in checkpoints (running stats).
    virtual void collect_buffers(std::vector<ParamTensor*>&) {}

    std::vector<ParamTensor*> params();
    std::vector<ParamTensor*> buffers();
};

class Conv2d : public Module {
public:
    Conv2d(std::string name, long in_ch, long out_ch, long kernel, long stride, long pad);
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(std::vector<ParamTensor*>& out) override;

private:
    long in_ch_, out_ch_, k_, stride_, pad_;
    ParamTensor w_, b_;
    Tensor col_;  // (N*OH*OW, in_ch*k*k)
    std::vector<long> in_shape_;
    long oh_ = 0, ow_ = 0;
};

class ConvTranspose2d : public Module {
public:
    ConvTranspose2d(std::string name, long in_ch, long out_ch, long kernel, long stride, long pad);
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(std::vector<ParamTensor*>& out) override;

private:
    long in_ch_, out_ch_, k_, stride_, pad_;
    ParamTensor w_, b_;
    Tensor x_mat_;  // (N*IH*IW, in_ch)
    std::vector<long> in_shape_;
    long oh_ = 0, ow_ = 0;
};

class BatchNorm2d : public Module {
public:
    BatchNorm2d(std::string name, long channels, double eps = 1e-5, double momentum = 0.1);
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(std::vector<ParamTensor*>& out) override;
    void collect_buffers(std::vector<ParamTensor*>& out) override;

private:
    long channels_;
    double eps_, momentum_;
    ParamTensor gamma_, beta_;
    ParamTensor running_mean_, running_var_;
    Tensor xhat_;
    std::vector<double> invstd_;
    std::vector<long> in_shape_;
    bool training_mode_cache_ = true;
};

class LeakyReLU : public Module {
public:
    explicit LeakyReLU(double alpha = 0.2) : alpha_(alpha) {}
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    double alpha_;
    Tensor input_;
};

class ReLU : public Module {
public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Tensor input_;
};

class Tanh : public Module {
public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Tensor output_;
};

class Linear : public Module {
public:
    Linear(std::string name, long in_features, long out_features);
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(std::vector<ParamTensor*>& out) override;

private:
    long in_f_, out_f_;
    ParamTensor w_, b_;
    Tensor input_;
};

/// (N, C, H, W) -> (N, C*H*W).
class Flatten : public Module {
public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    std::vector<long> in_shape_;
};

/// Global average pool: (N, C, H, W) -> (N, C).
class GlobalAvgPool : public Module {
public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    std::vector<long> in_shape_;
};

class Sequential : public Module {
public:
    Sequential() = default;
    Sequential& add(std::unique_ptr<Module> m);
    template <typename M, typename... Args>
    Sequential& emplace(Args&&... args) {
        return add(std::make_unique<M>(std::forward<Args>(args)...));
    }
    size_t size() const { return modules_.size(); }
    Module& module(size_t i) { return *modules_[i]; }

    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(std::vector<ParamTensor*>& out) override;
    void collect_buffers(std::vector<ParamTensor*>& out) override;

private:
    std::vector<std::unique_ptr<Module>> modules_;
};

/// Zero-mean Gaussian(0.02) weights, zero biases, Gaussian(1, 0.02) batch
/// norm scales, zero shifts; running stats reset to (0, 1).
void init_parameters(const std::vector<ParamTensor*>& params,
                     const std::vector<ParamTensor*>& buffers, Rng& rng);

class Adam {
public:
    Adam(std::vector<ParamTensor*> params, double lr,
         double beta1 = 0.5, double beta2 = 0.999, double eps = 1e-8);

    void zero_grad();
    void step();

    long steps_taken() const { return t_; }
    const std::vector<ParamTensor*>& params() const { return params_; }

    // Checkpoint access: first and second moment per parameter, step count.
    std::vector<Tensor>& moment1() { return m_; }
    std::vector<Tensor>& moment2() { return v_; }
    void set_steps_taken(long t) { t_ = t; }
    double learning_rate() const { return lr_; }

private:
    std::vector<ParamTensor*> params_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

/// 64-bit FNV-1a over the raw bytes of all parameter values, in order.
/// Stable fingerprint for frozen-weights checks.
std::uint64_t parameter_hash(const std::vector<ParamTensor*>& params);

}  // namespace degan
