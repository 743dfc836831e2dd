#include "degan/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace degan {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

std::vector<ParamTensor*> Module::params() {
    std::vector<ParamTensor*> v;
    collect_params(v);
    return v;
}

std::vector<ParamTensor*> Module::buffers() {
    std::vector<ParamTensor*> v;
    collect_buffers(v);
    return v;
}

namespace {

// Patch gather shared by conv forward and transposed-conv backward. Grid
// position (gy, gx) of sample n reads the k x k window whose top-left corner
// is (gy*stride - pad, gx*stride - pad) in src (N, C, SH, SW); out-of-bounds
// taps contribute zero. dst is (N*GH*GW, C*k*k).
void im2col(const Tensor& src, long k, long stride, long pad, long gh, long gw, Tensor& dst) {
    const long n_n = src.dim(0), c_n = src.dim(1), sh = src.dim(2), sw = src.dim(3);
    dst.zero();
    double* out = dst.data();
    const double* in = src.data();
    for (long n = 0; n < n_n; ++n)
        for (long gy = 0; gy < gh; ++gy)
            for (long gx = 0; gx < gw; ++gx) {
                double* row = out + ((n * gh + gy) * gw + gx) * (c_n * k * k);
                const long y0 = gy * stride - pad, x0 = gx * stride - pad;
                for (long c = 0; c < c_n; ++c) {
                    const double* plane = in + (n * c_n + c) * sh * sw;
                    for (long ky = 0; ky < k; ++ky) {
                        const long y = y0 + ky;
                        if (y < 0 || y >= sh) continue;
                        for (long kx = 0; kx < k; ++kx) {
                            const long x = x0 + kx;
                            if (x < 0 || x >= sw) continue;
                            row[(c * k + ky) * k + kx] = plane[y * sw + x];
                        }
                    }
                }
            }
}

// Scatter-add transpose of im2col: dst (N, C, SH, SW) += patch values.
void col2im(const Tensor& cols, long k, long stride, long pad, long gh, long gw, Tensor& dst) {
    const long n_n = dst.dim(0), c_n = dst.dim(1), sh = dst.dim(2), sw = dst.dim(3);
    const double* in = cols.data();
    double* out = dst.data();
    for (long n = 0; n < n_n; ++n)
        for (long gy = 0; gy < gh; ++gy)
            for (long gx = 0; gx < gw; ++gx) {
                const double* row = in + ((n * gh + gy) * gw + gx) * (c_n * k * k);
                const long y0 = gy * stride - pad, x0 = gx * stride - pad;
                for (long c = 0; c < c_n; ++c) {
                    double* plane = out + (n * c_n + c) * sh * sw;
                    for (long ky = 0; ky < k; ++ky) {
                        const long y = y0 + ky;
                        if (y < 0 || y >= sh) continue;
                        for (long kx = 0; kx < k; ++kx) {
                            const long x = x0 + kx;
                            if (x < 0 || x >= sw) continue;
                            plane[y * sw + x] += row[(c * k + ky) * k + kx];
                        }
                    }
                }
            }
}

void check_4d(const Tensor& x, const char* who) {
    if (x.ndim() != 4) throw std::invalid_argument(std::string(who) + ": want (N,C,H,W), got " + x.shape_str());
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::string name, long in_ch, long out_ch, long kernel, long stride, long pad)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      w_(name + ".weight", {out_ch, in_ch, kernel, kernel}),
      b_(name + ".bias", {out_ch}) {}

Tensor Conv2d::forward(const Tensor& x, bool) {
    check_4d(x, "Conv2d");
    if (x.dim(1) != in_ch_) throw std::invalid_argument("Conv2d: channel mismatch " + x.shape_str());
    const long n = x.dim(0), h = x.dim(2), w = x.dim(3);
    oh_ = (h + 2 * pad_ - k_) / stride_ + 1;
    ow_ = (w + 2 * pad_ - k_) / stride_ + 1;
    if (oh_ <= 0 || ow_ <= 0) throw std::invalid_argument("Conv2d: output would be empty");
    in_shape_ = x.shape();
    const long rows = n * oh_ * ow_, ck2 = in_ch_ * k_ * k_;
    col_ = Tensor({rows, ck2});
    im2col(x, k_, stride_, pad_, oh_, ow_, col_);

    MapConst cm(col_.data(), rows, ck2);
    MapConst wm(w_.value.data(), out_ch_, ck2);
    RowMat out_mat = cm * wm.transpose();  // (rows, out_ch)

    Tensor out({n, out_ch_, oh_, ow_});
    for (long i = 0; i < n; ++i)
        for (long co = 0; co < out_ch_; ++co) {
            const double bias = b_.value[co];
            for (long gy = 0; gy < oh_; ++gy)
                for (long gx = 0; gx < ow_; ++gx)
                    out.at(i, co, gy, gx) = out_mat((i * oh_ + gy) * ow_ + gx, co) + bias;
        }
    return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    const long n = in_shape_[0];
    const long rows = n * oh_ * ow_, ck2 = in_ch_ * k_ * k_;
    RowMat gm(rows, out_ch_);
    for (long i = 0; i < n; ++i)
        for (long co = 0; co < out_ch_; ++co)
            for (long gy = 0; gy < oh_; ++gy)
                for (long gx = 0; gx < ow_; ++gx)
                    gm((i * oh_ + gy) * ow_ + gx, co) = grad_out.at(i, co, gy, gx);

    MapConst cm(col_.data(), rows, ck2);
    MapMat dw(w_.grad.data(), out_ch_, ck2);
    dw.noalias() += gm.transpose() * cm;
    for (long co = 0; co < out_ch_; ++co) b_.grad[co] += gm.col(co).sum();

    MapConst wm(w_.value.data(), out_ch_, ck2);
    RowMat dcol = gm * wm;  // (rows, ck2)
    Tensor dcol_t({rows, ck2});
    MapMat(dcol_t.data(), rows, ck2) = dcol;
    Tensor dx(in_shape_);
    col2im(dcol_t, k_, stride_, pad_, oh_, ow_, dx);
    return dx;
}

void Conv2d::collect_params(std::vector<ParamTensor*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
}

// ---------------------------------------------------------------------------
// ConvTranspose2d
// ---------------------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(std::string name, long in_ch, long out_ch, long kernel,
                                 long stride, long pad)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      w_(name + ".weight", {in_ch, out_ch, kernel, kernel}),
      b_(name + ".bias", {out_ch}) {}

Tensor ConvTranspose2d::forward(const Tensor& x, bool) {
    check_4d(x, "ConvTranspose2d");
    if (x.dim(1) != in_ch_) throw std::invalid_argument("ConvTranspose2d: channel mismatch");
    const long n = x.dim(0), ih = x.dim(2), iw = x.dim(3);
    oh_ = (ih - 1) * stride_ - 2 * pad_ + k_;
    ow_ = (iw - 1) * stride_ - 2 * pad_ + k_;
    if (oh_ <= 0 || ow_ <= 0) throw std::invalid_argument("ConvTranspose2d: output would be empty");
    in_shape_ = x.shape();

    const long rows = n * ih * iw, ck2 = out_ch_ * k_ * k_;
    x_mat_ = Tensor({rows, in_ch_});
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < in_ch_; ++c)
            for (long gy = 0; gy < ih; ++gy)
                for (long gx = 0; gx < iw; ++gx)
                    x_mat_.at((i * ih + gy) * iw + gx, c) = x.at(i, c, gy, gx);

    MapConst xm(x_mat_.data(), rows, in_ch_);
    MapConst wm(w_.value.data(), in_ch_, ck2);
    Tensor cols({rows, ck2});
    MapMat(cols.data(), rows, ck2).noalias() = xm * wm;

    Tensor out({n, out_ch_, oh_, ow_});
    col2im(cols, k_, stride_, pad_, ih, iw, out);
    for (long i = 0; i < n; ++i)
        for (long co = 0; co < out_ch_; ++co) {
            const double bias = b_.value[co];
            for (long y = 0; y < oh_; ++y)
                for (long xx = 0; xx < ow_; ++xx) out.at(i, co, y, xx) += bias;
        }
    return out;
}

Tensor ConvTranspose2d::backward(const Tensor& grad_out) {
    const long n = in_shape_[0], ih = in_shape_[2], iw = in_shape_[3];
    const long rows = n * ih * iw, ck2 = out_ch_ * k_ * k_;

    Tensor gcols({rows, ck2});
    im2col(grad_out, k_, stride_, pad_, ih, iw, gcols);

    MapConst gm(gcols.data(), rows, ck2);
    MapConst xm(x_mat_.data(), rows, in_ch_);
    MapMat dw(w_.grad.data(), in_ch_, ck2);
    dw.noalias() += xm.transpose() * gm;

    for (long co = 0; co < out_ch_; ++co) {
        double s = 0;
        for (long i = 0; i < n; ++i)
            for (long y = 0; y < oh_; ++y)
                for (long xx = 0; xx < ow_; ++xx) s += grad_out.at(i, co, y, xx);
        b_.grad[co] += s;
    }

    MapConst wm(w_.value.data(), in_ch_, ck2);
    RowMat dxm = gm * wm.transpose();  // (rows, in_ch)
    Tensor dx(in_shape_);
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < in_ch_; ++c)
            for (long gy = 0; gy < ih; ++gy)
                for (long gx = 0; gx < iw; ++gx)
                    dx.at(i, c, gy, gx) = dxm((i * ih + gy) * iw + gx, c);
    return dx;
}

void ConvTranspose2d::collect_params(std::vector<ParamTensor*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(std::string name, long channels, double eps, double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gamma_(name + ".gamma", {channels}),
      beta_(name + ".beta", {channels}),
      running_mean_(name + ".running_mean", {channels}),
      running_var_(name + ".running_var", {channels}) {
    gamma_.value.fill(1.0);
    running_var_.value.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
    check_4d(x, "BatchNorm2d");
    if (x.dim(1) != channels_) throw std::invalid_argument("BatchNorm2d: channel mismatch");
    const long n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const long m = n * h * w;
    in_shape_ = x.shape();
    invstd_.assign(static_cast<size_t>(channels_), 0.0);
    xhat_ = Tensor(x.shape());
    Tensor out(x.shape());

    for (long c = 0; c < channels_; ++c) {
        double mean, var;
        if (training) {
            double s = 0;
            for (long i = 0; i < n; ++i)
                for (long y = 0; y < h; ++y)
                    for (long xx = 0; xx < w; ++xx) s += x.at(i, c, y, xx);
            mean = s / static_cast<double>(m);
            double sq = 0;
            for (long i = 0; i < n; ++i)
                for (long y = 0; y < h; ++y)
                    for (long xx = 0; xx < w; ++xx) {
                        const double d = x.at(i, c, y, xx) - mean;
                        sq += d * d;
                    }
            var = sq / static_cast<double>(m);
            const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
            running_mean_.value[c] = (1 - momentum_) * running_mean_.value[c] + momentum_ * mean;
            running_var_.value[c] = (1 - momentum_) * running_var_.value[c] + momentum_ * unbiased;
        } else {
            mean = running_mean_.value[c];
            var = running_var_.value[c];
        }
        const double inv = 1.0 / std::sqrt(var + eps_);
        invstd_[static_cast<size_t>(c)] = inv;
        const double g = gamma_.value[c], b = beta_.value[c];
        for (long i = 0; i < n; ++i)
            for (long y = 0; y < h; ++y)
                for (long xx = 0; xx < w; ++xx) {
                    const double xh = (x.at(i, c, y, xx) - mean) * inv;
                    xhat_.at(i, c, y, xx) = xh;
                    out.at(i, c, y, xx) = g * xh + b;
                }
    }
    training_mode_cache_ = training;
    return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
    const long n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
    const long m = n * h * w;
    Tensor dx(in_shape_);
    for (long c = 0; c < channels_; ++c) {
        const double g = gamma_.value[c];
        const double inv = invstd_[static_cast<size_t>(c)];
        double sum_g = 0, sum_gx = 0;
        for (long i = 0; i < n; ++i)
            for (long y = 0; y < h; ++y)
                for (long xx = 0; xx < w; ++xx) {
                    const double go = grad_out.at(i, c, y, xx);
                    sum_g += go;
                    sum_gx += go * xhat_.at(i, c, y, xx);
                }
        gamma_.grad[c] += sum_gx;
        beta_.grad[c] += sum_g;
        if (training_mode_cache_) {
            const double scale = g * inv / static_cast<double>(m);
            for (long i = 0; i < n; ++i)
                for (long y = 0; y < h; ++y)
                    for (long xx = 0; xx < w; ++xx) {
                        const double go = grad_out.at(i, c, y, xx);
                        dx.at(i, c, y, xx) =
                            scale * (m * go - sum_g - xhat_.at(i, c, y, xx) * sum_gx);
                    }
        } else {
            // Eval mode: stats are constants.
            for (long i = 0; i < n; ++i)
                for (long y = 0; y < h; ++y)
                    for (long xx = 0; xx < w; ++xx)
                        dx.at(i, c, y, xx) = grad_out.at(i, c, y, xx) * g * inv;
        }
    }
    return dx;
}

void BatchNorm2d::collect_params(std::vector<ParamTensor*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
}

void BatchNorm2d::collect_buffers(std::vector<ParamTensor*>& out) {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

Tensor LeakyReLU::forward(const Tensor& x, bool) {
    input_ = x;
    Tensor out(x.shape());
    for (long i = 0; i < x.numel(); ++i) out[i] = x[i] > 0 ? x[i] : alpha_ * x[i];
    return out;
}

Tensor LeakyReLU::backward(const Tensor& grad_out) {
    Tensor dx(input_.shape());
    for (long i = 0; i < dx.numel(); ++i) dx[i] = grad_out[i] * (input_[i] > 0 ? 1.0 : alpha_);
    return dx;
}

Tensor ReLU::forward(const Tensor& x, bool) {
    input_ = x;
    Tensor out(x.shape());
    for (long i = 0; i < x.numel(); ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
    return out;
}

Tensor ReLU::backward(const Tensor& grad_out) {
    Tensor dx(input_.shape());
    for (long i = 0; i < dx.numel(); ++i) dx[i] = input_[i] > 0 ? grad_out[i] : 0.0;
    return dx;
}

Tensor Tanh::forward(const Tensor& x, bool) {
    output_ = Tensor(x.shape());
    for (long i = 0; i < x.numel(); ++i) output_[i] = std::tanh(x[i]);
    return output_;
}

Tensor Tanh::backward(const Tensor& grad_out) {
    Tensor dx(output_.shape());
    for (long i = 0; i < dx.numel(); ++i) dx[i] = grad_out[i] * (1.0 - output_[i] * output_[i]);
    return dx;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(std::string name, long in_features, long out_features)
    : in_f_(in_features),
      out_f_(out_features),
      w_(name + ".weight", {out_features, in_features}),
      b_(name + ".bias", {out_features}) {}

Tensor Linear::forward(const Tensor& x, bool) {
    if (x.ndim() != 2 || x.dim(1) != in_f_)
        throw std::invalid_argument("Linear: want (N," + std::to_string(in_f_) + "), got " + x.shape_str());
    input_ = x;
    const long n = x.dim(0);
    Tensor out({n, out_f_});
    MapConst xm(x.data(), n, in_f_);
    MapConst wm(w_.value.data(), out_f_, in_f_);
    MapMat om(out.data(), n, out_f_);
    om.noalias() = xm * wm.transpose();
    for (long i = 0; i < n; ++i)
        for (long o = 0; o < out_f_; ++o) out.at(i, o) += b_.value[o];
    return out;
}

Tensor Linear::backward(const Tensor& grad_out) {
    const long n = input_.dim(0);
    MapConst gm(grad_out.data(), n, out_f_);
    MapConst xm(input_.data(), n, in_f_);
    MapMat dw(w_.grad.data(), out_f_, in_f_);
    dw.noalias() += gm.transpose() * xm;
    for (long o = 0; o < out_f_; ++o) b_.grad[o] += gm.col(o).sum();

    MapConst wm(w_.value.data(), out_f_, in_f_);
    Tensor dx({n, in_f_});
    MapMat(dx.data(), n, in_f_).noalias() = gm * wm;
    return dx;
}

void Linear::collect_params(std::vector<ParamTensor*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
}

// ---------------------------------------------------------------------------
// Shape utilities
// ---------------------------------------------------------------------------

Tensor Flatten::forward(const Tensor& x, bool) {
    check_4d(x, "Flatten");
    in_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
}

Tensor Flatten::backward(const Tensor& grad_out) { return grad_out.reshaped(in_shape_); }

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
    check_4d(x, "GlobalAvgPool");
    in_shape_ = x.shape();
    const long n = x.dim(0), c_n = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out({n, c_n});
    const double inv = 1.0 / static_cast<double>(h * w);
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < c_n; ++c) {
            double s = 0;
            for (long y = 0; y < h; ++y)
                for (long xx = 0; xx < w; ++xx) s += x.at(i, c, y, xx);
            out.at(i, c) = s * inv;
        }
    return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
    const long n = in_shape_[0], c_n = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    Tensor dx(in_shape_);
    const double inv = 1.0 / static_cast<double>(h * w);
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < c_n; ++c) {
            const double g = grad_out.at(i, c) * inv;
            for (long y = 0; y < h; ++y)
                for (long xx = 0; xx < w; ++xx) dx.at(i, c, y, xx) = g;
        }
    return dx;
}

// ---------------------------------------------------------------------------
// Sequential
// ---------------------------------------------------------------------------

Sequential& Sequential::add(std::unique_ptr<Module> m) {
    modules_.push_back(std::move(m));
    return *this;
}

Tensor Sequential::forward(const Tensor& x, bool training) {
    Tensor h = x;
    for (auto& m : modules_) h = m->forward(h, training);
    return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (auto it = modules_.rbegin(); it != modules_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

void Sequential::collect_params(std::vector<ParamTensor*>& out) {
    for (auto& m : modules_) m->collect_params(out);
}

void Sequential::collect_buffers(std::vector<ParamTensor*>& out) {
    for (auto& m : modules_) m->collect_buffers(out);
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

void init_parameters(const std::vector<ParamTensor*>& params,
                     const std::vector<ParamTensor*>& buffers, Rng& rng) {
    for (ParamTensor* p : params) {
        if (p->name.ends_with(".weight")) {
            for (long i = 0; i < p->value.numel(); ++i) p->value[i] = rng.normal(0.0, 0.02);
        } else if (p->name.ends_with(".gamma")) {
            for (long i = 0; i < p->value.numel(); ++i) p->value[i] = rng.normal(1.0, 0.02);
        } else if (p->name.ends_with(".bias") || p->name.ends_with(".beta")) {
            p->value.zero();
        } else {
            throw std::runtime_error("init_parameters: unknown parameter kind: " + p->name);
        }
        p->grad.zero();
    }
    for (ParamTensor* b : buffers) {
        if (b->name.ends_with(".running_mean")) {
            b->value.zero();
        } else if (b->name.ends_with(".running_var")) {
            b->value.fill(1.0);
        } else {
            throw std::runtime_error("init_parameters: unknown buffer kind: " + b->name);
        }
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<ParamTensor*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (ParamTensor* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::zero_grad() {
    for (ParamTensor* p : params_) p->grad.zero();
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i]->value;
        const Tensor& g = params_[i]->grad;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (long j = 0; j < p.numel(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

std::uint64_t parameter_hash(const std::vector<ParamTensor*>& params) {
    std::uint64_t h = 1469598103934665603ull;
    for (const ParamTensor* p : params) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
        const size_t n = sizeof(double) * static_cast<size_t>(p->value.numel());
        for (size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace degan
