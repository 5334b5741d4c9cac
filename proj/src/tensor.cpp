#include "volcast/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace volcast::deepnet {

namespace {

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> s, bool requires_grad) : shape(std::move(s)) {
    data.assign(shape_size(shape), 0.0);
    if (requires_grad) grad.assign(data.size(), 0.0);
}

void Tensor::enable_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

Tensor& Tape::alloc(std::vector<int> shape, bool requires_grad) {
    arena_.emplace_back(std::move(shape), requires_grad);
    return arena_.back();
}

void Tape::backward(Tensor& scalar_loss) {
    if (scalar_loss.size() != 1) throw std::invalid_argument("backward expects a scalar loss");
    if (!scalar_loss.requires_grad()) throw std::invalid_argument("loss tensor has no gradient slot");
    scalar_loss.grad[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void dilated_conv_forward(const double* x, int batch, int in_channels, int time, const double* kernel,
                          int out_channels, int width, const double* bias, int dilation, double* y) {
    for (int b = 0; b < batch; ++b) {
        const double* xb = x + static_cast<std::ptrdiff_t>(b) * in_channels * time;
        double* yb = y + static_cast<std::ptrdiff_t>(b) * out_channels * time;
        for (int o = 0; o < out_channels; ++o) {
            double* yrow = yb + static_cast<std::ptrdiff_t>(o) * time;
            for (int t = 0; t < time; ++t) yrow[t] = bias[o];
            for (int c = 0; c < in_channels; ++c) {
                const double* xrow = xb + static_cast<std::ptrdiff_t>(c) * time;
                const double* krow = kernel + (static_cast<std::ptrdiff_t>(o) * in_channels + c) * width;
                for (int tau = 0; tau < width; ++tau) {
                    const double k = krow[tau];
                    if (k == 0.0) continue;
                    const int shift = dilation * tau;
                    for (int t = shift; t < time; ++t) yrow[t] += k * xrow[t - shift];
                }
            }
        }
    }
}

namespace ops {

Tensor& dilated_causal_conv(Tape& tape, Tensor& x, Tensor& kernel, Tensor& bias, int dilation) {
    if (x.shape.size() != 3 || kernel.shape.size() != 3 || bias.shape.size() != 1) {
        throw std::invalid_argument("dilated_causal_conv: expected x{B,C,T}, kernel{O,C,s}, bias{O}");
    }
    const int batch = x.shape[0], in_c = x.shape[1], time = x.shape[2];
    const int out_c = kernel.shape[0], width = kernel.shape[2];
    if (kernel.shape[1] != in_c) {
        throw std::invalid_argument("dilated_causal_conv: kernel input channels (" +
                                    std::to_string(kernel.shape[1]) + ") do not match input (" +
                                    std::to_string(in_c) + ")");
    }
    if (bias.shape[0] != out_c) throw std::invalid_argument("dilated_causal_conv: bias size mismatch");
    if (dilation < 1) throw std::invalid_argument("dilated_causal_conv: dilation must be >= 1");

    Tensor& y = tape.alloc({batch, out_c, time});
    dilated_conv_forward(x.data.data(), batch, in_c, time, kernel.data.data(), out_c, width, bias.data.data(),
                         dilation, y.data.data());

    tape.record([&x, &kernel, &bias, &y, batch, in_c, out_c, time, width, dilation] {
        for (int b = 0; b < batch; ++b) {
            const double* gy = y.grad.data() + static_cast<std::ptrdiff_t>(b) * out_c * time;
            const double* xb = x.data.data() + static_cast<std::ptrdiff_t>(b) * in_c * time;
            double* gx = x.requires_grad() ? x.grad.data() + static_cast<std::ptrdiff_t>(b) * in_c * time : nullptr;
            for (int o = 0; o < out_c; ++o) {
                const double* gyrow = gy + static_cast<std::ptrdiff_t>(o) * time;
                if (bias.requires_grad()) {
                    double acc = 0.0;
                    for (int t = 0; t < time; ++t) acc += gyrow[t];
                    bias.grad[static_cast<std::size_t>(o)] += acc;
                }
                for (int c = 0; c < in_c; ++c) {
                    const double* xrow = xb + static_cast<std::ptrdiff_t>(c) * time;
                    const std::ptrdiff_t kbase = (static_cast<std::ptrdiff_t>(o) * in_c + c) * width;
                    for (int tau = 0; tau < width; ++tau) {
                        const int shift = dilation * tau;
                        if (kernel.requires_grad()) {
                            double acc = 0.0;
                            for (int t = shift; t < time; ++t) acc += gyrow[t] * xrow[t - shift];
                            kernel.grad[static_cast<std::size_t>(kbase + tau)] += acc;
                        }
                        if (gx) {
                            const double k = kernel.data[static_cast<std::size_t>(kbase + tau)];
                            if (k != 0.0) {
                                double* gxrow = gx + static_cast<std::ptrdiff_t>(c) * time;
                                for (int t = shift; t < time; ++t) gxrow[t - shift] += k * gyrow[t];
                            }
                        }
                    }
                }
            }
        }
    });
    return y;
}

Tensor& relu(Tape& tape, Tensor& x) {
    Tensor& y = tape.alloc(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
    tape.record([&x, &y] {
        if (!x.requires_grad()) return;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x.data[i] > 0.0) x.grad[i] += y.grad[i];
        }
    });
    return y;
}

Tensor& add(Tape& tape, Tensor& a, Tensor& b) {
    if (a.shape != b.shape) throw std::invalid_argument("add: shape mismatch");
    Tensor& y = tape.alloc(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) y.data[i] = a.data[i] + b.data[i];
    tape.record([&a, &b, &y] {
        if (a.requires_grad())
            for (std::size_t i = 0; i < a.size(); ++i) a.grad[i] += y.grad[i];
        if (b.requires_grad())
            for (std::size_t i = 0; i < b.size(); ++i) b.grad[i] += y.grad[i];
    });
    return y;
}

Tensor& last_step_affine(Tape& tape, Tensor& x, Tensor& weight, Tensor& bias_scalar) {
    if (x.shape.size() != 3) throw std::invalid_argument("last_step_affine: expected {B,C,T} input");
    const int batch = x.shape[0], channels = x.shape[1], time = x.shape[2];
    if (weight.shape != std::vector<int>{channels} || bias_scalar.size() != 1) {
        throw std::invalid_argument("last_step_affine: weight/bias shape mismatch");
    }
    Tensor& y = tape.alloc({batch});
    for (int b = 0; b < batch; ++b) {
        const double* xb = x.data.data() + (static_cast<std::ptrdiff_t>(b) * channels + 0) * time;
        double acc = bias_scalar.data[0];
        for (int c = 0; c < channels; ++c) acc += weight.data[static_cast<std::size_t>(c)] * xb[c * time + time - 1];
        y.data[static_cast<std::size_t>(b)] = acc;
    }
    tape.record([&x, &weight, &bias_scalar, &y, batch, channels, time] {
        for (int b = 0; b < batch; ++b) {
            const double g = y.grad[static_cast<std::size_t>(b)];
            if (g == 0.0) continue;
            const double* xb = x.data.data() + static_cast<std::ptrdiff_t>(b) * channels * time;
            if (bias_scalar.requires_grad()) bias_scalar.grad[0] += g;
            for (int c = 0; c < channels; ++c) {
                const std::size_t xi = static_cast<std::size_t>(c) * time + time - 1;
                if (weight.requires_grad()) weight.grad[static_cast<std::size_t>(c)] += g * xb[xi];
                if (x.requires_grad())
                    x.grad[static_cast<std::ptrdiff_t>(b) * channels * time + xi] +=
                        g * weight.data[static_cast<std::size_t>(c)];
            }
        }
    });
    return y;
}

Tensor& weighted_head(Tape& tape, const std::vector<Tensor*>& readouts, Tensor& alpha, Tensor* fusion_w,
                      Tensor* fusion_in) {
    if (readouts.empty()) throw std::invalid_argument("weighted_head: no readouts");
    const int batch = readouts.front()->shape.at(0);
    const std::size_t layers = readouts.size();
    if (alpha.size() != layers + 1) throw std::invalid_argument("weighted_head: alpha must have L+1 entries");
    const int fusion_dim = fusion_w ? fusion_w->shape.at(0) : 0;
    if (fusion_w && (!fusion_in || fusion_in->shape != std::vector<int>{batch, fusion_dim})) {
        throw std::invalid_argument("weighted_head: fusion input must be {B, fusion_dim}");
    }

    Tensor& y = tape.alloc({batch});
    for (int b = 0; b < batch; ++b) {
        double acc = alpha.data[0];
        for (std::size_t l = 0; l < layers; ++l) {
            const double r = readouts[l]->data[static_cast<std::size_t>(b)];
            acc += alpha.data[l + 1] * (r > 0.0 ? r : 0.0);
        }
        if (fusion_w) {
            for (int i = 0; i < fusion_dim; ++i) {
                acc += fusion_w->data[static_cast<std::size_t>(i)] *
                       fusion_in->data[static_cast<std::size_t>(b) * fusion_dim + i];
            }
        }
        y.data[static_cast<std::size_t>(b)] = acc;
    }
    tape.record([readouts, &alpha, fusion_w, fusion_in, &y, batch, layers, fusion_dim] {
        for (int b = 0; b < batch; ++b) {
            const double g = y.grad[static_cast<std::size_t>(b)];
            if (g == 0.0) continue;
            if (alpha.requires_grad()) alpha.grad[0] += g;
            for (std::size_t l = 0; l < layers; ++l) {
                const double r = readouts[l]->data[static_cast<std::size_t>(b)];
                const double relu_r = r > 0.0 ? r : 0.0;
                if (alpha.requires_grad()) alpha.grad[l + 1] += g * relu_r;
                if (readouts[l]->requires_grad() && r > 0.0) {
                    readouts[l]->grad[static_cast<std::size_t>(b)] += g * alpha.data[l + 1];
                }
            }
            if (fusion_w) {
                for (int i = 0; i < fusion_dim; ++i) {
                    const std::size_t xi = static_cast<std::size_t>(b) * fusion_dim + i;
                    if (fusion_w->requires_grad()) fusion_w->grad[static_cast<std::size_t>(i)] += g * fusion_in->data[xi];
                    if (fusion_in->requires_grad())
                        fusion_in->grad[xi] += g * fusion_w->data[static_cast<std::size_t>(i)];
                }
            }
        }
    });
    return y;
}

Tensor& softplus_floor(Tape& tape, Tensor& x, double floor) {
    Tensor& y = tape.alloc(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = softplus(x.data[i]) + floor;
    tape.record([&x, &y] {
        if (!x.requires_grad()) return;
        for (std::size_t i = 0; i < x.size(); ++i) x.grad[i] += y.grad[i] * sigmoid(x.data[i]);
    });
    return y;
}

Tensor& qlike_loss(Tape& tape, Tensor& forecast, const std::vector<double>& target) {
    if (forecast.size() != target.size()) throw std::invalid_argument("qlike_loss: size mismatch");
    const double n = static_cast<double>(target.size());
    Tensor& loss = tape.alloc({1});
    double acc = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (!(forecast.data[i] > 0.0)) throw std::invalid_argument("qlike_loss: non-positive forecast");
        if (target[i] < 0.0) throw std::invalid_argument("qlike_loss: negative proxy");
        acc += std::log(forecast.data[i]) + target[i] / forecast.data[i];
    }
    loss.data[0] = acc / n;
    tape.record([&forecast, target, &loss, n] {
        if (!forecast.requires_grad()) return;
        const double g = loss.grad[0] / n;
        for (std::size_t i = 0; i < target.size(); ++i) {
            const double f = forecast.data[i];
            forecast.grad[i] += g * (1.0 / f - target[i] / (f * f));
        }
    });
    return loss;
}

Tensor& rmse_loss(Tape& tape, Tensor& forecast, const std::vector<double>& target) {
    if (forecast.size() != target.size()) throw std::invalid_argument("rmse_loss: size mismatch");
    const double n = static_cast<double>(target.size());
    Tensor& loss = tape.alloc({1});
    double acc = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double e = target[i] - forecast.data[i];
        acc += e * e;
    }
    loss.data[0] = std::sqrt(acc / n);
    tape.record([&forecast, target, &loss, n] {
        if (!forecast.requires_grad()) return;
        const double denom = std::max(loss.data[0], 1e-12);
        const double g = loss.grad[0] / (n * denom);
        for (std::size_t i = 0; i < target.size(); ++i) {
            forecast.grad[i] += g * (forecast.data[i] - target[i]);
        }
    });
    return loss;
}

}  // namespace ops

}  // namespace volcast::deepnet
