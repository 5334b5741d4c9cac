#pragma once

#include <deque>
#include <functional>
#include <vector>

namespace volcast::deepnet {

/// Dense row-major value holder with an optional gradient slot of the same
/// shape. Activations use {batch, channels, time}; parameters use whatever
/// shape fits them.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty unless requires_grad

    Tensor() = default;
    explicit Tensor(std::vector<int> s, bool requires_grad = false);

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] bool requires_grad() const { return !grad.empty(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
    void enable_grad();
};

/// Reverse-mode tape: ops append a backward closure as they run forward;
/// backward() replays them last to first. Intermediate tensors live in the
/// tape's arena so closures can keep plain pointers.
class Tape {
public:
    Tensor& alloc(std::vector<int> shape, bool requires_grad = true);
    void record(std::function<void()> backward_step) { steps_.push_back(std::move(backward_step)); }
    /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded gradient.
    void backward(Tensor& scalar_loss);

private:
    std::deque<Tensor> arena_;
    std::vector<std::function<void()>> steps_;
};

namespace ops {

/// Left-zero-padded dilated causal convolution.
/// x: {B, C_in, T}, kernel: {C_out, C_in, s}, bias: {C_out} -> {B, C_out, T}
/// y[b,o,t] = bias[o] + sum_{tau, c} kernel[o,c,tau] * x[b,c,t - d*tau]
Tensor& dilated_causal_conv(Tape& tape, Tensor& x, Tensor& kernel, Tensor& bias, int dilation);

Tensor& relu(Tape& tape, Tensor& x);

/// Elementwise sum of two same-shape tensors (residual connection).
Tensor& add(Tape& tape, Tensor& a, Tensor& b);

/// Affine readout of the last time step: {B, C, T} x {C} -> {B}.
Tensor& last_step_affine(Tape& tape, Tensor& x, Tensor& weight, Tensor& bias_scalar);

/// raw[b] = alpha[0] + sum_l alpha[l] * relu(readouts[l-1][b])
///          (+ sum_i fusion_w[i] * fusion_in[b,i] when fusion is given)
Tensor& weighted_head(Tape& tape, const std::vector<Tensor*>& readouts, Tensor& alpha, Tensor* fusion_w,
                      Tensor* fusion_in);

/// softplus(x) + floor, elementwise; keeps forecasts strictly positive.
Tensor& softplus_floor(Tape& tape, Tensor& x, double floor);

/// mean_b [ ln f[b] + target[b] / f[b] ]  (f must be positive)
Tensor& qlike_loss(Tape& tape, Tensor& forecast, const std::vector<double>& target);

/// sqrt(mean_b (target[b] - f[b])^2)
Tensor& rmse_loss(Tape& tape, Tensor& forecast, const std::vector<double>& target);

}  // namespace ops

/// Plain direct-summation convolution used as the test oracle and by the
/// gradient-free forward path.
void dilated_conv_forward(const double* x, int batch, int in_channels, int time, const double* kernel,
                          int out_channels, int width, const double* bias, int dilation, double* y);

double softplus(double x);
double sigmoid(double x);

}  // namespace volcast::deepnet
