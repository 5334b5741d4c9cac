#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "volcast/common.hpp"
#include "volcast/marketdata.hpp"
#include "volcast/tensor.hpp"

namespace volcast::deepnet {

enum class LossKind { qlike, rmse };
std::string to_string(LossKind);
LossKind loss_kind_from_string(const std::string&);

/// Training recipe; layers == 0 derives the smallest doubling-dilation stack
/// whose receptive field covers the input window.
struct TrainConfig {
    int receptive_days = 1;   // window length in days (T)
    int granularity = 5;      // minutes
    double learning_rate = 1e-3;
    int batch_size = 64;
    int max_epochs = 200;
    int patience = 10;
    double validation_fraction = 0.2;
    std::uint64_t seed = 1;
    LossKind loss = LossKind::qlike;
    int channels = 8;
    int kernel_width = 2;     // s
    int layers = 0;           // L; 0 = derived from the input length
    bool fusion = false;      // DeepVol + RV variant

    void validate() const;
};

/// Static geometry of a built network.
struct NetworkConfig {
    int input_length = 0;     // N = T * J
    int channels = 8;
    int kernel_width = 2;
    int layers = 0;
    int receptive_days = 1;
    int granularity = 5;
    int fusion_dim = 0;       // 0 = plain DeepVol
    LossKind loss = LossKind::qlike;
};

/// Number of input steps a doubling-dilation stack can see:
/// (s-1) * (2^L - 1) + 1.
int receptive_field_steps(int layers, int kernel_width);
/// Smallest L with receptive_field_steps(L, s) >= input_length.
int derive_layers(int input_length, int kernel_width);

struct ConvLayer {
    Tensor kernel;  // {out_channels, in_channels, s}
    Tensor bias;    // {out_channels}
    int dilation = 1;
};

/// The DeepVol forecaster: a stack of dilated causal convolutions with
/// identity residuals where channel counts match, one affine readout of the
/// last time step per layer, and the alpha-weighted ReLU aggregation head.
/// Output positivity comes from a softplus plus a small floor.
class Network {
public:
    static constexpr double kOutputFloor = 1e-6;

    Network() = default;
    /// Builds with deterministic random initialization from the seed.
    /// initial_mean seeds alpha_0 so the untrained output is a sane constant.
    static Network build(const NetworkConfig& config, std::uint64_t seed, double initial_mean);

    [[nodiscard]] const NetworkConfig& config() const { return cfg_; }

    /// Gradient-free forward pass over one window (length N), plus the
    /// lagged-RV vector for the fusion variant.
    [[nodiscard]] double forward(const std::vector<double>& window, const std::vector<double>& rv_aux = {}) const;

    /// Taped forward over a batch laid out as {B, 1, N}; exposed for the
    /// training loop and the gradient check.
    Tensor& forward_batch(Tape& tape, Tensor& input, Tensor* fusion_input) const;

    /// Batch loss with gradients accumulated into every parameter slot.
    double backward_batch(const std::vector<const double*>& windows, const std::vector<const double*>& rv_aux,
                          const std::vector<double>& targets, LossKind loss);

    std::vector<Tensor*> parameters();
    [[nodiscard]] std::vector<const Tensor*> parameters() const;
    void zero_grad();

    std::vector<ConvLayer> layers;
    std::vector<Tensor> readout_w;  // per layer {channels}
    std::vector<Tensor> readout_b;  // per layer {1}
    Tensor alpha;                   // {L+1}
    Tensor fusion_w;                // {fusion_dim} when fusion_dim > 0

private:
    NetworkConfig cfg_;
};

/// One supervised sample: a window of past intraday returns and the next
/// day's realised variance.
struct Sample {
    std::string ticker;
    Date target_date;
    std::vector<double> window;   // T*J values, oldest first
    std::vector<double> rv_aux;   // T lagged RVs (fusion variant), oldest first
    double target_rv = 0.0;
};

/// Builds samples whose target dates fall in [first_date, last_date]; a
/// target needs its own panel cell plus the T preceding days all present.
std::vector<Sample> build_samples(const marketdata::Panel& panel, const std::vector<std::string>& tickers,
                                  Date first_date, Date last_date, const TrainConfig& config);

struct TrainHistory {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;    // per epoch, index 0 = before training
    int best_epoch = 0;
    bool diverged = false;
};

struct TrainResult {
    Network network;
    TrainHistory history;
};

/// Thrown when the loss goes non-finite; carries the history so far.
struct TrainDivergence : std::runtime_error {
    explicit TrainDivergence(TrainHistory h)
        : std::runtime_error("training diverged: non-finite loss"), history(std::move(h)) {}
    TrainHistory history;
};

/// ADAM (beta1 0.9, beta2 0.999, eps 1e-8) over shuffled minibatches with a
/// chronological validation split (the last `validation_fraction` of target
/// dates) and early stopping that restores the best-validation parameters.
/// Deterministic for a fixed seed.
TrainResult train(const std::vector<Sample>& samples, const TrainConfig& config);

/// Forecast for the panel date right after `anchor_date`, built from the T
/// days ending at anchor_date. Returns nothing when the window or the target
/// cell is unavailable.
std::optional<ForecastRecord> predict(const Network& net, const marketdata::Panel& panel,
                                      const std::string& ticker, Date anchor_date);

/// Network JSON persistence, schema "volcast_net_v1".
void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

}  // namespace volcast::deepnet
