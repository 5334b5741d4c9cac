#include "volcast/deepnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <utility>

#include <nlohmann/json.hpp>

namespace volcast::deepnet {

using nlohmann::json;

std::string to_string(LossKind kind) { return kind == LossKind::qlike ? "qlike" : "rmse"; }

LossKind loss_kind_from_string(const std::string& name) {
    if (name == "qlike") return LossKind::qlike;
    if (name == "rmse") return LossKind::rmse;
    throw std::invalid_argument("unknown loss kind: '" + name + "'");
}

void TrainConfig::validate() const {
    if (receptive_days < 1) throw std::invalid_argument("receptive_days must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 0.5)) {
        throw std::invalid_argument("validation_fraction must lie in (0, 0.5)");
    }
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
    if (channels < 1) throw std::invalid_argument("channels must be >= 1");
    if (kernel_width < 2) throw std::invalid_argument("kernel_width must be >= 2");
    if (layers < 0) throw std::invalid_argument("layers must be >= 0 (0 = derived)");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
}

int receptive_field_steps(int layers, int kernel_width) {
    return (kernel_width - 1) * ((1 << layers) - 1) + 1;
}

int derive_layers(int input_length, int kernel_width) {
    int layers = 1;
    while (receptive_field_steps(layers, kernel_width) < input_length) ++layers;
    return layers;
}

// ---------------------------------------------------------------------------
// network
// ---------------------------------------------------------------------------

namespace {

double inverse_softplus(double y) {
    // solve softplus(x) = y for y > 0
    if (y > 30.0) return y;
    return std::log(std::expm1(std::max(y, 1e-8)));
}

}  // namespace

Network Network::build(const NetworkConfig& config, std::uint64_t seed, double initial_mean) {
    NetworkConfig cfg = config;
    if (cfg.layers <= 0) cfg.layers = derive_layers(cfg.input_length, cfg.kernel_width);

    Network net;
    net.cfg_ = cfg;
    std::mt19937_64 rng(seed);

    for (int l = 1; l <= cfg.layers; ++l) {
        const int in_c = l == 1 ? 1 : cfg.channels;
        ConvLayer layer;
        layer.dilation = 1 << (l - 1);
        layer.kernel = Tensor({cfg.channels, in_c, cfg.kernel_width}, true);
        layer.bias = Tensor({cfg.channels}, true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_c * cfg.kernel_width));
        std::uniform_real_distribution<double> uniform(-bound, bound);
        for (double& w : layer.kernel.data) w = uniform(rng);
        // zero-mean pre-activations would leave half of every layer dead at
        // the start; a small positive bias keeps the stack's features live
        std::fill(layer.bias.data.begin(), layer.bias.data.end(), 0.05);
        net.layers.push_back(std::move(layer));
    }
    const double readout_bound = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
    for (int l = 0; l < cfg.layers; ++l) {
        Tensor w({cfg.channels}, true);
        std::uniform_real_distribution<double> uniform(-readout_bound, readout_bound);
        for (double& v : w.data) v = uniform(rng);
        net.readout_w.push_back(std::move(w));
        // hidden features are non-negative, so a random-sign readout can start
        // negative on every sample and its head relu never opens; a small
        // positive bias keeps each layer's gate trainable
        Tensor b({1}, true);
        b.data[0] = 0.1;
        net.readout_b.push_back(std::move(b));
    }
    net.alpha = Tensor({cfg.layers + 1}, true);
    // positive layer weights keep the head's relu gates passing gradient at
    // the start of training
    std::uniform_real_distribution<double> alpha_uniform(0.02, 0.12);
    for (double& a : net.alpha.data) a = alpha_uniform(rng);
    // alpha_0 makes the untrained output roughly the target mean
    net.alpha.data[0] = inverse_softplus(std::max(initial_mean - kOutputFloor, 1e-6));
    if (cfg.fusion_dim > 0) net.fusion_w = Tensor({cfg.fusion_dim}, true);
    return net;
}

std::vector<Tensor*> Network::parameters() {
    std::vector<Tensor*> out;
    for (auto& layer : layers) {
        out.push_back(&layer.kernel);
        out.push_back(&layer.bias);
    }
    for (auto& w : readout_w) out.push_back(&w);
    for (auto& b : readout_b) out.push_back(&b);
    out.push_back(&alpha);
    if (cfg_.fusion_dim > 0) out.push_back(&fusion_w);
    return out;
}

std::vector<const Tensor*> Network::parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& t : const_cast<Network*>(this)->parameters()) out.push_back(t);
    return out;
}

void Network::zero_grad() {
    for (Tensor* t : parameters()) t->zero_grad();
}

Tensor& Network::forward_batch(Tape& tape, Tensor& input, Tensor* fusion_input) const {
    if (input.shape.size() != 3 || input.shape[1] != 1 || input.shape[2] != cfg_.input_length) {
        throw std::invalid_argument("forward: input must be {B, 1, " + std::to_string(cfg_.input_length) + "}");
    }
    if ((cfg_.fusion_dim > 0) != (fusion_input != nullptr)) {
        throw std::invalid_argument("forward: fusion input mismatch with the network configuration");
    }
    auto* self = const_cast<Network*>(this);
    Tensor* hidden = &input;
    std::vector<Tensor*> readouts;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& layer = self->layers[l];
        Tensor& conv = ops::dilated_causal_conv(tape, *hidden, layer.kernel, layer.bias, layer.dilation);
        Tensor& activated = ops::relu(tape, conv);
        // identity residual where channel counts match (all but the first layer)
        Tensor& next = hidden->shape[1] == activated.shape[1] ? ops::add(tape, activated, *hidden) : activated;
        hidden = &next;
        readouts.push_back(&ops::last_step_affine(tape, *hidden, self->readout_w[l], self->readout_b[l]));
    }
    Tensor& raw = ops::weighted_head(tape, readouts, self->alpha, cfg_.fusion_dim > 0 ? &self->fusion_w : nullptr,
                                     fusion_input);
    return ops::softplus_floor(tape, raw, kOutputFloor);
}

double Network::forward(const std::vector<double>& window, const std::vector<double>& rv_aux) const {
    if (static_cast<int>(window.size()) != cfg_.input_length) {
        throw std::invalid_argument("forward: window length " + std::to_string(window.size()) +
                                    " does not match the configured input length " +
                                    std::to_string(cfg_.input_length));
    }
    if (cfg_.fusion_dim > 0 && static_cast<int>(rv_aux.size()) != cfg_.fusion_dim) {
        throw std::invalid_argument("forward: rv_aux length must equal the fusion dimension");
    }
    Tape tape;
    Tensor& input = tape.alloc({1, 1, cfg_.input_length}, false);
    std::copy(window.begin(), window.end(), input.data.begin());
    Tensor* fusion_input = nullptr;
    if (cfg_.fusion_dim > 0) {
        fusion_input = &tape.alloc({1, cfg_.fusion_dim}, false);
        std::copy(rv_aux.begin(), rv_aux.end(), fusion_input->data.begin());
    }
    const Tensor& out = forward_batch(tape, input, fusion_input);
    const double value = out.data[0];
    if (!std::isfinite(value)) throw std::runtime_error("forward: non-finite network output");
    return value;
}

double Network::backward_batch(const std::vector<const double*>& windows, const std::vector<const double*>& rv_aux,
                               const std::vector<double>& targets, LossKind loss) {
    const int batch = static_cast<int>(windows.size());
    if (batch == 0) throw std::invalid_argument("backward: empty batch");

    Tape tape;
    Tensor& input = tape.alloc({batch, 1, cfg_.input_length}, false);
    for (int b = 0; b < batch; ++b) {
        std::copy(windows[static_cast<std::size_t>(b)], windows[static_cast<std::size_t>(b)] + cfg_.input_length,
                  input.data.begin() + static_cast<std::ptrdiff_t>(b) * cfg_.input_length);
    }
    Tensor* fusion_input = nullptr;
    if (cfg_.fusion_dim > 0) {
        fusion_input = &tape.alloc({batch, cfg_.fusion_dim}, false);
        for (int b = 0; b < batch; ++b) {
            std::copy(rv_aux[static_cast<std::size_t>(b)], rv_aux[static_cast<std::size_t>(b)] + cfg_.fusion_dim,
                      fusion_input->data.begin() + static_cast<std::ptrdiff_t>(b) * cfg_.fusion_dim);
        }
    }
    Tensor& forecast = forward_batch(tape, input, fusion_input);
    Tensor& loss_tensor = loss == LossKind::qlike ? ops::qlike_loss(tape, forecast, targets)
                                                  : ops::rmse_loss(tape, forecast, targets);
    tape.backward(loss_tensor);
    return loss_tensor.data[0];
}

// ---------------------------------------------------------------------------
// samples and training
// ---------------------------------------------------------------------------

std::vector<Sample> build_samples(const marketdata::Panel& panel, const std::vector<std::string>& tickers,
                                  Date first_date, Date last_date, const TrainConfig& config) {
    config.validate();
    std::vector<Sample> samples;
    const int T = config.receptive_days;
    for (const auto& ticker : tickers) {
        const auto ti = panel.ticker_index(ticker);
        if (!ti) throw std::invalid_argument("build_samples: unknown ticker '" + ticker + "'");
        for (std::size_t di = static_cast<std::size_t>(T); di < panel.dates.size(); ++di) {
            const Date date = panel.dates[di];
            if (date < first_date || date > last_date) continue;
            const auto& target_cell = panel.cell(*ti, di);
            if (!target_cell) continue;
            Sample s;
            s.ticker = ticker;
            s.target_date = date;
            s.target_rv = target_cell->rv;
            bool ok = true;
            for (int k = T; k >= 1; --k) {
                const auto& cell = panel.cell(*ti, di - static_cast<std::size_t>(k));
                if (!cell || !cell->intraday.count(config.granularity)) {
                    ok = false;
                    break;
                }
                const auto& ir = cell->intraday.at(config.granularity);
                s.window.insert(s.window.end(), ir.returns.begin(), ir.returns.end());
                s.rv_aux.push_back(cell->rv);
            }
            if (ok) samples.push_back(std::move(s));
        }
    }
    return samples;
}

namespace {

struct AdamState {
    std::vector<std::vector<double>> m, v;
    long step = 0;
};

void adam_step(std::vector<Tensor*>& params, AdamState& state, double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (state.m.empty()) {
        for (Tensor* p : params) {
            state.m.emplace_back(p->size(), 0.0);
            state.v.emplace_back(p->size(), 0.0);
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double g = p.grad[j];
            state.m[i][j] = beta1 * state.m[i][j] + (1.0 - beta1) * g;
            state.v[i][j] = beta2 * state.v[i][j] + (1.0 - beta2) * g * g;
            p.data[j] -= lr * (state.m[i][j] / bc1) / (std::sqrt(state.v[i][j] / bc2) + eps);
        }
    }
}

double evaluate_loss(const Network& net, const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                     LossKind kind) {
    if (idx.empty()) return 0.0;
    double qlike_acc = 0.0, sq_acc = 0.0;
    for (std::size_t i : idx) {
        const Sample& s = samples[i];
        const double f = net.forward(s.window, s.rv_aux);
        qlike_acc += std::log(f) + s.target_rv / f;
        const double e = s.target_rv - f;
        sq_acc += e * e;
    }
    const double n = static_cast<double>(idx.size());
    return kind == LossKind::qlike ? qlike_acc / n : std::sqrt(sq_acc / n);
}

std::vector<double> snapshot(const std::vector<const Tensor*>& params) {
    std::vector<double> out;
    for (const Tensor* p : params) out.insert(out.end(), p->data.begin(), p->data.end());
    return out;
}

void restore(std::vector<Tensor*>& params, const std::vector<double>& values) {
    std::size_t at = 0;
    for (Tensor* p : params) {
        std::copy(values.begin() + static_cast<std::ptrdiff_t>(at),
                  values.begin() + static_cast<std::ptrdiff_t>(at + p->size()), p->data.begin());
        at += p->size();
    }
}

}  // namespace

TrainResult train(const std::vector<Sample>& samples, const TrainConfig& config) {
    config.validate();
    if (samples.size() < 10) {
        throw std::invalid_argument("train needs at least 10 samples, got " + std::to_string(samples.size()));
    }
    const int J = static_cast<int>(samples.front().window.size()) / config.receptive_days;
    const int N = config.receptive_days * J;
    for (const Sample& s : samples) {
        if (static_cast<int>(s.window.size()) != N) throw std::invalid_argument("train: ragged window lengths");
    }
    if (config.layers > 0 && receptive_field_steps(config.layers, config.kernel_width) < N) {
        throw std::invalid_argument("train: " + std::to_string(config.layers) +
                                    " layers cannot cover an input window of " + std::to_string(N) + " steps");
    }

    // chronological split on distinct target dates
    std::vector<Date> dates;
    for (const Sample& s : samples) dates.push_back(s.target_date);
    std::sort(dates.begin(), dates.end());
    dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
    const auto n_val_dates =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.validation_fraction *
                                                                       static_cast<double>(dates.size()))));
    if (n_val_dates >= dates.size()) throw std::invalid_argument("train: validation split leaves no training dates");
    const Date first_val_date = dates[dates.size() - n_val_dates];

    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        (samples[i].target_date < first_val_date ? train_idx : val_idx).push_back(i);
    }
    if (train_idx.empty() || val_idx.empty()) throw std::invalid_argument("train: empty chronological split");

    double mean_rv = 0.0;
    for (std::size_t i : train_idx) mean_rv += samples[i].target_rv;
    mean_rv /= static_cast<double>(train_idx.size());

    NetworkConfig net_cfg;
    net_cfg.input_length = N;
    net_cfg.channels = config.channels;
    net_cfg.kernel_width = config.kernel_width;
    net_cfg.layers = config.layers;
    net_cfg.receptive_days = config.receptive_days;
    net_cfg.granularity = config.granularity;
    net_cfg.fusion_dim = config.fusion ? config.receptive_days : 0;
    net_cfg.loss = config.loss;

    TrainResult result;
    result.network = Network::build(net_cfg, mix_seed(config.seed, 0x11), mean_rv);
    Network& net = result.network;
    auto params = net.parameters();

    TrainHistory& history = result.history;
    double best_val = evaluate_loss(net, samples, val_idx, config.loss);
    history.val_loss.push_back(best_val);
    std::vector<double> best_params = snapshot(std::as_const(net).parameters());
    history.best_epoch = 0;

    AdamState adam;
    int epochs_since_best = 0;
    std::vector<std::size_t> order = train_idx;
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0x5E0000u + static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(config.batch_size));
            std::vector<const double*> windows, rv_aux;
            std::vector<double> targets;
            for (std::size_t i = at; i < end; ++i) {
                const Sample& s = samples[order[i]];
                windows.push_back(s.window.data());
                rv_aux.push_back(s.rv_aux.data());
                targets.push_back(s.target_rv);
            }
            net.zero_grad();
            const double loss = net.backward_batch(windows, rv_aux, targets, config.loss);
            if (!std::isfinite(loss)) {
                history.diverged = true;
                throw TrainDivergence(history);
            }
            epoch_loss += loss * static_cast<double>(targets.size());
            ++batches;
            adam_step(params, adam, config.learning_rate);
        }
        (void)batches;
        history.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));

        const double val = evaluate_loss(net, samples, val_idx, config.loss);
        history.val_loss.push_back(val);
        if (!std::isfinite(val)) {
            history.diverged = true;
            throw TrainDivergence(history);
        }
        if (val < best_val) {
            best_val = val;
            best_params = snapshot(std::as_const(net).parameters());
            history.best_epoch = epoch;
            epochs_since_best = 0;
        } else if (++epochs_since_best >= config.patience) {
            break;
        }
    }
    restore(params, best_params);
    return result;
}

std::optional<ForecastRecord> predict(const Network& net, const marketdata::Panel& panel,
                                      const std::string& ticker, Date anchor_date) {
    const auto ti = panel.ticker_index(ticker);
    if (!ti) return std::nullopt;
    const auto anchor_idx = panel.date_index(anchor_date);
    if (!anchor_idx) return std::nullopt;
    const int T = net.config().receptive_days;
    if (*anchor_idx + 1 >= panel.dates.size()) return std::nullopt;            // no next day to forecast
    if (static_cast<std::ptrdiff_t>(*anchor_idx) - T + 1 < 0) return std::nullopt;  // window would underflow

    const std::size_t target_idx = *anchor_idx + 1;
    const auto& target_cell = panel.cell(*ti, target_idx);

    std::vector<double> window, rv_aux;
    for (int k = T - 1; k >= 0; --k) {
        const auto& cell = panel.cell(*ti, *anchor_idx - static_cast<std::size_t>(k));
        if (!cell || !cell->intraday.count(net.config().granularity)) return std::nullopt;
        const auto& ir = cell->intraday.at(net.config().granularity);
        window.insert(window.end(), ir.returns.begin(), ir.returns.end());
        rv_aux.push_back(cell->rv);
    }
    if (static_cast<int>(window.size()) != net.config().input_length) return std::nullopt;

    ForecastRecord rec;
    rec.ticker = ticker;
    rec.date = panel.dates[target_idx];
    rec.forecast = net.forward(window, net.config().fusion_dim > 0 ? rv_aux : std::vector<double>{});
    rec.proxy = target_cell ? target_cell->rv : std::numeric_limits<double>::quiet_NaN();
    return rec;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

void save_network(const Network& net, const std::string& path) {
    const NetworkConfig& cfg = net.config();
    json j;
    j["schema"] = "volcast_net_v1";
    j["config"] = {{"input_length", cfg.input_length}, {"channels", cfg.channels},
                   {"kernel_width", cfg.kernel_width}, {"layers", cfg.layers},
                   {"receptive_days", cfg.receptive_days}, {"granularity", cfg.granularity},
                   {"fusion_dim", cfg.fusion_dim},       {"loss", to_string(cfg.loss)}};
    json layers = json::array();
    for (const auto& layer : net.layers) {
        layers.push_back({{"dilation", layer.dilation},
                          {"kernel_shape", layer.kernel.shape},
                          {"kernel", layer.kernel.data},
                          {"bias", layer.bias.data}});
    }
    j["layers"] = std::move(layers);
    json readouts = json::array();
    for (std::size_t l = 0; l < net.readout_w.size(); ++l) {
        readouts.push_back({{"weight", net.readout_w[l].data}, {"bias", net.readout_b[l].data[0]}});
    }
    j["readouts"] = std::move(readouts);
    j["alpha"] = net.alpha.data;
    if (cfg.fusion_dim > 0) j["fusion_weights"] = net.fusion_w.data;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open network output: " + path);
    out << j.dump();
}

Network load_network(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open network file: " + path);
    json j;
    in >> j;
    if (j.value("schema", "") != std::string("volcast_net_v1")) {
        throw std::runtime_error("unexpected network schema in " + path);
    }
    const auto& c = j.at("config");
    NetworkConfig cfg;
    cfg.input_length = c.at("input_length").get<int>();
    cfg.channels = c.at("channels").get<int>();
    cfg.kernel_width = c.at("kernel_width").get<int>();
    cfg.layers = c.at("layers").get<int>();
    cfg.receptive_days = c.at("receptive_days").get<int>();
    cfg.granularity = c.at("granularity").get<int>();
    cfg.fusion_dim = c.at("fusion_dim").get<int>();
    cfg.loss = loss_kind_from_string(c.at("loss").get<std::string>());

    Network net = Network::build(cfg, 0, 1.0);
    const auto& layers = j.at("layers");
    if (layers.size() != net.layers.size()) throw std::runtime_error("network layer count mismatch in " + path);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        net.layers[l].dilation = layers[l].at("dilation").get<int>();
        const auto kernel = layers[l].at("kernel").get<std::vector<double>>();
        const auto bias = layers[l].at("bias").get<std::vector<double>>();
        if (kernel.size() != net.layers[l].kernel.size() || bias.size() != net.layers[l].bias.size()) {
            throw std::runtime_error("network kernel shape mismatch in " + path);
        }
        net.layers[l].kernel.data = kernel;
        net.layers[l].bias.data = bias;
    }
    const auto& readouts = j.at("readouts");
    for (std::size_t l = 0; l < net.readout_w.size(); ++l) {
        net.readout_w[l].data = readouts[l].at("weight").get<std::vector<double>>();
        net.readout_b[l].data[0] = readouts[l].at("bias").get<double>();
    }
    net.alpha.data = j.at("alpha").get<std::vector<double>>();
    if (cfg.fusion_dim > 0) net.fusion_w.data = j.at("fusion_weights").get<std::vector<double>>();
    return net;
}

}  // namespace volcast::deepnet
