#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "volcast/deepnet.hpp"
#include "volcast/synth.hpp"

using namespace volcast;
using namespace volcast::deepnet;

namespace {

/// Brute-force reference: direct double loop over the convolution sum.
std::vector<double> naive_conv(const std::vector<double>& x, int batch, int in_c, int time,
                               const std::vector<double>& kernel, int out_c, int width,
                               const std::vector<double>& bias, int dilation) {
    std::vector<double> y(static_cast<std::size_t>(batch) * out_c * time, 0.0);
    for (int b = 0; b < batch; ++b) {
        for (int o = 0; o < out_c; ++o) {
            for (int t = 0; t < time; ++t) {
                double acc = bias[static_cast<std::size_t>(o)];
                for (int c = 0; c < in_c; ++c) {
                    for (int tau = 0; tau < width; ++tau) {
                        const int src = t - dilation * tau;
                        if (src < 0) continue;  // causal left zero padding
                        acc += kernel[(static_cast<std::size_t>(o) * in_c + c) * width + tau] *
                               x[(static_cast<std::size_t>(b) * in_c + c) * time + src];
                    }
                }
                y[(static_cast<std::size_t>(b) * out_c + o) * time + t] = acc;
            }
        }
    }
    return y;
}

Network tiny_network(int input_length, int layers, int channels, std::uint64_t seed, int fusion_dim = 0) {
    NetworkConfig cfg;
    cfg.input_length = input_length;
    cfg.channels = channels;
    cfg.kernel_width = 2;
    cfg.layers = layers;
    cfg.fusion_dim = fusion_dim;
    return Network::build(cfg, seed, 1.0);
}

std::vector<Sample> constant_target_samples(std::size_t n, int window_len, double target, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.4);
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        s.ticker = "T";
        s.target_date = Date(18000 + static_cast<int>(i));
        s.window.resize(static_cast<std::size_t>(window_len));
        for (double& v : s.window) v = normal(rng);
        s.rv_aux = {target};
        s.target_rv = target;
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace

TEST_CASE("dilated convolution matches hand examples") {
    Tape tape;
    Tensor& x = tape.alloc({1, 1, 4}, false);
    x.data = {1.0, 2.0, 3.0, 4.0};
    Tensor kernel({1, 1, 2}, false);
    Tensor bias({1}, false);

    SUBCASE("k = [1, 1], dilation 2 adds the entry two steps back") {
        kernel.data = {1.0, 1.0};
        const Tensor& y = ops::dilated_causal_conv(tape, x, kernel, bias, 2);
        CHECK(y.data == std::vector<double>{1.0, 2.0, 4.0, 6.0});
    }
    SUBCASE("k = [1, 0] is the identity") {
        kernel.data = {1.0, 0.0};
        const Tensor& y = ops::dilated_causal_conv(tape, x, kernel, bias, 3);
        CHECK(y.data == x.data);
    }
    SUBCASE("zero kernel and bias give zeros") {
        kernel.data = {0.0, 0.0};
        const Tensor& y = ops::dilated_causal_conv(tape, x, kernel, bias, 1);
        CHECK(y.data == std::vector<double>{0.0, 0.0, 0.0, 0.0});
    }
    SUBCASE("channel mismatch throws") {
        Tensor bad_kernel({2, 3, 2}, false);
        CHECK_THROWS_AS(ops::dilated_causal_conv(tape, x, bad_kernel, bias, 1), std::invalid_argument);
    }
}

TEST_CASE("dilated convolution agrees with the naive oracle on random cases") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> channels_dist(1, 8);
    std::uniform_int_distribution<int> width_dist(2, 3);
    std::uniform_int_distribution<int> dil_pick(0, 3);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int dilations[] = {1, 2, 4, 8};
    for (int trial = 0; trial < 100; ++trial) {
        const int in_c = channels_dist(rng), out_c = channels_dist(rng);
        const int width = width_dist(rng), dilation = dilations[dil_pick(rng)];
        const int time = 64, batch = 2;
        Tape tape;
        Tensor& x = tape.alloc({batch, in_c, time}, false);
        for (double& v : x.data) v = normal(rng);
        Tensor kernel({out_c, in_c, width}, false);
        for (double& v : kernel.data) v = normal(rng);
        Tensor bias({out_c}, false);
        for (double& v : bias.data) v = normal(rng);

        const Tensor& y = ops::dilated_causal_conv(tape, x, kernel, bias, dilation);
        const auto expect = naive_conv(x.data, batch, in_c, time, kernel.data, out_c, width, bias.data, dilation);
        REQUIRE(y.data.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y.data[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("constant network ignores its input") {
    Network net = tiny_network(8, 2, 3, 7);
    for (auto& layer : net.layers) {
        std::fill(layer.kernel.data.begin(), layer.kernel.data.end(), 0.0);
        std::fill(layer.bias.data.begin(), layer.bias.data.end(), 0.0);
    }
    for (auto& b : net.readout_b) b.data[0] = 0.0;
    net.alpha.data.assign(net.alpha.size(), 0.5);
    net.alpha.data[0] = 1.25;

    const double a = net.forward(std::vector<double>(8, 0.0));
    const double b = net.forward(std::vector<double>(8, 123.0));
    CHECK(a == doctest::Approx(softplus(1.25) + Network::kOutputFloor).epsilon(1e-12));
    CHECK(a == b);
}

TEST_CASE("hand-computed forward pass on a one-layer network") {
    // L=1, s=2, single channel, 4-point window
    Network net = tiny_network(4, 1, 1, 3);
    net.layers[0].kernel.data = {1.0, 1.0};  // y_t = x_t + x_{t-1}
    net.layers[0].bias.data = {0.5};
    net.readout_w[0].data = {2.0};
    net.readout_b[0].data[0] = -1.0;
    net.alpha.data = {0.2, 3.0};

    const std::vector<double> window = {0.1, -0.2, 0.3, 0.4};
    // conv last step: 0.5 + 0.3 + 0.4 = 1.2 -> relu -> 1.2
    // single channel matches the input, so the identity residual adds x_last:
    // hidden last = 1.2 + 0.4 = 1.6 ; readout = 2*1.6 - 1 = 2.2
    // raw = 0.2 + 3*relu(2.2) = 6.8
    const double expected = softplus(6.8) + Network::kOutputFloor;
    CHECK(net.forward(window) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("perturbations outside the receptive field leave the output unchanged") {
    const int layers = 4;  // receptive field (2^4 - 1) + 1 = 16
    const int n = 24;
    const int rf = receptive_field_steps(layers, 2);
    CHECK(rf == 16);

    SUBCASE("input gradients vanish outside the receptive field") {
        Network net = tiny_network(n, layers, 4, 11);
        Tape tape;
        Tensor& input = tape.alloc({1, 1, n}, true);
        std::mt19937_64 rng(5);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (double& v : input.data) v = normal(rng);
        Tensor& out = net.forward_batch(tape, input, nullptr);
        out.enable_grad();
        Tensor& loss = ops::qlike_loss(tape, out, {1.0});
        tape.backward(loss);
        for (int i = 0; i < n - rf; ++i) CHECK(input.grad[static_cast<std::size_t>(i)] == 0.0);
    }
    SUBCASE("perturbation sensitivity on an everywhere-active network") {
        // positive weights keep every relu path live, so the sensitivity
        // boundary is exactly the receptive field
        Network net = tiny_network(n, layers, 2, 11);
        for (auto& layer : net.layers) {
            std::fill(layer.kernel.data.begin(), layer.kernel.data.end(), 0.3);
            std::fill(layer.bias.data.begin(), layer.bias.data.end(), 0.1);
        }
        for (auto& w : net.readout_w) std::fill(w.data.begin(), w.data.end(), 0.5);
        for (auto& b : net.readout_b) b.data[0] = 0.1;
        net.alpha.data.assign(net.alpha.size(), 0.4);

        std::vector<double> window(n, 0.25);
        const double base = net.forward(window);
        auto perturbed = window;
        perturbed[static_cast<std::size_t>(n - rf - 1)] += 10.0;  // just outside
        CHECK(net.forward(perturbed) == base);                    // bit-exact
        perturbed = window;
        perturbed[static_cast<std::size_t>(n - rf)] += 10.0;      // the oldest visible entry
        CHECK(net.forward(perturbed) != base);
    }
}

TEST_CASE("output stays positive for adversarial parameters") {
    Network net = tiny_network(6, 2, 2, 13);
    net.alpha.data.assign(net.alpha.size(), -50.0);
    for (auto& b : net.readout_b) b.data[0] = -100.0;
    const double out = net.forward(std::vector<double>(6, 5.0));
    CHECK(out > 0.0);
    CHECK(out >= Network::kOutputFloor);
}

TEST_CASE("qlike loss values and calibration") {
    Tape tape;
    Tensor& f = tape.alloc({2}, false);
    SUBCASE("unit forecasts") {
        f.data = {1.0, 1.0};
        const Tensor& loss = ops::qlike_loss(tape, f, {1.0, 1.0});
        CHECK(loss.data[0] == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("hand value ln2 + 1/2") {
        f.data = {2.0, 2.0};
        const Tensor& loss = ops::qlike_loss(tape, f, {1.0, 1.0});
        CHECK(loss.data[0] == doctest::Approx(std::log(2.0) + 0.5).epsilon(1e-12));
        CHECK(loss.data[0] == doctest::Approx(1.193147).epsilon(1e-6));
    }
    SUBCASE("rmse of a perfect forecast is zero") {
        f.data = {3.0, 4.0};
        const Tensor& loss = ops::rmse_loss(tape, f, {3.0, 4.0});
        CHECK(loss.data[0] == doctest::Approx(0.0));
    }
    SUBCASE("grid minimum sits at the proxy") {
        double best_loss = 1e300, best_h = 0.0;
        for (double h = 0.1; h <= 10.0; h += 0.001) {
            const double loss = std::log(h) + 1.0 / h;
            if (loss < best_loss) {
                best_loss = loss;
                best_h = h;
            }
        }
        CHECK(best_h == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("backward gradients match central finite differences") {
    const int n = 16;
    Network net = tiny_network(n, 3, 4, 17, 2);
    std::mt19937_64 rng(23);
    std::normal_distribution<double> normal(0.0, 0.8);
    const int batch = 5;
    std::vector<std::vector<double>> windows(batch, std::vector<double>(n));
    std::vector<std::vector<double>> aux(batch, std::vector<double>(2));
    std::vector<double> targets;
    for (int b = 0; b < batch; ++b) {
        for (double& v : windows[static_cast<std::size_t>(b)]) v = normal(rng);
        for (double& v : aux[static_cast<std::size_t>(b)]) v = std::abs(normal(rng)) + 0.2;
        targets.push_back(std::abs(normal(rng)) + 0.3);
    }
    std::vector<const double*> wptr, aptr;
    for (int b = 0; b < batch; ++b) {
        wptr.push_back(windows[static_cast<std::size_t>(b)].data());
        aptr.push_back(aux[static_cast<std::size_t>(b)].data());
    }

    for (LossKind kind : {LossKind::qlike, LossKind::rmse}) {
        CAPTURE(to_string(kind));
        net.zero_grad();
        (void)net.backward_batch(wptr, aptr, targets, kind);

        const auto loss_at = [&]() {
            double total = 0.0;
            // evaluate without touching gradients
            Tape tape;
            Tensor& input = tape.alloc({batch, 1, n}, false);
            for (int b = 0; b < batch; ++b) {
                std::copy(windows[static_cast<std::size_t>(b)].begin(), windows[static_cast<std::size_t>(b)].end(),
                          input.data.begin() + static_cast<std::ptrdiff_t>(b) * n);
            }
            Tensor& fusion = tape.alloc({batch, 2}, false);
            for (int b = 0; b < batch; ++b) {
                std::copy(aux[static_cast<std::size_t>(b)].begin(), aux[static_cast<std::size_t>(b)].end(),
                          fusion.data.begin() + static_cast<std::ptrdiff_t>(b) * 2);
            }
            Tensor& out = net.forward_batch(tape, input, &fusion);
            double acc = 0.0;
            for (int b = 0; b < batch; ++b) {
                if (kind == LossKind::qlike) {
                    acc += std::log(out.data[static_cast<std::size_t>(b)]) +
                           targets[static_cast<std::size_t>(b)] / out.data[static_cast<std::size_t>(b)];
                } else {
                    const double e = targets[static_cast<std::size_t>(b)] - out.data[static_cast<std::size_t>(b)];
                    acc += e * e;
                }
            }
            total = kind == LossKind::qlike ? acc / batch : std::sqrt(acc / batch);
            return total;
        };

        for (Tensor* param : net.parameters()) {
            for (std::size_t i = 0; i < param->size(); ++i) {
                const double saved = param->data[i];
                const double h = 1e-4;
                param->data[i] = saved + h;
                const double fp = loss_at();
                param->data[i] = saved - h;
                const double fm = loss_at();
                param->data[i] = saved;
                const double fd = (fp - fm) / (2.0 * h);
                const double rel = std::abs(fd - param->grad[i]) / std::max(std::abs(fd), 1e-8);
                CHECK(rel < 1e-4);
            }
        }
    }
}

TEST_CASE("zero-kernel network has dead kernel gradients but a live alpha_0") {
    const int n = 8;
    Network net = tiny_network(n, 2, 3, 29);
    for (auto& layer : net.layers) {
        std::fill(layer.kernel.data.begin(), layer.kernel.data.end(), 0.0);
        std::fill(layer.bias.data.begin(), layer.bias.data.end(), 0.0);
    }
    for (auto& b : net.readout_b) b.data[0] = 0.0;
    std::vector<double> window(n, 1.0);
    std::vector<const double*> wptr = {window.data()};
    net.zero_grad();
    (void)net.backward_batch(wptr, {}, {2.0}, LossKind::qlike);
    for (const auto& layer : net.layers) {
        for (double g : layer.kernel.grad) CHECK(g == 0.0);
    }
    CHECK(net.alpha.grad[0] != 0.0);
}

TEST_CASE("qlike gradient vanishes at the truth") {
    Tape tape;
    Tensor& f = tape.alloc({1}, true);
    f.data = {1.7};
    Tensor& loss = ops::qlike_loss(tape, f, {1.7});
    tape.backward(loss);
    CHECK(f.grad[0] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("training fits a constant target") {
    TrainConfig cfg;
    cfg.receptive_days = 1;
    cfg.batch_size = 16;
    cfg.max_epochs = 120;
    cfg.patience = 15;
    cfg.seed = 9;
    cfg.channels = 4;
    cfg.layers = 4;
    const double target = 2.5;
    const auto samples = constant_target_samples(120, 12, target, 31);
    const auto result = train(samples, cfg);
    for (int i = 0; i < 5; ++i) {
        const double f = result.network.forward(samples[static_cast<std::size_t>(i)].window);
        CHECK(f == doctest::Approx(target).epsilon(0.01));
    }
    // early-stopping contract: returned network is at least as good as epoch 0
    const auto& val = result.history.val_loss;
    REQUIRE(!val.empty());
    CHECK(val[static_cast<std::size_t>(result.history.best_epoch)] <= val.front() + 1e-12);
}

TEST_CASE("training is deterministic for a fixed seed") {
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 6;
    cfg.patience = 5;
    cfg.seed = 77;
    cfg.channels = 3;
    cfg.layers = 4;
    const auto samples = constant_target_samples(60, 10, 1.3, 41);
    const auto a = train(samples, cfg);
    const auto b = train(samples, cfg);
    const auto pa = std::as_const(a.network).parameters();
    const auto pb = std::as_const(b.network).parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->data == pb[i]->data);
    CHECK(a.history.val_loss == b.history.val_loss);
}

TEST_CASE("train validates its inputs") {
    TrainConfig cfg;
    cfg.validation_fraction = 0.6;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.validation_fraction = 0.2;
    cfg.patience = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.patience = 10;
    CHECK_THROWS_AS(train({}, cfg), std::invalid_argument);
}

TEST_CASE("prediction windows come from the panel in chronological order") {
    synth::SimSpec spec;
    spec.n_tickers = 2;
    spec.n_days = 8;
    spec.bars_per_day = 78;
    spec.seed = 3;
    const auto sim = synth::simulate(spec);
    const auto panel = marketdata::build_panel(sim.series, {{5}, 0.10});
    Network net = tiny_network(77, 7, 2, 19);

    SUBCASE("window of one day equals that day's returns") {
        const auto rec = predict(net, panel, "SYN000", panel.dates[3]);
        REQUIRE(rec.has_value());
        CHECK(rec->date == panel.dates[4]);
        // forecasting purity: identical windows give identical forecasts
        const auto& cell = panel.cell(0, 3);
        const double direct = net.forward(cell->intraday.at(5).returns);
        CHECK(rec->forecast == direct);
    }
    SUBCASE("a shifted panel shifts predictions by one day") {
        marketdata::Panel shifted = panel;
        for (auto& d : shifted.dates) d = d + 1;
        for (auto& cell : shifted.cells) {
            if (cell) cell->date = cell->date + 1;
        }
        const auto a = predict(net, panel, "SYN000", panel.dates[3]);
        const auto b = predict(net, shifted, "SYN000", shifted.dates[3]);
        REQUIRE(a.has_value());
        REQUIRE(b.has_value());
        CHECK(a->forecast == b->forecast);
        CHECK(b->date == a->date + 1);
    }
    SUBCASE("missing window day yields no record") {
        marketdata::Panel broken = panel;
        broken.cell(0, 3).reset();
        CHECK_FALSE(predict(net, broken, "SYN000", broken.dates[3]).has_value());
    }
}

TEST_CASE("network json round-trips to identical forecasts") {
    Network net = tiny_network(12, 3, 4, 57, 2);
    const auto path = std::filesystem::temp_directory_path() / "volcast_net_roundtrip.json";
    save_network(net, path.string());
    const Network loaded = load_network(path.string());
    std::filesystem::remove(path);

    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> window(12);
    for (double& v : window) v = normal(rng);
    const std::vector<double> aux = {1.0, 2.0};
    CHECK(loaded.forward(window, aux) == net.forward(window, aux));  // bit-exact
}
