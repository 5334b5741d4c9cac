#include "volcast/econometrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

namespace volcast::econ {

using nlohmann::json;

namespace {

constexpr double kMargin = 1.0 - 1e-6;  // open-interval guard for unit sums
constexpr double kInf = std::numeric_limits<double>::infinity();

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) {
    const double c = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return std::log(c / (1.0 - c));
}
double safe_log(double x) { return std::log(std::max(x, 1e-300)); }

/// Mean square of the series; the mu = 0 convention makes this the sample
/// variance used for backcasting.
double mean_square(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x * x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument(message);
}

/// FIGARCH ARCH(inf) weights lambda_1..lambda_K for phi = alpha + beta.
/// pi_k is the binomial expansion of (1-L)^d: pi_0 = 1,
/// pi_k = pi_{k-1} (k-1-d)/k.
std::vector<double> figarch_weights(double alpha, double beta, double d, int truncation) {
    const double phi = alpha + beta;
    std::vector<double> lambda(static_cast<std::size_t>(truncation) + 1, 0.0);
    double pi_prev = 1.0;  // pi_0
    for (int k = 1; k <= truncation; ++k) {
        const double pi_k = pi_prev * (static_cast<double>(k) - 1.0 - d) / static_cast<double>(k);
        lambda[static_cast<std::size_t>(k)] = (k == 1) ? (phi - beta - pi_k) : (phi * pi_prev - pi_k);
        pi_prev = pi_k;
    }
    return lambda;
}

}  // namespace

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::garch: return "garch";
        case ModelKind::igarch: return "igarch";
        case ModelKind::figarch: return "figarch";
        case ModelKind::tarch: return "tarch";
        case ModelKind::aparch: return "aparch";
        case ModelKind::agarch: return "agarch";
        case ModelKind::egarch: return "egarch";
        case ModelKind::heavy: return "heavy";
        case ModelKind::martingale: return "martingale";
    }
    throw std::logic_error("unknown ModelKind");
}

ModelKind model_kind_from_string(const std::string& name) {
    for (ModelKind k : {ModelKind::garch, ModelKind::igarch, ModelKind::figarch, ModelKind::tarch,
                        ModelKind::aparch, ModelKind::agarch, ModelKind::egarch, ModelKind::heavy,
                        ModelKind::martingale}) {
        if (to_string(k) == name) return k;
    }
    throw std::invalid_argument("unknown model kind: '" + name + "'");
}

void validate_params(const ModelSpec& spec, const ParamVector& params) {
    require(spec.p >= 1, "order p must be >= 1");
    require(spec.q >= 0, "order q must be >= 0");
    const auto np = static_cast<std::size_t>(spec.p);
    const auto nq = static_cast<std::size_t>(spec.q);

    switch (spec.kind) {
        case ModelKind::martingale:
            return;
        case ModelKind::egarch:
            // sign restrictions lifted; only the shapes are checked
            require(params.alpha.size() == np && params.beta.size() == nq && params.gamma.size() == np,
                    "egarch: alpha/gamma need p entries and beta q entries");
            return;
        case ModelKind::heavy: {
            require(spec.p == 1 && spec.q == 1, "heavy supports orders (1,1) only");
            require(params.alpha.size() == 1 && params.beta.size() == 1, "heavy: alpha/beta need one entry");
            require(params.omega >= 0.0 && params.alpha[0] >= 0.0, "heavy: omega and alpha must be >= 0");
            require(params.beta[0] >= 0.0 && params.beta[0] < 1.0, "heavy: beta must lie in [0,1)");
            require(params.omega_r >= 0.0 && params.alpha_r >= 0.0 && params.beta_r >= 0.0,
                    "heavy: realised-measure coefficients must be >= 0");
            require(params.alpha_r + params.beta_r < 1.0, "heavy: alpha_r + beta_r must lie in [0,1)");
            return;
        }
        default:
            break;
    }

    require(params.alpha.size() == np, to_string(spec.kind) + ": alpha needs p entries");
    require(params.beta.size() == nq, to_string(spec.kind) + ": beta needs q entries");
    require(params.omega >= 0.0, to_string(spec.kind) + ": omega must be >= 0");
    for (double a : params.alpha) require(a >= 0.0, to_string(spec.kind) + ": alpha must be >= 0");
    for (double b : params.beta) require(b >= 0.0, to_string(spec.kind) + ": beta must be >= 0");

    double sum = 0.0;
    for (double a : params.alpha) sum += a;
    for (double b : params.beta) sum += b;

    switch (spec.kind) {
        case ModelKind::igarch:
            require(std::abs(sum - 1.0) <= 1e-10, "igarch: alpha and beta must sum to exactly 1");
            break;
        case ModelKind::figarch:
            require(spec.p == 1 && spec.q == 1, "figarch supports orders (1,1) only");
            require(params.d > 0.0 && params.d < 1.0, "figarch: d must lie in (0,1)");
            break;
        case ModelKind::aparch:
            require(params.gamma.size() == np, "aparch: gamma needs p entries");
            for (double g : params.gamma) require(std::abs(g) < 1.0, "aparch: |gamma| must be < 1");
            require(params.delta > 0.0, "aparch: delta must be > 0");
            break;
        case ModelKind::agarch:
            require(params.gamma.size() == np, "agarch: gamma needs p entries");
            break;
        default:
            break;
    }
}

namespace {

[[noreturn]] void non_finite_at(const ModelSpec& spec, std::size_t index) {
    throw std::runtime_error(to_string(spec.kind) + ": non-finite recursion value at index " +
                             std::to_string(index));
}

void check_finite(const ModelSpec& spec, double value, std::size_t index) {
    if (!std::isfinite(value)) non_finite_at(spec, index);
}

}  // namespace

std::vector<double> variance_path(const ModelSpec& spec, const ParamVector& params,
                                  const std::vector<double>& returns, const std::vector<double>& rv,
                                  const PathOptions& options) {
    validate_params(spec, params);
    require(spec.kind != ModelKind::martingale, "martingale has no variance recursion");
    const std::size_t T = returns.size();
    require(T >= 1, "variance_path needs at least one observation");
    if (spec.kind == ModelKind::heavy) {
        require(rv.size() == T, "heavy requires a realised-variance series aligned with the returns");
    }

    const double backcast = options.backcast.value_or(mean_square(returns));
    require(backcast > 0.0 && std::isfinite(backcast), "backcast must be positive and finite");

    std::vector<double> sigma2(T, 0.0);
    const auto eps2 = [&](std::ptrdiff_t t) {
        return t >= 0 ? returns[static_cast<std::size_t>(t)] * returns[static_cast<std::size_t>(t)] : backcast;
    };

    switch (spec.kind) {
        case ModelKind::garch:
        case ModelKind::igarch: {
            for (std::size_t t = 0; t < T; ++t) {
                double v = params.omega;
                for (int i = 1; i <= spec.p; ++i)
                    v += params.alpha[static_cast<std::size_t>(i - 1)] * eps2(static_cast<std::ptrdiff_t>(t) - i);
                for (int j = 1; j <= spec.q; ++j) {
                    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(t) - j;
                    v += params.beta[static_cast<std::size_t>(j - 1)] *
                         (k >= 0 ? sigma2[static_cast<std::size_t>(k)] : backcast);
                }
                check_finite(spec, v, t);
                sigma2[t] = v;
            }
            break;
        }
        case ModelKind::tarch: {
            // squared-innovation indicator form; pre-sample indicator weight 1/2
            for (std::size_t t = 0; t < T; ++t) {
                double v = params.omega;
                for (int i = 1; i <= spec.p; ++i)
                    v += params.alpha[static_cast<std::size_t>(i - 1)] * eps2(static_cast<std::ptrdiff_t>(t) - i);
                for (int j = 1; j <= spec.q; ++j) {
                    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(t) - j;
                    const double term = k >= 0 ? (returns[static_cast<std::size_t>(k)] < 0.0
                                                      ? returns[static_cast<std::size_t>(k)] *
                                                            returns[static_cast<std::size_t>(k)]
                                                      : 0.0)
                                               : 0.5 * backcast;
                    v += params.beta[static_cast<std::size_t>(j - 1)] * term;
                }
                check_finite(spec, v, t);
                sigma2[t] = v;
            }
            break;
        }
        case ModelKind::agarch: {
            for (std::size_t t = 0; t < T; ++t) {
                double v = params.omega;
                for (int i = 1; i <= spec.p; ++i) {
                    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(t) - i;
                    const double g = params.gamma[static_cast<std::size_t>(i - 1)];
                    // E[(eps - g)^2] = backcast + g^2 seeds the pre-sample term
                    const double term = k >= 0 ? (returns[static_cast<std::size_t>(k)] - g) *
                                                     (returns[static_cast<std::size_t>(k)] - g)
                                               : backcast + g * g;
                    v += params.alpha[static_cast<std::size_t>(i - 1)] * term;
                }
                for (int j = 1; j <= spec.q; ++j) {
                    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(t) - j;
                    v += params.beta[static_cast<std::size_t>(j - 1)] *
                         (k >= 0 ? sigma2[static_cast<std::size_t>(k)] : backcast);
                }
                check_finite(spec, v, t);
                sigma2[t] = v;
            }
            break;
        }
        case ModelKind::aparch: {
            // recursion runs in sigma^delta space, then converts
            const double delta = params.delta;
            const double seed = std::pow(backcast, delta / 2.0);
            std::vector<double> s(T, 0.0);
            for (std::size_t t = 0; t < T; ++t) {
                double v = params.omega;
                for (int i = 1; i <= spec.p; ++i) {
                    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(t) - i;
                    double term;
                    if (k >= 0) {
                        const double eps = returns[static_cast<std::size_t>(k)];
                        const double base = std::abs(eps) - params.gamma[static_cast<std::size_t>(i - 1)] * eps;
                        term = base > 0.0 ? std::pow(base, delta) : 0.0;
                    } else {
                        term = seed;
                    }
                    v += params.alpha[static_cast<std::size_t>(i - 1)] * term;
                }
                for (int j = 1; j <= spec.q; ++j) {
                    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(t) - j;
                    v += params.beta[static_cast<std::size_t>(j - 1)] * (k >= 0 ? s[static_cast<std::size_t>(k)] : seed);
                }
                check_finite(spec, v, t);
                s[t] = v;
                sigma2[t] = std::pow(v, 2.0 / delta);
                check_finite(spec, sigma2[t], t);
            }
            break;
        }
        case ModelKind::egarch: {
            const double log_seed = std::log(backcast);
            const double abs_seed = std::sqrt(2.0 * backcast / std::numbers::pi);  // E|eps| under N(0, backcast)
            std::vector<double> logv(T, 0.0);
            for (std::size_t t = 0; t < T; ++t) {
                double v = params.omega;
                for (int i = 1; i <= spec.p; ++i) {
                    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(t) - i;
                    const double g = params.gamma[static_cast<std::size_t>(i - 1)];
                    const double term =
                        k >= 0 ? std::abs(returns[static_cast<std::size_t>(k)]) + g * returns[static_cast<std::size_t>(k)]
                               : abs_seed;
                    v += params.alpha[static_cast<std::size_t>(i - 1)] * term;
                }
                for (int j = 1; j <= spec.q; ++j) {
                    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(t) - j;
                    v += params.beta[static_cast<std::size_t>(j - 1)] *
                         (k >= 0 ? logv[static_cast<std::size_t>(k)] : log_seed);
                }
                check_finite(spec, v, t);
                logv[t] = v;
                sigma2[t] = std::exp(v);
                check_finite(spec, sigma2[t], t);
            }
            break;
        }
        case ModelKind::figarch: {
            const int K = options.figarch_truncation > 0
                              ? options.figarch_truncation
                              : static_cast<int>(std::min<std::size_t>(1000, T));
            const std::vector<double> lambda = figarch_weights(params.alpha[0], params.beta[0], params.d, K);
            const double beta = params.beta[0];
            for (std::size_t t = 0; t < T; ++t) {
                double v = params.omega;
                v += beta * (t >= 1 ? sigma2[t - 1] : backcast);
                for (int k = 1; k <= K; ++k) {
                    v += lambda[static_cast<std::size_t>(k)] * eps2(static_cast<std::ptrdiff_t>(t) - k);
                }
                check_finite(spec, v, t);
                sigma2[t] = v;
            }
            break;
        }
        case ModelKind::heavy: {
            const double rv_backcast = options.rv_backcast.value_or(mean(rv));
            const double alpha = params.alpha[0];
            const double beta = params.beta[0];
            for (std::size_t t = 0; t < T; ++t) {
                const double rm = t >= 1 ? rv[t - 1] : rv_backcast;
                const double prev = t >= 1 ? sigma2[t - 1] : backcast;
                const double v = params.omega + alpha * rm + beta * prev;
                check_finite(spec, v, t);
                sigma2[t] = v;
            }
            break;
        }
        default:
            throw std::logic_error("unhandled model kind");
    }
    return sigma2;
}

std::vector<double> heavy_mu_path(const ParamVector& params, const std::vector<double>& rv,
                                  const PathOptions& options) {
    const std::size_t T = rv.size();
    require(T >= 1, "heavy mu path needs at least one observation");
    const double rv_backcast = options.rv_backcast.value_or(mean(rv));
    std::vector<double> mu(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double rm = t >= 1 ? rv[t - 1] : rv_backcast;
        const double prev = t >= 1 ? mu[t - 1] : rv_backcast;
        mu[t] = params.omega_r + params.alpha_r * rm + params.beta_r * prev;
        if (!std::isfinite(mu[t])) {
            throw std::runtime_error("heavy: non-finite realised-measure recursion at index " + std::to_string(t));
        }
    }
    return mu;
}

double negative_log_likelihood(const ModelSpec& spec, const ParamVector& params,
                               const std::vector<double>& returns, const std::vector<double>& rv,
                               const PathOptions& options) {
    static const double kLog2Pi = std::log(2.0 * std::numbers::pi);
    std::vector<double> sigma2;
    try {
        sigma2 = variance_path(spec, params, returns, rv, options);
    } catch (const std::runtime_error&) {
        return kInf;  // non-finite recursion: infeasible point
    }
    double nll = 0.0;
    for (std::size_t t = 0; t < returns.size(); ++t) {
        if (!(sigma2[t] > 0.0)) return kInf;
        nll += 0.5 * (kLog2Pi + std::log(sigma2[t]) + returns[t] * returns[t] / sigma2[t]);
    }
    if (spec.kind == ModelKind::heavy) {
        std::vector<double> mu;
        try {
            mu = heavy_mu_path(params, rv, options);
        } catch (const std::runtime_error&) {
            return kInf;
        }
        for (std::size_t t = 0; t < rv.size(); ++t) {
            if (!(mu[t] > 0.0)) return kInf;
            nll += 0.5 * (kLog2Pi + std::log(mu[t]) + rv[t] / mu[t]);
        }
    }
    return std::isfinite(nll) ? nll : kInf;
}

// ---------------------------------------------------------------------------
// parameter transforms
// ---------------------------------------------------------------------------

namespace {

/// Splits `total` into `parts` non-negative components through stick
/// breaking; takes parts-1 unconstrained sticks.
std::vector<double> decode_split(double total, const double* sticks, std::size_t parts) {
    std::vector<double> out(parts, 0.0);
    double remaining = total;
    for (std::size_t i = 0; i + 1 < parts; ++i) {
        out[i] = remaining * sigmoid(sticks[i]);
        remaining -= out[i];
    }
    out[parts - 1] = remaining;
    return out;
}

void encode_split(const std::vector<double>& values, double total, std::vector<double>& out) {
    double remaining = total;
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
        out.push_back(logit(remaining > 0.0 ? values[i] / remaining : 0.5));
        remaining -= values[i];
    }
}

struct Transform {
    int dim = 0;
    std::function<ParamVector(const std::vector<double>&)> decode;
    std::function<std::vector<double>(const ParamVector&)> encode;
};

Transform make_transform(const ModelSpec& spec) {
    const auto np = static_cast<std::size_t>(spec.p);
    const auto nq = static_cast<std::size_t>(spec.q);
    Transform tr;
    switch (spec.kind) {
        case ModelKind::garch:
        case ModelKind::tarch:
        case ModelKind::agarch:
        case ModelKind::aparch: {
            const bool has_gamma = spec.kind == ModelKind::agarch || spec.kind == ModelKind::aparch;
            const bool has_delta = spec.kind == ModelKind::aparch;
            tr.dim = 2 + static_cast<int>(np + nq) - 1 + (has_gamma ? spec.p : 0) + (has_delta ? 1 : 0);
            tr.decode = [=](const std::vector<double>& u) {
                ParamVector p;
                p.omega = std::exp(u[0]);
                const double total = sigmoid(u[1]) * kMargin;
                auto parts = decode_split(total, u.data() + 2, np + nq);
                p.alpha.assign(parts.begin(), parts.begin() + static_cast<std::ptrdiff_t>(np));
                p.beta.assign(parts.begin() + static_cast<std::ptrdiff_t>(np), parts.end());
                std::size_t at = 2 + np + nq - 1;
                if (has_gamma) {
                    for (std::size_t i = 0; i < np; ++i) {
                        p.gamma.push_back(spec.kind == ModelKind::aparch ? std::tanh(u[at + i]) * kMargin
                                                                         : u[at + i]);
                    }
                    at += np;
                }
                if (has_delta) p.delta = std::exp(u[at]);
                return p;
            };
            tr.encode = [=](const ParamVector& p) {
                std::vector<double> u;
                u.push_back(safe_log(p.omega));
                double total = 0.0;
                for (double a : p.alpha) total += a;
                for (double b : p.beta) total += b;
                u.push_back(logit(total / kMargin));
                std::vector<double> parts = p.alpha;
                parts.insert(parts.end(), p.beta.begin(), p.beta.end());
                encode_split(parts, total, u);
                if (has_gamma) {
                    for (double g : p.gamma) {
                        u.push_back(spec.kind == ModelKind::aparch
                                        ? std::atanh(std::clamp(g / kMargin, -1.0 + 1e-12, 1.0 - 1e-12))
                                        : g);
                    }
                }
                if (has_delta) u.push_back(safe_log(p.delta));
                return u;
            };
            break;
        }
        case ModelKind::igarch: {
            tr.dim = 1 + static_cast<int>(np + nq) - 1;
            tr.decode = [=](const std::vector<double>& u) {
                ParamVector p;
                p.omega = std::exp(u[0]);
                auto parts = decode_split(1.0, u.data() + 1, np + nq);  // exact unit sum
                p.alpha.assign(parts.begin(), parts.begin() + static_cast<std::ptrdiff_t>(np));
                p.beta.assign(parts.begin() + static_cast<std::ptrdiff_t>(np), parts.end());
                return p;
            };
            tr.encode = [=](const ParamVector& p) {
                std::vector<double> u;
                u.push_back(safe_log(p.omega));
                std::vector<double> parts = p.alpha;
                parts.insert(parts.end(), p.beta.begin(), p.beta.end());
                encode_split(parts, 1.0, u);
                return u;
            };
            break;
        }
        case ModelKind::egarch: {
            tr.dim = 1 + static_cast<int>(2 * np + nq);
            tr.decode = [=](const std::vector<double>& u) {
                ParamVector p;
                p.omega = u[0];
                for (std::size_t i = 0; i < np; ++i) p.alpha.push_back(u[1 + i]);
                for (std::size_t i = 0; i < np; ++i) p.gamma.push_back(u[1 + np + i]);
                for (std::size_t j = 0; j < nq; ++j) {
                    p.beta.push_back(std::tanh(u[1 + 2 * np + j]) * kMargin / static_cast<double>(nq));
                }
                return p;
            };
            tr.encode = [=](const ParamVector& p) {
                std::vector<double> u;
                u.push_back(p.omega);
                for (double a : p.alpha) u.push_back(a);
                for (double g : p.gamma) u.push_back(g);
                for (double b : p.beta) {
                    u.push_back(std::atanh(
                        std::clamp(b * static_cast<double>(nq) / kMargin, -1.0 + 1e-12, 1.0 - 1e-12)));
                }
                return u;
            };
            break;
        }
        case ModelKind::figarch: {
            // 0 <= beta <= phi <= (1-d)/2 keeps every ARCH(inf) weight
            // non-negative, hence the fitted path positive
            tr.dim = 4;
            tr.decode = [](const std::vector<double>& u) {
                ParamVector p;
                p.omega = std::exp(u[0]);
                p.d = 1e-6 + (1.0 - 2e-6) * sigmoid(u[1]);
                const double phi = sigmoid(u[2]) * (1.0 - p.d) / 2.0;
                const double beta = sigmoid(u[3]) * phi;
                p.alpha = {phi - beta};
                p.beta = {beta};
                return p;
            };
            tr.encode = [](const ParamVector& p) {
                const double phi = p.alpha.at(0) + p.beta.at(0);
                std::vector<double> u(4);
                u[0] = safe_log(p.omega);
                u[1] = logit((p.d - 1e-6) / (1.0 - 2e-6));
                u[2] = logit(phi / ((1.0 - p.d) / 2.0));
                u[3] = logit(phi > 0.0 ? p.beta.at(0) / phi : 0.5);
                return u;
            };
            break;
        }
        case ModelKind::heavy: {
            tr.dim = 6;
            tr.decode = [](const std::vector<double>& u) {
                ParamVector p;
                p.omega = std::exp(u[0]);
                p.alpha = {std::exp(u[1])};
                p.beta = {sigmoid(u[2]) * kMargin};
                p.omega_r = std::exp(u[3]);
                const double rho = sigmoid(u[4]) * kMargin;
                p.alpha_r = rho * sigmoid(u[5]);
                p.beta_r = rho - p.alpha_r;
                return p;
            };
            tr.encode = [](const ParamVector& p) {
                std::vector<double> u(6);
                u[0] = safe_log(p.omega);
                u[1] = safe_log(p.alpha.at(0));
                u[2] = logit(p.beta.at(0) / kMargin);
                u[3] = safe_log(p.omega_r);
                const double rho = p.alpha_r + p.beta_r;
                u[4] = logit(rho / kMargin);
                u[5] = logit(rho > 0.0 ? p.alpha_r / rho : 0.5);
                return u;
            };
            break;
        }
        default:
            throw std::invalid_argument(to_string(spec.kind) + " cannot be fitted");
    }
    return tr;
}

std::vector<ParamVector> fit_starts(const ModelSpec& spec, double variance, double rv_mean) {
    const auto np = static_cast<std::size_t>(spec.p);
    const auto nq = static_cast<std::size_t>(spec.q);
    const auto spread = [](double total, std::size_t n) {
        return std::vector<double>(n, n > 0 ? total / static_cast<double>(n) : 0.0);
    };
    std::vector<ParamVector> starts;
    const auto garch_like = [&](double omega_frac, double a_tot, double b_tot) {
        ParamVector p;
        p.omega = std::max(variance, 1e-8) * omega_frac;
        p.alpha = spread(a_tot, np);
        p.beta = spread(b_tot, nq);
        return p;
    };
    switch (spec.kind) {
        case ModelKind::garch:
            starts = {garch_like(0.05, 0.05, 0.90), garch_like(0.02, 0.10, 0.88), garch_like(0.60, 0.10, 0.30)};
            break;
        case ModelKind::igarch:
            starts = {garch_like(0.01, 0.05, 0.95), garch_like(0.05, 0.20, 0.80), garch_like(0.10, 0.50, 0.50)};
            break;
        case ModelKind::tarch:
            starts = {garch_like(0.90, 0.05, 0.10), garch_like(0.80, 0.10, 0.20), garch_like(0.55, 0.30, 0.10)};
            break;
        case ModelKind::agarch: {
            starts = {garch_like(0.05, 0.05, 0.90), garch_like(0.02, 0.10, 0.88), garch_like(0.60, 0.10, 0.30)};
            const double shift = 0.25 * std::sqrt(std::max(variance, 1e-8));
            starts[0].gamma = std::vector<double>(np, 0.0);
            starts[1].gamma = std::vector<double>(np, shift);
            starts[2].gamma = std::vector<double>(np, -shift);
            break;
        }
        case ModelKind::aparch: {
            starts = {garch_like(0.05, 0.05, 0.90), garch_like(0.02, 0.10, 0.88), garch_like(0.60, 0.10, 0.30)};
            starts[0].gamma = std::vector<double>(np, 0.0);
            starts[0].delta = 2.0;
            starts[1].gamma = std::vector<double>(np, 0.2);
            starts[1].delta = 1.5;
            starts[2].gamma = std::vector<double>(np, -0.2);
            starts[2].delta = 2.0;
            break;
        }
        case ModelKind::egarch: {
            const double logv = std::log(std::max(variance, 1e-8));
            for (auto [b_tot, a, g, w_frac] : {std::tuple{0.95, 0.10, -0.05, 0.05}, std::tuple{0.80, 0.20, 0.0, 0.20},
                                               std::tuple{0.30, 0.30, 0.10, 0.70}}) {
                ParamVector p;
                p.omega = logv * w_frac;
                p.alpha = spread(a, np);
                p.gamma = spread(g, np);
                p.beta = spread(b_tot, nq);
                starts.push_back(std::move(p));
            }
            break;
        }
        case ModelKind::figarch: {
            for (auto [d, phi, beta, w_frac] : {std::tuple{0.40, 0.20, 0.10, 0.20}, std::tuple{0.70, 0.12, 0.05, 0.30},
                                                std::tuple{0.15, 0.35, 0.20, 0.50}}) {
                ParamVector p;
                p.omega = std::max(variance, 1e-8) * w_frac;
                p.d = d;
                p.alpha = {phi - beta};
                p.beta = {beta};
                starts.push_back(std::move(p));
            }
            break;
        }
        case ModelKind::heavy: {
            for (auto [a, b, ar, br] : {std::tuple{0.35, 0.55, 0.35, 0.55}, std::tuple{0.50, 0.20, 0.50, 0.30},
                                        std::tuple{0.10, 0.85, 0.20, 0.70}}) {
                ParamVector p;
                p.omega = 0.05 * std::max(variance, 1e-8);
                p.alpha = {a};
                p.beta = {b};
                p.omega_r = 0.10 * std::max(rv_mean, 1e-8);
                p.alpha_r = ar;
                p.beta_r = br;
                starts.push_back(std::move(p));
            }
            break;
        }
        default:
            throw std::invalid_argument(to_string(spec.kind) + " cannot be fitted");
    }
    return starts;
}

}  // namespace

FitObjective make_fit_objective(const ModelSpec& spec, const std::vector<double>& returns,
                                const std::vector<double>& rv, const PathOptions& options) {
    const Transform tr = make_transform(spec);
    PathOptions opts = options;
    if (!opts.backcast) opts.backcast = mean_square(returns);
    if (!opts.rv_backcast && !rv.empty()) opts.rv_backcast = mean(rv);
    if (opts.figarch_truncation == 0) {
        opts.figarch_truncation = static_cast<int>(std::min<std::size_t>(1000, returns.size()));
    }

    FitObjective obj;
    obj.dim = tr.dim;
    obj.decode = tr.decode;
    obj.encode = tr.encode;
    // per-observation scaling keeps the gradient tolerance meaningful for any
    // sample size (the absolute NLL grows with T, and so would finite
    // difference noise)
    const double scale = 1.0 / static_cast<double>(returns.size());
    obj.f = [spec, returns, rv, opts, scale, decode = tr.decode](const std::vector<double>& u) {
        try {
            return scale * negative_log_likelihood(spec, decode(u), returns, rv, opts);
        } catch (const std::exception&) {
            return kInf;
        }
    };
    return obj;
}

VarianceModelFit fit(const ModelSpec& spec, const std::vector<double>& returns, const std::vector<double>& rv,
                     const FitOptions& options, FitDiagnostics* diagnostics) {
    require(spec.kind != ModelKind::martingale, "martingale has no parameters to fit");
    require(returns.size() >= options.min_observations,
            "fit needs at least " + std::to_string(options.min_observations) + " observations, got " +
                std::to_string(returns.size()));
    if (spec.kind == ModelKind::heavy) require(rv.size() == returns.size(), "heavy: rv series must align with returns");

    const double variance = mean_square(returns);
    const double rv_mean = rv.empty() ? 0.0 : mean(rv);

    PathOptions path_opts;
    path_opts.backcast = variance;
    path_opts.rv_backcast = rv_mean;
    path_opts.figarch_truncation = static_cast<int>(std::min<std::size_t>(1000, returns.size()));
    const FitObjective obj = make_fit_objective(spec, returns, rv, path_opts);

    std::optional<optimize::MinimizeResult> best;
    for (const ParamVector& start : fit_starts(spec, variance, rv_mean)) {
        auto result = optimize::minimize_bfgs(obj.f, obj.encode(start), options.minimize);
        if (diagnostics) {
            diagnostics->accepted_nll.push_back(result.accepted_values);
            diagnostics->final_nll.push_back(result.f);
        }
        if (!std::isfinite(result.f)) continue;
        if (!best || result.f < best->f || (result.f == best->f && result.converged && !best->converged)) {
            best = std::move(result);
        }
    }
    if (!best) throw std::runtime_error(to_string(spec.kind) + ": every start produced a non-finite likelihood");

    VarianceModelFit out;
    out.spec = spec;
    out.params = obj.decode(best->x);
    out.converged = best->converged;
    out.iterations = best->iterations;
    out.sample_size = returns.size();
    out.backcast = variance;
    out.rv_backcast = rv_mean;
    out.figarch_truncation = path_opts.figarch_truncation;
    out.sigma2 = variance_path(spec, out.params, returns, rv, path_opts);
    out.loglik = -negative_log_likelihood(spec, out.params, returns, rv, path_opts);
    return out;
}

namespace {

PathOptions fit_path_options(const VarianceModelFit& fit) {
    PathOptions opts;
    opts.backcast = fit.backcast;
    opts.rv_backcast = fit.rv_backcast;
    opts.figarch_truncation = fit.figarch_truncation;
    return opts;
}

}  // namespace

double forecast_one_step(const VarianceModelFit& fit, const std::vector<double>& returns,
                         const std::vector<double>& rv) {
    std::vector<double> extended = returns;
    extended.push_back(0.0);  // sentinel; the last recursion value only reads lags
    std::vector<double> rv_extended;
    if (fit.spec.kind == ModelKind::heavy) {
        rv_extended = rv;
        rv_extended.push_back(0.0);
    }
    const auto path = variance_path(fit.spec, fit.params, extended, rv_extended, fit_path_options(fit));
    return path.back();
}

std::vector<double> rolling_forecasts(const VarianceModelFit& fit, const std::vector<double>& returns,
                                      const std::vector<double>& rv, std::size_t first_index) {
    require(first_index < returns.size(), "rolling_forecasts: first_index out of range");
    const auto path = variance_path(fit.spec, fit.params, returns,
                                    fit.spec.kind == ModelKind::heavy ? rv : std::vector<double>{},
                                    fit_path_options(fit));
    return {path.begin() + static_cast<std::ptrdiff_t>(first_index), path.end()};
}

void save_fit(const VarianceModelFit& fit, const std::string& path) {
    json j;
    j["schema"] = "volcast_fit_v1";
    j["kind"] = to_string(fit.spec.kind);
    j["p"] = fit.spec.p;
    j["q"] = fit.spec.q;
    json params;
    params["omega"] = fit.params.omega;
    params["alpha"] = fit.params.alpha;
    params["beta"] = fit.params.beta;
    params["gamma"] = fit.params.gamma;
    params["d"] = fit.params.d;
    params["delta"] = fit.params.delta;
    params["omega_r"] = fit.params.omega_r;
    params["alpha_r"] = fit.params.alpha_r;
    params["beta_r"] = fit.params.beta_r;
    j["params"] = std::move(params);
    j["loglik"] = fit.loglik;
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["sample_size"] = fit.sample_size;
    j["backcast"] = fit.backcast;
    j["rv_backcast"] = fit.rv_backcast;
    j["figarch_truncation"] = fit.figarch_truncation;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open fit output: " + path);
    out << j.dump(2) << '\n';
}

VarianceModelFit load_fit(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open fit file: " + path);
    json j;
    in >> j;
    if (j.value("schema", "") != std::string("volcast_fit_v1")) {
        throw std::runtime_error("unexpected fit schema in " + path);
    }
    VarianceModelFit fit;
    fit.spec.kind = model_kind_from_string(j.at("kind").get<std::string>());
    fit.spec.p = j.at("p").get<int>();
    fit.spec.q = j.at("q").get<int>();
    const auto& p = j.at("params");
    fit.params.omega = p.at("omega").get<double>();
    fit.params.alpha = p.at("alpha").get<std::vector<double>>();
    fit.params.beta = p.at("beta").get<std::vector<double>>();
    fit.params.gamma = p.at("gamma").get<std::vector<double>>();
    fit.params.d = p.at("d").get<double>();
    fit.params.delta = p.at("delta").get<double>();
    fit.params.omega_r = p.at("omega_r").get<double>();
    fit.params.alpha_r = p.at("alpha_r").get<double>();
    fit.params.beta_r = p.at("beta_r").get<double>();
    fit.loglik = j.at("loglik").get<double>();
    fit.converged = j.at("converged").get<bool>();
    fit.iterations = j.at("iterations").get<int>();
    fit.sample_size = j.at("sample_size").get<std::size_t>();
    fit.backcast = j.at("backcast").get<double>();
    fit.rv_backcast = j.at("rv_backcast").get<double>();
    fit.figarch_truncation = j.at("figarch_truncation").get<int>();
    return fit;
}

}  // namespace volcast::econ
