#pragma once

#include <optional>
#include <string>
#include <vector>

#include "volcast/common.hpp"
#include "volcast/optimize.hpp"

namespace volcast::econ {

/// Every classical baseline, plus the no-model martingale.
enum class ModelKind { garch, igarch, figarch, tarch, aparch, agarch, egarch, heavy, martingale };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Model family and recursion orders. p counts innovation lags, q counts
/// variance (or indicator) lags. FIGARCH and HEAVY support (1,1) only.
struct ModelSpec {
    ModelKind kind = ModelKind::garch;
    int p = 1;
    int q = 1;
};

/// Named parameters shared across the model family.
///
/// Per kind:
///  - garch/igarch:  omega, alpha[p], beta[q]
///  - figarch:       omega, alpha[1], beta[1], d in (0,1); the ARCH(inf)
///                   weights come from phi = alpha + beta, so d -> 0
///                   recovers GARCH(1,1) with the same (omega, alpha, beta)
///  - tarch:         omega, alpha[p] on squared shocks, beta[q] on squared
///                   negative shocks (indicator form, no variance lag)
///  - aparch:        omega, alpha[p], beta[q], gamma[p] (|gamma|<1), delta>0
///  - agarch:        omega, alpha[p], beta[q], gamma[p] (shift, any real)
///  - egarch:        omega, alpha[p], gamma[p], beta[q]; sign restrictions
///                   lifted, recursion runs in log variance
///  - heavy:         omega, alpha[1], beta[1] for the variance equation plus
///                   omega_r, alpha_r, beta_r for the realised-measure one
struct ParamVector {
    double omega = 0.0;
    std::vector<double> alpha;
    std::vector<double> beta;
    std::vector<double> gamma;
    double d = 0.0;
    double delta = 2.0;
    double omega_r = 0.0;
    double alpha_r = 0.0;
    double beta_r = 0.0;
};

/// Throws invalid_argument when the parameters violate the kind's
/// constraints (non-negativity, IGARCH unit sum, |gamma|<1 for APARCH,
/// 0<d<1, HEAVY persistence bounds; EGARCH is exempt from sign rules).
void validate_params(const ModelSpec& spec, const ParamVector& params);

struct PathOptions {
    /// Pre-sample seed for sigma^2 and eps^2 (ln thereof for EGARCH).
    /// Defaults to the mean square of the given returns.
    std::optional<double> backcast;
    /// Pre-sample realised-measure seed for HEAVY; defaults to mean RV.
    std::optional<double> rv_backcast;
    /// FIGARCH ARCH(inf) truncation; 0 means min(1000, T).
    int figarch_truncation = 0;
};

/// Evaluates the conditional-variance recursion over the return series with
/// mu = 0 (innovations are the returns themselves). HEAVY needs the aligned
/// realised-variance series. A non-finite recursion value throws with the
/// offending index.
std::vector<double> variance_path(const ModelSpec& spec, const ParamVector& params,
                                  const std::vector<double>& returns, const std::vector<double>& rv = {},
                                  const PathOptions& options = {});

/// HEAVY's second recursion, the conditional mean of the realised measure.
std::vector<double> heavy_mu_path(const ParamVector& params, const std::vector<double>& rv,
                                  const PathOptions& options = {});

/// Gaussian quasi log-likelihood, negated:
///   0.5 * sum_t [ln(2 pi) + ln sigma2_t + r_t^2 / sigma2_t]
/// HEAVY adds the same form for RV around mu_t. Returns +infinity when the
/// path degenerates instead of throwing, so optimizers can reject the point.
double negative_log_likelihood(const ModelSpec& spec, const ParamVector& params,
                               const std::vector<double>& returns, const std::vector<double>& rv = {},
                               const PathOptions& options = {});

/// A fitted model together with its likelihood diagnostics.
struct VarianceModelFit {
    ModelSpec spec;
    ParamVector params;
    double loglik = 0.0;
    bool converged = false;
    int iterations = 0;
    std::vector<double> sigma2;   // fitted path over the estimation sample
    std::size_t sample_size = 0;
    double backcast = 0.0;        // frozen at fit time; rolling forecasts reuse it
    double rv_backcast = 0.0;
    int figarch_truncation = 0;
};

struct FitOptions {
    optimize::MinimizeOptions minimize;
    std::size_t min_observations = 100;
};

struct FitDiagnostics {
    /// Accepted objective values per start; each sequence is non-increasing.
    std::vector<std::vector<double>> accepted_nll;
    std::vector<double> final_nll;
};

/// Constrained maximum likelihood through unconstrained BFGS over
/// transformed parameters, with three deterministic starts
/// (variance-targeted, high-persistence, low-persistence). When no start
/// converges the best point is still returned with converged = false.
VarianceModelFit fit(const ModelSpec& spec, const std::vector<double>& returns,
                     const std::vector<double>& rv = {}, const FitOptions& options = {},
                     FitDiagnostics* diagnostics = nullptr);

/// The transformed-space objective behind fit(), exposed so gradient checks
/// can probe exactly what the optimizer sees.
struct FitObjective {
    int dim = 0;
    optimize::Objective f;
    std::function<ParamVector(const std::vector<double>&)> decode;
    std::function<std::vector<double>(const ParamVector&)> encode;
};
FitObjective make_fit_objective(const ModelSpec& spec, const std::vector<double>& returns,
                                const std::vector<double>& rv = {}, const PathOptions& options = {});

/// One-step-ahead variance forecast from observed history. The recursion is
/// advanced once past the end of the data using the fit's frozen backcasts.
double forecast_one_step(const VarianceModelFit& fit, const std::vector<double>& returns,
                         const std::vector<double>& rv = {});

/// sigma^2 values at indices [first_index, returns.size()) computed causally
/// in a single pass; element k equals forecast_one_step on the first k
/// observations, bit for bit.
std::vector<double> rolling_forecasts(const VarianceModelFit& fit, const std::vector<double>& returns,
                                      const std::vector<double>& rv, std::size_t first_index);

/// Random-walk-in-RV baseline.
inline double martingale_forecast(double last_rv) { return last_rv; }

/// Fit JSON persistence, schema "volcast_fit_v1".
void save_fit(const VarianceModelFit& fit, const std::string& path);
VarianceModelFit load_fit(const std::string& path);

}  // namespace volcast::econ
