#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tripaudit/common.hpp"
#include "tripaudit/parallel.hpp"

namespace tripaudit {

// One-dimensional Gaussian mixture fitted by EM. The anomalous-ride filter
// uses k=2: one component for normal rides, one for overpriced ones.
struct GmmModel {
    int k = 0;
    std::vector<double> weights;
    std::vector<double> means;
    std::vector<double> variances;
    double log_likelihood = 0.0;
    int iterations = 0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["k"] = k;
        j["weights"] = weights;
        j["means"] = means;
        j["variances"] = variances;
        j["log_likelihood"] = log_likelihood;
        j["iterations"] = iterations;
        return j;
    }
};

struct GmmOptions {
    double tol = 1e-6;  // on mean log-likelihood change
    int max_iter = 200;
    std::uint64_t seed = 0;  // initialization is deterministic; kept for interface stability
};

namespace detail {

struct GmmSufficientStats {
    double log_likelihood = 0.0;
    std::vector<double> resp_sum;    // per component
    std::vector<double> resp_x;      // sum of resp * x
    std::vector<double> resp_xx;     // sum of resp * (x - mean)^2
};

constexpr double kLogTwoPi = 1.8378770664093453;

// One fused E-step pass: log-likelihood under the current parameters plus
// the sufficient statistics for the next M-step. Chunked so the reduction
// order is fixed regardless of thread count.
inline GmmSufficientStats gmm_estep(std::span<const double> values, const GmmModel& model,
                                    int threads) {
    const int k = model.k;
    const std::size_t n = values.size();
    constexpr std::size_t chunk_size = 65536;
    const std::size_t n_chunks = (n + chunk_size - 1) / chunk_size;

    std::vector<double> log_w(static_cast<std::size_t>(k));
    std::vector<double> inv_2var(static_cast<std::size_t>(k));
    std::vector<double> log_norm(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        auto ju = static_cast<std::size_t>(j);
        log_w[ju] = std::log(model.weights[ju]);
        inv_2var[ju] = 0.5 / model.variances[ju];
        log_norm[ju] = -0.5 * (kLogTwoPi + std::log(model.variances[ju]));
    }

    struct ChunkPartial {
        Neumaier ll;
        std::vector<Neumaier> resp_sum, resp_x, resp_xx;
    };
    std::vector<ChunkPartial> partials(n_chunks);

    parallel_for(
        n_chunks,
        [&](std::size_t c) {
            ChunkPartial part;
            part.resp_sum.resize(static_cast<std::size_t>(k));
            part.resp_x.resize(static_cast<std::size_t>(k));
            part.resp_xx.resize(static_cast<std::size_t>(k));
            std::vector<double> log_p(static_cast<std::size_t>(k));
            std::size_t begin = c * chunk_size;
            std::size_t end = std::min(n, begin + chunk_size);
            for (std::size_t i = begin; i < end; ++i) {
                double x = values[i];
                double max_lp = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < k; ++j) {
                    auto ju = static_cast<std::size_t>(j);
                    double dev = x - model.means[ju];
                    log_p[ju] = log_w[ju] + log_norm[ju] - dev * dev * inv_2var[ju];
                    max_lp = std::max(max_lp, log_p[ju]);
                }
                double denom = 0.0;
                for (int j = 0; j < k; ++j) {
                    denom += std::exp(log_p[static_cast<std::size_t>(j)] - max_lp);
                }
                part.ll.add(max_lp + std::log(denom));
                for (int j = 0; j < k; ++j) {
                    auto ju = static_cast<std::size_t>(j);
                    double r = std::exp(log_p[ju] - max_lp) / denom;
                    double dev = x - model.means[ju];
                    part.resp_sum[ju].add(r);
                    part.resp_x[ju].add(r * x);
                    part.resp_xx[ju].add(r * dev * dev);
                }
            }
            partials[c] = std::move(part);
        },
        threads);

    GmmSufficientStats stats;
    stats.resp_sum.assign(static_cast<std::size_t>(k), 0.0);
    stats.resp_x.assign(static_cast<std::size_t>(k), 0.0);
    stats.resp_xx.assign(static_cast<std::size_t>(k), 0.0);
    Neumaier ll;
    std::vector<Neumaier> rs(static_cast<std::size_t>(k)), rx(static_cast<std::size_t>(k)),
        rxx(static_cast<std::size_t>(k));
    for (std::size_t c = 0; c < n_chunks; ++c) {
        ll.merge(partials[c].ll);
        for (int j = 0; j < k; ++j) {
            auto ju = static_cast<std::size_t>(j);
            rs[ju].merge(partials[c].resp_sum[ju]);
            rx[ju].merge(partials[c].resp_x[ju]);
            rxx[ju].merge(partials[c].resp_xx[ju]);
        }
    }
    stats.log_likelihood = ll.value();
    for (int j = 0; j < k; ++j) {
        auto ju = static_cast<std::size_t>(j);
        stats.resp_sum[ju] = rs[ju].value();
        stats.resp_x[ju] = rx[ju].value();
        stats.resp_xx[ju] = rxx[ju].value();
    }
    return stats;
}

}  // namespace detail

// EM fit. Initialization is deterministic and order-independent: component
// means at spread percentiles of the sorted data (25th/99th for k=2), equal
// weights, variances at the population variance. The input is fitted in
// sorted order so any permutation of `values` yields bit-identical
// parameters.
inline GmmModel fit_gmm(std::span<const double> values, int k, const GmmOptions& options = {},
                        std::vector<double>* log_likelihood_trace = nullptr, int threads = 0) {
    if (k < 1) throw std::invalid_argument("fit_gmm: k must be >= 1");
    if (values.size() < static_cast<std::size_t>(2 * k)) {
        throw DegeneracyError("outlier: need at least 2k values to fit a " + std::to_string(k) +
                              "-component mixture");
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw InputError("outlier: non-finite value in GMM input");
    }

    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    std::size_t distinct = 1;
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i] != sorted[i - 1]) ++distinct;
    }
    if (distinct < static_cast<std::size_t>(k)) {
        throw DegeneracyError("outlier: fewer distinct values (" + std::to_string(distinct) +
                              ") than components (" + std::to_string(k) + ")");
    }

    double pop_var = population_variance(sorted);
    double var_floor = std::max(1e-8 * pop_var, 1e-300);

    GmmModel model;
    model.k = k;
    model.weights.assign(static_cast<std::size_t>(k), 1.0 / k);
    model.variances.assign(static_cast<std::size_t>(k), std::max(pop_var, var_floor));
    model.means.resize(static_cast<std::size_t>(k));
    if (k == 1) {
        model.means[0] = mean(sorted);
    } else if (k == 2) {
        model.means[0] = percentile_sorted(sorted, 25.0);
        model.means[1] = percentile_sorted(sorted, 99.0);
    } else {
        for (int j = 0; j < k; ++j) {
            model.means[static_cast<std::size_t>(j)] =
                percentile_sorted(sorted, 100.0 * (j + 0.5) / k);
        }
    }
    // Percentile init can collide on heavily tied data; nudge apart so EM can
    // separate the components.
    for (int j = 1; j < k; ++j) {
        auto ju = static_cast<std::size_t>(j);
        if (model.means[ju] <= model.means[ju - 1]) {
            model.means[ju] = model.means[ju - 1] + std::sqrt(var_floor) + 1e-12;
        }
    }

    const double n = static_cast<double>(sorted.size());
    double prev_ll = -std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;

    for (int iter = 0; iter < options.max_iter; ++iter) {
        detail::GmmSufficientStats stats = detail::gmm_estep(sorted, model, threads);
        if (log_likelihood_trace) log_likelihood_trace->push_back(stats.log_likelihood);
        double slack = 1e-9 * (1.0 + std::abs(stats.log_likelihood));
        if (iter > 0 && stats.log_likelihood < prev_ll - slack) {
            throw std::logic_error("outlier: EM log-likelihood decreased");
        }
        if (iter > 0 && std::abs(stats.log_likelihood - prev_ll) / n < options.tol) {
            model.log_likelihood = stats.log_likelihood;
            iterations = iter;
            converged = true;
            break;
        }
        prev_ll = stats.log_likelihood;

        for (int j = 0; j < k; ++j) {
            auto ju = static_cast<std::size_t>(j);
            double nj = stats.resp_sum[ju];
            if (nj <= 0.0) continue;  // component lost all mass; keep parameters
            double new_mean = stats.resp_x[ju] / nj;
            // resp_xx was taken around the old mean; shift to the new one.
            double old_mean = model.means[ju];
            double shifted = stats.resp_xx[ju] / nj - (new_mean - old_mean) * (new_mean - old_mean);
            model.weights[ju] = nj / n;
            model.means[ju] = new_mean;
            model.variances[ju] = std::max(shifted, var_floor);
        }
        iterations = iter + 1;
    }

    if (!converged) {
        detail::GmmSufficientStats stats = detail::gmm_estep(sorted, model, threads);
        if (log_likelihood_trace) log_likelihood_trace->push_back(stats.log_likelihood);
        model.log_likelihood = stats.log_likelihood;
    }
    model.iterations = iterations;
    return model;
}

struct AnomalyFlags {
    std::vector<std::uint8_t> mask;  // 1 = anomalous
    std::size_t flagged = 0;
    std::optional<std::string> warning;
};

// Assigns each value to its maximum-responsibility component; the component
// with the larger mean is the anomalous one. Equal means carry no direction,
// so nothing is flagged and a warning is attached.
inline AnomalyFlags flag_anomalies(const GmmModel& model, std::span<const double> values) {
    if (model.k != 2) throw std::invalid_argument("flag_anomalies: model must have k=2");
    AnomalyFlags out;
    out.mask.assign(values.size(), 0);
    if (model.means[0] == model.means[1]) {
        out.warning = "component means are equal; no anomalous side exists, nothing flagged";
        return out;
    }
    std::size_t anomalous = model.means[1] > model.means[0] ? 1 : 0;
    std::size_t normal = 1 - anomalous;
    double lw_a = std::log(model.weights[anomalous]) - 0.5 * std::log(model.variances[anomalous]);
    double lw_n = std::log(model.weights[normal]) - 0.5 * std::log(model.variances[normal]);
    double inv2_a = 0.5 / model.variances[anomalous];
    double inv2_n = 0.5 / model.variances[normal];
    double mu_a = model.means[anomalous];
    double mu_n = model.means[normal];
    std::size_t flagged = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        double da = values[i] - mu_a;
        double dn = values[i] - mu_n;
        double score_a = lw_a - da * da * inv2_a;
        double score_n = lw_n - dn * dn * inv2_n;
        if (score_a > score_n) {
            out.mask[i] = 1;
            ++flagged;
        }
    }
    out.flagged = flagged;
    return out;
}

}  // namespace tripaudit
