#include "subcal/online_calibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <ostream>
#include <stdexcept>

namespace subcal {

std::size_t expert_count(std::size_t num_distinguishers, const BucketGrid& grid) {
    return 2 * num_distinguishers * static_cast<std::size_t>(grid.size());
}

std::size_t expert_offset(const ExpertIndex& e, std::size_t num_distinguishers, const BucketGrid& grid) {
    const std::size_t sign_idx = e.sign > 0 ? 0 : 1;
    return (sign_idx * num_distinguishers + static_cast<std::size_t>(e.distinguisher)) *
               static_cast<std::size_t>(grid.size()) +
           static_cast<std::size_t>(e.bucket);
}

ExpertIndex expert_at(std::size_t offset, std::size_t num_distinguishers, const BucketGrid& grid) {
    const auto b = static_cast<std::size_t>(grid.size());
    ExpertIndex e;
    e.bucket = static_cast<int>(offset % b);
    const std::size_t rest = offset / b;
    e.distinguisher = static_cast<int>(rest % num_distinguishers);
    e.sign = rest / num_distinguishers == 0 ? 1 : -1;
    return e;
}

double horizon_learning_rate(std::size_t experts, long horizon) {
    if (experts < 2 || horizon < 1) return 1.0;
    return std::sqrt(8.0 * std::log(static_cast<double>(experts)) / static_cast<double>(horizon));
}

// ---------------------------------------------------------------------------
// HedgeState

HedgeState::HedgeState(std::size_t experts, double eta)
    : cumulative_(Vector::Zero(static_cast<Eigen::Index>(experts))), eta_(eta) {
    if (experts == 0) throw std::invalid_argument("Hedge needs at least one expert");
    if (!(eta > 0.0)) throw std::invalid_argument("learning rate must be positive");
}

Vector HedgeState::weights() const { return softmax(-eta_ * cumulative_); }

void HedgeState::update(std::span<const double> costs) {
    if (costs.size() != size()) throw std::invalid_argument("cost vector has the wrong length");
    for (std::size_t i = 0; i < costs.size(); ++i) {
        if (!(costs[i] >= 0.0 && costs[i] <= 1.0)) throw std::domain_error("expert cost outside [0,1]");
        cumulative_[static_cast<Eigen::Index>(i)] += costs[i];
    }
    ++round_;
}

// ---------------------------------------------------------------------------
// PredictionGrid

PredictionGrid::PredictionGrid(const BucketGrid& buckets, int resolution)
    : buckets_(buckets), resolution_(resolution) {
    if (resolution < 1 || resolution % (2 * buckets.lambda()) != 0)
        throw std::invalid_argument("prediction grid resolution must be a positive multiple of 2*lambda");
    bucket_.resize(static_cast<std::size_t>(size()));
    first_.assign(static_cast<std::size_t>(buckets.size()), -1);
    last_.assign(static_cast<std::size_t>(buckets.size()), -1);
    for (int j = 0; j < size(); ++j) {
        const int v = buckets.index_of(value(j));
        bucket_[static_cast<std::size_t>(j)] = v;
        if (first_[static_cast<std::size_t>(v)] < 0) first_[static_cast<std::size_t>(v)] = j;
        last_[static_cast<std::size_t>(v)] = j;
    }
}

PredictionGrid PredictionGrid::for_horizon(const BucketGrid& buckets, long horizon) {
    const long root = static_cast<long>(std::ceil(std::sqrt(static_cast<double>(std::max(1L, horizon)))));
    const long cap = std::max(1L, 10000L / (4L * buckets.lambda()));
    return PredictionGrid(buckets, static_cast<int>(4L * buckets.lambda() * std::min(root, cap)));
}

// ---------------------------------------------------------------------------
// Minimax step

std::vector<double> bucket_signal(const HedgeState& state, std::span<const double> dvals, const BucketGrid& grid) {
    const std::size_t n = dvals.size();
    if (n == 0) throw std::invalid_argument("empty distinguisher set");
    if (state.size() != expert_count(n, grid)) throw std::invalid_argument("Hedge state does not match distinguishers");
    const Vector q = state.weights();
    std::vector<double> s(static_cast<std::size_t>(grid.size()), 0.0);
    for (int v = 0; v < grid.size(); ++v) {
        double acc = 0.0;
        for (std::size_t g = 0; g < n; ++g) {
            const double plus = q[static_cast<Eigen::Index>(expert_offset({1, static_cast<int>(g), v}, n, grid))];
            const double minus = q[static_cast<Eigen::Index>(expert_offset({-1, static_cast<int>(g), v}, n, grid))];
            acc += dvals[g] * (plus - minus);
        }
        s[static_cast<std::size_t>(v)] = acc;
    }
    return s;
}

double prediction_value(const RandomizedPrediction& p, std::span<const double> signal, const PredictionGrid& pgrid) {
    double weighted = 0.0, bias = 0.0;
    for (int i = 0; i < p.support; ++i) {
        const double s = signal[static_cast<std::size_t>(pgrid.bucket(p.index[static_cast<std::size_t>(i)]))];
        weighted += p.prob[static_cast<std::size_t>(i)] * s * p.value[static_cast<std::size_t>(i)];
        bias += p.prob[static_cast<std::size_t>(i)] * s;
    }
    // y = 0 gives weighted, y = 1 gives weighted - bias.
    return std::max(weighted, weighted - bias);
}

namespace {

RandomizedPrediction point_mass(const PredictionGrid& pgrid, int j) {
    RandomizedPrediction p;
    p.support = 1;
    p.index = {j, j};
    p.value = {pgrid.value(j), pgrid.value(j)};
    p.prob = {1.0, 0.0};
    return p;
}

}  // namespace

RandomizedPrediction solve_minimax(std::span<const double> signal, const PredictionGrid& pgrid) {
    const int buckets = pgrid.buckets().size();
    if (signal.size() != static_cast<std::size_t>(buckets)) throw std::invalid_argument("signal length != buckets");

    RandomizedPrediction best;
    double best_value = 0.0;
    bool have = false;
    auto offer = [&](const RandomizedPrediction& cand, double value) {
        if (!have || value < best_value) {
            best = cand;
            best_value = value;
            have = true;
        }
    };

    for (int v = 0; v < buckets; ++v) {
        const double s = signal[static_cast<std::size_t>(v)];
        // Point masses: s*p is increasing in p when s >= 0, |s|(1-p) decreasing when s < 0.
        if (s >= 0.0) {
            const int j = pgrid.first_in_bucket(v);
            offer(point_mass(pgrid, j), s * pgrid.value(j));
        } else {
            const int j = pgrid.last_in_bucket(v);
            offer(point_mass(pgrid, j), -s * (1.0 - pgrid.value(j)));
        }
        if (v + 1 == buckets) break;
        // Adjacent grid points across a bucket boundary with opposite signals:
        // mixing to zero bias removes the dependence on y.
        const double s_next = signal[static_cast<std::size_t>(v + 1)];
        if ((s < 0.0 && s_next > 0.0) || (s > 0.0 && s_next < 0.0)) {
            const int a = pgrid.last_in_bucket(v);
            const int b = a + 1;
            const double alpha = s_next / (s_next - s);
            RandomizedPrediction mix;
            mix.support = 2;
            mix.index = {a, b};
            mix.value = {pgrid.value(a), pgrid.value(b)};
            mix.prob = {alpha, 1.0 - alpha};
            const double value = alpha * s * mix.value[0] + (1.0 - alpha) * s_next * mix.value[1];
            offer(mix, value);
        }
    }
    best.minimax_value = prediction_value(best, signal, pgrid);
    return best;
}

RandomizedPrediction minimax_predict(const HedgeState& state, std::span<const double> dvals, const PredictionGrid& pgrid) {
    const std::vector<double> s = bucket_signal(state, dvals, pgrid.buckets());
    return solve_minimax(s, pgrid);
}

namespace {

// E_{yhat}[1[yhat in v](yhat - y)] for the (at most two) buckets the prediction touches.
struct BucketResidual {
    int count = 0;
    std::array<int, 2> bucket{0, 0};
    std::array<double, 2> residual{0.0, 0.0};
};

BucketResidual expected_residuals(const RandomizedPrediction& p, int y, const BucketGrid& grid) {
    BucketResidual r;
    for (int i = 0; i < p.support; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const int v = grid.index_of(p.value[ii]);
        const double term = p.prob[ii] * (p.value[ii] - static_cast<double>(y));
        if (r.count > 0 && r.bucket[0] == v) {
            r.residual[0] += term;
        } else {
            r.bucket[static_cast<std::size_t>(r.count)] = v;
            r.residual[static_cast<std::size_t>(r.count)] = term;
            ++r.count;
        }
    }
    return r;
}

}  // namespace

std::vector<double> expert_costs(std::span<const double> dvals, const RandomizedPrediction& p, int y,
                                 const BucketGrid& grid) {
    const std::size_t n = dvals.size();
    std::vector<double> costs(expert_count(n, grid), 0.5);
    const BucketResidual r = expected_residuals(p, y, grid);
    for (int c = 0; c < r.count; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        for (std::size_t g = 0; g < n; ++g) {
            const double signed_term = dvals[g] * r.residual[cc];
            costs[expert_offset({1, static_cast<int>(g), r.bucket[cc]}, n, grid)] = 0.5 - 0.5 * signed_term;
            costs[expert_offset({-1, static_cast<int>(g), r.bucket[cc]}, n, grid)] = 0.5 + 0.5 * signed_term;
        }
    }
    return costs;
}

HedgeState hedge_update(HedgeState state, std::span<const double> dvals, const RandomizedPrediction& p, int y,
                        const BucketGrid& grid) {
    const std::vector<double> costs = expert_costs(dvals, p, y, grid);
    state.update(costs);
    return state;
}

// ---------------------------------------------------------------------------
// MulticalibrationEngine

namespace {

constexpr double kRescaleSlack = 30.0;
// exp(-2 offset) stays a normal double well past this offset.
constexpr double kProductLimit = 300.0;

}  // namespace

MulticalibrationEngine::MulticalibrationEngine(std::size_t num_distinguishers, const EngineConfig& config)
    : num_(num_distinguishers),
      grid_(config.lambda),
      pgrid_(config.pred_grid_resolution > 0 ? PredictionGrid(grid_, config.pred_grid_resolution)
                                             : PredictionGrid::for_horizon(grid_, config.horizon)),
      eta_(config.eta > 0.0 ? config.eta : horizon_learning_rate(expert_count(num_distinguishers, grid_), config.horizon)),
      rng_(config.seed) {
    if (num_ == 0) throw std::invalid_argument("empty distinguisher set");
    const auto rows = static_cast<Eigen::Index>(num_);
    signed_sums_ = Matrix::Zero(rows, grid_.size());
    up_ = Matrix::Ones(rows, grid_.size());
    down_ = Matrix::Ones(rows, grid_.size());
    z_ = 2.0 * static_cast<double>(up_.size());
    signal_.assign(static_cast<std::size_t>(grid_.size()), 0.0);
}

RandomizedPrediction MulticalibrationEngine::predict(std::span<const double> dvals) {
    if (dvals.size() != num_) throw std::invalid_argument("distinguisher value count mismatch");
    const Eigen::Map<const Vector> vals(dvals.data(), static_cast<Eigen::Index>(num_));
    for (int v = 0; v < grid_.size(); ++v)
        signal_[static_cast<std::size_t>(v)] = (up_.col(v).dot(vals) - down_.col(v).dot(vals)) / z_;
    return solve_minimax(signal_, pgrid_);
}

double MulticalibrationEngine::realize(const RandomizedPrediction& p) {
    if (p.support == 1) return p.value[0];
    return uniform01(rng_) < p.prob[0] ? p.value[0] : p.value[1];
}

void MulticalibrationEngine::cell_pair(double a, double& up, double& down) const {
    // up * down = exp(-2 offset); the smaller factor is derived from the larger
    // one unless that product underflows.
    if (product_ > 0.0) {
        if (a >= 0.0) {
            up = std::exp(a - offset_);
            down = product_ / up;
        } else {
            down = std::exp(-a - offset_);
            up = product_ / down;
        }
    } else {
        up = std::exp(a - offset_);
        down = std::exp(-a - offset_);
    }
}

void MulticalibrationEngine::rescale() {
    offset_ = 0.5 * eta_ * signed_sums_.cwiseAbs().maxCoeff();
    product_ = offset_ < kProductLimit ? std::exp(-2.0 * offset_) : 0.0;
    for (Eigen::Index v = 0; v < signed_sums_.cols(); ++v) {
        for (Eigen::Index g = 0; g < signed_sums_.rows(); ++g) {
            cell_pair(0.5 * eta_ * signed_sums_(g, v), up_(g, v), down_(g, v));
        }
    }
    z_ = up_.sum() + down_.sum();
}

void MulticalibrationEngine::update(std::span<const double> dvals, const RandomizedPrediction& p, int y) {
    if (dvals.size() != num_) throw std::invalid_argument("distinguisher value count mismatch");
    const BucketResidual r = expected_residuals(p, y, grid_);
    bool needs_rescale = false;
    for (int c = 0; c < r.count; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        const Eigen::Index v = r.bucket[cc];
        // Cell weights move by exp(+-eta/2 * delta); distinguisher values
        // repeat a lot (indicators), so the factor is cached per value.
        double last = -1.0, f = 1.0, finv = 1.0;
        for (std::size_t g = 0; g < num_; ++g) {
            const double val = dvals[g];
            if (val == 0.0) continue;
            const auto gi = static_cast<Eigen::Index>(g);
            const double delta = val * r.residual[cc];
            signed_sums_(gi, v) += delta;
            if (0.5 * eta_ * std::abs(signed_sums_(gi, v)) > offset_ + kRescaleSlack) needs_rescale = true;
            if (needs_rescale) continue;
            if (val != last) {
                f = std::exp(0.5 * eta_ * delta);
                finv = 1.0 / f;
                last = val;
            }
            double& up = up_(gi, v);
            double& down = down_(gi, v);
            z_ -= up + down;
            up *= f;
            down *= finv;
            z_ += up + down;
        }
    }
    // Exact recomputation from the signed sums, periodically and whenever the
    // weights drift too far from the offset in either direction.
    if (needs_rescale || (round_ + 1) % 4096 == 0 || z_ < 1e-100) rescale();
    ++round_;
}

Vector MulticalibrationEngine::expert_weights() const {
    const std::size_t n = expert_count(num_, grid_);
    Vector logits(static_cast<Eigen::Index>(n));
    for (std::size_t g = 0; g < num_; ++g) {
        for (int v = 0; v < grid_.size(); ++v) {
            const double a = 0.5 * eta_ * signed_sums_(static_cast<Eigen::Index>(g), v);
            logits[static_cast<Eigen::Index>(expert_offset({1, static_cast<int>(g), v}, num_, grid_))] = a;
            logits[static_cast<Eigen::Index>(expert_offset({-1, static_cast<int>(g), v}, num_, grid_))] = -a;
        }
    }
    return softmax(logits);
}

// ---------------------------------------------------------------------------

std::uint64_t feature_hash(const Vector& x) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        unsigned char bytes[sizeof(double)];
        const double v = x[i];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

MulticalibrationRun run_multicalibration(const DistinguisherBank& distinguishers, std::span<const LabeledSample> stream,
                                         long T, const EngineConfig& config, std::ostream* trace) {
    if (distinguishers.size() == 0) throw std::invalid_argument("run_multicalibration needs at least one distinguisher");
    if (T < 0) throw std::invalid_argument("negative horizon");
    if (stream.size() < static_cast<std::size_t>(T)) throw std::runtime_error("data stream exhausted before T rounds");

    EngineConfig cfg = config;
    if (cfg.horizon <= 0) cfg.horizon = std::max(1L, T);
    MulticalibrationEngine engine(distinguishers.size(), cfg);

    MulticalibrationRun out;
    out.max_grid_spacing = engine.prediction_grid().spacing();
    out.transcript.rounds.reserve(static_cast<std::size_t>(T));
    std::vector<double> vals(distinguishers.size());
    if (trace) *trace << "t,x_hash,y,yhat,bucket,minimax_value\n";
    for (long t = 0; t < T; ++t) {
        const LabeledSample& s = stream[static_cast<std::size_t>(t)];
        distinguishers.evaluate(s.x, vals);
        const RandomizedPrediction p = engine.predict(vals);
        const double yhat = engine.realize(p);
        engine.update(vals, p, s.y);
        out.max_minimax_value = std::max(out.max_minimax_value, p.minimax_value);
        out.transcript.rounds.push_back({s.x, s.y, yhat, Phase::predict, -1});
        if (trace) {
            *trace << t + 1 << ',' << feature_hash(s.x) << ',' << s.y << ',' << yhat << ','
                   << engine.grid().bucket_of(yhat) << ',' << p.minimax_value << '\n';
        }
    }
    return out;
}

}  // namespace subcal
