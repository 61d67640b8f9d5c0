#pragma once

// Online multicalibration driven by Hedge over experts (sign, distinguisher,
// bucket). Each round the learner plays the minimax randomized prediction
// against the current expert distribution; Hedge then updates on
//
//   c_t(i, g, v) = 1 - 1/2 E_{yhat}[1 + i g(x_t) 1[yhat in v] (yhat - y_t)].
//
// The bucket indicator is applied to the prediction, matching the
// multicalibration error being controlled.
//
// Two implementations share the same solver:
//   * HedgeState + minimax_predict + hedge_update: direct, O(N) per round,
//     used as the reference path and in tests.
//   * MulticalibrationEngine: keeps per-cell signed sums S(g, v) only. Since
//     every expert outside the played buckets pays exactly 1/2, the Hedge
//     weight of (i, g, v) is proportional to exp(i * eta * S(g, v) / 2).

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "subcal/buckets_metrics.hpp"
#include "subcal/distinguisher.hpp"
#include "subcal/mixture_model.hpp"
#include "subcal/rng.hpp"

namespace subcal {

struct ExpertIndex {
    int sign = 1;  // +1 or -1
    int distinguisher = 0;
    int bucket = 0;
};

std::size_t expert_count(std::size_t num_distinguishers, const BucketGrid& grid);
std::size_t expert_offset(const ExpertIndex& e, std::size_t num_distinguishers, const BucketGrid& grid);
ExpertIndex expert_at(std::size_t offset, std::size_t num_distinguishers, const BucketGrid& grid);

// eta = sqrt(8 ln N / T)
double horizon_learning_rate(std::size_t experts, long horizon);

class HedgeState {
public:
    HedgeState(std::size_t experts, double eta);

    std::size_t size() const { return static_cast<std::size_t>(cumulative_.size()); }
    double eta() const { return eta_; }
    long round() const { return round_; }
    const Vector& cumulative_costs() const { return cumulative_; }

    // Normalized exp(-eta * cumulative cost).
    Vector weights() const;
    // Costs must lie in [0,1].
    void update(std::span<const double> costs);

private:
    Vector cumulative_;
    double eta_;
    long round_ = 0;
};

// The finite grid {0, 1/M, ..., 1} predictions are drawn from. M is a
// multiple of 2*lambda so every bucket boundary is a grid point.
class PredictionGrid {
public:
    PredictionGrid(const BucketGrid& buckets, int resolution);
    // M = 4 lambda ceil(sqrt(T)), reduced so the spacing stays >= 1e-4.
    static PredictionGrid for_horizon(const BucketGrid& buckets, long horizon);

    int resolution() const { return resolution_; }
    int size() const { return resolution_ + 1; }
    double spacing() const { return 1.0 / resolution_; }
    double value(int j) const { return static_cast<double>(j) / resolution_; }
    int bucket(int j) const { return bucket_[static_cast<std::size_t>(j)]; }
    int first_in_bucket(int v) const { return first_[static_cast<std::size_t>(v)]; }
    int last_in_bucket(int v) const { return last_[static_cast<std::size_t>(v)]; }
    const BucketGrid& buckets() const { return buckets_; }

private:
    BucketGrid buckets_;
    int resolution_;
    std::vector<int> bucket_;
    std::vector<int> first_;
    std::vector<int> last_;
};

struct RandomizedPrediction {
    int support = 1;
    std::array<int, 2> index{0, 0};  // prediction-grid indices, adjacent when support == 2
    std::array<double, 2> value{0.0, 0.0};
    std::array<double, 2> prob{1.0, 0.0};
    // max_y E[s(yhat) (yhat - y)] under the normalized expert distribution.
    double minimax_value = 0.0;

    double mean() const { return prob[0] * value[0] + (support == 2 ? prob[1] * value[1] : 0.0); }
};

// s(v) = sum_{i,g} q(i,g,v) * i * g(x) for every bucket.
std::vector<double> bucket_signal(const HedgeState& state, std::span<const double> distinguisher_values,
                                  const BucketGrid& grid);

// max over y in {0,1} of E_{yhat ~ prediction}[s(yhat) (yhat - y)].
double prediction_value(const RandomizedPrediction& p, std::span<const double> signal, const PredictionGrid& pgrid);

// Exact minimizer of prediction_value over all point masses and all
// adjacent-pair mixtures. Ties go to the earliest candidate, so s == 0
// yields a point mass at 0.
RandomizedPrediction solve_minimax(std::span<const double> signal, const PredictionGrid& pgrid);

RandomizedPrediction minimax_predict(const HedgeState& state, std::span<const double> distinguisher_values,
                                     const PredictionGrid& pgrid);

// Per-expert costs for one round, laid out as expert_offset().
std::vector<double> expert_costs(std::span<const double> distinguisher_values, const RandomizedPrediction& p, int y,
                                 const BucketGrid& grid);

HedgeState hedge_update(HedgeState state, std::span<const double> distinguisher_values,
                        const RandomizedPrediction& p, int y, const BucketGrid& grid);

struct EngineConfig {
    int lambda = 10;
    long horizon = 0;            // rounds the engine will see; sets eta and the grid
    double eta = 0.0;            // <= 0: horizon_learning_rate
    int pred_grid_resolution = 0;  // <= 0: PredictionGrid::for_horizon
    std::uint64_t seed = 0;
};

class MulticalibrationEngine {
public:
    MulticalibrationEngine(std::size_t num_distinguishers, const EngineConfig& config);

    std::size_t num_distinguishers() const { return num_; }
    std::size_t num_experts() const { return expert_count(num_, grid_); }
    double eta() const { return eta_; }
    long round() const { return round_; }
    const BucketGrid& grid() const { return grid_; }
    const PredictionGrid& prediction_grid() const { return pgrid_; }

    RandomizedPrediction predict(std::span<const double> distinguisher_values);
    // Draws yhat from the prediction with the engine's own stream.
    double realize(const RandomizedPrediction& p);
    void update(std::span<const double> distinguisher_values, const RandomizedPrediction& p, int y);

    // Expert distribution implied by the signed sums, for cross-checks.
    Vector expert_weights() const;

private:
    void cell_pair(double a, double& up, double& down) const;
    void rescale();

    std::size_t num_;
    BucketGrid grid_;
    PredictionGrid pgrid_;
    double eta_;
    long round_ = 0;
    Rng rng_;
    Matrix signed_sums_;  // S(g, v)
    Matrix up_;           // exp(a - off), a = eta S / 2
    Matrix down_;         // exp(-a - off)
    double offset_ = 0.0;
    double product_ = 1.0;  // exp(-2 offset), or 0 when that underflows
    double z_ = 0.0;
    std::vector<double> signal_;
};

struct MulticalibrationRun {
    Transcript transcript;
    double max_minimax_value = 0.0;
    double max_grid_spacing = 0.0;
};

// Runs the engine on the first T samples of the stream. The optional trace
// receives CSV rows t,x_hash,y,yhat,bucket,minimax_value.
MulticalibrationRun run_multicalibration(const DistinguisherBank& distinguishers,
                                         std::span<const LabeledSample> stream, long T, const EngineConfig& config,
                                         std::ostream* trace = nullptr);

std::uint64_t feature_hash(const Vector& x);

}  // namespace subcal
