#pragma once

// Bucket grid {0, 1/lambda, ..., 1} and the three calibration functionals
// over a transcript of (x_t, y_t, yhat_t):
//
//   cell(r, v) = sum_t  w_r(x_t) * 1[yhat_t in v] * (yhat_t - y_t)
//   error      = max_{r, v} |cell(r, v)|
//
// where the row weights w_r are the true discriminant indicators (DCE), the
// true posteriors (LCE) or an arbitrary distinguisher set (MCE).

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "subcal/distinguisher.hpp"
#include "subcal/mixture_model.hpp"

namespace subcal {

class BucketGrid {
public:
    explicit BucketGrid(int lambda);

    int lambda() const { return lambda_; }
    int size() const { return lambda_ + 1; }
    double value(int i) const { return static_cast<double>(i) / lambda_; }

    // Index of the nearest grid value. A prediction exactly halfway between
    // two grid values belongs to the lower one.
    int index_of(double yhat) const;
    double bucket_of(double yhat) const { return value(index_of(yhat)); }

private:
    int lambda_;
};

enum class Phase : int { collect = 1, predict = 2 };

struct Round {
    Vector x;
    int y = 0;
    double yhat = 0.0;
    Phase phase = Phase::predict;
    int cluster = -1;  // routed cluster, when the learner uses one
};

struct Transcript {
    std::vector<Round> rounds;

    std::size_t size() const { return rounds.size(); }
    bool empty() const { return rounds.empty(); }
};

struct ErrorReport {
    std::string metric;
    Matrix cells;  // rows x (lambda + 1) signed sums
    double max_abs = 0.0;
    int argmax_row = 0;
    int argmax_bucket = 0;
    std::size_t rounds = 0;
};

// Incremental per-cell accumulator; single writer.
class CalibrationAccumulator {
public:
    CalibrationAccumulator(std::string metric, int rows, const BucketGrid& grid);

    void add(std::span<const double> row_weights, double yhat, int y);
    // Convenience for 0/1 row membership.
    void add_indicator(int row, double yhat, int y);

    std::size_t rounds() const { return rounds_; }
    double max_abs() const;
    ErrorReport report() const;

private:
    std::string metric_;
    BucketGrid grid_;
    Matrix cells_;
    std::size_t rounds_ = 0;
};

// Fills row weights for one feature vector.
using RowWeights = std::function<void(const Vector& x, std::span<double> out)>;

ErrorReport weighted_calibration(std::string metric, int rows, const RowWeights& weights,
                                 const Transcript& transcript, const BucketGrid& grid);

ErrorReport dce(const MixtureModel& model, const Transcript& transcript, const BucketGrid& grid);
ErrorReport lce(const MixtureModel& model, const Transcript& transcript, const BucketGrid& grid);
ErrorReport mce(std::span<const Distinguisher> distinguishers, const Transcript& transcript,
                const BucketGrid& grid);
// Tabulated variant: table is functions x rounds.
ErrorReport mce(const Matrix& table, const Transcript& transcript, const BucketGrid& grid);
// Plain bucketed calibration error (single constant row).
ErrorReport calibration_error(const Transcript& transcript, const BucketGrid& grid);

nlohmann::json report_to_json(const ErrorReport& report, const BucketGrid& grid);
// metric,T,max_abs,argmax_g,argmax_v
std::string report_csv_header();
std::string report_csv_row(const ErrorReport& report, const BucketGrid& grid);

}  // namespace subcal
