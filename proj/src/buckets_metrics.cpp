#include "subcal/buckets_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace subcal {

BucketGrid::BucketGrid(int lambda) : lambda_(lambda) {
    if (lambda < 1) throw std::invalid_argument("lambda must be a positive integer");
}

int BucketGrid::index_of(double yhat) const {
    if (!(yhat >= 0.0 && yhat <= 1.0)) throw std::out_of_range("prediction outside [0,1]");
    // Compare against the exact midpoints (2i+1)/(2 lambda); both the midpoint
    // and any rational prediction grid value are correctly rounded quotients,
    // so equal rationals compare equal.
    const double two_lambda = 2.0 * lambda_;
    int i = static_cast<int>(std::floor(yhat * lambda_ + 0.5));
    i = std::clamp(i, 0, lambda_);
    while (i > 0 && yhat <= (2.0 * i - 1.0) / two_lambda) --i;
    while (i < lambda_ && yhat > (2.0 * i + 1.0) / two_lambda) ++i;
    return i;
}

// ---------------------------------------------------------------------------

CalibrationAccumulator::CalibrationAccumulator(std::string metric, int rows, const BucketGrid& grid)
    : metric_(std::move(metric)), grid_(grid), cells_(Matrix::Zero(rows, grid.size())) {}

void CalibrationAccumulator::add(std::span<const double> row_weights, double yhat, int y) {
    if (row_weights.size() != static_cast<std::size_t>(cells_.rows()))
        throw std::invalid_argument("row weight count mismatch");
    const int v = grid_.index_of(yhat);
    const double residual = yhat - static_cast<double>(y);
    for (std::size_t r = 0; r < row_weights.size(); ++r) {
        const double w = row_weights[r];
        if (!(w >= 0.0 && w <= 1.0)) throw std::domain_error("distinguisher value outside [0,1]");
        cells_(static_cast<Eigen::Index>(r), v) += w * residual;
    }
    ++rounds_;
}

void CalibrationAccumulator::add_indicator(int row, double yhat, int y) {
    const int v = grid_.index_of(yhat);
    cells_(row, v) += 1.0 * (yhat - static_cast<double>(y));
    ++rounds_;
}

double CalibrationAccumulator::max_abs() const { return cells_.size() ? cells_.cwiseAbs().maxCoeff() : 0.0; }

ErrorReport CalibrationAccumulator::report() const {
    ErrorReport r;
    r.metric = metric_;
    r.cells = cells_;
    r.rounds = rounds_;
    r.max_abs = 0.0;
    for (Eigen::Index i = 0; i < cells_.rows(); ++i) {
        for (Eigen::Index v = 0; v < cells_.cols(); ++v) {
            const double a = std::abs(cells_(i, v));
            if (a > r.max_abs) {
                r.max_abs = a;
                r.argmax_row = static_cast<int>(i);
                r.argmax_bucket = static_cast<int>(v);
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------------------

ErrorReport weighted_calibration(std::string metric, int rows, const RowWeights& weights,
                                 const Transcript& transcript, const BucketGrid& grid) {
    CalibrationAccumulator acc(std::move(metric), rows, grid);
    std::vector<double> buf(static_cast<std::size_t>(rows));
    for (const Round& r : transcript.rounds) {
        weights(r.x, buf);
        acc.add(buf, r.yhat, r.y);
    }
    return acc.report();
}

namespace {

void check_dimension(const MixtureModel& model, const Transcript& transcript) {
    for (const Round& r : transcript.rounds)
        if (r.x.size() != model.d()) throw std::invalid_argument("transcript features do not match model dimension");
}

}  // namespace

ErrorReport dce(const MixtureModel& model, const Transcript& transcript, const BucketGrid& grid) {
    check_dimension(model, transcript);
    return weighted_calibration(
        "dce", model.k(),
        [&](const Vector& x, std::span<double> out) {
            std::fill(out.begin(), out.end(), 0.0);
            out[static_cast<std::size_t>(model.discriminant(x))] = 1.0;
        },
        transcript, grid);
}

ErrorReport lce(const MixtureModel& model, const Transcript& transcript, const BucketGrid& grid) {
    check_dimension(model, transcript);
    return weighted_calibration(
        "lce", model.k(),
        [&](const Vector& x, std::span<double> out) {
            const Vector p = model.posterior(x);
            for (int g = 0; g < model.k(); ++g) out[static_cast<std::size_t>(g)] = p[g];
        },
        transcript, grid);
}

ErrorReport mce(std::span<const Distinguisher> distinguishers, const Transcript& transcript,
                const BucketGrid& grid) {
    if (distinguishers.empty()) throw std::invalid_argument("mce needs at least one distinguisher");
    const DistinguisherBank bank({distinguishers.begin(), distinguishers.end()});
    return weighted_calibration(
        "mce", static_cast<int>(bank.size()),
        [&](const Vector& x, std::span<double> out) { bank.evaluate(x, out); }, transcript, grid);
}

ErrorReport mce(const Matrix& table, const Transcript& transcript, const BucketGrid& grid) {
    if (table.cols() != static_cast<Eigen::Index>(transcript.size()))
        throw std::invalid_argument("table columns must match transcript length");
    CalibrationAccumulator acc("mce", static_cast<int>(table.rows()), grid);
    std::vector<double> buf(static_cast<std::size_t>(table.rows()));
    for (std::size_t t = 0; t < transcript.size(); ++t) {
        for (Eigen::Index i = 0; i < table.rows(); ++i) buf[static_cast<std::size_t>(i)] = table(i, static_cast<Eigen::Index>(t));
        acc.add(buf, transcript.rounds[t].yhat, transcript.rounds[t].y);
    }
    return acc.report();
}

ErrorReport calibration_error(const Transcript& transcript, const BucketGrid& grid) {
    return weighted_calibration(
        "calibration", 1, [](const Vector&, std::span<double> out) { out[0] = 1.0; }, transcript, grid);
}

nlohmann::json report_to_json(const ErrorReport& report, const BucketGrid& grid) {
    nlohmann::json cells = nlohmann::json::array();
    for (Eigen::Index i = 0; i < report.cells.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index v = 0; v < report.cells.cols(); ++v) row.push_back(report.cells(i, v));
        cells.push_back(row);
    }
    return {{"metric", report.metric},
            {"T", report.rounds},
            {"lambda", grid.lambda()},
            {"max_abs", report.max_abs},
            {"argmax_g", report.argmax_row},
            {"argmax_v", grid.value(report.argmax_bucket)},
            {"cells", cells}};
}

std::string report_csv_header() { return "metric,T,max_abs,argmax_g,argmax_v"; }

std::string report_csv_row(const ErrorReport& report, const BucketGrid& grid) {
    std::ostringstream os;
    os.precision(17);
    os << report.metric << ',' << report.rounds << ',' << report.max_abs << ',' << report.argmax_row << ','
       << grid.value(report.argmax_bucket);
    return os.str();
}

}  // namespace subcal
