#pragma once

// Distinguisher classes built from sampled candidate mixtures, empirical
// L1 covers of a tabulated function set, held-out cover checks and a
// brute-force pseudo-shattering certifier.
//
// A tabulated set is a (functions x points) matrix of values in [0,1]; the
// empirical distance between two rows is their mean absolute difference.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "subcal/distinguisher.hpp"
#include "subcal/mixture_model.hpp"

namespace subcal {

enum class ClassMode { dce, lce };

std::string_view to_string(ClassMode mode);
ClassMode class_mode_from_string(std::string_view name);

struct CandidateFamily {
    FamilyKind family = FamilyKind::gaussian_isotropic;
    int k = 2;
    int d = 2;
    // Box for component means (rates, for poisson_product).
    Vector mean_lo;
    Vector mean_hi;
    // Range for covariance eigenvalues (sigma^2 for the isotropic family).
    double var_lo = 0.25;
    double var_hi = 4.0;
    // One variance (covariance) draw shared by all components of a candidate:
    // discriminants become halfspaces and posteriors logistic in T(x).
    bool shared_variance = false;
    double weight_floor = kDefaultWeightFloor;
    int M = 500;
    std::uint64_t seed = 0;
};

// Family whose parameter box is fitted to a feature sample: means range over
// the per-coordinate 5%-95% quantiles, variances over [0.1, 1] times the
// average per-coordinate sample variance.
CandidateFamily candidate_family_for_sample(std::span<const Vector> xs, FamilyKind family, int k, int M,
                                            std::uint64_t seed);

std::vector<std::shared_ptr<const MixtureModel>> sample_candidates(const CandidateFamily& family);

struct DistinguisherClass {
    ClassMode mode = ClassMode::dce;
    std::vector<std::shared_ptr<const MixtureModel>> candidates;
    bool includes_truth = false;  // the last candidate is the true model
    // candidate-major: functions[c * k + g]
    std::vector<Distinguisher> functions;
};

DistinguisherClass build_distinguisher_class(const CandidateFamily& family, ClassMode mode,
                                             std::shared_ptr<const MixtureModel> include_truth = nullptr);

struct Cover {
    std::vector<std::size_t> selected;  // row indices into the tabulated set
    double epsilon = 0.0;
    std::size_t sample_size = 0;
};

// Row-wise L1 distances with a packed-bit fast path for {0,1}-valued tables.
class FunctionTable {
public:
    explicit FunctionTable(const Matrix& table);

    std::size_t functions() const { return rows_; }
    std::size_t points() const { return cols_; }
    bool binary() const { return binary_; }
    double distance(std::size_t i, std::size_t j) const;

private:
    std::size_t rows_;
    std::size_t cols_;
    bool binary_;
    std::size_t words_ = 0;
    std::vector<std::uint64_t> bits_;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values_;
};

// Enumerated cover: for every labeling of the sample by values of
// {0, eps, 2 eps, ..., 1}, keep the first function whose values all lie within
// eps/2 of the labeling. Only for T <= 8 and 1/eps an integer <= 4.
Cover exact_cover(const Matrix& table, double epsilon);

// Farthest-point greedy: keep adding the function farthest from the current
// centers while that distance exceeds eps.
Cover greedy_cover(const Matrix& table, double epsilon);

// max over rows of the distance to the nearest selected row.
double cover_radius(const FunctionTable& table, const Cover& cover, std::size_t* worst = nullptr);

struct CoverCheck {
    bool pass = false;
    double worst_gap = 0.0;
    std::size_t worst_function = 0;
    double radius = 0.0;
};

// Checks on a held-out table (same rows, new points) that the cover is a
// 4 eps-cover of every row.
CoverCheck verify_cover(const Cover& cover, const Matrix& holdout_table, double epsilon);

// Largest m <= n such that some m-subset of the n points is pseudo-shattered
// by the rows of the (functions x points) table. n must be <= 12.
int empirical_shatter_dim(const Matrix& table);
bool pseudo_shatters(const Matrix& table, std::span<const int> points);

nlohmann::json cover_to_json(const DistinguisherClass& cls, const Cover& cover);
struct LoadedCover {
    DistinguisherClass cls;
    Cover cover;
};
LoadedCover cover_from_json(const nlohmann::json& j);

}  // namespace subcal
