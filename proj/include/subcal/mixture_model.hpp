#pragma once

// Ground-truth generative model: a finite mixture of exponential-family
// components with a label rule that depends on the features only.
//
//   g ~ weights,  x ~ f(x | g),  y ~ Bernoulli(label_rule(x))
//
// All density arithmetic is done in log space.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "subcal/rng.hpp"

namespace subcal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class FamilyKind { gaussian_full, gaussian_isotropic, poisson_product };

std::string_view to_string(FamilyKind kind);
FamilyKind family_from_string(std::string_view name);

// Dimension of the sufficient statistic T(x) for a family in dimension d.
int stat_dim(FamilyKind kind, int d);

// T(x). gaussian_full packs vec(xx^T) as its upper triangle, so
// dim T = d + d(d+1)/2; gaussian_isotropic uses (x, |x|^2).
Vector sufficient_statistic(FamilyKind kind, const Vector& x);

// log h(x); zero for the Gaussian families (the 2*pi term lives in A).
double log_base_measure(FamilyKind kind, const Vector& x);

struct GaussianParams {
    Vector mean;
    Matrix cov;
};

// One density h(x) exp(<theta, T(x)> - A(theta)).
class ExpFamilyComponent {
public:
    static ExpFamilyComponent gaussian(const GaussianParams& params);
    static ExpFamilyComponent isotropic(const Vector& mean, double sigma2);
    static ExpFamilyComponent poisson(const Vector& rates);
    // Rejects natural parameters with an infinite log-partition.
    static ExpFamilyComponent from_natural(FamilyKind kind, int d, Vector theta);

    FamilyKind kind() const { return kind_; }
    int dim() const { return d_; }
    int stat_dim() const { return static_cast<int>(theta_.size()); }
    const Vector& natural() const { return theta_; }
    double log_partition() const { return log_partition_; }

    double log_density(const Vector& x) const;
    // Same, with T(x) and log h(x) already computed.
    double log_density_from_stat(const Vector& stat, double log_h) const {
        return log_h + theta_.dot(stat) - log_partition_;
    }

    Vector mean() const;
    // Gaussian families only.
    GaussianParams gaussian_params() const;
    // gaussian_isotropic only.
    double sigma2() const;
    // poisson_product only.
    Vector rates() const;

    Vector sample(Rng& rng) const;

private:
    ExpFamilyComponent(FamilyKind kind, int d, Vector theta);

    FamilyKind kind_;
    int d_;
    Vector theta_;
    double log_partition_ = 0.0;
    // Moment parameters as supplied (or derived from theta), kept verbatim so
    // serialization is lossless; chol_ is the lower Cholesky factor of cov_.
    Vector mean_;
    Matrix cov_;
    double sigma2_ = 0.0;
    Matrix chol_;
};

class LabelRule {
public:
    enum class Kind { constant, logistic, piecewise };

    struct Box {
        Vector lo;
        Vector hi;
        bool contains(const Vector& x) const;
    };

    static LabelRule constant(double p);
    static LabelRule logistic(Vector w, double b);
    // probs has one entry per box plus a trailing default for points in no box.
    static LabelRule piecewise(std::vector<Box> boxes, std::vector<double> probs);

    Kind kind() const { return kind_; }
    double evaluate(const Vector& x) const;

    double p() const { return p_; }
    const Vector& w() const { return w_; }
    double b() const { return b_; }
    const std::vector<Box>& boxes() const { return boxes_; }
    const std::vector<double>& probs() const { return probs_; }

private:
    Kind kind_ = Kind::constant;
    double p_ = 0.5;
    Vector w_;
    double b_ = 0.0;
    std::vector<Box> boxes_;
    std::vector<double> probs_;
};

struct LabeledSample {
    Vector x;
    int y = 0;
    // Simulation-only ground truth; never shown to learners.
    int true_component = 0;
};

inline constexpr double kDefaultWeightFloor = 0.05;

class MixtureModel {
public:
    MixtureModel(Vector weights, std::vector<ExpFamilyComponent> components, LabelRule rule,
                 double weight_floor = kDefaultWeightFloor);

    int k() const { return static_cast<int>(components_.size()); }
    int d() const { return components_.front().dim(); }
    FamilyKind family() const { return components_.front().kind(); }
    int stat_dim() const { return components_.front().stat_dim(); }
    double weight_floor() const { return weight_floor_; }

    const Vector& weights() const { return weights_; }
    const std::vector<ExpFamilyComponent>& components() const { return components_; }
    const LabelRule& label_rule() const { return rule_; }

    // log w_g - A(theta_g) per component, and the stacked natural parameters
    // (k x dim T). scores = offsets + thetas * T(x) is log(w_g f(x|g)) - log h(x).
    const Vector& score_offsets() const { return offsets_; }
    const Matrix& stacked_natural() const { return thetas_; }
    Vector scores(const Vector& x) const;
    Vector scores_from_stat(const Vector& stat) const;

    double log_density(const Vector& x) const;
    Vector posterior(const Vector& x) const;
    // The label rule ignores the component, so the posterior ignores y.
    Vector posterior(const Vector& x, int /*y*/) const { return posterior(x); }
    int discriminant(const Vector& x) const;

    // log f(g|x) - log f(j|x) via the exponential-family form.
    double log_likelihood_ratio(int g, int j, const Vector& x) const;
    double likelihood_ratio(int g, int j, const Vector& x) const {
        return std::exp(log_likelihood_ratio(g, j, x));
    }

    // Draws x from the mixture (labels not drawn).
    Vector sample_x(Rng& rng) const;

    // Same weights/components with a different label rule.
    MixtureModel with_label_rule(LabelRule rule) const;

private:
    Vector weights_;
    std::vector<ExpFamilyComponent> components_;
    LabelRule rule_;
    double weight_floor_;
    Vector offsets_;
    Matrix thetas_;
    std::vector<double> cumulative_;
};

// out[r] = offsets[r] + <thetas.row(r), stat> for rows [begin, begin + n),
// accumulated in a fixed scalar order so every caller gets identical bits.
void component_scores(const Matrix& thetas, const Vector& offsets, const Vector& stat, Eigen::Index begin,
                      Eigen::Index n, double* out);
// exp(s_g - max) / sum_j exp(s_j - max) over a contiguous score block.
double softmax_entry(const double* scores, int k, int g);

// Softmax of a score vector, computed with log-sum-exp.
Vector softmax(const Vector& scores);
double log_sum_exp(const Vector& scores);
// Index of the largest entry; ties go to the smallest index.
int argmax_first(const Vector& v);

std::vector<LabeledSample> sample(const MixtureModel& model, std::size_t n, std::uint64_t seed);

struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

namespace detail {
inline Vector draw(const ExpFamilyComponent& c, Rng& rng) { return c.sample(rng); }
inline Vector draw(const MixtureModel& m, Rng& rng) { return m.sample_x(rng); }
}  // namespace detail

// Monte Carlo estimate of TV(p, q) = E_{x~p}[(1 - q(x)/p(x))^+].
// P and Q expose log_density(x) and a sampler; works for components and mixtures.
template <class P, class Q>
McEstimate tv_distance_mc(const P& p, const Q& q, std::size_t n_mc, std::uint64_t seed) {
    if (n_mc < 100) throw std::invalid_argument("tv_distance_mc: n_mc must be >= 100");
    Rng rng(seed);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < n_mc; ++i) {
        const Vector x = detail::draw(p, rng);
        const double log_ratio = q.log_density(x) - p.log_density(x);
        const double term = log_ratio >= 0.0 ? 0.0 : 1.0 - std::exp(log_ratio);
        sum += term;
        sum_sq += term * term;
    }
    const double n = static_cast<double>(n_mc);
    const double mean = sum / n;
    const double var = std::max(0.0, sum_sq / n - mean * mean);
    return {mean, std::sqrt(var / (n - 1.0))};
}

}  // namespace subcal
