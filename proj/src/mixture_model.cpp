#include "subcal/mixture_model.hpp"

#include <algorithm>

namespace subcal {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

int packed_size(int d) { return d * (d + 1) / 2; }

void require_dim(const Vector& x, int d, const char* where) {
    if (x.size() != d) {
        throw std::invalid_argument(std::string(where) + ": dimension mismatch (expected " +
                                    std::to_string(d) + ", got " + std::to_string(x.size()) + ")");
    }
}

}  // namespace

std::string_view to_string(FamilyKind kind) {
    switch (kind) {
        case FamilyKind::gaussian_full: return "gaussian_full";
        case FamilyKind::gaussian_isotropic: return "gaussian_isotropic";
        case FamilyKind::poisson_product: return "poisson_product";
    }
    return "unknown";
}

FamilyKind family_from_string(std::string_view name) {
    if (name == "gaussian_full") return FamilyKind::gaussian_full;
    if (name == "gaussian_isotropic") return FamilyKind::gaussian_isotropic;
    if (name == "poisson_product") return FamilyKind::poisson_product;
    throw std::invalid_argument("unknown family: " + std::string(name));
}

int stat_dim(FamilyKind kind, int d) {
    switch (kind) {
        case FamilyKind::gaussian_full: return d + packed_size(d);
        case FamilyKind::gaussian_isotropic: return d + 1;
        case FamilyKind::poisson_product: return d;
    }
    return d;
}

Vector sufficient_statistic(FamilyKind kind, const Vector& x) {
    const int d = static_cast<int>(x.size());
    Vector t(stat_dim(kind, d));
    t.head(d) = x;
    switch (kind) {
        case FamilyKind::gaussian_full: {
            int pos = d;
            for (int i = 0; i < d; ++i)
                for (int j = i; j < d; ++j) t[pos++] = x[i] * x[j];
            break;
        }
        case FamilyKind::gaussian_isotropic: t[d] = x.squaredNorm(); break;
        case FamilyKind::poisson_product: break;
    }
    return t;
}

double log_base_measure(FamilyKind kind, const Vector& x) {
    if (kind != FamilyKind::poisson_product) return 0.0;
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) s -= std::lgamma(x[i] + 1.0);
    return s;
}

// ---------------------------------------------------------------------------
// ExpFamilyComponent

ExpFamilyComponent::ExpFamilyComponent(FamilyKind kind, int d, Vector theta)
    : kind_(kind), d_(d), theta_(std::move(theta)) {
    if (d_ < 1) throw std::invalid_argument("component dimension must be positive");
    if (theta_.size() != subcal::stat_dim(kind_, d_))
        throw std::invalid_argument("natural parameter has wrong length");
    if (!theta_.allFinite()) throw std::invalid_argument("natural parameter is not finite");

    switch (kind_) {
        case FamilyKind::gaussian_isotropic: {
            const double tau = theta_[d_];
            if (!(tau < 0.0)) throw std::invalid_argument("isotropic variance must be positive");
            const double s2 = -0.5 / tau;
            sigma2_ = s2;
            mean_ = theta_.head(d_) * s2;
            cov_ = Matrix::Identity(d_, d_) * s2;
            chol_ = Matrix::Identity(d_, d_) * std::sqrt(s2);
            log_partition_ = 0.5 * mean_.squaredNorm() / s2 + 0.5 * d_ * (kLog2Pi + std::log(s2));
            break;
        }
        case FamilyKind::gaussian_full: {
            Matrix precision(d_, d_);
            int pos = d_;
            for (int i = 0; i < d_; ++i) {
                for (int j = i; j < d_; ++j) {
                    const double v = theta_[pos++];
                    if (i == j) {
                        precision(i, i) = -2.0 * v;
                    } else {
                        precision(i, j) = -v;
                        precision(j, i) = -v;
                    }
                }
            }
            Eigen::LLT<Matrix> llt(precision);
            if (llt.info() != Eigen::Success)
                throw std::invalid_argument("covariance is not positive definite");
            const Vector eta = theta_.head(d_);
            mean_ = llt.solve(eta);
            const Matrix cov = llt.solve(Matrix::Identity(d_, d_));
            cov_ = 0.5 * (cov + cov.transpose());
            Eigen::LLT<Matrix> cov_llt(cov_);
            if (cov_llt.info() != Eigen::Success)
                throw std::invalid_argument("covariance is not positive definite");
            chol_ = cov_llt.matrixL();
            const Matrix L = llt.matrixL();
            double log_det_precision = 0.0;
            for (int i = 0; i < d_; ++i) log_det_precision += 2.0 * std::log(L(i, i));
            log_partition_ = 0.5 * eta.dot(mean_) - 0.5 * log_det_precision + 0.5 * d_ * kLog2Pi;
            break;
        }
        case FamilyKind::poisson_product:
            mean_ = theta_.array().exp().matrix();
            log_partition_ = mean_.sum();
            break;
    }
    if (!std::isfinite(log_partition_)) throw std::invalid_argument("log-partition is not finite");
}

ExpFamilyComponent ExpFamilyComponent::from_natural(FamilyKind kind, int d, Vector theta) {
    return ExpFamilyComponent(kind, d, std::move(theta));
}

ExpFamilyComponent ExpFamilyComponent::gaussian(const GaussianParams& params) {
    const int d = static_cast<int>(params.mean.size());
    if (params.cov.rows() != d || params.cov.cols() != d)
        throw std::invalid_argument("covariance shape does not match mean");
    const double scale = std::max(1.0, params.cov.cwiseAbs().maxCoeff());
    if ((params.cov - params.cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw std::invalid_argument("covariance is not symmetric");
    Eigen::LLT<Matrix> llt(params.cov);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("covariance is not positive definite");
    Matrix precision = llt.solve(Matrix::Identity(d, d));
    precision = 0.5 * (precision + precision.transpose());

    Vector theta(subcal::stat_dim(FamilyKind::gaussian_full, d));
    theta.head(d) = precision * params.mean;
    int pos = d;
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) theta[pos++] = (i == j) ? -0.5 * precision(i, i) : -precision(i, j);
    ExpFamilyComponent c(FamilyKind::gaussian_full, d, std::move(theta));
    c.mean_ = params.mean;
    c.cov_ = params.cov;
    c.chol_ = llt.matrixL();
    return c;
}

ExpFamilyComponent ExpFamilyComponent::isotropic(const Vector& mean, double sigma2) {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
    const int d = static_cast<int>(mean.size());
    Vector theta(d + 1);
    theta.head(d) = mean / sigma2;
    theta[d] = -0.5 / sigma2;
    ExpFamilyComponent c(FamilyKind::gaussian_isotropic, d, std::move(theta));
    c.mean_ = mean;
    c.sigma2_ = sigma2;
    c.cov_ = Matrix::Identity(d, d) * sigma2;
    c.chol_ = Matrix::Identity(d, d) * std::sqrt(sigma2);
    return c;
}

ExpFamilyComponent ExpFamilyComponent::poisson(const Vector& rates) {
    if (!(rates.array() > 0.0).all()) throw std::invalid_argument("poisson rates must be positive");
    ExpFamilyComponent c(FamilyKind::poisson_product, static_cast<int>(rates.size()),
                         rates.array().log().matrix());
    c.mean_ = rates;
    return c;
}

double ExpFamilyComponent::log_density(const Vector& x) const {
    require_dim(x, d_, "log_density");
    return log_density_from_stat(sufficient_statistic(kind_, x), log_base_measure(kind_, x));
}

Vector ExpFamilyComponent::mean() const { return mean_; }

GaussianParams ExpFamilyComponent::gaussian_params() const {
    if (kind_ == FamilyKind::poisson_product)
        throw std::logic_error("gaussian_params on a poisson component");
    return {mean_, cov_};
}

double ExpFamilyComponent::sigma2() const {
    if (kind_ != FamilyKind::gaussian_isotropic) throw std::logic_error("sigma2 on a non-isotropic component");
    return sigma2_;
}

Vector ExpFamilyComponent::rates() const {
    if (kind_ != FamilyKind::poisson_product) throw std::logic_error("rates on a non-poisson component");
    return mean_;
}

Vector ExpFamilyComponent::sample(Rng& rng) const {
    Vector x(d_);
    if (kind_ == FamilyKind::poisson_product) {
        for (int i = 0; i < d_; ++i) x[i] = static_cast<double>(std::poisson_distribution<long>(mean_[i])(rng));
        return x;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < d_; ++i) x[i] = normal(rng);
    if (kind_ == FamilyKind::gaussian_isotropic) return mean_ + chol_(0, 0) * x;
    return mean_ + chol_ * x;
}

// ---------------------------------------------------------------------------
// LabelRule

bool LabelRule::Box::contains(const Vector& x) const {
    return (x.array() >= lo.array()).all() && (x.array() < hi.array()).all();
}

LabelRule LabelRule::constant(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("constant label probability outside [0,1]");
    LabelRule r;
    r.kind_ = Kind::constant;
    r.p_ = p;
    return r;
}

LabelRule LabelRule::logistic(Vector w, double b) {
    if (!w.allFinite() || !std::isfinite(b)) throw std::invalid_argument("logistic parameters not finite");
    LabelRule r;
    r.kind_ = Kind::logistic;
    r.w_ = std::move(w);
    r.b_ = b;
    return r;
}

LabelRule LabelRule::piecewise(std::vector<Box> boxes, std::vector<double> probs) {
    if (probs.size() != boxes.size() + 1)
        throw std::invalid_argument("piecewise rule needs one probability per box plus a default");
    for (double p : probs)
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("piecewise probability outside [0,1]");
    for (const auto& b : boxes)
        if (b.lo.size() != b.hi.size()) throw std::invalid_argument("box bounds differ in dimension");
    LabelRule r;
    r.kind_ = Kind::piecewise;
    r.boxes_ = std::move(boxes);
    r.probs_ = std::move(probs);
    return r;
}

double LabelRule::evaluate(const Vector& x) const {
    switch (kind_) {
        case Kind::constant: return p_;
        case Kind::logistic: {
            const double z = w_.dot(x) + b_;
            return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        }
        case Kind::piecewise:
            for (std::size_t i = 0; i < boxes_.size(); ++i)
                if (boxes_[i].contains(x)) return probs_[i];
            return probs_.back();
    }
    return p_;
}

// ---------------------------------------------------------------------------
// MixtureModel

double log_sum_exp(const Vector& scores) {
    const double m = scores.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((scores.array() - m).exp().sum());
}

void component_scores(const Matrix& thetas, const Vector& offsets, const Vector& stat, Eigen::Index begin,
                      Eigen::Index n, double* out) {
    // Column sweep; each row still sums its terms in index order.
    const Eigen::Index dim = stat.size();
    for (Eigen::Index r = 0; r < n; ++r) out[r] = 0.0;
    for (Eigen::Index i = 0; i < dim; ++i) {
        const double* col = thetas.col(i).data() + begin;
        const double si = stat[i];
        for (Eigen::Index r = 0; r < n; ++r) out[r] += col[r] * si;
    }
    for (Eigen::Index r = 0; r < n; ++r) out[r] = offsets[begin + r] + out[r];
}

double softmax_entry(const double* scores, int k, int g) {
    double m = scores[0];
    for (int j = 1; j < k; ++j) m = std::max(m, scores[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(scores[j] - m);
    return std::exp(scores[g] - m) / z;
}

Vector softmax(const Vector& scores) {
    const int k = static_cast<int>(scores.size());
    // Same operations, in the same order, as softmax_entry.
    double m = scores[0];
    for (int j = 1; j < k; ++j) m = std::max(m, scores[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(scores[j] - m);
    Vector p(k);
    for (int g = 0; g < k; ++g) p[g] = std::exp(scores[g] - m) / z;
    return p;
}

int argmax_first(const Vector& v) {
    int best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

MixtureModel::MixtureModel(Vector weights, std::vector<ExpFamilyComponent> components, LabelRule rule,
                           double weight_floor)
    : weights_(std::move(weights)), components_(std::move(components)), rule_(std::move(rule)),
      weight_floor_(weight_floor) {
    if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
    if (weights_.size() != static_cast<Eigen::Index>(components_.size()))
        throw std::invalid_argument("weights and components differ in length");
    for (const auto& c : components_) {
        if (c.kind() != components_.front().kind() || c.dim() != components_.front().dim())
            throw std::invalid_argument("all components must share family and dimension");
    }
    if (std::abs(weights_.sum() - 1.0) > 1e-9) throw std::invalid_argument("weights must sum to 1");
    for (Eigen::Index g = 0; g < weights_.size(); ++g) {
        if (!(weights_[g] > 0.0) || weights_[g] < weight_floor_ - 1e-12)
            throw std::invalid_argument("weight below the configured floor");
    }
    if (rule_.kind() == LabelRule::Kind::logistic && rule_.w().size() != d())
        throw std::invalid_argument("logistic label rule dimension mismatch");

    const int kk = k();
    offsets_.resize(kk);
    thetas_.resize(kk, stat_dim());
    cumulative_.resize(kk);
    double acc = 0.0;
    for (int g = 0; g < kk; ++g) {
        offsets_[g] = std::log(weights_[g]) - components_[g].log_partition();
        thetas_.row(g) = components_[g].natural().transpose();
        acc += weights_[g];
        cumulative_[g] = acc;
    }
    cumulative_.back() = 1.0;
}

Vector MixtureModel::scores_from_stat(const Vector& stat) const {
    Vector out(k());
    component_scores(thetas_, offsets_, stat, 0, k(), out.data());
    return out;
}

Vector MixtureModel::scores(const Vector& x) const {
    require_dim(x, d(), "mixture");
    return scores_from_stat(sufficient_statistic(family(), x));
}

double MixtureModel::log_density(const Vector& x) const {
    return log_sum_exp(scores(x)) + log_base_measure(family(), x);
}

Vector MixtureModel::posterior(const Vector& x) const { return softmax(scores(x)); }

int MixtureModel::discriminant(const Vector& x) const { return argmax_first(scores(x)); }

double MixtureModel::log_likelihood_ratio(int g, int j, const Vector& x) const {
    if (g < 0 || j < 0 || g >= k() || j >= k()) throw std::out_of_range("component index");
    if (g == j) return 0.0;
    require_dim(x, d(), "likelihood_ratio");
    const Vector t = sufficient_statistic(family(), x);
    return (offsets_[g] - offsets_[j]) + (thetas_.row(g) - thetas_.row(j)).dot(t);
}

Vector MixtureModel::sample_x(Rng& rng) const {
    const double u = uniform01(rng);
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto g = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), components_.size() - 1);
    return components_[g].sample(rng);
}

MixtureModel MixtureModel::with_label_rule(LabelRule rule) const {
    return MixtureModel(weights_, components_, std::move(rule), weight_floor_);
}

std::vector<LabeledSample> sample(const MixtureModel& model, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("sample: n must be >= 1");
    Rng rng(seed);
    Vector cumulative(model.k());
    double acc = 0.0;
    for (int g = 0; g < model.k(); ++g) cumulative[g] = (acc += model.weights()[g]);
    cumulative[model.k() - 1] = 1.0;

    std::vector<LabeledSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = uniform01(rng);
        int g = 0;
        while (g + 1 < model.k() && u >= cumulative[g]) ++g;
        LabeledSample s;
        s.true_component = g;
        s.x = model.components()[g].sample(rng);
        s.y = uniform01(rng) < model.label_rule().evaluate(s.x) ? 1 : 0;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace subcal
