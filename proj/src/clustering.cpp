#include "subcal/clustering.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "subcal/rng.hpp"

namespace subcal {

namespace {

Vector sample_mean(std::span<const Vector> xs) {
    Vector m = Vector::Zero(xs.front().size());
    for (const Vector& x : xs) m += x;
    return m / static_cast<double>(xs.size());
}

// Unit eigenvector of the largest eigenvalue of the centered second moment.
Vector top_direction(std::span<const Vector> xs, const Vector& mean) {
    const auto d = mean.size();
    Matrix c = Matrix::Zero(d, d);
    for (const Vector& x : xs) {
        const Vector z = x - mean;
        c.noalias() += z * z.transpose();
    }
    c /= static_cast<double>(xs.size());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c);
    if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    if (!(eig.eigenvalues()[d - 1] > 0.0)) throw std::runtime_error("degenerate sample: zero variance");
    return eig.eigenvectors().col(d - 1);
}

void check_sample(std::span<const Vector> xs) {
    if (xs.empty()) throw std::invalid_argument("empty sample");
    const auto d = xs.front().size();
    for (const Vector& x : xs) {
        if (x.size() != d) throw std::invalid_argument("sample points differ in dimension");
        if (!x.allFinite()) throw std::invalid_argument("sample contains non-finite values");
    }
}

}  // namespace

int LearnedDiscriminant::operator()(const Vector& x) const {
    int best = 0;
    double best_d = (x - means[0]).squaredNorm();
    for (int g = 1; g < k; ++g) {
        const double dist = (x - means[static_cast<std::size_t>(g)]).squaredNorm();
        if (dist < best_d) {
            best_d = dist;
            best = g;
        }
    }
    return best;
}

LearnedDiscriminant learn_discriminant_2iso(std::span<const Vector> xs) {
    check_sample(xs);
    const int d = static_cast<int>(xs.front().size());
    if (xs.size() < static_cast<std::size_t>(std::max(4 * d, 68)))
        throw std::invalid_argument("learn_discriminant_2iso needs at least max(4d, 68) samples");
    const Vector mean = sample_mean(xs);
    const Vector u = top_direction(xs, mean);

    LearnedDiscriminant out;
    out.d = d;
    out.k = 2;
    out.means.assign(2, Vector::Zero(d));
    std::size_t count[2] = {0, 0};
    for (const Vector& x : xs) {
        const int side = u.dot(x - mean) > 0.0 ? 1 : 0;
        out.means[static_cast<std::size_t>(side)] += x;
        ++count[side];
    }
    if (count[0] == 0 || count[1] == 0) throw std::runtime_error("degenerate sample: one side of the split is empty");
    for (int s = 0; s < 2; ++s) out.means[static_cast<std::size_t>(s)] /= static_cast<double>(count[s]);
    return out;
}

double misassignment_rate(const LearnedDiscriminant& learned, const MixtureModel& truth, std::span<const Vector> xs) {
    if (learned.k != 2 || truth.k() != 2) throw std::invalid_argument("misassignment_rate is defined for k = 2");
    if (xs.empty()) return 0.0;
    std::size_t agree = 0;
    for (const Vector& x : xs) agree += learned(x) == truth.discriminant(x);
    const double n = static_cast<double>(xs.size());
    const double a = static_cast<double>(agree) / n;
    return std::min(1.0 - a, a);
}

// ---------------------------------------------------------------------------
// EM

namespace {

ExpFamilyComponent fit_component(FamilyKind family, std::span<const Vector> xs, const Matrix& r, int g) {
    const auto d = xs.front().size();
    double ng = 0.0;
    Vector mean = Vector::Zero(d);
    for (std::size_t t = 0; t < xs.size(); ++t) {
        const double w = r(static_cast<Eigen::Index>(t), g);
        ng += w;
        mean += w * xs[t];
    }
    if (!(ng > 1e-9)) throw std::runtime_error("EM component lost all responsibility");
    mean /= ng;
    switch (family) {
        case FamilyKind::poisson_product:
            return ExpFamilyComponent::poisson(mean.cwiseMax(kCovarianceFloor));
        case FamilyKind::gaussian_isotropic: {
            double ss = 0.0;
            for (std::size_t t = 0; t < xs.size(); ++t)
                ss += r(static_cast<Eigen::Index>(t), g) * (xs[t] - mean).squaredNorm();
            return ExpFamilyComponent::isotropic(mean, std::max(ss / (ng * static_cast<double>(d)), kCovarianceFloor));
        }
        case FamilyKind::gaussian_full: {
            Matrix cov = Matrix::Zero(d, d);
            for (std::size_t t = 0; t < xs.size(); ++t) {
                const Vector z = xs[t] - mean;
                cov.noalias() += r(static_cast<Eigen::Index>(t), g) * (z * z.transpose());
            }
            cov /= ng;
            cov = 0.5 * (cov + cov.transpose());
            Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
            if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
            if (eig.eigenvalues().minCoeff() < kCovarianceFloor) {
                const Vector ev = eig.eigenvalues().cwiseMax(kCovarianceFloor);
                cov = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
                cov = 0.5 * (cov + cov.transpose());
            }
            return ExpFamilyComponent::gaussian({mean, cov});
        }
    }
    throw std::logic_error("unknown family");
}

MixtureModel m_step(FamilyKind family, std::span<const Vector> xs, const Matrix& r) {
    const int k = static_cast<int>(r.cols());
    std::vector<ExpFamilyComponent> comps;
    Vector w(k);
    for (int g = 0; g < k; ++g) {
        comps.push_back(fit_component(family, xs, r, g));
        w[g] = r.col(g).sum();
    }
    w /= w.sum();
    return MixtureModel(w, std::move(comps), LabelRule::constant(0.5), 0.0);
}

}  // namespace

MixtureModel learn_mixture_em(std::span<const Vector> xs, int k, FamilyKind family, int iters, std::uint64_t seed) {
    check_sample(xs);
    if (k < 1) throw std::invalid_argument("k must be positive");
    if (iters < 0) throw std::invalid_argument("iteration count must be nonnegative");
    const int d = static_cast<int>(xs.front().size());
    const std::size_t n = xs.size();
    if (n < static_cast<std::size_t>(10 * k * d)) throw std::invalid_argument("learn_mixture_em needs at least 10kd samples");

    // Initial hard split: k equal-size chunks along the top principal direction.
    const Vector mean = sample_mean(xs);
    const Vector u = top_direction(xs, mean);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> proj(n);
    for (std::size_t t = 0; t < n; ++t) proj[t] = u.dot(xs[t] - mean);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return proj[a] < proj[b]; });
    Matrix r = Matrix::Zero(static_cast<Eigen::Index>(n), k);
    for (std::size_t i = 0; i < n; ++i)
        r(static_cast<Eigen::Index>(order[i]), static_cast<Eigen::Index>(i * static_cast<std::size_t>(k) / n)) = 1.0;

    MixtureModel model = m_step(family, xs, r);
    for (int it = 0; it < iters; ++it) {
        for (std::size_t t = 0; t < n; ++t) {
            const Vector p = model.posterior(xs[t]);
            if (!p.allFinite()) throw std::runtime_error("EM responsibilities are not finite");
            r.row(static_cast<Eigen::Index>(t)) = p.transpose();
        }
        model = m_step(family, xs, r);
    }
    return model;
}

}  // namespace subcal
