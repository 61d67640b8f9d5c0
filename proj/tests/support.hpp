#pragma once

// Oracles and fixtures shared by the unit and acceptance tests. The oracles
// here are written from closed forms or brute force, never by calling the
// code path they check.

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "subcal/mixture_model.hpp"
#include "subcal/online_calibration.hpp"
#include "subcal/rng.hpp"

namespace testsupport {

using subcal::Matrix;
using subcal::Vector;

inline constexpr double kPi = 3.14159265358979323846;

// Normal log-pdf via an explicit inverse/determinant (Eigen's LU, not LLT).
inline double normal_logpdf(const Vector& x, const Vector& mu, const Matrix& cov) {
    const int d = static_cast<int>(x.size());
    const Vector z = x - mu;
    const double quad = z.dot(cov.inverse() * z);
    return -0.5 * quad - 0.5 * std::log(cov.determinant()) - 0.5 * d * std::log(2.0 * kPi);
}

inline double poisson_logpmf(const Vector& x, const Vector& rates) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) s += x[i] * std::log(rates[i]) - rates[i] - std::lgamma(x[i] + 1.0);
    return s;
}

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline Matrix random_spd(int d, subcal::Rng& rng, double lo = 0.3, double hi = 3.0) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix a(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = n(rng);
    const Matrix q = Eigen::HouseholderQR<Matrix>(a).householderQ();
    Vector ev(d);
    for (int i = 0; i < d; ++i) ev[i] = lo + (hi - lo) * subcal::uniform01(rng);
    Matrix c = q * ev.asDiagonal() * q.transpose();
    return 0.5 * (c + c.transpose());
}

inline Vector random_weights(int k, subcal::Rng& rng, double floor = 0.05) {
    Vector w(k);
    for (int g = 0; g < k; ++g) w[g] = 1.0 + subcal::uniform01(rng);
    w /= w.sum();
    w = (floor + (1.0 - k * floor) * w.array()).matrix();
    return w / w.sum();
}

inline subcal::ExpFamilyComponent random_component(subcal::FamilyKind kind, int d, subcal::Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.5);
    Vector mu(d);
    for (int i = 0; i < d; ++i) mu[i] = n(rng);
    switch (kind) {
        case subcal::FamilyKind::gaussian_full:
            return subcal::ExpFamilyComponent::gaussian({mu, random_spd(d, rng)});
        case subcal::FamilyKind::gaussian_isotropic:
            return subcal::ExpFamilyComponent::isotropic(mu, 0.3 + 2.0 * subcal::uniform01(rng));
        case subcal::FamilyKind::poisson_product: {
            Vector r(d);
            for (int i = 0; i < d; ++i) r[i] = 0.5 + 6.0 * subcal::uniform01(rng);
            return subcal::ExpFamilyComponent::poisson(r);
        }
    }
    throw std::logic_error("family");
}

inline subcal::MixtureModel random_model(subcal::FamilyKind kind, int k, int d, subcal::Rng& rng,
                                         subcal::LabelRule rule = subcal::LabelRule::constant(0.5)) {
    std::vector<subcal::ExpFamilyComponent> comps;
    for (int g = 0; g < k; ++g) comps.push_back(random_component(kind, d, rng));
    return subcal::MixtureModel(random_weights(k, rng), std::move(comps), std::move(rule));
}

inline subcal::MixtureModel iso_pair(double m0, double m1, double s2 = 1.0,
                                     subcal::LabelRule rule = subcal::LabelRule::constant(0.5)) {
    Vector a(1), b(1);
    a << m0;
    b << m1;
    return subcal::MixtureModel(Vector::Constant(2, 0.5),
                                {subcal::ExpFamilyComponent::isotropic(a, s2), subcal::ExpFamilyComponent::isotropic(b, s2)},
                                std::move(rule));
}

// Brute-force minimax value: every point mass and every adjacent pair with
// the mixing weight at 0, 1 and the zero-bias kink.
inline double value_of(const std::vector<double>& s, const subcal::PredictionGrid& pg, int j, double a, int j2) {
    // a on grid index j, 1 - a on j2
    const double sj = s[static_cast<std::size_t>(pg.bucket(j))];
    const double sj2 = s[static_cast<std::size_t>(pg.bucket(j2))];
    const double bias = a * sj + (1.0 - a) * sj2;
    const double weighted = a * sj * pg.value(j) + (1.0 - a) * sj2 * pg.value(j2);
    return std::max(weighted, weighted - bias);
}

inline double brute_force_minimax(const std::vector<double>& s, const subcal::PredictionGrid& pg) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < pg.size(); ++j) best = std::min(best, value_of(s, pg, j, 1.0, j));
    for (int j = 0; j + 1 < pg.size(); ++j) {
        const double sj = s[static_cast<std::size_t>(pg.bucket(j))];
        const double sk = s[static_cast<std::size_t>(pg.bucket(j + 1))];
        std::vector<double> alphas = {0.0, 1.0};
        if (sj != sk) {
            const double a = -sk / (sj - sk);
            if (a > 0.0 && a < 1.0) alphas.push_back(a);
        }
        for (double a : alphas) best = std::min(best, value_of(s, pg, j, a, j + 1));
    }
    return best;
}

// Hedge weights straight from the definition.
inline std::vector<double> hedge_weights_oracle(const Vector& cumulative, double eta) {
    double m = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < cumulative.size(); ++i) m = std::min(m, cumulative[i]);
    std::vector<double> w(static_cast<std::size_t>(cumulative.size()));
    double z = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::exp(-eta * (cumulative[static_cast<Eigen::Index>(i)] - m));
        z += w[i];
    }
    for (double& v : w) v /= z;
    return w;
}

}  // namespace testsupport
