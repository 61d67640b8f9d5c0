#include <cmath>

#include "doctest.h"
#include "subcal/clustering.hpp"
#include "subcal/harness.hpp"
#include "support.hpp"

using namespace subcal;
using namespace testsupport;

namespace {

std::vector<Vector> features(const MixtureModel& m, std::size_t n, std::uint64_t seed) {
    std::vector<Vector> xs;
    for (const auto& s : sample(m, n, seed)) xs.push_back(s.x);
    return xs;
}

}  // namespace

TEST_SUITE("clustering") {

TEST_CASE("well separated 1-d clusters") {
    const auto m = iso_pair(-5.0, 5.0);
    const auto learned = learn_discriminant_2iso(features(m, 500, 1));
    CHECK(misassignment_rate(learned, m, features(m, 20000, 2)) <= 0.01);
}

TEST_CASE("gamma = 3 in two dimensions") {
    const auto m = separated_model(3.0);
    int good = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto learned = learn_discriminant_2iso(features(m, 5000, 10 + seed));
        if (misassignment_rate(learned, m, features(m, 5000, 100 + seed)) <= 0.05) ++good;
    }
    CHECK(good >= 18);
}

TEST_CASE("misassignment is invariant to relabeling") {
    const auto m = iso_pair(-2.0, 2.0);
    auto learned = learn_discriminant_2iso(features(m, 400, 3));
    const auto xs = features(m, 2000, 4);
    const double r = misassignment_rate(learned, m, xs);
    std::swap(learned.means[0], learned.means[1]);
    CHECK(misassignment_rate(learned, m, xs) == doctest::Approx(r).epsilon(1e-12));
    CHECK(r <= 0.5);
}

TEST_CASE("nearest mean with ties to the smaller index") {
    LearnedDiscriminant ld;
    ld.d = 1;
    ld.means = {Vector::Constant(1, -1.0), Vector::Constant(1, 1.0)};
    CHECK(ld(Vector::Constant(1, -0.1)) == 0);
    CHECK(ld(Vector::Constant(1, 0.1)) == 1);
    CHECK(ld(Vector::Constant(1, 0.0)) == 0);
}

TEST_CASE("degenerate samples fail explicitly") {
    std::vector<Vector> same(100, Vector::Ones(2));
    CHECK_THROWS(learn_discriminant_2iso(same));
    CHECK_THROWS(learn_discriminant_2iso(features(iso_pair(-1.0, 1.0), 10, 5)));
    CHECK_THROWS(learn_mixture_em(same, 2, FamilyKind::gaussian_isotropic));
    CHECK_THROWS(learn_mixture_em(features(iso_pair(-1.0, 1.0), 5, 6), 2, FamilyKind::gaussian_isotropic));
}

TEST_CASE("EM with one component is the sample mean and covariance") {
    Rng rng(7);
    const auto m = random_model(FamilyKind::gaussian_full, 2, 3, rng);
    const auto xs = features(m, 500, 8);
    Vector mean = Vector::Zero(3);
    for (const auto& x : xs) mean += x;
    mean /= 500.0;
    Matrix cov = Matrix::Zero(3, 3);
    for (const auto& x : xs) cov += (x - mean) * (x - mean).transpose();
    cov /= 500.0;
    const auto fit = learn_mixture_em(xs, 1, FamilyKind::gaussian_full);
    const auto gp = fit.components()[0].gaussian_params();
    CHECK((gp.mean - mean).norm() < 1e-10);
    CHECK((gp.cov - cov).norm() < 1e-10);
    CHECK(fit.weights()[0] == 1.0);

    const auto iso = learn_mixture_em(xs, 1, FamilyKind::gaussian_isotropic);
    CHECK(iso.components()[0].sigma2() == doctest::Approx(cov.trace() / 3.0).epsilon(1e-10));
}

TEST_CASE("EM recovers separated components") {
    const auto m = separated_model(4.0);
    const auto fit = learn_mixture_em(features(m, 4000, 9), 2, FamilyKind::gaussian_isotropic, 100, 3);
    CHECK(fit.label_rule().kind() == LabelRule::Kind::constant);
    CHECK(fit.weight_floor() == 0.0);
    std::vector<double> xs0{fit.components()[0].mean()[0], fit.components()[1].mean()[0]};
    std::sort(xs0.begin(), xs0.end());
    CHECK(xs0[0] == doctest::Approx(-2.0).epsilon(0.1));
    CHECK(xs0[1] == doctest::Approx(2.0).epsilon(0.1));
    // posteriors close to the truth on fresh points
    double worst = 0.0;
    const int flip = fit.components()[0].mean()[0] > 0 ? 1 : 0;
    for (const auto& x : features(m, 500, 10)) worst = std::max(worst, std::abs(fit.posterior(x)[flip] - m.posterior(x)[0]));
    CHECK(worst < 0.1);
}

TEST_CASE("EM is deterministic per seed and handles poisson data") {
    Vector r0(2), r1(2);
    r0 << 1.0, 8.0;
    r1 << 8.0, 1.0;
    const MixtureModel m(Vector::Constant(2, 0.5), {ExpFamilyComponent::poisson(r0), ExpFamilyComponent::poisson(r1)},
                         LabelRule::constant(0.5));
    const auto xs = features(m, 1000, 11);
    const auto a = learn_mixture_em(xs, 2, FamilyKind::poisson_product, 50, 4);
    const auto b = learn_mixture_em(xs, 2, FamilyKind::poisson_product, 50, 4);
    CHECK(a.stacked_natural() == b.stacked_natural());
    const Vector ra = a.components()[0].rates(), rb = a.components()[1].rates();
    CHECK(std::abs(ra[0] - ra[1]) > 5.0);
    CHECK(std::abs(rb[0] - rb[1]) > 5.0);
}

TEST_CASE("zero iterations keep the initialization") {
    const auto fit = learn_mixture_em(features(separated_model(2.0), 300, 12), 2, FamilyKind::gaussian_isotropic, 0, 1);
    CHECK(fit.k() == 2);
}

}  // TEST_SUITE
