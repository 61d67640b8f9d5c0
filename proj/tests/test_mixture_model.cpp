#include <cmath>

#include "doctest.h"
#include "subcal/distinguisher.hpp"
#include "subcal/mixture_model.hpp"
#include "subcal/model_io.hpp"
#include "support.hpp"

using namespace subcal;
using namespace testsupport;

TEST_SUITE("mixture_model") {

TEST_CASE("sufficient statistic dimensions") {
    CHECK(stat_dim(FamilyKind::gaussian_full, 2) == 5);
    CHECK(stat_dim(FamilyKind::gaussian_full, 3) == 9);
    CHECK(stat_dim(FamilyKind::gaussian_isotropic, 2) == 3);
    CHECK(stat_dim(FamilyKind::gaussian_isotropic, 4) <= 8);
    CHECK(stat_dim(FamilyKind::poisson_product, 3) == 3);
    Vector x(2);
    x << 1.0, -2.0;
    CHECK(sufficient_statistic(FamilyKind::gaussian_full, x).size() == 5);
}

TEST_CASE("family names round trip") {
    for (auto k : {FamilyKind::gaussian_full, FamilyKind::gaussian_isotropic, FamilyKind::poisson_product})
        CHECK(family_from_string(to_string(k)) == k);
    CHECK_THROWS(family_from_string("laplace"));
}

TEST_CASE("standard normal at the mode") {
    Vector mu = Vector::Zero(1), x = Vector::Zero(1);
    const auto c = ExpFamilyComponent::isotropic(mu, 1.0);
    CHECK(c.log_density(x) == doctest::Approx(-0.9189385332).epsilon(1e-9));
    CHECK(c.log_partition() == doctest::Approx(0.5 * std::log(2.0 * kPi)).epsilon(1e-12));
}

TEST_CASE("log-partition of a full Gaussian matches the moment formula") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        const int d = 1 + rep % 3;
        Vector mu(d);
        for (int i = 0; i < d; ++i) mu[i] = uniform01(rng) * 4.0 - 2.0;
        const Matrix cov = random_spd(d, rng);
        const auto c = ExpFamilyComponent::gaussian({mu, cov});
        const double expected = 0.5 * mu.dot(cov.inverse() * mu) + 0.5 * std::log(cov.determinant()) +
                                0.5 * d * std::log(2.0 * kPi);
        CHECK(c.log_partition() == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("densities agree with closed forms") {
    Rng rng(11);
    for (int rep = 0; rep < 30; ++rep) {
        const int d = 1 + rep % 3;
        const auto full = random_component(FamilyKind::gaussian_full, d, rng);
        const auto iso = random_component(FamilyKind::gaussian_isotropic, d, rng);
        const auto poi = random_component(FamilyKind::poisson_product, d, rng);
        for (int i = 0; i < 20; ++i) {
            const Vector x = full.sample(rng);
            const auto gp = full.gaussian_params();
            CHECK(full.log_density(x) == doctest::Approx(normal_logpdf(x, gp.mean, gp.cov)).epsilon(1e-9));
            const Matrix iso_cov = iso.sigma2() * Matrix::Identity(d, d);
            CHECK(iso.log_density(x) == doctest::Approx(normal_logpdf(x, iso.mean(), iso_cov)).epsilon(1e-9));
            const Vector n = poi.sample(rng);
            CHECK(poi.log_density(n) == doctest::Approx(poisson_logpmf(n, poi.rates())).epsilon(1e-9));
        }
    }
}

TEST_CASE("natural parameters round trip through from_natural") {
    Rng rng(5);
    for (auto kind : {FamilyKind::gaussian_full, FamilyKind::gaussian_isotropic, FamilyKind::poisson_product}) {
        const auto c = random_component(kind, 2, rng);
        const auto back = ExpFamilyComponent::from_natural(kind, 2, c.natural());
        CHECK(back.log_partition() == doctest::Approx(c.log_partition()).epsilon(1e-10));
        CHECK((back.mean() - c.mean()).norm() < 1e-9);
    }
    // negative precision has no finite log-partition
    Vector bad(2);
    bad << 0.0, 0.5;
    CHECK_THROWS(ExpFamilyComponent::from_natural(FamilyKind::gaussian_isotropic, 1, bad));
}

TEST_CASE("invalid parameters are rejected") {
    Vector mu = Vector::Zero(2);
    CHECK_THROWS(ExpFamilyComponent::isotropic(mu, 0.0));
    CHECK_THROWS(ExpFamilyComponent::isotropic(mu, -1.0));
    Matrix not_pd(2, 2);
    not_pd << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS(ExpFamilyComponent::gaussian({mu, not_pd}));
    Vector rates(2);
    rates << 1.0, 0.0;
    CHECK_THROWS(ExpFamilyComponent::poisson(rates));
    // weights below the floor, weights not summing to one, mixed families
    const auto a = ExpFamilyComponent::isotropic(mu, 1.0);
    Vector w(2);
    w << 0.99, 0.01;
    CHECK_THROWS(MixtureModel(w, {a, a}, LabelRule::constant(0.5)));
    w << 0.7, 0.7;
    CHECK_THROWS(MixtureModel(w, {a, a}, LabelRule::constant(0.5)));
    w << 0.5, 0.5;
    CHECK_THROWS(MixtureModel(w, {a, ExpFamilyComponent::poisson(Vector::Ones(2))}, LabelRule::constant(0.5)));
    CHECK_THROWS(LabelRule::constant(1.5));
}

TEST_CASE("sampling: law of large numbers on a centered component") {
    Vector mu = Vector::Zero(1);
    const MixtureModel m(Vector::Ones(1), {ExpFamilyComponent::isotropic(mu, 1.0)}, LabelRule::constant(0.3), 0.0);
    const auto s = sample(m, 100000, 42);
    double sum = 0.0, ysum = 0.0;
    for (const auto& p : s) {
        sum += p.x[0];
        ysum += p.y;
    }
    CHECK(std::abs(sum / s.size()) < 0.02);
    CHECK(std::abs(ysum / s.size() - 0.3) < 0.01);
}

TEST_CASE("sampling is deterministic per seed and follows the weights") {
    Rng rng(9);
    const auto m = random_model(FamilyKind::gaussian_isotropic, 3, 2, rng);
    const auto a = sample(m, 5000, 77), b = sample(m, 5000, 77);
    std::vector<int> counts(3, 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x == b[i].x);
        CHECK(a[i].y == b[i].y);
        counts[static_cast<std::size_t>(a[i].true_component)]++;
    }
    for (int g = 0; g < 3; ++g) {
        // 5 standard deviations of a binomial proportion
        const double p = m.weights()[g];
        CHECK(std::abs(counts[static_cast<std::size_t>(g)] / 5000.0 - p) < 5.0 * std::sqrt(p * (1 - p) / 5000.0));
    }
}

TEST_CASE("posterior") {
    SUBCASE("symmetric pair at the midpoint") {
        const auto m = iso_pair(-1.0, 1.0);
        const Vector p = m.posterior(Vector::Zero(1));
        CHECK(p[0] == doctest::Approx(0.5));
        CHECK(p[1] == doctest::Approx(0.5));
    }
    SUBCASE("single component") {
        Vector mu = Vector::Zero(2);
        const MixtureModel m(Vector::Ones(1), {ExpFamilyComponent::isotropic(mu, 2.0)}, LabelRule::constant(0.5), 0.0);
        CHECK(m.posterior(Vector::Ones(2))[0] == 1.0);
    }
    SUBCASE("two 1-d components against direct density evaluation") {
        const auto m = iso_pair(-1.0, 1.0);
        Vector x(1);
        x << 0.3;
        const double f0 = std::exp(-0.5 * 1.3 * 1.3), f1 = std::exp(-0.5 * 0.7 * 0.7);
        CHECK(m.posterior(x)[1] == doctest::Approx(f1 / (f0 + f1)).epsilon(1e-12));
    }
    SUBCASE("extreme points stay finite") {
        const auto m = iso_pair(-1.0, 1.0, 0.01);
        Vector x(1);
        x << 1e4;
        const Vector p = m.posterior(x);
        CHECK(std::isfinite(p[0]));
        CHECK(p[1] == 1.0);
    }
}

TEST_CASE("posterior matches Bayes rule on random models") {
    Rng rng(21);
    for (auto kind : {FamilyKind::gaussian_full, FamilyKind::gaussian_isotropic, FamilyKind::poisson_product}) {
        const auto m = random_model(kind, 3, 2, rng);
        for (int i = 0; i < 50; ++i) {
            const Vector x = m.sample_x(rng);
            std::vector<double> joint(3);
            double z = 0.0;
            for (int g = 0; g < 3; ++g) {
                const auto& c = m.components()[static_cast<std::size_t>(g)];
                double lp = 0.0;
                if (kind == FamilyKind::poisson_product) lp = poisson_logpmf(x, c.rates());
                else {
                    const auto gp = c.gaussian_params();
                    lp = normal_logpdf(x, gp.mean, gp.cov);
                }
                joint[static_cast<std::size_t>(g)] = m.weights()[g] * std::exp(lp);
                z += joint[static_cast<std::size_t>(g)];
            }
            const Vector p = m.posterior(x);
            for (int g = 0; g < 3; ++g) CHECK(p[g] == doctest::Approx(joint[static_cast<std::size_t>(g)] / z).epsilon(1e-9));
            CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("discriminant") {
    const auto m = iso_pair(-1.0, 1.0);
    Vector x(1);
    x << -0.2;
    CHECK(m.discriminant(x) == 0);
    x << 0.2;
    CHECK(m.discriminant(x) == 1);
    x << 0.0;
    CHECK(m.discriminant(x) == 0);  // tie goes to the smaller index
    Vector v(3);
    v << 1.0, 3.0, 3.0;
    CHECK(argmax_first(v) == 1);
}

TEST_CASE("likelihood ratio") {
    Rng rng(4);
    const auto m = random_model(FamilyKind::gaussian_full, 3, 2, rng);
    const Vector x = m.sample_x(rng);
    CHECK(m.likelihood_ratio(1, 1, x) == 1.0);
    const Vector p = m.posterior(x);
    CHECK(m.likelihood_ratio(0, 2, x) == doctest::Approx(p[0] / p[2]).epsilon(1e-10));
}

TEST_CASE("log-sum-exp and softmax are stable") {
    Vector s(3);
    s << 1000.0, 1000.0, -1000.0;
    CHECK(log_sum_exp(s) == doctest::Approx(1000.0 + std::log(2.0)));
    const Vector p = softmax(s);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[2] == 0.0);
}

TEST_CASE("monte carlo TV distance") {
    Vector a = Vector::Zero(1), b(1);
    b << 1.0;
    const auto p = ExpFamilyComponent::isotropic(a, 1.0), q = ExpFamilyComponent::isotropic(b, 1.0);
    SUBCASE("identical distributions") {
        const auto e = tv_distance_mc(p, p, 10000, 1);
        CHECK(e.value <= 2.0 * e.std_error + 1e-12);
    }
    SUBCASE("shifted normals") {
        const double truth = 2.0 * std_normal_cdf(0.5) - 1.0;
        CHECK(truth == doctest::Approx(0.3829).epsilon(1e-4));
        const auto e = tv_distance_mc(p, q, 200000, 2);
        CHECK(std::abs(e.value - truth) < 4.0 * e.std_error);
    }
    SUBCASE("mixtures with far-apart components") {
        const auto m1 = iso_pair(-50.0, -49.0), m2 = iso_pair(49.0, 50.0);
        const auto e = tv_distance_mc(m1, m2, 1000, 3);
        CHECK(e.value == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK_THROWS(tv_distance_mc(p, q, 10, 1));
}

TEST_CASE("label rules") {
    Vector w(2);
    w << 2.0, 0.0;
    const auto lr = LabelRule::logistic(w, 0.5);
    Vector x(2);
    x << 0.25, 9.0;
    CHECK(lr.evaluate(x) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    LabelRule::Box box{Vector::Zero(2), Vector::Ones(2)};
    const auto pw = LabelRule::piecewise({box}, {0.9, 0.1});
    x << 0.5, 0.5;
    CHECK(pw.evaluate(x) == 0.9);
    x << 2.0, 0.5;
    CHECK(pw.evaluate(x) == 0.1);
}

TEST_CASE("model json round trip is lossless") {
    Rng rng(8);
    for (auto kind : {FamilyKind::gaussian_full, FamilyKind::gaussian_isotropic, FamilyKind::poisson_product}) {
        Vector w(2);
        w << 1.0, -0.5;
        const auto m = random_model(kind, 2, 2, rng, LabelRule::logistic(w, 0.25));
        const auto back = model_from_json(nlohmann::json::parse(model_to_json(m).dump()));
        CHECK(back.weights() == m.weights());
        CHECK(back.stacked_natural() == m.stacked_natural());
        CHECK(back.score_offsets() == m.score_offsets());
        CHECK(back.label_rule().w() == m.label_rule().w());
    }
    const auto learned = model_from_json(model_to_json(iso_pair(0.0, 1.0), false));
    CHECK(learned.label_rule().kind() == LabelRule::Kind::constant);
    CHECK(learned.label_rule().p() == 0.5);
}

TEST_CASE("distinguisher bank agrees bitwise with the model") {
    Rng rng(13);
    auto m1 = std::make_shared<const MixtureModel>(random_model(FamilyKind::gaussian_full, 2, 2, rng));
    auto m2 = std::make_shared<const MixtureModel>(random_model(FamilyKind::gaussian_full, 3, 2, rng));
    std::vector<Distinguisher> ds;
    for (int g = 0; g < 2; ++g) ds.push_back(Distinguisher::indicator(m1, g));
    for (int g = 0; g < 3; ++g) ds.push_back(Distinguisher::posterior(m2, g));
    ds.push_back(Distinguisher::constant(1.0));
    const DistinguisherBank bank(ds);
    for (int i = 0; i < 100; ++i) {
        const Vector x = m1->sample_x(rng);
        const auto v = bank.evaluate(x);
        for (std::size_t j = 0; j < ds.size(); ++j) CHECK(v[j] == ds[j](x));
        CHECK(v[2] == m2->posterior(x)[0]);
    }
}

}  // TEST_SUITE
