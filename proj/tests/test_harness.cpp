#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "subcal/harness.hpp"
#include "subcal/model_io.hpp"
#include "support.hpp"

using namespace subcal;
using namespace testsupport;

namespace {

SweepSpec small_spec(PipelineKind p = PipelineKind::marginal) {
    SweepSpec s;
    s.separations = {1.0};
    s.pipelines = {p};
    s.T_grid = {256, 512, 1024};
    s.seeds = 5;
    s.base_seed = 17;
    return s;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

// Drops the trailing wall_ms field from every line.
std::string strip_wall(const std::string& csv) {
    std::istringstream is(csv);
    std::string line, out;
    while (std::getline(is, line)) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
}

ErrorCurve synthetic(const std::string& pipeline, double c, double slope, std::vector<long> Ts) {
    ErrorCurve curve;
    for (long T : Ts) {
        CurveRow r;
        r.pipeline = pipeline;
        r.model = "m";
        r.T = T;
        r.dce = c * std::pow(static_cast<double>(T), slope);
        r.lce = r.dce;
        curve.rows.push_back(r);
    }
    return curve;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("subcal_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("separated model") {
    const auto m = separated_model(3.0, 3);
    CHECK(m.k() == 2);
    CHECK(m.d() == 3);
    CHECK(m.components()[0].mean()[0] == -1.5);
    CHECK(m.components()[1].mean()[0] == 1.5);
    CHECK(m.components()[1].mean()[2] == 0.0);
    CHECK(m.weights()[0] == 0.5);
    CHECK(m.label_rule().kind() == LabelRule::Kind::logistic);
    CHECK_THROWS(separated_model(-1.0));
}

TEST_CASE("slope fits on exact power laws") {
    std::map<long, double> a, b, c;
    for (long T : {1L << 10, 1L << 12, 1L << 14, 1L << 16}) {
        a[T] = 3.0 * std::pow(double(T), 2.0 / 3.0);
        b[T] = 0.2 * std::sqrt(double(T));
        c[7 * T] = a[T];
    }
    CHECK(std::abs(fit_loglog(a).slope - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(fit_loglog(b).slope - 0.5) < 1e-12);
    CHECK(fit_loglog(a).residual_stderr < 1e-12);
    CHECK(fit_loglog(a).intercept == doctest::Approx(std::log(3.0)));
    // rescaling T moves only the intercept
    CHECK(std::abs(fit_loglog(c).slope - fit_loglog(a).slope) < 1e-12);
    CHECK(fit_loglog(c).intercept != doctest::Approx(fit_loglog(a).intercept));
}

TEST_CASE("slope fit drops zero medians and needs three points") {
    std::map<long, double> e{{100, 1.0}, {1000, 0.0}, {10000, 4.0}, {100000, 8.0}};
    CHECK(fit_loglog(e).points == 3);
    e[10000] = 0.0;
    CHECK_THROWS(fit_loglog(e));
}

TEST_CASE("slope standard error against a hand fit") {
    // points (0,0) (1,1) (2,1) in log space
    std::map<long, double> f;
    const double xs[3] = {std::log(1.0), std::log(10.0), std::log(100.0)};
    const double ys[3] = {0.0, 1.0, 1.0};
    for (int i = 0; i < 3; ++i) f[static_cast<long>(std::round(std::exp(xs[i])))] = std::exp(ys[i]);
    const auto fit = fit_loglog(f);
    const double mx = (xs[0] + xs[1] + xs[2]) / 3.0, my = 2.0 / 3.0;
    double sxx = 0, sxy = 0;
    for (int i = 0; i < 3; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    const double slope = sxy / sxx;
    double rss = 0;
    for (int i = 0; i < 3; ++i) {
        const double r = ys[i] - (my + slope * (xs[i] - mx));
        rss += r * r;
    }
    CHECK(fit.slope == doctest::Approx(slope).epsilon(1e-10));
    CHECK(fit.slope_stderr == doctest::Approx(std::sqrt(rss / 1.0) / std::sqrt(sxx)).epsilon(1e-10));
}

TEST_CASE("medians skip failed rows and average the middle pair") {
    ErrorCurve c;
    for (double v : {4.0, 1.0, 3.0, 2.0}) {
        CurveRow r;
        r.pipeline = "p";
        r.model = "m";
        r.T = 10;
        r.dce = v;
        c.rows.push_back(r);
    }
    CurveRow bad = c.rows[0];
    bad.status = "failed: x";
    bad.dce = 100.0;
    c.rows.push_back(bad);
    CHECK(c.medians("m", "p", "dce").at(10) == 2.5);
    CHECK(c.medians("m", "p", "mce").empty());
    CHECK_THROWS(c.rows[0].metric("bce"));
}

TEST_CASE("spec validation") {
    auto s = small_spec();
    CHECK_NOTHROW(s.validate());
    s.T_grid = {256, 256, 512};
    CHECK_THROWS(s.validate());
    s = small_spec();
    s.seeds = 4;
    CHECK_THROWS(s.validate());
    s = small_spec();
    s.pipelines.clear();
    CHECK_THROWS(s.validate());
    s = small_spec();
    s.overrides = {{"T", 5}};
    CHECK_THROWS(s.validate());
    s = small_spec();
    s.models.push_back({"a,b", model_to_json(separated_model(1.0))});
    CHECK_THROWS(s.validate());
    s = small_spec();
    s.models.push_back({"gamma=1", model_to_json(separated_model(1.0))});
    CHECK_THROWS(s.validate());
}

TEST_CASE("cell seeds depend on T and seed index only") {
    CHECK(cell_seed(1, 100, 0) != cell_seed(1, 100, 1));
    CHECK(cell_seed(1, 100, 0) != cell_seed(1, 200, 0));
    CHECK(cell_seed(1, 100, 0) != cell_seed(2, 100, 0));
    auto s = small_spec();
    s.pipelines = {PipelineKind::marginal, PipelineKind::ctp_lce};
    s.T_grid = {1000, 2000, 3000};
    s.separations = {1.0, 2.0};
    const auto curve = run_sweep(s, 2);
    std::map<std::pair<long, std::uint64_t>, int> seen;
    for (const auto& r : curve.rows) seen[{r.T, r.seed}]++;
    CHECK(seen.size() == 15);
    for (const auto& [k, n] : seen) CHECK(n == 4);
}

TEST_CASE("sweep rows, files and rerun determinism") {
    const auto dir = temp_dir("sweep");
    auto s = small_spec();
    s.output = (dir / "a").string();
    const auto curve = run_sweep(s, 3);
    CHECK(curve.rows.size() == 15);
    for (const auto& r : curve.rows) CHECK(r.ok());
    REQUIRE(std::filesystem::exists(dir / "a.csv"));
    REQUIRE(std::filesystem::exists(dir / "a.manifest.json"));
    const auto manifest = load_json((dir / "a.manifest.json").string());
    CHECK(manifest.at("cells").size() == 15);
    CHECK(manifest.at("kind") == "sweep");

    auto again = spec_from_manifest(manifest);
    again.output = (dir / "b").string();
    run_sweep(again, 1);
    const std::string a = slurp((dir / "a.csv").string()), b = slurp((dir / "b.csv").string());
    CHECK(std::count(a.begin(), a.end(), '\n') == 16);
    CHECK(strip_wall(a) == strip_wall(b));

    // same spec, different worker count
    const auto serial = run_sweep(small_spec(), 1);
    for (std::size_t i = 0; i < 15; ++i) CHECK(serial.rows[i].mce == curve.rows[i].mce);
}

TEST_CASE("tampered manifests are rejected") {
    auto m = sweep_manifest(small_spec());
    CHECK_NOTHROW(spec_from_manifest(m));
    m["spec"]["seeds"] = 6;
    CHECK_THROWS(spec_from_manifest(m));
    m = sweep_manifest(small_spec());
    m["kind"] = "run";
    CHECK_THROWS(spec_from_manifest(m));
    // the output path is not part of the hash
    auto s = small_spec();
    const auto h = spec_hash(s);
    s.output = "elsewhere";
    CHECK(spec_hash(s) == h);
}

TEST_CASE("a bad model fails only its own cells") {
    auto s = small_spec();
    auto broken = model_to_json(separated_model(1.0));
    broken["weights"] = {0.9, 0.9};
    s.models.push_back({"broken", broken});
    const auto curve = run_sweep(s, 2);
    int ok = 0, failed = 0;
    for (const auto& r : curve.rows) {
        if (r.ok()) {
            ++ok;
            CHECK(r.model == "gamma=1");
        } else {
            ++failed;
            CHECK(r.model == "broken");
            CHECK(r.status.rfind("failed: ", 0) == 0);
        }
    }
    CHECK(ok == 15);
    CHECK(failed == 15);
    std::ostringstream os;
    write_curve_csv(os, curve);
    std::istringstream is(os.str());
    const auto back = read_curve_csv(is);
    CHECK(back.rows.size() == 30);
}

TEST_CASE("curve csv round trip") {
    ErrorCurve c = synthetic("mo_dce", 0.1, 0.5, {100, 1000, 10000});
    c.rows[1].mce = 0.25;
    c.rows[2].status = "failed: x, y";
    std::ostringstream os;
    write_curve_csv(os, c);
    CHECK(os.str().rfind(std::string(kCurveHeader) + "\n", 0) == 0);
    std::istringstream is(os.str());
    const auto back = read_curve_csv(is);
    REQUIRE(back.rows.size() == 3);
    CHECK(back.rows[0].dce == c.rows[0].dce);
    CHECK(back.rows[1].mce == 0.25);
    CHECK_FALSE(back.rows[0].mce);
    CHECK_FALSE(back.rows[2].ok());
    std::istringstream bad("pipeline,model\n");
    CHECK_THROWS(read_curve_csv(bad));
    std::istringstream empty("");
    CHECK_THROWS(read_curve_csv(empty));
}

TEST_CASE("joining curves refuses mixed schema versions") {
    auto a = synthetic("mo_dce", 1.0, 0.5, {10, 100, 1000});
    auto b = synthetic("ctp_dce", 1.0, 0.7, {10, 100, 1000});
    CHECK(join_curves({a, b}).rows.size() == 6);
    b.rows[0].schema_version = 2;
    CHECK_THROWS(join_curves({a, b}));
}

TEST_CASE("report") {
    const std::vector<long> Ts{1L << 12, 1L << 14, 1L << 16, 1L << 18};
    SUBCASE("clear gap passes") {
        const auto rep = make_report(join_curves({synthetic("ctp_dce", 1.0, 2.0 / 3.0, Ts), synthetic("mo_dce", 1.0, 0.5, Ts)}));
        REQUIRE(rep.gaps.size() == 1);
        CHECK(rep.gaps[0].gap == doctest::Approx(1.0 / 6.0));
        CHECK(rep.gaps[0].pass);
        CHECK(rep.pass);
        std::ostringstream os;
        write_report_text(os, rep);
        CHECK(os.str().find("overall PASS") != std::string::npos);
        std::ostringstream csv;
        write_report_csv(csv, rep);
        CHECK(csv.str().find("gap,m,ctp_dce-mo_dce,dce,") != std::string::npos);
    }
    SUBCASE("small gap fails") {
        const auto rep = make_report(join_curves({synthetic("ctp_dce", 1.0, 0.52, Ts), synthetic("mo_dce", 1.0, 0.5, Ts)}));
        CHECK_FALSE(rep.pass);
        const auto loose = make_report(join_curves({synthetic("ctp_dce", 1.0, 0.52, Ts), synthetic("mo_dce", 1.0, 0.5, Ts)}), {0.01});
        CHECK(loose.pass);
    }
    SUBCASE("single pipeline has no gap rows") {
        const auto rep = make_report(synthetic("mo_dce", 1.0, 0.5, Ts));
        CHECK(rep.gaps.empty());
        CHECK(rep.slopes.size() == 2);
        CHECK(rep.pass);
    }
    SUBCASE("empty input") { CHECK_THROWS(make_report(ErrorCurve{})); }
}

TEST_CASE("worker budget from the environment") {
    ::setenv("SUBCAL_WORKERS", "3", 1);
    CHECK(default_workers() == 3);
    ::setenv("SUBCAL_WORKERS", "zero", 1);
    CHECK(default_workers() >= 1);
    ::unsetenv("SUBCAL_WORKERS");
}

}  // TEST_SUITE
