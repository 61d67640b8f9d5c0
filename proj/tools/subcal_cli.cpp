// subcal command-line front end.
//
//   generate       sample (x, y, component) rows from a model
//   run            one pipeline run, with a manifest for re-execution
//   sweep          a grid of runs; CSV + manifest
//   verify-cover   build a greedy cover and check it on a held-out sample
//   shatter        empirical pseudo-shattering dimension of a class
//   report         slopes and ctp-vs-mo gaps over sweep CSVs
//
// SUBCAL_WORKERS sets the sweep worker budget.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "subcal/covering.hpp"
#include "subcal/harness.hpp"
#include "subcal/model_io.hpp"
#include "subcal/pipelines.hpp"
#include "subcal/rng.hpp"

using namespace subcal;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_text(const std::string& path, const std::string& text) {
    if (path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << text;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
    std::string model;
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    std::string out = "-";
};

int cmd_generate(const GenerateArgs& a) {
    const MixtureModel model = load_model(a.model);
    const auto data = sample(model, a.n, a.seed);
    std::ostringstream os;
    os.precision(17);
    os << "t,component,y";
    for (int i = 0; i < model.d(); ++i) os << ",x" << i;
    os << '\n';
    for (std::size_t t = 0; t < data.size(); ++t) {
        os << t + 1 << ',' << data[t].true_component << ',' << data[t].y;
        for (int i = 0; i < model.d(); ++i) os << ',' << data[t].x[i];
        os << '\n';
    }
    write_text(a.out, os.str());
    return 0;
}

// ---------------------------------------------------------------------------

struct RunArgs {
    std::string model;
    std::string manifest;
    std::string pipeline = "marginal";
    long T = 0;
    std::string tprime = "auto";
    int lambda = 10;
    std::uint64_t seed = 0;
    int candidates = 500;
    bool include_truth = false;
    double phase1 = 0.5;
    std::string out;
    std::string transcript;
};

std::string result_csv(const RunResult& r, const std::string& model_name) {
    CurveRow row;
    row.pipeline = std::string(to_string(r.pipeline));
    row.model = model_name;
    row.T = r.T;
    row.status = r.status;
    row.tprime = r.tprime;
    row.cover_size = r.cover_size;
    row.wall_ms = r.wall_ms;
    if (r.ok()) {
        row.dce = r.dce.max_abs;
        row.lce = r.lce.max_abs;
        if (r.mce) row.mce = r.mce->max_abs;
    }
    ErrorCurve c;
    c.rows.push_back(row);
    std::ostringstream os;
    write_curve_csv(os, c);
    return os.str();
}

int cmd_run(const RunArgs& a) {
    nlohmann::json model_json;
    PipelineConfig config;
    if (!a.manifest.empty()) {
        const nlohmann::json m = load_json(a.manifest);
        if (m.value("kind", std::string()) != "run") throw std::invalid_argument("not a run manifest");
        model_json = m.at("model");
        config = config_from_json(m.at("config"));
    } else {
        if (a.model.empty() || a.T <= 0) throw std::invalid_argument("run needs --model and --T (or --manifest)");
        model_json = load_json(a.model);
        config.pipeline = pipeline_from_string(a.pipeline);
        config.T = a.T;
        config.tprime = TPrimePolicy::parse(a.tprime);
        config.lambda = a.lambda;
        config.seed = a.seed;
        config.candidates = a.candidates;
        config.include_truth = a.include_truth;
        config.phase1_prediction = a.phase1;
    }
    const MixtureModel model = model_from_json(model_json);
    const RunResult r = run_pipeline(model, config);

    if (ends_with(a.out, ".csv")) {
        write_text(a.out, result_csv(r, "model"));
    } else {
        write_text(a.out, result_to_json(r, config, BucketGrid(config.lambda)).dump(2) + "\n");
    }
    if (a.out != "-") {
        const nlohmann::json manifest = {{"kind", "run"}, {"model", model_json}, {"config", config_to_json(config)}};
        save_json(a.out + ".manifest.json", manifest);
    }
    if (!a.transcript.empty()) {
        std::ostringstream os;
        write_transcript_csv(os, r.transcript);
        write_text(a.transcript, os.str());
    }
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
    if (!r.ok()) {
        std::cerr << r.status << '\n';
        return 1;
    }
    std::fprintf(stderr, "%s T=%ld T'=%ld dce=%.6g lce=%.6g%s\n", std::string(to_string(r.pipeline)).c_str(), r.T,
                 r.tprime, r.dce.max_abs, r.lce.max_abs,
                 r.mce ? (" mce=" + std::to_string(r.mce->max_abs)).c_str() : "");
    return 0;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
    std::string spec;
    std::string manifest;
    std::string out;
    int workers = 0;
};

int cmd_sweep(const SweepArgs& a) {
    SweepSpec spec;
    if (!a.manifest.empty()) spec = spec_from_manifest(load_json(a.manifest));
    else if (!a.spec.empty()) spec = spec_from_json(load_json(a.spec));
    else throw std::invalid_argument("sweep needs --spec or --manifest");
    if (!a.out.empty()) spec.output = a.out;
    if (spec.output.empty()) throw std::invalid_argument("sweep needs an output prefix (spec \"output\" or --out)");
    const ErrorCurve curve = run_sweep(spec, a.workers);
    std::size_t failed = 0;
    for (const auto& r : curve.rows) failed += !r.ok();
    std::cerr << curve.rows.size() << " cells, " << failed << " failed; wrote " << spec.output << ".csv\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct CoverArgs {
    std::string model;
    std::string cover;
    std::string mode = "dce";
    int candidates = 500;
    std::size_t construction = 2000;
    std::size_t holdout = 2000;
    double epsilon = 0.025;
    std::uint64_t seed = 0;
    std::string cover_out;
};

std::vector<Vector> features(const std::vector<LabeledSample>& s) {
    std::vector<Vector> xs;
    for (const auto& v : s) xs.push_back(v.x);
    return xs;
}

int cmd_verify_cover(const CoverArgs& a) {
    const MixtureModel model = load_model(a.model);
    DistinguisherClass cls;
    Cover cover;
    if (!a.cover.empty()) {
        LoadedCover lc = cover_from_json(load_json(a.cover));
        cls = std::move(lc.cls);
        cover = std::move(lc.cover);
    } else {
        const auto xs = features(sample(model, a.construction, derive_seed(a.seed, 1)));
        const CandidateFamily fam =
            candidate_family_for_sample(xs, model.family(), model.k(), a.candidates, derive_seed(a.seed, 2));
        cls = build_distinguisher_class(fam, class_mode_from_string(a.mode));
        cover = greedy_cover(DistinguisherBank(cls.functions).tabulate(xs), a.epsilon);
        if (!a.cover_out.empty()) save_json(a.cover_out, cover_to_json(cls, cover));
    }
    const auto hold = features(sample(model, a.holdout, derive_seed(a.seed, 3)));
    const CoverCheck check = verify_cover(cover, DistinguisherBank(cls.functions).tabulate(hold), cover.epsilon);
    std::printf("%s functions=%zu cover=%zu epsilon=%g radius=%g worst_gap=%.6f worst_function=%zu\n",
                check.pass ? "PASS" : "FAIL", cls.functions.size(), cover.selected.size(), cover.epsilon,
                check.radius, check.worst_gap, check.worst_function);
    return check.pass ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct ShatterArgs {
    std::string cls = "halfspace-2d";
    int points = 3;
    int functions = 2000;
    int trials = 1;
    std::uint64_t seed = 0;
    std::string family = "gaussian_isotropic";
    int k = 2;
    int d = 2;
    bool shared_variance = false;
};

int cmd_shatter(const ShatterArgs& a) {
    CandidateFamily fam;
    ClassMode mode = ClassMode::dce;
    if (a.cls == "halfspace-2d" || a.cls == "ratio-1d") {
        fam.family = FamilyKind::gaussian_isotropic;
        fam.k = 2;
        fam.d = a.cls == "ratio-1d" ? 1 : 2;
        fam.shared_variance = true;
        mode = a.cls == "ratio-1d" ? ClassMode::lce : ClassMode::dce;
    } else if (a.cls == "dce" || a.cls == "lce") {
        fam.family = family_from_string(a.family);
        fam.k = a.k;
        fam.d = a.d;
        fam.shared_variance = a.shared_variance;
        mode = class_mode_from_string(a.cls);
    } else {
        throw std::invalid_argument("unknown class: " + a.cls);
    }
    const bool poisson = fam.family == FamilyKind::poisson_product;
    fam.mean_lo = Vector::Constant(fam.d, poisson ? 0.5 : -3.0);
    fam.mean_hi = Vector::Constant(fam.d, poisson ? 8.0 : 3.0);
    fam.M = a.functions / fam.k;
    int worst = 0;
    for (int trial = 0; trial < a.trials; ++trial) {
        fam.seed = derive_seed(a.seed, 2 * static_cast<std::uint64_t>(trial));
        const DistinguisherClass cls = build_distinguisher_class(fam, mode);
        Rng rng(derive_seed(a.seed, 2 * static_cast<std::uint64_t>(trial) + 1));
        std::normal_distribution<double> normal(0.0, 1.5);
        std::poisson_distribution<int> pois(3.0);
        std::vector<Vector> pts;
        for (int i = 0; i < a.points; ++i) {
            Vector x(fam.d);
            for (int j = 0; j < fam.d; ++j) x[j] = poisson ? pois(rng) : normal(rng);
            pts.push_back(x);
        }
        const int dim = empirical_shatter_dim(DistinguisherBank(cls.functions).tabulate(pts));
        worst = std::max(worst, dim);
        std::printf("trial %d: shattered %d of %d points\n", trial, dim, a.points);
    }
    std::printf("max %d\n", worst);
    return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
    std::vector<std::string> inputs;
    double min_gap = 0.05;
    std::string csv;
};

int cmd_report(const ReportArgs& a) {
    if (a.inputs.empty()) {
        std::cerr << "report: no input curves\n";
        return 2;
    }
    std::vector<ErrorCurve> curves;
    for (const auto& p : a.inputs) curves.push_back(load_curve(p));
    const Report rep = make_report(join_curves(curves), {a.min_gap});
    write_report_text(std::cout, rep);
    if (!a.csv.empty()) {
        std::ostringstream os;
        write_report_csv(os, rep);
        write_text(a.csv, os.str());
    }
    return rep.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Per-subgroup online calibration simulator"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Sample labeled points from a model");
    g->add_option("--model", gen.model, "Model JSON")->required();
    g->add_option("--n", gen.n, "Number of samples");
    g->add_option("--seed", gen.seed);
    g->add_option("--out", gen.out, "CSV path or -");

    RunArgs run;
    auto* r = app.add_subcommand("run", "Run one pipeline");
    r->add_option("--model", run.model, "Model JSON");
    r->add_option("--manifest", run.manifest, "Re-run from a run manifest");
    r->add_option("--pipeline", run.pipeline, "ctp_dce|ctp_lce|mo_dce|mo_lce|marginal");
    r->add_option("--T", run.T, "Rounds");
    r->add_option("--tprime-policy", run.tprime, "auto|t23|t1213|sqrt_formula|fixed:<n>");
    r->add_option("--lambda", run.lambda);
    r->add_option("--seed", run.seed);
    r->add_option("--candidates", run.candidates, "Candidate mixtures (mo pipelines)");
    r->add_flag("--include-truth", run.include_truth, "Add the true model's distinguishers (mo pipelines)");
    r->add_option("--phase1-prediction", run.phase1);
    r->add_option("--out", run.out, "Result .json or .csv")->required();
    r->add_option("--transcript", run.transcript, "Per-round CSV");

    SweepArgs sw;
    auto* s = app.add_subcommand("sweep", "Run a sweep");
    s->add_option("--spec", sw.spec, "Sweep spec JSON");
    s->add_option("--manifest", sw.manifest, "Re-run from a sweep manifest");
    s->add_option("--out", sw.out, "Output prefix");
    s->add_option("--workers", sw.workers, "Worker threads (default: SUBCAL_WORKERS or all cores)");

    CoverArgs cv;
    auto* c = app.add_subcommand("verify-cover", "Build or load a cover and check it on a held-out sample");
    c->add_option("--model", cv.model, "Model JSON")->required();
    c->add_option("--cover", cv.cover, "Existing cover JSON");
    c->add_option("--mode", cv.mode, "dce|lce");
    c->add_option("--candidates", cv.candidates);
    c->add_option("--construction", cv.construction, "Construction sample size");
    c->add_option("--holdout", cv.holdout, "Held-out sample size");
    c->add_option("--epsilon", cv.epsilon);
    c->add_option("--seed", cv.seed);
    c->add_option("--cover-out", cv.cover_out, "Write the cover JSON");

    ShatterArgs sh;
    auto* h = app.add_subcommand("shatter", "Empirical pseudo-shattering dimension");
    h->add_option("--class", sh.cls, "halfspace-2d|ratio-1d|dce|lce");
    h->add_option("--points", sh.points, "Points per trial (<= 12)");
    h->add_option("--functions", sh.functions, "Class size");
    h->add_option("--trials", sh.trials);
    h->add_option("--seed", sh.seed);
    h->add_option("--family", sh.family, "For dce|lce");
    h->add_option("--k", sh.k);
    h->add_option("--d", sh.d);
    h->add_flag("--shared-variance", sh.shared_variance);

    ReportArgs rp;
    auto* p = app.add_subcommand("report", "Compare sweep curves");
    p->add_option("curves", rp.inputs, "Sweep CSV files");
    p->add_option("--min-gap", rp.min_gap, "Required slope(ctp) - slope(mo)");
    p->add_option("--csv", rp.csv, "Also write the table as CSV");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*g) return cmd_generate(gen);
        if (*r) return cmd_run(run);
        if (*s) return cmd_sweep(sw);
        if (*c) return cmd_verify_cover(cv);
        if (*h) return cmd_shatter(sh);
        if (*p) return cmd_report(rp);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
