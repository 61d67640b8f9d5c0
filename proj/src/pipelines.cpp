#include "subcal/pipelines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <ostream>
#include <stdexcept>

#include "subcal/clustering.hpp"
#include "subcal/online_calibration.hpp"
#include "subcal/rng.hpp"

namespace subcal {

namespace {

// Sub-stream identifiers for derive_seed.
enum : std::uint64_t {
    kStreamData = 1,
    kStreamCandidates = 4,
    kStreamEm = 5,
    kStreamEngine = 10,
};

}  // namespace

std::string_view to_string(PipelineKind kind) {
    switch (kind) {
        case PipelineKind::ctp_dce: return "ctp_dce";
        case PipelineKind::ctp_lce: return "ctp_lce";
        case PipelineKind::mo_dce: return "mo_dce";
        case PipelineKind::mo_lce: return "mo_lce";
        case PipelineKind::marginal: return "marginal";
    }
    return "?";
}

PipelineKind pipeline_from_string(std::string_view name) {
    for (auto k : {PipelineKind::ctp_dce, PipelineKind::ctp_lce, PipelineKind::mo_dce, PipelineKind::mo_lce,
                   PipelineKind::marginal})
        if (name == to_string(k)) return k;
    throw std::invalid_argument("unknown pipeline: " + std::string(name));
}

TPrimePolicy TPrimePolicy::parse(std::string_view text) {
    TPrimePolicy p;
    if (text == "auto") p.kind = Kind::automatic;
    else if (text == "t23") p.kind = Kind::t23;
    else if (text == "t1213") p.kind = Kind::t1213;
    else if (text == "sqrt_formula") p.kind = Kind::sqrt_formula;
    else if (text.starts_with("fixed:")) {
        p.kind = Kind::fixed;
        const std::string num(text.substr(6));
        std::size_t used = 0;
        try {
            p.n = std::stol(num, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != num.size()) throw std::invalid_argument("bad fixed T' value: " + num);
    } else {
        throw std::invalid_argument("unknown T' policy: " + std::string(text));
    }
    return p;
}

std::string TPrimePolicy::str() const {
    switch (kind) {
        case Kind::automatic: return "auto";
        case Kind::t23: return "t23";
        case Kind::t1213: return "t1213";
        case Kind::sqrt_formula: return "sqrt_formula";
        case Kind::fixed: return "fixed:" + std::to_string(n);
    }
    return "?";
}

nlohmann::json config_to_json(const PipelineConfig& c) {
    return {{"pipeline", std::string(to_string(c.pipeline))},
            {"T", c.T},
            {"tprime_policy", c.tprime.str()},
            {"phase1_prediction", c.phase1_prediction},
            {"lambda", c.lambda},
            {"seed", c.seed},
            {"candidates", c.candidates},
            {"pdim_hint", c.pdim_hint},
            {"delta", c.delta},
            {"cover_budget", c.cover_budget},
            {"include_truth", c.include_truth},
            {"em_iters", c.em_iters},
            {"pred_grid_resolution", c.pred_grid_resolution}};
}

PipelineConfig config_from_json(const nlohmann::json& j) {
    PipelineConfig c;
    c.pipeline = pipeline_from_string(j.at("pipeline").get<std::string>());
    c.T = j.at("T").get<long>();
    c.tprime = TPrimePolicy::parse(j.value("tprime_policy", std::string("auto")));
    c.phase1_prediction = j.value("phase1_prediction", c.phase1_prediction);
    c.lambda = j.value("lambda", c.lambda);
    c.seed = j.value("seed", c.seed);
    c.candidates = j.value("candidates", c.candidates);
    c.pdim_hint = j.value("pdim_hint", c.pdim_hint);
    c.delta = j.value("delta", c.delta);
    c.cover_budget = j.value("cover_budget", c.cover_budget);
    c.include_truth = j.value("include_truth", c.include_truth);
    c.em_iters = j.value("em_iters", c.em_iters);
    c.pred_grid_resolution = j.value("pred_grid_resolution", c.pred_grid_resolution);
    return c;
}

long resolve_tprime(const PipelineConfig& config, const MixtureModel& model) {
    const long T = config.T;
    if (T < 1) throw std::invalid_argument("T must be positive");
    if (config.pipeline == PipelineKind::marginal) return 0;

    TPrimePolicy::Kind kind = config.tprime.kind;
    if (kind == TPrimePolicy::Kind::automatic) {
        const bool ctp = config.pipeline == PipelineKind::ctp_dce || config.pipeline == PipelineKind::ctp_lce;
        kind = ctp ? TPrimePolicy::Kind::t23 : TPrimePolicy::Kind::sqrt_formula;
    }
    long tp = 0;
    switch (kind) {
        case TPrimePolicy::Kind::t23: {
            // smallest n with n^3 >= T^2
            const __int128 t2 = static_cast<__int128>(T) * T;
            tp = static_cast<long>(std::floor(std::cbrt(static_cast<double>(T) * T)));
            while (tp > 0 && static_cast<__int128>(tp - 1) * (tp - 1) * (tp - 1) >= t2) --tp;
            while (static_cast<__int128>(tp) * tp * tp < t2) ++tp;
            break;
        }
        case TPrimePolicy::Kind::t1213:
            tp = static_cast<long>(std::ceil(std::pow(static_cast<long double>(T), 12.0L / 13.0L) - 1e-9L));
            break;
        case TPrimePolicy::Kind::sqrt_formula: {
            const double pdim = config.pdim_hint > 0.0 ? config.pdim_hint : model.stat_dim() + 1.0;
            if (!(config.delta > 0.0 && config.delta < 1.0)) throw std::invalid_argument("delta must lie in (0,1)");
            const double Td = static_cast<double>(T);
            tp = static_cast<long>(std::ceil(std::sqrt(Td * (pdim * std::log(Td) + std::log(1.0 / config.delta)))));
            break;
        }
        case TPrimePolicy::Kind::fixed:
            tp = config.tprime.n;
            break;
        case TPrimePolicy::Kind::automatic:
            break;
    }
    if (tp < 1 || tp >= T)
        throw std::invalid_argument("T' = " + std::to_string(tp) + " outside [1, T) for T = " + std::to_string(T));
    return tp;
}

// ---------------------------------------------------------------------------

namespace {

// DCE/LCE against the true model, updated round by round.
class TruthMetrics {
public:
    TruthMetrics(const MixtureModel& truth, const BucketGrid& grid)
        : truth_(truth), dce_("dce", truth.k(), grid), lce_("lce", truth.k(), grid), buf_(truth.k()) {}

    void add(const Vector& x, double yhat, int y) {
        std::fill(buf_.begin(), buf_.end(), 0.0);
        buf_[static_cast<std::size_t>(truth_.discriminant(x))] = 1.0;
        dce_.add(buf_, yhat, y);
        const Vector p = truth_.posterior(x);
        for (int g = 0; g < truth_.k(); ++g) buf_[static_cast<std::size_t>(g)] = p[g];
        lce_.add(buf_, yhat, y);
    }

    ErrorReport dce() const { return dce_.report(); }
    ErrorReport lce() const { return lce_.report(); }

private:
    const MixtureModel& truth_;
    CalibrationAccumulator dce_;
    CalibrationAccumulator lce_;
    std::vector<double> buf_;
};

struct Setup {
    long tprime;
    BucketGrid grid;
    std::vector<LabeledSample> stream;
};

Setup prepare(const MixtureModel& model, const PipelineConfig& config) {
    if (!(config.phase1_prediction >= 0.0 && config.phase1_prediction <= 1.0))
        throw std::invalid_argument("phase-1 prediction must lie in [0,1]");
    const long tp = resolve_tprime(config, model);
    BucketGrid grid(config.lambda);
    return {tp, grid, sample(model, static_cast<std::size_t>(config.T), derive_seed(config.seed, kStreamData))};
}

EngineConfig engine_config(const PipelineConfig& config, long horizon, std::uint64_t stream) {
    EngineConfig ec;
    ec.lambda = config.lambda;
    ec.horizon = horizon;
    ec.pred_grid_resolution = config.pred_grid_resolution;
    ec.seed = derive_seed(config.seed, stream);
    return ec;
}

std::vector<Vector> phase1_features(const std::vector<LabeledSample>& stream, long tprime) {
    std::vector<Vector> xs;
    xs.reserve(static_cast<std::size_t>(tprime));
    for (long t = 0; t < tprime; ++t) xs.push_back(stream[static_cast<std::size_t>(t)].x);
    return xs;
}

void run_phase1(const std::vector<LabeledSample>& stream, long tprime, double value, Transcript& tr,
                TruthMetrics& metrics) {
    for (long t = 0; t < tprime; ++t) {
        const LabeledSample& s = stream[static_cast<std::size_t>(t)];
        tr.rounds.push_back({s.x, s.y, value, Phase::collect, -1});
        metrics.add(s.x, value, s.y);
    }
}

// Phase 2 with one engine over a distinguisher bank; optional mce accumulator
// sees every phase-2 round.
void run_engine_phase(const DistinguisherBank& bank, MulticalibrationEngine& engine,
                      const std::vector<LabeledSample>& stream, long from, long to, Transcript& tr,
                      TruthMetrics& metrics, CalibrationAccumulator* mce) {
    std::vector<double> vals(bank.size());
    for (long t = from; t < to; ++t) {
        const LabeledSample& s = stream[static_cast<std::size_t>(t)];
        bank.evaluate(s.x, vals);
        const RandomizedPrediction p = engine.predict(vals);
        const double yhat = engine.realize(p);
        engine.update(vals, p, s.y);
        tr.rounds.push_back({s.x, s.y, yhat, Phase::predict, -1});
        metrics.add(s.x, yhat, s.y);
        if (mce) mce->add(vals, yhat, s.y);
    }
}

RunResult start(const PipelineConfig& config, long tprime) {
    RunResult r;
    r.pipeline = config.pipeline;
    r.T = config.T;
    r.tprime = tprime;
    r.transcript.rounds.reserve(static_cast<std::size_t>(config.T));
    return r;
}

void finish(RunResult& r, const TruthMetrics& metrics, std::chrono::steady_clock::time_point t0) {
    r.dce = metrics.dce();
    r.lce = metrics.lce();
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

RunResult failed(const PipelineConfig& config, long tprime, const std::string& why,
                 std::chrono::steady_clock::time_point t0) {
    RunResult r;
    r.pipeline = config.pipeline;
    r.T = config.T;
    r.tprime = tprime;
    r.status = "failed: " + why;
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace

RunResult run_ctp_dce(const MixtureModel& model, const PipelineConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    if (model.k() != 2) throw std::invalid_argument("ctp_dce needs k = 2");
    Setup s = prepare(model, config);
    LearnedDiscriminant learned;
    try {
        learned = learn_discriminant_2iso(phase1_features(s.stream, s.tprime));
    } catch (const std::exception& e) {
        return failed(config, s.tprime, std::string("estimator: ") + e.what(), t0);
    }

    RunResult r = start(config, s.tprime);
    TruthMetrics metrics(model, s.grid);
    run_phase1(s.stream, s.tprime, config.phase1_prediction, r.transcript, metrics);

    const long horizon = config.T - s.tprime;
    MulticalibrationEngine engines[2] = {
        MulticalibrationEngine(1, engine_config(config, horizon, kStreamEngine)),
        MulticalibrationEngine(1, engine_config(config, horizon, kStreamEngine + 1)),
    };
    const double one[1] = {1.0};
    for (long t = s.tprime; t < config.T; ++t) {
        const LabeledSample& smp = s.stream[static_cast<std::size_t>(t)];
        const int c = learned(smp.x);
        MulticalibrationEngine& e = engines[c];
        const RandomizedPrediction p = e.predict(one);
        const double yhat = e.realize(p);
        e.update(one, p, smp.y);
        r.transcript.rounds.push_back({smp.x, smp.y, yhat, Phase::predict, c});
        metrics.add(smp.x, yhat, smp.y);
    }
    finish(r, metrics, t0);
    return r;
}

RunResult run_ctp_lce(const MixtureModel& model, const PipelineConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    Setup s = prepare(model, config);
    std::shared_ptr<const MixtureModel> learned;
    try {
        learned = std::make_shared<const MixtureModel>(learn_mixture_em(phase1_features(s.stream, s.tprime), model.k(),
                                                                        model.family(), config.em_iters,
                                                                        derive_seed(config.seed, kStreamEm)));
    } catch (const std::exception& e) {
        return failed(config, s.tprime, std::string("estimator: ") + e.what(), t0);
    }

    RunResult r = start(config, s.tprime);
    TruthMetrics metrics(model, s.grid);
    run_phase1(s.stream, s.tprime, config.phase1_prediction, r.transcript, metrics);

    std::vector<Distinguisher> ds;
    for (int g = 0; g < learned->k(); ++g) ds.push_back(Distinguisher::posterior(learned, g));
    const DistinguisherBank bank(std::move(ds));
    MulticalibrationEngine engine(bank.size(), engine_config(config, config.T - s.tprime, kStreamEngine));
    run_engine_phase(bank, engine, s.stream, s.tprime, config.T, r.transcript, metrics, nullptr);
    finish(r, metrics, t0);
    return r;
}

RunResult run_multiobjective(const MixtureModel& model, const PipelineConfig& config, ClassMode mode) {
    const auto t0 = std::chrono::steady_clock::now();
    Setup s = prepare(model, config);
    if (config.candidates < 1) throw std::invalid_argument("candidate count must be positive");

    const std::vector<Vector> xs = phase1_features(s.stream, s.tprime);
    DistinguisherClass cls;
    try {
        const CandidateFamily fam = candidate_family_for_sample(xs, model.family(), model.k(), config.candidates,
                                                                derive_seed(config.seed, kStreamCandidates));
        cls = build_distinguisher_class(fam, mode);
    } catch (const std::exception& e) {
        return failed(config, s.tprime, std::string("candidate class: ") + e.what(), t0);
    }

    const Matrix table = DistinguisherBank(cls.functions).tabulate(xs);
    const Cover cover = greedy_cover(table, 1.0 / static_cast<double>(s.tprime));

    std::vector<Distinguisher> selected;
    for (std::size_t i : cover.selected) selected.push_back(cls.functions[i]);
    if (config.include_truth) {
        // True indicators and posteriors, so the MCE bounds both DCE and LCE exactly.
        auto truth = std::make_shared<const MixtureModel>(model);
        for (int g = 0; g < model.k(); ++g) selected.push_back(Distinguisher::indicator(truth, g));
        for (int g = 0; g < model.k(); ++g) selected.push_back(Distinguisher::posterior(truth, g));
    }

    RunResult r = start(config, s.tprime);
    r.cover_size = selected.size();
    if (r.cover_size > config.cover_budget)
        r.warnings.push_back("cover size " + std::to_string(r.cover_size) + " exceeds budget " +
                             std::to_string(config.cover_budget));
    const DistinguisherBank bank(std::move(selected));

    TruthMetrics metrics(model, s.grid);
    CalibrationAccumulator mce("mce", static_cast<int>(bank.size()), s.grid);
    run_phase1(s.stream, s.tprime, config.phase1_prediction, r.transcript, metrics);
    std::vector<double> vals(bank.size());
    for (long t = 0; t < s.tprime; ++t) {
        bank.evaluate(xs[static_cast<std::size_t>(t)], vals);
        mce.add(vals, config.phase1_prediction, s.stream[static_cast<std::size_t>(t)].y);
    }

    MulticalibrationEngine engine(bank.size(), engine_config(config, config.T - s.tprime, kStreamEngine));
    run_engine_phase(bank, engine, s.stream, s.tprime, config.T, r.transcript, metrics, &mce);
    r.mce = mce.report();
    finish(r, metrics, t0);
    return r;
}

RunResult run_marginal(const MixtureModel& model, const PipelineConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    Setup s = prepare(model, config);
    RunResult r = start(config, 0);
    TruthMetrics metrics(model, s.grid);
    CalibrationAccumulator mce("mce", 1, s.grid);
    const DistinguisherBank bank({Distinguisher::constant(1.0)});
    MulticalibrationEngine engine(1, engine_config(config, config.T, kStreamEngine));
    run_engine_phase(bank, engine, s.stream, 0, config.T, r.transcript, metrics, &mce);
    r.mce = mce.report();
    finish(r, metrics, t0);
    return r;
}

RunResult run_pipeline(const MixtureModel& model, const PipelineConfig& config) {
    switch (config.pipeline) {
        case PipelineKind::ctp_dce: return run_ctp_dce(model, config);
        case PipelineKind::ctp_lce: return run_ctp_lce(model, config);
        case PipelineKind::mo_dce: return run_multiobjective(model, config, ClassMode::dce);
        case PipelineKind::mo_lce: return run_multiobjective(model, config, ClassMode::lce);
        case PipelineKind::marginal: return run_marginal(model, config);
    }
    throw std::logic_error("unknown pipeline");
}

nlohmann::json result_to_json(const RunResult& r, const PipelineConfig& config, const BucketGrid& grid) {
    nlohmann::json j = {{"pipeline", std::string(to_string(r.pipeline))},
                        {"status", r.status},
                        {"T", r.T},
                        {"tprime", r.tprime},
                        {"cover_size", r.cover_size},
                        {"wall_ms", r.wall_ms},
                        {"warnings", r.warnings},
                        {"config", config_to_json(config)}};
    if (r.ok()) {
        j["dce"] = report_to_json(r.dce, grid);
        j["lce"] = report_to_json(r.lce, grid);
        if (r.mce) j["mce"] = report_to_json(*r.mce, grid);
    }
    return j;
}

void write_transcript_csv(std::ostream& os, const Transcript& tr) {
    const auto old = os.precision(17);
    os << "t,phase,cluster,y,yhat";
    const Eigen::Index d = tr.empty() ? 0 : tr.rounds.front().x.size();
    for (Eigen::Index i = 0; i < d; ++i) os << ",x" << i;
    os << '\n';
    for (std::size_t t = 0; t < tr.size(); ++t) {
        const Round& r = tr.rounds[t];
        os << t + 1 << ',' << (r.phase == Phase::collect ? "collect" : "predict") << ',' << r.cluster << ',' << r.y
           << ',' << r.yhat;
        for (Eigen::Index i = 0; i < r.x.size(); ++i) os << ',' << r.x[i];
        os << '\n';
    }
    os.precision(old);
}

}  // namespace subcal
