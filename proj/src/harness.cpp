#include "subcal/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "subcal/model_io.hpp"
#include "subcal/rng.hpp"

namespace subcal {

MixtureModel separated_model(double gamma, int d, double sigma2, double label_slope, double label_bias) {
    if (d < 1) throw std::invalid_argument("dimension must be positive");
    if (!(gamma >= 0.0)) throw std::invalid_argument("separation must be nonnegative");
    Vector m0 = Vector::Zero(d), m1 = Vector::Zero(d);
    m0[0] = -0.5 * gamma;
    m1[0] = 0.5 * gamma;
    Vector w = Vector::Zero(d);
    w[0] = label_slope;
    return MixtureModel(Vector::Constant(2, 0.5),
                        {ExpFamilyComponent::isotropic(m0, sigma2), ExpFamilyComponent::isotropic(m1, sigma2)},
                        LabelRule::logistic(w, label_bias));
}

// ---------------------------------------------------------------------------
// Spec

void SweepSpec::validate() const {
    if (models.empty() && separations.empty()) throw std::invalid_argument("sweep needs at least one model");
    if (pipelines.empty()) throw std::invalid_argument("sweep needs at least one pipeline");
    std::set<long> distinct(T_grid.begin(), T_grid.end());
    if (distinct.size() < 3) throw std::invalid_argument("sweep needs at least 3 distinct T values");
    for (long T : T_grid)
        if (T < 1) throw std::invalid_argument("T values must be positive");
    if (seeds < 5) throw std::invalid_argument("sweep needs at least 5 seeds per cell");
    if (!overrides.is_object()) throw std::invalid_argument("overrides must be a JSON object");
    for (const char* key : {"pipeline", "T", "seed"})
        if (overrides.contains(key)) throw std::invalid_argument(std::string("overrides may not set ") + key);
    std::set<std::string> names;
    for (const auto& m : resolved_models()) {
        if (m.name.empty() || m.name.find_first_of(",\n\r") != std::string::npos)
            throw std::invalid_argument("model names must be nonempty and free of commas");
        if (!names.insert(m.name).second) throw std::invalid_argument("duplicate model name: " + m.name);
    }
}

std::vector<NamedModel> SweepSpec::resolved_models() const {
    std::vector<NamedModel> out = models;
    for (double g : separations) {
        std::ostringstream name;
        name << "gamma=" << g;
        out.push_back({name.str(), model_to_json(separated_model(g, d, sigma2, label_slope, label_bias))});
    }
    return out;
}

nlohmann::json spec_to_json(const SweepSpec& s) {
    nlohmann::json models = nlohmann::json::array();
    for (const auto& m : s.models) models.push_back({{"name", m.name}, {"model", m.model}});
    nlohmann::json pipes = nlohmann::json::array();
    for (auto p : s.pipelines) pipes.push_back(std::string(to_string(p)));
    return {{"models", models},
            {"separations", s.separations},
            {"d", s.d},
            {"sigma2", s.sigma2},
            {"label_slope", s.label_slope},
            {"label_bias", s.label_bias},
            {"pipelines", pipes},
            {"T", s.T_grid},
            {"seeds", s.seeds},
            {"base_seed", s.base_seed},
            {"overrides", s.overrides},
            {"output", s.output}};
}

SweepSpec spec_from_json(const nlohmann::json& j) {
    SweepSpec s;
    if (j.contains("models"))
        for (const auto& m : j.at("models")) s.models.push_back({m.at("name").get<std::string>(), m.at("model")});
    s.separations = j.value("separations", std::vector<double>{});
    s.d = j.value("d", s.d);
    s.sigma2 = j.value("sigma2", s.sigma2);
    s.label_slope = j.value("label_slope", s.label_slope);
    s.label_bias = j.value("label_bias", s.label_bias);
    for (const auto& p : j.at("pipelines")) s.pipelines.push_back(pipeline_from_string(p.get<std::string>()));
    s.T_grid = j.at("T").get<std::vector<long>>();
    s.seeds = j.value("seeds", s.seeds);
    s.base_seed = j.value("base_seed", s.base_seed);
    s.overrides = j.value("overrides", nlohmann::json::object());
    s.output = j.value("output", std::string());
    return s;
}

namespace {

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::uint64_t spec_hash(const SweepSpec& spec) {
    nlohmann::json j = spec_to_json(spec);
    j.erase("output");
    return fnv1a(j.dump());
}

std::uint64_t cell_seed(std::uint64_t base_seed, long T, int seed_index) {
    return derive_seed(derive_seed(base_seed, static_cast<std::uint64_t>(T)), static_cast<std::uint64_t>(seed_index));
}

// ---------------------------------------------------------------------------
// Curves

std::optional<double> CurveRow::metric(std::string_view name) const {
    if (name == "dce") return dce;
    if (name == "lce") return lce;
    if (name == "mce") return mce;
    throw std::invalid_argument("unknown metric: " + std::string(name));
}

std::map<long, double> ErrorCurve::medians(const std::string& model, const std::string& pipeline,
                                           const std::string& metric) const {
    std::map<long, std::vector<double>> by_T;
    for (const auto& r : rows) {
        if (!r.ok() || r.model != model || r.pipeline != pipeline) continue;
        if (const auto v = r.metric(metric)) by_T[r.T].push_back(*v);
    }
    std::map<long, double> out;
    for (auto& [T, vals] : by_T) {
        std::sort(vals.begin(), vals.end());
        const std::size_t n = vals.size();
        out[T] = n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    }
    return out;
}

int default_workers() {
    if (const char* env = std::getenv("SUBCAL_WORKERS")) {
        char* end = nullptr;
        const long n = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && n >= 1) return static_cast<int>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

struct Cell {
    std::size_t model;
    PipelineKind pipeline;
    long T;
    int seed_index;
};

std::vector<Cell> enumerate_cells(const SweepSpec& spec, std::size_t num_models) {
    std::vector<Cell> cells;
    for (std::size_t m = 0; m < num_models; ++m)
        for (auto p : spec.pipelines)
            for (long T : spec.T_grid)
                for (int s = 0; s < spec.seeds; ++s) cells.push_back({m, p, T, s});
    return cells;
}

CurveRow run_cell(const SweepSpec& spec, const NamedModel& named, const Cell& cell) {
    CurveRow row;
    row.pipeline = std::string(to_string(cell.pipeline));
    row.model = named.name;
    row.T = cell.T;
    row.seed = cell_seed(spec.base_seed, cell.T, cell.seed_index);
    try {
        const MixtureModel model = model_from_json(named.model);
        PipelineConfig base;
        base.pipeline = cell.pipeline;
        base.T = cell.T;
        base.seed = row.seed;
        nlohmann::json cj = config_to_json(base);
        cj.update(spec.overrides);
        const PipelineConfig config = config_from_json(cj);
        const RunResult r = run_pipeline(model, config);
        row.status = r.status;
        row.tprime = r.tprime;
        row.cover_size = r.cover_size;
        row.wall_ms = r.wall_ms;
        if (r.ok()) {
            row.dce = r.dce.max_abs;
            row.lce = r.lce.max_abs;
            if (r.mce) row.mce = r.mce->max_abs;
        }
    } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
    }
    return row;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << content;
}

}  // namespace

ErrorCurve run_sweep(const SweepSpec& spec, int workers) {
    spec.validate();
    const std::vector<NamedModel> models = spec.resolved_models();
    const std::vector<Cell> cells = enumerate_cells(spec, models.size());
    if (workers <= 0) workers = default_workers();
    workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), cells.size()));

    ErrorCurve curve;
    curve.rows.resize(cells.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++)
            curve.rows[i] = run_cell(spec, models[cells[i].model], cells[i]);
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    if (!spec.output.empty()) {
        std::ostringstream csv;
        write_curve_csv(csv, curve);
        write_file(spec.output + ".csv", csv.str());
        write_file(spec.output + ".manifest.json", sweep_manifest(spec).dump(2) + "\n");
    }
    return curve;
}

// ---------------------------------------------------------------------------
// CSV

void write_curve_csv(std::ostream& os, const ErrorCurve& curve) {
    os << kCurveHeader << '\n';
    for (const auto& r : curve.rows) {
        std::string status = r.status;
        std::replace_if(status.begin(), status.end(), [](char c) { return c == ',' || c == '\n' || c == '\r'; }, ';');
        os << r.schema_version << ',' << r.pipeline << ',' << r.model << ',' << r.T << ',' << r.seed << ',' << status
           << ',';
        if (r.ok()) os << fmt_double(r.dce) << ',' << fmt_double(r.lce) << ',' << (r.mce ? fmt_double(*r.mce) : "");
        else os << ",,";
        char ms[32];
        std::snprintf(ms, sizeof ms, "%.3f", r.wall_ms);
        os << ',' << r.tprime << ',' << r.cover_size << ',' << ms << '\n';
    }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

ErrorCurve read_curve_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty curve file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCurveHeader) throw std::runtime_error("unrecognized curve header: " + line);
    ErrorCurve curve;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 12) throw std::runtime_error("curve line " + std::to_string(lineno) + ": expected 12 fields");
        try {
            CurveRow r;
            r.schema_version = std::stoi(f[0]);
            r.pipeline = f[1];
            r.model = f[2];
            r.T = std::stol(f[3]);
            r.seed = std::stoull(f[4]);
            r.status = f[5];
            if (r.ok()) {
                r.dce = std::stod(f[6]);
                r.lce = std::stod(f[7]);
                if (!f[8].empty()) r.mce = std::stod(f[8]);
            }
            r.tprime = std::stol(f[9]);
            r.cover_size = std::stoull(f[10]);
            r.wall_ms = std::stod(f[11]);
            curve.rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw std::runtime_error("curve line " + std::to_string(lineno) + ": malformed field");
        }
    }
    return curve;
}

ErrorCurve load_curve(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    return read_curve_csv(is);
}

nlohmann::json sweep_manifest(const SweepSpec& spec) {
    nlohmann::json cells = nlohmann::json::array();
    const auto models = spec.resolved_models();
    for (const Cell& c : enumerate_cells(spec, models.size()))
        cells.push_back({{"model", models[c.model].name},
                         {"pipeline", std::string(to_string(c.pipeline))},
                         {"T", c.T},
                         {"seed_index", c.seed_index},
                         {"seed", cell_seed(spec.base_seed, c.T, c.seed_index)}});
    return {{"kind", "sweep"},
            {"schema_version", kCurveSchemaVersion},
            {"spec", spec_to_json(spec)},
            {"spec_hash", hex64(spec_hash(spec))},
            {"csv_columns", kCurveHeader},
            {"cells", cells}};
}

SweepSpec spec_from_manifest(const nlohmann::json& manifest) {
    if (manifest.value("kind", std::string()) != "sweep") throw std::invalid_argument("not a sweep manifest");
    if (manifest.value("schema_version", 0) != kCurveSchemaVersion)
        throw std::invalid_argument("manifest schema version mismatch");
    SweepSpec spec = spec_from_json(manifest.at("spec"));
    if (hex64(spec_hash(spec)) != manifest.at("spec_hash").get<std::string>())
        throw std::invalid_argument("manifest spec hash does not match its spec");
    return spec;
}

// ---------------------------------------------------------------------------
// Slopes and reports

SlopeFit fit_loglog(const std::map<long, double>& err_by_T) {
    std::vector<double> x, y;
    for (const auto& [T, e] : err_by_T) {
        if (!(e > 0.0) || T < 1) continue;
        x.push_back(std::log(static_cast<double>(T)));
        y.push_back(std::log(e));
    }
    if (x.size() < 3) throw std::invalid_argument("slope fit needs at least 3 points with nonzero error");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    SlopeFit f;
    f.points = x.size();
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double rss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - (f.intercept + f.slope * x[i]);
        rss += e * e;
    }
    f.residual_stderr = std::sqrt(rss / (n - 2.0));
    f.slope_stderr = f.residual_stderr / std::sqrt(sxx);
    return f;
}

SlopeFit fit_rate_slope(const ErrorCurve& curve, const std::string& model, const std::string& pipeline,
                        const std::string& metric) {
    return fit_loglog(curve.medians(model, pipeline, metric));
}

ErrorCurve join_curves(const std::vector<ErrorCurve>& curves) {
    ErrorCurve out;
    std::optional<int> version;
    for (const auto& c : curves) {
        for (const auto& r : c.rows) {
            if (version && *version != r.schema_version) throw std::runtime_error("curves mix schema versions");
            version = r.schema_version;
            out.rows.push_back(r);
        }
    }
    return out;
}

Report make_report(const ErrorCurve& curve, const ReportThresholds& th) {
    if (curve.rows.empty()) throw std::invalid_argument("no curve rows to report on");
    std::vector<std::string> models;
    std::map<std::string, std::vector<std::string>> pipes;
    for (const auto& r : curve.rows) {
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
        auto& p = pipes[r.model];
        if (std::find(p.begin(), p.end(), r.pipeline) == p.end()) p.push_back(r.pipeline);
    }

    Report rep;
    std::map<std::tuple<std::string, std::string, std::string>, double> slope_of;
    for (const auto& m : models) {
        for (const auto& p : pipes[m]) {
            for (const char* metric : {"dce", "lce", "mce"}) {
                const auto med = curve.medians(m, p, metric);
                if (med.empty()) continue;
                SlopeRow row{m, p, metric, std::nullopt, ""};
                try {
                    row.fit = fit_loglog(med);
                    slope_of[{m, p, metric}] = row.fit->slope;
                } catch (const std::exception& e) {
                    row.error = e.what();
                }
                rep.slopes.push_back(std::move(row));
            }
        }
        for (const auto& [ctp, mo, metric] : {std::tuple{"ctp_dce", "mo_dce", "dce"}, std::tuple{"ctp_lce", "mo_lce", "lce"}}) {
            const auto& p = pipes[m];
            if (std::find(p.begin(), p.end(), ctp) == p.end() || std::find(p.begin(), p.end(), mo) == p.end())
                continue;
            GapRow g{m, metric, ctp, mo, 0.0, false};
            const auto a = slope_of.find({m, ctp, metric});
            const auto b = slope_of.find({m, mo, metric});
            if (a != slope_of.end() && b != slope_of.end()) {
                g.gap = a->second - b->second;
                g.pass = g.gap >= th.min_gap;
            } else {
                g.gap = std::nan("");
            }
            rep.pass = rep.pass && g.pass;
            rep.gaps.push_back(g);
        }
    }
    return rep;
}

void write_report_text(std::ostream& os, const Report& rep) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-16s %-10s %-6s %8s %8s %8s %4s\n", "model", "pipeline", "metric", "slope",
                  "stderr", "resid", "n");
    os << buf;
    for (const auto& s : rep.slopes) {
        if (s.fit) {
            std::snprintf(buf, sizeof buf, "%-16s %-10s %-6s %8.4f %8.4f %8.4f %4zu\n", s.model.c_str(),
                          s.pipeline.c_str(), s.metric.c_str(), s.fit->slope, s.fit->slope_stderr,
                          s.fit->residual_stderr, s.fit->points);
        } else {
            std::snprintf(buf, sizeof buf, "%-16s %-10s %-6s  (%s)\n", s.model.c_str(), s.pipeline.c_str(),
                          s.metric.c_str(), s.error.c_str());
        }
        os << buf;
    }
    for (const auto& g : rep.gaps) {
        std::snprintf(buf, sizeof buf, "gap %-16s %s: slope(%s) - slope(%s) = %.4f %s\n", g.model.c_str(),
                      g.metric.c_str(), g.ctp.c_str(), g.mo.c_str(), g.gap, g.pass ? "PASS" : "FAIL");
        os << buf;
    }
    os << (rep.pass ? "overall PASS\n" : "overall FAIL\n");
}

void write_report_csv(std::ostream& os, const Report& rep) {
    os << "kind,model,pipeline,metric,slope,slope_stderr,residual_stderr,points,pass\n";
    for (const auto& s : rep.slopes) {
        os << "slope," << s.model << ',' << s.pipeline << ',' << s.metric << ',';
        if (s.fit)
            os << fmt_double(s.fit->slope) << ',' << fmt_double(s.fit->slope_stderr) << ','
               << fmt_double(s.fit->residual_stderr) << ',' << s.fit->points << ",\n";
        else
            os << ",,,0,\n";
    }
    for (const auto& g : rep.gaps)
        os << "gap," << g.model << ',' << g.ctp << '-' << g.mo << ',' << g.metric << ',' << fmt_double(g.gap)
           << ",,,," << (g.pass ? "pass" : "fail") << '\n';
}

}  // namespace subcal
