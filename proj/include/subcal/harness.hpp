#pragma once

// Sweeps over (model, pipeline, T, seed) cells, per-cell CSV rows, a JSON
// manifest that fully determines the sweep, log-log slope fits on median
// error curves, and the comparison report.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "subcal/pipelines.hpp"

namespace subcal {

inline constexpr int kCurveSchemaVersion = 1;
inline constexpr const char* kCurveHeader =
    "schema_version,pipeline,model,T,seed,status,dce,lce,mce,tprime,cover_size,wall_ms";

// Two equal-weight isotropic components with means -+gamma/2 e_1 and a
// logistic label rule y ~ Bernoulli(sigmoid(<w, x> + b)).
MixtureModel separated_model(double gamma, int d = 2, double sigma2 = 1.0, double label_slope = 2.0,
                             double label_bias = 0.0);

struct NamedModel {
    std::string name;
    nlohmann::json model;  // parsed per cell, so a bad model only fails its own cells
};

struct SweepSpec {
    std::vector<NamedModel> models;
    // Separation grid: each gamma adds separated_model(gamma, d, sigma2, slope, bias).
    std::vector<double> separations;
    int d = 2;
    double sigma2 = 1.0;
    double label_slope = 2.0;
    double label_bias = 0.0;

    std::vector<PipelineKind> pipelines;
    std::vector<long> T_grid;
    int seeds = 5;
    std::uint64_t base_seed = 0;
    // PipelineConfig fields applied to every cell (config_to_json keys).
    nlohmann::json overrides = nlohmann::json::object();
    std::string output;  // writes <output>.csv and <output>.manifest.json when set

    // Throws std::invalid_argument on an unusable spec.
    void validate() const;
    // Explicit models followed by the separation grid.
    std::vector<NamedModel> resolved_models() const;
};

nlohmann::json spec_to_json(const SweepSpec& spec);
SweepSpec spec_from_json(const nlohmann::json& j);
std::uint64_t spec_hash(const SweepSpec& spec);

// Seed for one (T, seed index) cell; shared by every model and pipeline so
// pipelines are compared on the same data streams.
std::uint64_t cell_seed(std::uint64_t base_seed, long T, int seed_index);

struct CurveRow {
    int schema_version = kCurveSchemaVersion;
    std::string pipeline;
    std::string model;
    long T = 0;
    std::uint64_t seed = 0;
    std::string status = "ok";
    double dce = 0.0;
    double lce = 0.0;
    std::optional<double> mce;
    long tprime = 0;
    std::size_t cover_size = 0;
    double wall_ms = 0.0;

    bool ok() const { return status == "ok"; }
    std::optional<double> metric(std::string_view name) const;
};

struct ErrorCurve {
    std::vector<CurveRow> rows;

    // Median over ok rows per T for one (model, pipeline, metric).
    std::map<long, double> medians(const std::string& model, const std::string& pipeline,
                                   const std::string& metric) const;
};

// Worker budget from SUBCAL_WORKERS, else the hardware concurrency.
int default_workers();

ErrorCurve run_sweep(const SweepSpec& spec, int workers = 0);

void write_curve_csv(std::ostream& os, const ErrorCurve& curve);
ErrorCurve read_curve_csv(std::istream& is);
ErrorCurve load_curve(const std::string& path);
nlohmann::json sweep_manifest(const SweepSpec& spec);
// Same sweep, re-run from a manifest written by run_sweep.
SweepSpec spec_from_manifest(const nlohmann::json& manifest);

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    double residual_stderr = 0.0;
    std::size_t points = 0;
};

// OLS of log(err) on log(T). Points with err <= 0 are dropped; fewer than
// three distinct T values left is an error.
SlopeFit fit_loglog(const std::map<long, double>& err_by_T);
SlopeFit fit_rate_slope(const ErrorCurve& curve, const std::string& model, const std::string& pipeline,
                        const std::string& metric);

struct ReportThresholds {
    double min_gap = 0.05;
};

struct SlopeRow {
    std::string model;
    std::string pipeline;
    std::string metric;
    std::optional<SlopeFit> fit;
    std::string error;
};

struct GapRow {
    std::string model;
    std::string metric;
    std::string ctp;
    std::string mo;
    double gap = 0.0;  // slope(ctp) - slope(mo)
    bool pass = false;
};

struct Report {
    std::vector<SlopeRow> slopes;
    std::vector<GapRow> gaps;
    bool pass = true;
};

// Joins curves; mixing schema versions is an error.
ErrorCurve join_curves(const std::vector<ErrorCurve>& curves);
Report make_report(const ErrorCurve& curve, const ReportThresholds& thresholds = {});
void write_report_text(std::ostream& os, const Report& report);
void write_report_csv(std::ostream& os, const Report& report);

}  // namespace subcal
