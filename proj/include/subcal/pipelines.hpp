#pragma once

// End-to-end learners over a simulated stream from a mixture model.
//
//   ctp_dce   phase 1 predicts a fixed value and collects x; a learned
//             2-means discriminant then routes each round to one of two
//             marginal calibrators.
//   ctp_lce   phase 1 fits the mixture by EM; phase 2 multicalibrates
//             against the estimated posteriors.
//   mo_dce    phase 1 collects x and builds a 1/T'-cover of a sampled
//   mo_lce    DCE/LCE distinguisher class; phase 2 multicalibrates on it.
//   marginal  one marginal calibrator for all T rounds.
//
// All reports are computed on the full T-round transcript, phase 1 included.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "subcal/buckets_metrics.hpp"
#include "subcal/covering.hpp"
#include "subcal/mixture_model.hpp"

namespace subcal {

enum class PipelineKind { ctp_dce, ctp_lce, mo_dce, mo_lce, marginal };

std::string_view to_string(PipelineKind kind);
PipelineKind pipeline_from_string(std::string_view name);

struct TPrimePolicy {
    enum class Kind { automatic, t23, t1213, sqrt_formula, fixed };
    Kind kind = Kind::automatic;  // t23 for ctp, sqrt_formula for mo, 0 for marginal
    long n = 0;                   // fixed only

    static TPrimePolicy parse(std::string_view text);  // "t23", "t1213", "sqrt_formula", "fixed:<n>", "auto"
    std::string str() const;
};

struct PipelineConfig {
    PipelineKind pipeline = PipelineKind::marginal;
    long T = 0;
    TPrimePolicy tprime;
    double phase1_prediction = 0.5;
    int lambda = 10;
    std::uint64_t seed = 0;

    // multi-objective
    int candidates = 500;         // M
    double pdim_hint = 0.0;       // <= 0: dim T(x) + 1
    double delta = 0.05;
    std::size_t cover_budget = 5000;  // larger covers only raise a warning
    bool include_truth = false;       // append the true indicators and posteriors to the cover

    // estimators
    int em_iters = 100;

    int pred_grid_resolution = 0;  // <= 0: engine default
};

nlohmann::json config_to_json(const PipelineConfig& config);
PipelineConfig config_from_json(const nlohmann::json& j);

// T' after policy resolution; throws unless 0 <= T' < T (T' >= 1 except for
// the marginal pipeline).
long resolve_tprime(const PipelineConfig& config, const MixtureModel& model);

struct RunResult {
    PipelineKind pipeline = PipelineKind::marginal;
    std::string status = "ok";  // "ok" or "failed: <reason>"
    Transcript transcript;
    ErrorReport dce;
    ErrorReport lce;
    // Against the learner's own distinguishers: the cover for mo pipelines,
    // {1} for marginal; absent for cluster-then-predict.
    std::optional<ErrorReport> mce;
    long T = 0;
    long tprime = 0;
    std::size_t cover_size = 0;
    double wall_ms = 0.0;
    std::vector<std::string> warnings;

    bool ok() const { return status == "ok"; }
};

RunResult run_ctp_dce(const MixtureModel& model, const PipelineConfig& config);
RunResult run_ctp_lce(const MixtureModel& model, const PipelineConfig& config);
RunResult run_multiobjective(const MixtureModel& model, const PipelineConfig& config, ClassMode mode);
RunResult run_marginal(const MixtureModel& model, const PipelineConfig& config);
// Dispatches on config.pipeline. Invalid configurations throw; estimator
// failures come back as a failed RunResult.
RunResult run_pipeline(const MixtureModel& model, const PipelineConfig& config);

// Summary without the transcript.
nlohmann::json result_to_json(const RunResult& result, const PipelineConfig& config, const BucketGrid& grid);
// One row per round: t,phase,cluster,y,yhat,x0,x1,...
void write_transcript_csv(std::ostream& os, const Transcript& transcript);

}  // namespace subcal
