#pragma once

// JSON schema for mixture models:
//
//   {
//     "k": 2, "d": 2, "family": "gaussian_isotropic",
//     "weights": [0.5, 0.5],
//     "weight_floor": 0.05,                       (optional, default 0.05)
//     "components": [ {"mean": [..], "sigma2": 1.0}        isotropic
//                   | {"mean": [..], "cov": [[..], ..]}    full
//                   | {"rates": [..]} ],                   poisson
//     "label_rule": {"kind": "constant",  "params": {"p": 0.7}}
//                 | {"kind": "logistic",  "params": {"w": [..], "b": 0.0}}
//                 | {"kind": "piecewise", "params": {"regions": [{"lo": [..], "hi": [..]}],
//                                                    "p": [p_0, .., p_default]}}
//   }
//
// A learned mixture uses the same schema without "label_rule".

#include <string>

#include "json.hpp"
#include "subcal/mixture_model.hpp"

namespace subcal {

using Json = nlohmann::json;

Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);

Json component_to_json(const ExpFamilyComponent& c);
ExpFamilyComponent component_from_json(FamilyKind kind, const Json& j);

Json label_rule_to_json(const LabelRule& rule);
LabelRule label_rule_from_json(const Json& j);

Json model_to_json(const MixtureModel& model, bool include_label_rule = true);
// A missing label_rule defaults to constant(0.5).
MixtureModel model_from_json(const Json& j);

MixtureModel load_model(const std::string& path);
void save_json(const std::string& path, const Json& j);
Json load_json(const std::string& path);

}  // namespace subcal
