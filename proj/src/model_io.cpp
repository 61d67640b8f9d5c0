#include "subcal/model_io.hpp"

#include <fstream>
#include <stdexcept>

namespace subcal {

Json vector_to_json(const Vector& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Vector vector_from_json(const Json& j) {
    if (!j.is_array()) throw std::invalid_argument("expected a JSON array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return v;
}

Json component_to_json(const ExpFamilyComponent& c) {
    switch (c.kind()) {
        case FamilyKind::gaussian_isotropic:
            return {{"mean", vector_to_json(c.mean())}, {"sigma2", c.sigma2()}};
        case FamilyKind::gaussian_full: {
            const GaussianParams gp = c.gaussian_params();
            Json cov = Json::array();
            for (Eigen::Index i = 0; i < gp.cov.rows(); ++i) cov.push_back(vector_to_json(gp.cov.row(i).transpose()));
            return {{"mean", vector_to_json(gp.mean)}, {"cov", cov}};
        }
        case FamilyKind::poisson_product:
            return {{"rates", vector_to_json(c.rates())}};
    }
    return {};
}

ExpFamilyComponent component_from_json(FamilyKind kind, const Json& j) {
    switch (kind) {
        case FamilyKind::gaussian_isotropic:
            return ExpFamilyComponent::isotropic(vector_from_json(j.at("mean")), j.at("sigma2").get<double>());
        case FamilyKind::gaussian_full: {
            const Vector mean = vector_from_json(j.at("mean"));
            const Json& rows = j.at("cov");
            Matrix cov(mean.size(), mean.size());
            if (rows.size() != static_cast<std::size_t>(mean.size()))
                throw std::invalid_argument("cov must be d x d");
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const Vector r = vector_from_json(rows[i]);
                if (r.size() != mean.size()) throw std::invalid_argument("cov must be d x d");
                cov.row(static_cast<Eigen::Index>(i)) = r.transpose();
            }
            return ExpFamilyComponent::gaussian({mean, cov});
        }
        case FamilyKind::poisson_product:
            return ExpFamilyComponent::poisson(vector_from_json(j.at("rates")));
    }
    throw std::invalid_argument("unknown family");
}

Json label_rule_to_json(const LabelRule& rule) {
    switch (rule.kind()) {
        case LabelRule::Kind::constant:
            return {{"kind", "constant"}, {"params", {{"p", rule.p()}}}};
        case LabelRule::Kind::logistic:
            return {{"kind", "logistic"}, {"params", {{"w", vector_to_json(rule.w())}, {"b", rule.b()}}}};
        case LabelRule::Kind::piecewise: {
            Json regions = Json::array();
            for (const auto& b : rule.boxes())
                regions.push_back({{"lo", vector_to_json(b.lo)}, {"hi", vector_to_json(b.hi)}});
            return {{"kind", "piecewise"}, {"params", {{"regions", regions}, {"p", rule.probs()}}}};
        }
    }
    return {};
}

LabelRule label_rule_from_json(const Json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    const Json& params = j.at("params");
    if (kind == "constant") return LabelRule::constant(params.at("p").get<double>());
    if (kind == "logistic")
        return LabelRule::logistic(vector_from_json(params.at("w")), params.value("b", 0.0));
    if (kind == "piecewise") {
        std::vector<LabelRule::Box> boxes;
        for (const auto& r : params.at("regions"))
            boxes.push_back({vector_from_json(r.at("lo")), vector_from_json(r.at("hi"))});
        return LabelRule::piecewise(std::move(boxes), params.at("p").get<std::vector<double>>());
    }
    throw std::invalid_argument("unknown label rule kind: " + kind);
}

Json model_to_json(const MixtureModel& model, bool include_label_rule) {
    Json comps = Json::array();
    for (const auto& c : model.components()) comps.push_back(component_to_json(c));
    Json j = {{"k", model.k()},
              {"d", model.d()},
              {"family", std::string(to_string(model.family()))},
              {"weights", vector_to_json(model.weights())},
              {"weight_floor", model.weight_floor()},
              {"components", comps}};
    if (include_label_rule) j["label_rule"] = label_rule_to_json(model.label_rule());
    return j;
}

MixtureModel model_from_json(const Json& j) {
    const FamilyKind family = family_from_string(j.at("family").get<std::string>());
    const Vector weights = vector_from_json(j.at("weights"));
    std::vector<ExpFamilyComponent> comps;
    for (const auto& c : j.at("components")) comps.push_back(component_from_json(family, c));
    if (j.contains("k") && j.at("k").get<std::size_t>() != comps.size())
        throw std::invalid_argument("k does not match the number of components");
    if (j.contains("d") && !comps.empty() && j.at("d").get<int>() != comps.front().dim())
        throw std::invalid_argument("d does not match the component dimension");
    LabelRule rule = j.contains("label_rule") ? label_rule_from_json(j.at("label_rule")) : LabelRule::constant(0.5);
    return MixtureModel(weights, std::move(comps), std::move(rule), j.value("weight_floor", kDefaultWeightFloor));
}

Json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return Json::parse(in);
}

void save_json(const std::string& path, const Json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

MixtureModel load_model(const std::string& path) { return model_from_json(load_json(path)); }

}  // namespace subcal
