#include "subcal/distinguisher.hpp"

#include <map>
#include <stdexcept>

namespace subcal {

Distinguisher Distinguisher::indicator(std::shared_ptr<const MixtureModel> model, int g) {
    if (!model || g < 0 || g >= model->k()) throw std::invalid_argument("indicator: bad model or group");
    Distinguisher d;
    d.kind_ = Kind::discriminant_indicator;
    d.model_ = std::move(model);
    d.group_ = g;
    return d;
}

Distinguisher Distinguisher::posterior(std::shared_ptr<const MixtureModel> model, int g) {
    if (!model || g < 0 || g >= model->k()) throw std::invalid_argument("posterior: bad model or group");
    Distinguisher d;
    d.kind_ = Kind::posterior;
    d.model_ = std::move(model);
    d.group_ = g;
    return d;
}

Distinguisher Distinguisher::constant(double c) {
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("constant distinguisher outside [0,1]");
    Distinguisher d;
    d.kind_ = Kind::constant;
    d.c_ = c;
    return d;
}

Distinguisher Distinguisher::tabulated(std::vector<double> values) {
    Distinguisher d;
    d.kind_ = Kind::tabulated;
    d.table_ = std::move(values);
    return d;
}

double Distinguisher::operator()(const Vector& x) const {
    switch (kind_) {
        case Kind::discriminant_indicator: return model_->discriminant(x) == group_ ? 1.0 : 0.0;
        case Kind::posterior: return model_->posterior(x)[group_];
        case Kind::constant: return c_;
        case Kind::tabulated: break;
    }
    throw std::logic_error("tabulated distinguisher cannot be evaluated at an arbitrary point");
}

double Distinguisher::at(std::size_t sample_index) const {
    if (kind_ != Kind::tabulated) throw std::logic_error("at() is only defined for tabulated distinguishers");
    return table_.at(sample_index);
}

// ---------------------------------------------------------------------------

DistinguisherBank::DistinguisherBank(std::vector<Distinguisher> distinguishers)
    : items_(std::move(distinguishers)), slots_(items_.size()) {
    std::map<const MixtureModel*, Slot> placed;

    for (std::size_t i = 0; i < items_.size(); ++i) {
        const auto& it = items_[i];
        if (it.kind() == Distinguisher::Kind::tabulated)
            throw std::invalid_argument("DistinguisherBank cannot hold tabulated distinguishers");
        if (it.kind() == Distinguisher::Kind::constant) continue;
        const MixtureModel* m = it.model().get();
        if (dim_ < 0) dim_ = m->d();
        if (m->d() != dim_) throw std::invalid_argument("distinguishers disagree on feature dimension");
        auto found = placed.find(m);
        if (found == placed.end()) {
            int b = -1;
            for (std::size_t j = 0; j < blocks_.size(); ++j)
                if (blocks_[j].kind == m->family()) b = static_cast<int>(j);
            if (b < 0) {
                blocks_.push_back({m->family(), Matrix(0, m->stat_dim()), Vector(0), Vector()});
                b = static_cast<int>(blocks_.size()) - 1;
            }
            auto& blk = blocks_[b];
            Slot s{b, static_cast<int>(blk.thetas.rows()), m->k()};
            blk.thetas.conservativeResize(blk.thetas.rows() + m->k(), Eigen::NoChange);
            blk.offsets.conservativeResize(blk.offsets.size() + m->k());
            blk.thetas.middleRows(s.row_begin, m->k()) = m->stacked_natural();
            blk.offsets.segment(s.row_begin, m->k()) = m->score_offsets();
            found = placed.emplace(m, s).first;
        }
        slots_[i] = found->second;
    }
    for (auto& blk : blocks_) blk.scores.resize(blk.thetas.rows());
}

void DistinguisherBank::evaluate(const Vector& x, std::span<double> out) const {
    if (out.size() != items_.size()) throw std::invalid_argument("output span has the wrong size");
    if (dim_ >= 0 && x.size() != dim_) throw std::invalid_argument("feature dimension mismatch");
    for (auto& blk : blocks_) {
        component_scores(blk.thetas, blk.offsets, sufficient_statistic(blk.kind, x), 0, blk.thetas.rows(),
                         blk.scores.data());
    }
    for (std::size_t i = 0; i < items_.size(); ++i) {
        const auto& it = items_[i];
        if (it.kind() == Distinguisher::Kind::constant) {
            out[i] = it.constant_value();
            continue;
        }
        const Slot& s = slots_[i];
        const double* sc = blocks_[s.block].scores.data() + s.row_begin;
        const int g = it.group();
        if (it.kind() == Distinguisher::Kind::discriminant_indicator) {
            int best = 0;
            for (int j = 1; j < s.k; ++j)
                if (sc[j] > sc[best]) best = j;
            out[i] = best == g ? 1.0 : 0.0;
        } else {
            out[i] = softmax_entry(sc, s.k, g);
        }
    }
}

std::vector<double> DistinguisherBank::evaluate(const Vector& x) const {
    std::vector<double> out(items_.size());
    evaluate(x, out);
    return out;
}

Matrix DistinguisherBank::tabulate(std::span<const Vector> xs) const {
    Matrix table(static_cast<Eigen::Index>(items_.size()), static_cast<Eigen::Index>(xs.size()));
    std::vector<double> buf(items_.size());
    for (std::size_t t = 0; t < xs.size(); ++t) {
        evaluate(xs[t], buf);
        for (std::size_t i = 0; i < buf.size(); ++i) table(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = buf[i];
    }
    return table;
}

}  // namespace subcal
