#pragma once

#include <memory>
#include <span>
#include <vector>

#include "subcal/mixture_model.hpp"

namespace subcal {

// A real-valued function of the features with range in [0,1].
class Distinguisher {
public:
    enum class Kind { discriminant_indicator, posterior, constant, tabulated };

    // x -> 1[g = argmax_j f~(j|x)]
    static Distinguisher indicator(std::shared_ptr<const MixtureModel> model, int g);
    // x -> f~(g|x)
    static Distinguisher posterior(std::shared_ptr<const MixtureModel> model, int g);
    static Distinguisher constant(double c);
    // Values on a fixed sample; only evaluable by sample index.
    static Distinguisher tabulated(std::vector<double> values);

    Kind kind() const { return kind_; }
    const std::shared_ptr<const MixtureModel>& model() const { return model_; }
    int group() const { return group_; }
    double constant_value() const { return c_; }
    const std::vector<double>& table() const { return table_; }

    double operator()(const Vector& x) const;
    double at(std::size_t sample_index) const;

private:
    Kind kind_ = Kind::constant;
    std::shared_ptr<const MixtureModel> model_;
    int group_ = 0;
    double c_ = 1.0;
    std::vector<double> table_;
};

// Evaluates many model-backed distinguishers at once. Natural parameters of
// all distinct models sharing a family are stacked so T(x) is computed once
// and all component scores come from one matrix-vector product.
class DistinguisherBank {
public:
    explicit DistinguisherBank(std::vector<Distinguisher> distinguishers);

    std::size_t size() const { return items_.size(); }
    const std::vector<Distinguisher>& distinguishers() const { return items_; }

    void evaluate(const Vector& x, std::span<double> out) const;
    std::vector<double> evaluate(const Vector& x) const;

    // functions x samples matrix of values.
    Matrix tabulate(std::span<const Vector> xs) const;

private:
    struct FamilyBlock {
        FamilyKind kind;
        Matrix thetas;   // rows: all components of all models in this block
        Vector offsets;
        mutable Vector scores;
    };
    struct Slot {
        int block = -1;
        int row_begin = 0;  // first component row of the model in its block
        int k = 0;
    };

    std::vector<Distinguisher> items_;
    std::vector<FamilyBlock> blocks_;
    std::vector<Slot> slots_;
    int dim_ = -1;
};

}  // namespace subcal
