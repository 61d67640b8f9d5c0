#pragma once

// Phase-1 estimators for the cluster-then-predict pipelines.
//
// learn_discriminant_2iso splits the sample along its top principal direction
// and assigns points to the nearer of the two side means. learn_mixture_em is
// plain EM with a principal-direction initialization. Both stand in for the
// black-box estimators the analysis assumes; only realized accuracy matters.

#include <cstdint>
#include <span>
#include <vector>

#include "subcal/mixture_model.hpp"

namespace subcal {

struct LearnedDiscriminant {
    int d = 0;
    int k = 2;
    std::vector<Vector> means;

    // Index of the nearest estimated mean; ties go to the smaller index.
    int operator()(const Vector& x) const;
};

LearnedDiscriminant learn_discriminant_2iso(std::span<const Vector> xs);

// Fraction of points where the learned label differs from the true
// discriminant, minimized over relabelings of the two learned clusters.
double misassignment_rate(const LearnedDiscriminant& learned, const MixtureModel& truth, std::span<const Vector> xs);

inline constexpr int kDefaultEmIterations = 100;
inline constexpr double kCovarianceFloor = 1e-6;

// Returns a mixture with the constant-0.5 label rule and no weight floor.
// The seed fixes how ties in the initial principal-direction ordering are
// broken.
MixtureModel learn_mixture_em(std::span<const Vector> xs, int k, FamilyKind family,
                              int iters = kDefaultEmIterations, std::uint64_t seed = 0);

}  // namespace subcal
