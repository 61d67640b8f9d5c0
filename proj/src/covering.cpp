#include "subcal/covering.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "subcal/model_io.hpp"
#include "subcal/rng.hpp"

namespace subcal {

std::string_view to_string(ClassMode mode) { return mode == ClassMode::dce ? "dce" : "lce"; }

ClassMode class_mode_from_string(std::string_view name) {
    if (name == "dce") return ClassMode::dce;
    if (name == "lce") return ClassMode::lce;
    throw std::invalid_argument("unknown class mode: " + std::string(name));
}

// ---------------------------------------------------------------------------
// Candidate families

CandidateFamily candidate_family_for_sample(std::span<const Vector> xs, FamilyKind family, int k, int M,
                                            std::uint64_t seed) {
    if (xs.empty()) throw std::invalid_argument("candidate family needs a nonempty sample");
    const int d = static_cast<int>(xs.front().size());
    CandidateFamily fam;
    fam.family = family;
    fam.k = k;
    fam.d = d;
    fam.M = M;
    fam.seed = seed;
    fam.mean_lo.resize(d);
    fam.mean_hi.resize(d);
    double avg_var = 0.0;
    std::vector<double> col(xs.size());
    for (int i = 0; i < d; ++i) {
        double mean = 0.0;
        for (std::size_t t = 0; t < xs.size(); ++t) {
            col[t] = xs[t][i];
            mean += col[t];
        }
        mean /= static_cast<double>(xs.size());
        double var = 0.0;
        for (double v : col) var += (v - mean) * (v - mean);
        avg_var += var / static_cast<double>(xs.size());
        std::sort(col.begin(), col.end());
        const auto at = [&](double q) {
            return col[static_cast<std::size_t>(std::floor(q * static_cast<double>(col.size() - 1)))];
        };
        fam.mean_lo[i] = at(0.05);
        fam.mean_hi[i] = at(0.95);
        if (family == FamilyKind::poisson_product) fam.mean_lo[i] = std::max(fam.mean_lo[i], 0.1);
        if (fam.mean_hi[i] <= fam.mean_lo[i]) fam.mean_hi[i] = fam.mean_lo[i] + 1.0;
    }
    avg_var /= d;
    if (!(avg_var > 0.0)) throw std::invalid_argument("sample has zero variance");
    fam.var_lo = 0.1 * avg_var;
    fam.var_hi = avg_var;
    return fam;
}

std::vector<std::shared_ptr<const MixtureModel>> sample_candidates(const CandidateFamily& fam) {
    if (fam.M < 1) throw std::invalid_argument("candidate family needs M >= 1");
    if (fam.k < 1 || fam.d < 1) throw std::invalid_argument("candidate family needs k, d >= 1");
    if (fam.mean_lo.size() != fam.d || fam.mean_hi.size() != fam.d)
        throw std::invalid_argument("mean box has the wrong dimension");
    if (!((fam.mean_hi.array() >= fam.mean_lo.array()).all()))
        throw std::invalid_argument("degenerate parameter ranges: empty mean box");
    if (!(fam.var_lo > 0.0 && fam.var_hi >= fam.var_lo))
        throw std::invalid_argument("degenerate parameter ranges: variance range");
    if (!(fam.weight_floor >= 0.0 && fam.weight_floor * fam.k < 1.0))
        throw std::invalid_argument("degenerate parameter ranges: weight floor");
    if (fam.family == FamilyKind::poisson_product && !(fam.mean_lo.array() > 0.0).all())
        throw std::invalid_argument("degenerate parameter ranges: poisson rates must be positive");

    Rng rng(fam.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };

    std::vector<std::shared_ptr<const MixtureModel>> out;
    out.reserve(static_cast<std::size_t>(fam.M));
    for (int m = 0; m < fam.M; ++m) {
        Vector w(fam.k);
        for (int g = 0; g < fam.k; ++g) w[g] = expo(rng);
        w = (fam.weight_floor + (1.0 - fam.k * fam.weight_floor) * (w / w.sum()).array()).matrix();
        w /= w.sum();

        std::vector<ExpFamilyComponent> comps;
        double shared_s2 = 0.0;
        Matrix shared_cov;
        for (int g = 0; g < fam.k; ++g) {
            Vector mean(fam.d);
            for (int i = 0; i < fam.d; ++i) mean[i] = uni(fam.mean_lo[i], fam.mean_hi[i]);
            switch (fam.family) {
                case FamilyKind::gaussian_isotropic:
                    if (g == 0 || !fam.shared_variance) shared_s2 = uni(fam.var_lo, fam.var_hi);
                    comps.push_back(ExpFamilyComponent::isotropic(mean, shared_s2));
                    break;
                case FamilyKind::gaussian_full: {
                    if (g > 0 && fam.shared_variance) {
                        comps.push_back(ExpFamilyComponent::gaussian({mean, shared_cov}));
                        break;
                    }
                    Matrix a(fam.d, fam.d);
                    for (int i = 0; i < fam.d; ++i)
                        for (int j = 0; j < fam.d; ++j) a(i, j) = normal(rng);
                    const Matrix q = Eigen::HouseholderQR<Matrix>(a).householderQ();
                    Vector eig(fam.d);
                    for (int i = 0; i < fam.d; ++i) eig[i] = uni(fam.var_lo, fam.var_hi);
                    Matrix cov = q * eig.asDiagonal() * q.transpose();
                    cov = 0.5 * (cov + cov.transpose());
                    shared_cov = cov;
                    comps.push_back(ExpFamilyComponent::gaussian({mean, cov}));
                    break;
                }
                case FamilyKind::poisson_product:
                    comps.push_back(ExpFamilyComponent::poisson(mean));
                    break;
            }
        }
        out.push_back(std::make_shared<const MixtureModel>(w, std::move(comps), LabelRule::constant(0.5),
                                                           std::min(fam.weight_floor, w.minCoeff())));
    }
    return out;
}

DistinguisherClass build_distinguisher_class(const CandidateFamily& family, ClassMode mode,
                                             std::shared_ptr<const MixtureModel> include_truth) {
    DistinguisherClass cls;
    cls.mode = mode;
    cls.candidates = sample_candidates(family);
    if (include_truth) {
        if (include_truth->k() != family.k || include_truth->d() != family.d)
            throw std::invalid_argument("true model does not match the candidate family shape");
        cls.candidates.push_back(std::move(include_truth));
        cls.includes_truth = true;
    }
    for (const auto& c : cls.candidates) {
        for (int g = 0; g < c->k(); ++g) {
            cls.functions.push_back(mode == ClassMode::dce ? Distinguisher::indicator(c, g)
                                                           : Distinguisher::posterior(c, g));
        }
    }
    return cls;
}

// ---------------------------------------------------------------------------
// Distances

FunctionTable::FunctionTable(const Matrix& table)
    : rows_(static_cast<std::size_t>(table.rows())), cols_(static_cast<std::size_t>(table.cols())) {
    binary_ = ((table.array() == 0.0) || (table.array() == 1.0)).all();
    if (binary_) {
        words_ = (cols_ + 63) / 64;
        bits_.assign(rows_ * words_, 0);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t t = 0; t < cols_; ++t)
                if (table(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) == 1.0)
                    bits_[i * words_ + t / 64] |= std::uint64_t{1} << (t % 64);
    } else {
        values_ = table;
    }
}

double FunctionTable::distance(std::size_t i, std::size_t j) const {
    if (cols_ == 0) return 0.0;
    if (binary_) {
        const std::uint64_t* a = bits_.data() + i * words_;
        const std::uint64_t* b = bits_.data() + j * words_;
        std::size_t diff = 0;
        for (std::size_t w = 0; w < words_; ++w) diff += static_cast<std::size_t>(std::popcount(a[w] ^ b[w]));
        return static_cast<double>(diff) / static_cast<double>(cols_);
    }
    return (values_.row(static_cast<Eigen::Index>(i)) - values_.row(static_cast<Eigen::Index>(j))).cwiseAbs().sum() /
           static_cast<double>(cols_);
}

double cover_radius(const FunctionTable& table, const Cover& cover, std::size_t* worst) {
    double radius = 0.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < table.functions(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c : cover.selected) {
            best = std::min(best, table.distance(i, c));
            if (best == 0.0) break;
        }
        if (best > radius) {
            radius = best;
            arg = i;
        }
    }
    if (worst) *worst = arg;
    return radius;
}

// ---------------------------------------------------------------------------
// Covers

Cover exact_cover(const Matrix& table, double epsilon) {
    const auto T = static_cast<std::size_t>(table.cols());
    const auto F = static_cast<std::size_t>(table.rows());
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0,1)");
    const double inv = 1.0 / epsilon;
    const int q = static_cast<int>(std::lround(inv));
    if (std::abs(inv - q) > 1e-9) throw std::invalid_argument("exact_cover needs 1/epsilon to be an integer");
    if (T > 8 || q > 4) throw std::invalid_argument("exact_cover scale limits exceeded (T <= 8, 1/eps <= 4)");

    // consistent[f][t] = bitmask of labels l with |f(x_t) - l/q| <= eps/2.
    const int labels = q + 1;
    std::vector<std::vector<unsigned>> consistent(F, std::vector<unsigned>(T, 0u));
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t t = 0; t < T; ++t)
            for (int l = 0; l < labels; ++l)
                if (std::abs(table(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t)) -
                             static_cast<double>(l) / q) <= 0.5 * epsilon)
                    consistent[f][t] |= 1u << l;

    Cover cover;
    cover.epsilon = epsilon;
    cover.sample_size = T;
    std::vector<char> taken(F, 0);
    std::vector<int> labeling(T, 0);
    while (true) {
        for (std::size_t f = 0; f < F; ++f) {
            bool ok = true;
            for (std::size_t t = 0; t < T && ok; ++t) ok = (consistent[f][t] >> labeling[t]) & 1u;
            if (ok) {
                if (!taken[f]) {
                    taken[f] = 1;
                    cover.selected.push_back(f);
                }
                break;
            }
        }
        std::size_t pos = 0;
        while (pos < T && ++labeling[pos] == labels) labeling[pos++] = 0;
        if (pos == T) break;
    }
    return cover;
}

Cover greedy_cover(const Matrix& table, double epsilon) {
    if (table.cols() < 1) throw std::invalid_argument("greedy_cover needs at least one sample point");
    Cover cover;
    cover.epsilon = epsilon;
    cover.sample_size = static_cast<std::size_t>(table.cols());
    const std::size_t F = static_cast<std::size_t>(table.rows());
    if (F == 0) return cover;

    const FunctionTable ft(table);
    std::vector<double> nearest(F, std::numeric_limits<double>::infinity());
    std::size_t next = 0;
    while (true) {
        cover.selected.push_back(next);
        for (std::size_t i = 0; i < F; ++i) nearest[i] = std::min(nearest[i], ft.distance(i, next));
        const auto far = std::max_element(nearest.begin(), nearest.end());
        if (*far <= epsilon) break;
        next = static_cast<std::size_t>(far - nearest.begin());
    }
    return cover;
}

CoverCheck verify_cover(const Cover& cover, const Matrix& holdout_table, double epsilon) {
    const FunctionTable ft(holdout_table);
    CoverCheck check;
    check.radius = 4.0 * epsilon;
    check.worst_gap = cover_radius(ft, cover, &check.worst_function);
    check.pass = check.worst_gap <= check.radius;
    return check;
}

// ---------------------------------------------------------------------------
// Pseudo-shattering

namespace {

// A function "is above" threshold r at a point when its value exceeds r.
// Every group (a fixed sign pattern on the points chosen so far) must end up
// with members on both sides of each new threshold.
struct ShatterSearch {
    const Matrix& table;
    std::span<const int> points;

    double val(int f, int level) const { return table(f, points[static_cast<std::size_t>(level)]); }

    // Distinct thresholds r at `level` that keep every group split:
    // r in [max_g min_g, min_g max_g).
    std::vector<double> cuts(const std::vector<std::vector<int>>& groups, int level) const {
        double lo = -std::numeric_limits<double>::infinity();
        double hi = std::numeric_limits<double>::infinity();
        for (const auto& g : groups) {
            double mn = std::numeric_limits<double>::infinity(), mx = -mn;
            for (int f : g) {
                mn = std::min(mn, val(f, level));
                mx = std::max(mx, val(f, level));
            }
            lo = std::max(lo, mn);
            hi = std::min(hi, mx);
        }
        std::vector<double> out;
        if (!(lo < hi)) return out;
        for (const auto& g : groups)
            for (int f : g)
                if (val(f, level) >= lo && val(f, level) < hi) out.push_back(val(f, level));
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    bool recurse(const std::vector<std::vector<int>>& groups, int level) const {
        const int m = static_cast<int>(points.size());
        if (level == m - 2) return sweep(groups, level);
        for (double r : cuts(groups, level)) {
            std::vector<std::vector<int>> next;
            next.reserve(groups.size() * 2);
            for (const auto& g : groups) {
                std::vector<int> below, above;
                for (int f : g) (val(f, level) <= r ? below : above).push_back(f);
                next.push_back(std::move(below));
                next.push_back(std::move(above));
            }
            if (recurse(next, level + 1)) return true;
        }
        return false;
    }

    // Last two points: sweep the threshold at `level` and test whether some
    // threshold at level + 1 splits every resulting group. With each group
    // sorted by its value at `level`, "below" is a prefix and "above" the
    // matching suffix, so prefix/suffix extrema answer each step in O(groups).
    bool sweep(const std::vector<std::vector<int>>& groups, int level) const {
        const std::vector<double> rs = cuts(groups, level);
        if (rs.empty()) return false;
        const std::size_t G = groups.size();
        std::vector<std::vector<int>> sorted(groups);
        std::vector<std::vector<double>> pre_min(G), pre_max(G), suf_min(G), suf_max(G);
        const double inf = std::numeric_limits<double>::infinity();
        for (std::size_t gi = 0; gi < G; ++gi) {
            auto& s = sorted[gi];
            std::sort(s.begin(), s.end(), [&](int a, int b) { return val(a, level) < val(b, level); });
            const std::size_t n = s.size();
            pre_min[gi].assign(n + 1, inf);
            pre_max[gi].assign(n + 1, -inf);
            suf_min[gi].assign(n + 1, inf);
            suf_max[gi].assign(n + 1, -inf);
            for (std::size_t i = 0; i < n; ++i) {
                pre_min[gi][i + 1] = std::min(pre_min[gi][i], val(s[i], level + 1));
                pre_max[gi][i + 1] = std::max(pre_max[gi][i], val(s[i], level + 1));
            }
            for (std::size_t i = n; i-- > 0;) {
                suf_min[gi][i] = std::min(suf_min[gi][i + 1], val(s[i], level + 1));
                suf_max[gi][i] = std::max(suf_max[gi][i + 1], val(s[i], level + 1));
            }
        }
        std::vector<std::size_t> ptr(G, 0);
        for (double r : rs) {
            double max_of_min = -inf, min_of_max = inf;
            for (std::size_t gi = 0; gi < G; ++gi) {
                const auto& s = sorted[gi];
                while (ptr[gi] < s.size() && val(s[ptr[gi]], level) <= r) ++ptr[gi];
                const std::size_t p = ptr[gi];
                max_of_min = std::max({max_of_min, pre_min[gi][p], suf_min[gi][p]});
                min_of_max = std::min({min_of_max, pre_max[gi][p], suf_max[gi][p]});
            }
            if (max_of_min < min_of_max) return true;
        }
        return false;
    }
};

}  // namespace

bool pseudo_shatters(const Matrix& table, std::span<const int> points) {
    const int m = static_cast<int>(points.size());
    const int F = static_cast<int>(table.rows());
    if (m == 0) return F >= 1;
    if (F < (1 << std::min(m, 30))) return false;
    std::vector<int> all(static_cast<std::size_t>(F));
    std::iota(all.begin(), all.end(), 0);
    const ShatterSearch search{table, points};
    if (m == 1) return !search.cuts({all}, 0).empty();
    return search.recurse({all}, 0);
}

int empirical_shatter_dim(const Matrix& table) {
    const int n = static_cast<int>(table.cols());
    if (n > 12) throw std::invalid_argument("empirical_shatter_dim supports at most 12 points");
    int best = 0;
    for (int m = 1; m <= n; ++m) {
        bool found = false;
        // Enumerate m-subsets of the n points via bitmasks.
        for (unsigned mask = 0; mask < (1u << n) && !found; ++mask) {
            if (std::popcount(mask) != m) continue;
            std::vector<int> pts;
            for (int i = 0; i < n; ++i)
                if (mask & (1u << i)) pts.push_back(i);
            found = pseudo_shatters(table, pts);
        }
        if (!found) break;
        best = m;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json cover_to_json(const DistinguisherClass& cls, const Cover& cover) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : cls.candidates) cands.push_back(model_to_json(*c, false));
    nlohmann::json funcs = nlohmann::json::array();
    std::size_t c = 0;
    for (const auto& cand : cls.candidates) {
        for (int g = 0; g < cand->k(); ++g) funcs.push_back({{"candidate", c}, {"group", g}});
        ++c;
    }
    return {{"mode", std::string(to_string(cls.mode))},
            {"epsilon", cover.epsilon},
            {"sample_size", cover.sample_size},
            {"includes_truth", cls.includes_truth},
            {"candidates", cands},
            {"distinguishers", funcs},
            {"selected", cover.selected}};
}

LoadedCover cover_from_json(const nlohmann::json& j) {
    LoadedCover out;
    out.cls.mode = class_mode_from_string(j.at("mode").get<std::string>());
    out.cls.includes_truth = j.value("includes_truth", false);
    for (const auto& c : j.at("candidates"))
        out.cls.candidates.push_back(std::make_shared<const MixtureModel>(model_from_json(c)));
    for (const auto& f : j.at("distinguishers")) {
        const auto& cand = out.cls.candidates.at(f.at("candidate").get<std::size_t>());
        const int g = f.at("group").get<int>();
        out.cls.functions.push_back(out.cls.mode == ClassMode::dce ? Distinguisher::indicator(cand, g)
                                                                   : Distinguisher::posterior(cand, g));
    }
    out.cover.epsilon = j.at("epsilon").get<double>();
    out.cover.sample_size = j.at("sample_size").get<std::size_t>();
    out.cover.selected = j.at("selected").get<std::vector<std::size_t>>();
    for (std::size_t s : out.cover.selected)
        if (s >= out.cls.functions.size()) throw std::invalid_argument("cover selects a missing distinguisher");
    return out;
}

}  // namespace subcal
