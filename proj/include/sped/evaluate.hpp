#pragma once

// Held-out evaluation of a fitted emulator: MARE, elastic moduli and
// curvature class, and 90% band coverage per test case.

#include <algorithm>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sped/cokrige.hpp"
#include "sped/error.hpp"
#include "sped/io.hpp"
#include "sped/metrics.hpp"

namespace sped {

struct CaseReport {
    double mare = 0.0;
    CurveCharacteristics truth;
    CurveCharacteristics predicted;
    double band_fraction = 0.0;  // share of strain levels whose truth lies in the band
    bool band_covers = false;    // every level covered
};

struct MetricsReport {
    std::string family;
    double band_level = 0.9;
    std::vector<CaseReport> cases;

    double median_mare() const {
        if (cases.empty()) throw InvalidInput("empty report");
        std::vector<double> v;
        for (const auto& c : cases) v.push_back(c.mare);
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
    int classification_correct() const {
        int k = 0;
        for (const auto& c : cases) k += c.truth.label == c.predicted.label;
        return k;
    }
    int band_cover_count() const {
        int k = 0;
        for (const auto& c : cases) k += c.band_covers;
        return k;
    }
    double mean_band_fraction() const {
        double s = 0.0;
        for (const auto& c : cases) s += c.band_fraction;
        return cases.empty() ? 0.0 : s / double(cases.size());
    }
};

/// `truth` is n x m stress on the model's grid.
inline MetricsReport evaluate(const TrainedEmulator& model, const std::vector<StructureDesign>& designs,
                              const StrainGrid& grid, const MatrixXd& truth, double level = 0.9) {
    if (grid.size() != model.num_levels() || (grid.levels - model.grid().levels).cwiseAbs().maxCoeff() > 1e-12)
        throw InvalidInput("test strain grid differs from the model's");
    if (truth.rows() != Index(designs.size()) || truth.cols() != grid.size())
        throw InvalidInput("test responses must be n x m");
    MetricsReport rep;
    rep.family = std::string(to_string(model.params().family));
    rep.band_level = level;
    for (std::size_t i = 0; i < designs.size(); ++i) {
        const ResponseCurve t{truth.row(Index(i)).transpose(), false};
        const auto pred = predict(model, designs[i]);
        const auto mean = back_transform(pred.mean);
        const auto band = hpd_interval(pred, level);
        const VectorXd lo = band.lower.values.array().exp(), hi = band.upper.values.array().exp();
        CaseReport c;
        c.mare = mare(t, mean);
        c.truth = moduli_and_kappa(t, grid);
        c.predicted = moduli_and_kappa(mean, grid);
        Index inside = 0;
        for (Index j = 0; j < grid.size(); ++j) inside += t.values[j] >= lo[j] && t.values[j] <= hi[j];
        c.band_fraction = double(inside) / double(grid.size());
        c.band_covers = inside == grid.size();
        rep.cases.push_back(c);
    }
    return rep;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    using nlohmann::json;
    auto chars = [](const CurveCharacteristics& c) {
        return json{{"E1", c.E1}, {"E9", c.E9}, {"kappa", c.kappa}, {"label", std::string(to_string(c.label))}};
    };
    json cases = json::array();
    for (const auto& c : r.cases)
        cases.push_back({{"mare", c.mare},
                         {"truth", chars(c.truth)},
                         {"predicted", chars(c.predicted)},
                         {"band_fraction", c.band_fraction},
                         {"band_covers", c.band_covers}});
    return {{"family", r.family},
            {"band_level", r.band_level},
            {"median_mare", r.median_mare()},
            {"classification_correct", r.classification_correct()},
            {"band_cover_count", r.band_cover_count()},
            {"mean_band_fraction", r.mean_band_fraction()},
            {"n", r.cases.size()},
            {"cases", std::move(cases)}};
}

}  // namespace sped
