// Command-line front end: gen, fit, predict, eval, mimic.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sped/sped.hpp"

namespace fs = std::filesystem;
using namespace sped;
using io::json;

namespace {

io::Dataset oracle_dataset(const std::vector<SinusoidSpec>& specs, Index p, const StrainGrid& grid) {
    io::Dataset ds;
    ds.grid = grid;
    ds.responses.resize(Index(specs.size()), grid.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        ds.designs.push_back(gen_sinusoid(specs[i], p));
        ds.responses.row(Index(i)) = synthetic_oracle(ds.designs.back(), grid).values.transpose();
    }
    return ds;
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
    return out.parent_path() / (out.stem().string() + suffix);
}

int run_gen(Index n, Index test_n, std::uint64_t seed, const fs::path& out, Index p) {
    const auto grid = default_strain_grid();
    // training and test streams get distinct derived seeds
    io::write_dataset(out, "", oracle_dataset(sample_designs(n, seed, SamplingScheme::lhs), p, grid));
    io::write_dataset(out, "test_", oracle_dataset(sample_designs(test_n, seed + 1, SamplingScheme::sobol), p, grid));
    std::cout << "wrote " << n << " training and " << test_n << " test runs to " << out.string() << "\n";
    return 0;
}

int run_fit(const fs::path& train, const fs::path& config, const fs::path& out) {
    const auto data = io::read_dataset(train, "").training_data();
    auto rc = config.empty() ? io::RunConfig{} : io::config_from_json(io::read_json(config));
    json cv_json;
    if (rc.cv) {
        const auto sel = select_penalties(data, rc.cv->lambda_I_grid, rc.cv->lambda_o_grid, rc.cv->folds, rc.fit, rc.cv->score);
        rc.fit.lambda_I = sel.lambda_I;
        rc.fit.lambda_o = sel.lambda_o;
        json table = json::array();
        for (const auto& [pair, score] : sel.table)
            table.push_back({{"lambda_i", pair.first}, {"lambda_o", pair.second}, {"score", score}});
        cv_json = {{"lambda_i", sel.lambda_I}, {"lambda_o", sel.lambda_o}, {"score", sel.score}, {"table", table}};
        std::cout << "cv selected lambda_i=" << sel.lambda_I << " lambda_o=" << sel.lambda_o << "\n";
    }
    const auto res = fit(data, rc.fit);
    io::save_model(out, res.model);
    json trace = io::trace_to_json(res.trace);
    if (!cv_json.is_null()) trace["cv"] = cv_json;
    io::write_text(sibling(out, "_trace.json"), io::dump(trace));
    Index active = 0;
    for (Index k = 0; k < res.model.params().theta.size(); ++k) active += res.model.params().theta[k] > 0.0;
    std::cout << "objective " << res.model.metadata().objective << ", " << active << " active frequencies\n";
    return 0;
}

std::vector<StructureDesign> read_query_designs(const fs::path& designs, const fs::path& sinusoids) {
    auto ds = io::read_designs_csv(designs);
    if (!sinusoids.empty()) io::read_sinusoids_csv(sinusoids, ds);
    return ds;
}

int run_predict(const fs::path& model_path, const fs::path& designs, const fs::path& sinusoids, double level,
                const fs::path& out) {
    const auto model = io::load_model(model_path);
    const auto ds = read_query_designs(designs, sinusoids);
    io::CsvTable t{{"design", "strain", "mean", "lower", "upper"}, {}};
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto pred = predict(model, ds[i]);
        const auto mean = back_transform(pred.mean);
        const auto band = hpd_interval(pred, level);
        for (Index j = 0; j < model.num_levels(); ++j)
            t.rows.push_back({double(i), model.grid().levels[j], mean.values[j], std::exp(band.lower.values[j]),
                              std::exp(band.upper.values[j])});
    }
    io::write_csv(out, t);
    return 0;
}

int run_eval(const fs::path& model_path, const fs::path& test, const fs::path& out) {
    const auto model = io::load_model(model_path);
    const std::string prefix = fs::exists(test / "test_designs.csv") ? "test_" : "";
    const auto ds = io::read_dataset(test, prefix);
    const auto rep = evaluate(model, ds.designs, ds.grid, ds.responses);
    io::write_text(out, io::dump(report_to_json(rep)));
    std::cout << "median MARE " << rep.median_mare() << ", classification " << rep.classification_correct() << "/"
              << rep.cases.size() << ", band covers " << rep.band_cover_count() << "/" << rep.cases.size() << "\n";
    return 0;
}

int run_mimic(const fs::path& model_path, const fs::path& target, int starts, std::uint64_t seed, const fs::path& out) {
    const auto model = io::load_model(model_path);
    const auto curve = io::read_target_csv(target, model.grid());
    const auto prob = make_mimic_problem(model, curve);
    MimicOptions opt;
    opt.starts = starts;
    opt.seed = seed;
    const auto res = optimize(prob, opt);
    const auto mean = back_transform(res.predicted.mean);
    json starts_json = json::array();
    for (const auto& s : res.trace)
        starts_json.push_back({{"initial", io::to_json(s.initial)},
                               {"initial_objective", s.initial_objective},
                               {"final_objective", s.final_objective},
                               {"line_search_failed", s.line_search_failed}});
    json j{{"diameter", res.diameter},
           {"spectrum", io::to_json(res.spectrum)},
           {"active", res.active},
           {"objective", res.objective},
           {"predicted_stress", io::to_json(mean.values)},
           {"predicted_scale", res.predicted.scale},
           {"mare_vs_target", mare(curve, mean)},
           {"structure", io::to_json(res.reconstructed.values)},
           {"starts", starts_json}};
    io::write_text(out, io::dump(j));
    io::write_structure_csv(sibling(out, "_structure.csv"), res.reconstructed);
    std::cout << "diameter " << res.diameter << ", objective " << res.objective << ", MARE vs target "
              << mare(curve, mean) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Functional GP emulator with a spectral-distance kernel"};
    app.require_subcommand(1);

    Index n = 58, test_n = 18, p = kDefaultStructurePoints;
    std::uint64_t seed = 1;
    std::string out, train, config, model, designs, sinusoids, test, target;
    double level = 0.9;
    int starts = 32;

    auto* gen = app.add_subcommand("gen", "sample designs and oracle responses");
    gen->add_option("--n", n, "training runs")->check(CLI::PositiveNumber);
    gen->add_option("--test-n", test_n, "test runs")->check(CLI::PositiveNumber);
    gen->add_option("--seed", seed, "random seed");
    gen->add_option("--p", p, "points per structure (odd)");
    gen->add_option("--out", out, "output directory")->required();

    auto* fitc = app.add_subcommand("fit", "fit the emulator");
    fitc->add_option("--train", train, "training directory")->required()->check(CLI::ExistingDirectory);
    fitc->add_option("--config", config, "JSON config")->check(CLI::ExistingFile);
    fitc->add_option("--out", out, "model JSON")->required();

    auto* pred = app.add_subcommand("predict", "predictive mean and band");
    pred->add_option("--model", model, "model JSON")->required()->check(CLI::ExistingFile);
    pred->add_option("--designs", designs, "designs CSV")->required()->check(CLI::ExistingFile);
    pred->add_option("--sinusoids", sinusoids, "sinusoid CSV (feature-based models)")->check(CLI::ExistingFile);
    pred->add_option("--level", level, "band level")->check(CLI::Range(0.0, 1.0));
    pred->add_option("--out", out, "output CSV")->required();

    auto* ev = app.add_subcommand("eval", "held-out metrics");
    ev->add_option("--model", model, "model JSON")->required()->check(CLI::ExistingFile);
    ev->add_option("--test", test, "test directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--out", out, "report JSON")->required();

    auto* mim = app.add_subcommand("mimic", "inverse design against a target curve");
    mim->add_option("--model", model, "model JSON")->required()->check(CLI::ExistingFile);
    mim->add_option("--target", target, "target CSV (strain,stress)")->required()->check(CLI::ExistingFile);
    mim->add_option("--starts", starts, "random starts")->check(CLI::NonNegativeNumber);
    mim->add_option("--seed", seed, "random seed");
    mim->add_option("--out", out, "result JSON")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen) return run_gen(n, test_n, seed, out, p);
        if (*fitc) return run_fit(train, config, out);
        if (*pred) return run_predict(model, designs, sinusoids, level, out);
        if (*ev) return run_eval(model, test, out);
        if (*mim) return run_mimic(model, target, starts, seed, out);
    } catch (const sped::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
