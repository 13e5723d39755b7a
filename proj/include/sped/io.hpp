#pragma once

// File formats: dataset CSVs, target curves, model/trace/config JSON.
// Numbers are written with 17 significant digits so every double round-trips.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sped/cokrige.hpp"
#include "sped/error.hpp"
#include "sped/estimate.hpp"
#include "sped/spectral.hpp"

namespace sped::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw InvalidInput(where + ": cannot parse number '" + s + "'");
    }
}

/// One header line, then numeric rows of equal width.
inline CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw InvalidInput(path.string() + ": empty file");
    t.header = split_csv_line(line);
    Index lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != t.header.size())
            throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(t.header.size()) + " columns");
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(parse_number(c, path.string() + ":" + std::to_string(lineno)));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline void write_csv(const fs::path& path, const CsvTable& t) {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write " + path.string());
    for (std::size_t j = 0; j < t.header.size(); ++j) out << (j ? "," : "") << t.header[j];
    out << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << format_double(row[j]);
        out << '\n';
    }
    if (!out) throw InvalidInput("write failed: " + path.string());
}

// ---------------------------------------------------------------- datasets

struct Dataset {
    std::vector<StructureDesign> designs;
    StrainGrid grid;
    MatrixXd responses;  // n x m stress (MPa)

    Index size() const { return Index(designs.size()); }
    TrainingData training_data() const;
};

inline TrainingData Dataset::training_data() const {
    if (responses.rows() != size() || responses.cols() != grid.size())
        throw InvalidInput("dataset responses must be n x m");
    if (!(responses.array() > 0.0).all()) throw InvalidInput("stresses must be positive on the grid");
    return {designs, grid, responses.array().log().matrix()};
}

inline void write_designs_csv(const fs::path& path, const std::vector<StructureDesign>& designs) {
    if (designs.empty()) throw InvalidInput("no designs to write");
    const Index p = designs.front().curve.size();
    CsvTable t;
    t.header.push_back("d");
    for (Index k = 0; k < p; ++k) t.header.push_back("x" + std::to_string(k));
    for (const auto& d : designs) {
        if (d.curve.size() != p) throw InvalidInput("designs have different p");
        std::vector<double> row{d.diameter};
        for (Index k = 0; k < p; ++k) row.push_back(d.curve.values[k]);
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

inline std::vector<StructureDesign> read_designs_csv(const fs::path& path, double length_mm = kDefaultStructureLength) {
    const auto t = read_csv(path);
    if (t.header.size() < 2 || t.header.front() != "d") throw InvalidInput(path.string() + ": header must be d,x0,...");
    for (std::size_t j = 1; j < t.header.size(); ++j)
        if (t.header[j] != "x" + std::to_string(j - 1)) throw InvalidInput(path.string() + ": bad column " + t.header[j]);
    std::vector<StructureDesign> out;
    for (const auto& row : t.rows) {
        StructureDesign d;
        d.diameter = row[0];
        d.curve.length_mm = length_mm;
        d.curve.values = Eigen::Map<const VectorXd>(row.data() + 1, Index(row.size() - 1));
        out.push_back(std::move(d));
    }
    return out;
}

inline void write_sinusoids_csv(const fs::path& path, const std::vector<StructureDesign>& designs) {
    CsvTable t{{"d", "A", "omega", "phi"}, {}};
    for (const auto& d : designs) {
        if (!d.sinusoid) throw InvalidInput("design has no sinusoid parameters");
        t.rows.push_back({d.sinusoid->d, d.sinusoid->A, d.sinusoid->omega, d.sinusoid->phi});
    }
    write_csv(path, t);
}

/// Attaches sinusoid parameters to designs read from a designs CSV.
inline void read_sinusoids_csv(const fs::path& path, std::vector<StructureDesign>& designs) {
    const auto t = read_csv(path);
    if (t.header != std::vector<std::string>{"d", "A", "omega", "phi"})
        throw InvalidInput(path.string() + ": header must be d,A,omega,phi");
    if (t.rows.size() != designs.size()) throw InvalidInput(path.string() + ": row count differs from designs");
    for (std::size_t i = 0; i < designs.size(); ++i) {
        const auto& r = t.rows[i];
        designs[i].sinusoid = SinusoidSpec{r[0], r[1], r[2], r[3]};
    }
}

inline void write_responses_csv(const fs::path& path, const StrainGrid& grid, const MatrixXd& stress) {
    if (stress.cols() != grid.size()) throw InvalidInput("responses do not match the strain grid");
    CsvTable t;
    for (Index j = 0; j < grid.size(); ++j) t.header.push_back(format_double(grid.levels[j]));
    for (Index i = 0; i < stress.rows(); ++i) {
        std::vector<double> row(static_cast<std::size_t>(stress.cols()));
        for (Index j = 0; j < stress.cols(); ++j) row[std::size_t(j)] = stress(i, j);
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

inline std::pair<StrainGrid, MatrixXd> read_responses_csv(const fs::path& path) {
    const auto t = read_csv(path);
    StrainGrid grid;
    grid.levels.resize(Index(t.header.size()));
    for (std::size_t j = 0; j < t.header.size(); ++j) grid.levels[Index(j)] = parse_number(t.header[j], path.string());
    grid.validate();
    MatrixXd Y(Index(t.rows.size()), grid.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        for (std::size_t j = 0; j < t.header.size(); ++j) Y(Index(i), Index(j)) = t.rows[i][j];
    return {grid, Y};
}

/// DIR/{prefix}designs.csv, {prefix}responses.csv and, when every design carries
/// them, {prefix}sinusoids.csv.
inline void write_dataset(const fs::path& dir, const std::string& prefix, const Dataset& data) {
    fs::create_directories(dir);
    write_designs_csv(dir / (prefix + "designs.csv"), data.designs);
    write_responses_csv(dir / (prefix + "responses.csv"), data.grid, data.responses);
    bool all = !data.designs.empty();
    for (const auto& d : data.designs) all = all && d.sinusoid.has_value();
    if (all) write_sinusoids_csv(dir / (prefix + "sinusoids.csv"), data.designs);
}

inline Dataset read_dataset(const fs::path& dir, const std::string& prefix) {
    Dataset data;
    data.designs = read_designs_csv(dir / (prefix + "designs.csv"));
    auto [grid, Y] = read_responses_csv(dir / (prefix + "responses.csv"));
    data.grid = std::move(grid);
    data.responses = std::move(Y);
    if (data.responses.rows() != data.size()) throw InvalidInput(dir.string() + ": designs and responses row counts differ");
    if (fs::exists(dir / (prefix + "sinusoids.csv"))) read_sinusoids_csv(dir / (prefix + "sinusoids.csv"), data.designs);
    return data;
}

/// Linear interpolation of (x, y) at the points q; q must lie inside [x0, xn].
inline VectorXd interpolate_linear(const VectorXd& x, const VectorXd& y, const VectorXd& q) {
    VectorXd out(q.size());
    for (Index i = 0; i < q.size(); ++i) {
        if (q[i] < x[0] - 1e-12 || q[i] > x[x.size() - 1] + 1e-12)
            throw InvalidInput("target curve does not cover strain " + format_double(q[i]));
        Index j = 0;
        while (j + 2 < x.size() && x[j + 1] < q[i]) ++j;
        const double w = (q[i] - x[j]) / (x[j + 1] - x[j]);
        out[i] = (1.0 - w) * y[j] + w * y[j + 1];
    }
    return out;
}

/// Target curve with header strain,stress; resampled onto `grid` when the strains differ.
inline ResponseCurve read_target_csv(const fs::path& path, const StrainGrid& grid) {
    const auto t = read_csv(path);
    if (t.header != std::vector<std::string>{"strain", "stress"})
        throw InvalidInput(path.string() + ": header must be strain,stress");
    if (t.rows.size() < 2) throw InvalidInput(path.string() + ": need at least two points");
    VectorXd s(Index(t.rows.size())), y(Index(t.rows.size()));
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        s[Index(i)] = t.rows[i][0];
        y[Index(i)] = t.rows[i][1];
    }
    StrainGrid{s}.validate();
    ResponseCurve c;
    if (s.size() == grid.size() && (s - grid.levels).cwiseAbs().maxCoeff() <= 1e-12)
        c.values = y;
    else
        c.values = interpolate_linear(s, y, grid.levels);
    if (!(c.values.array() > 0.0).all()) throw InvalidInput(path.string() + ": stresses must be positive");
    return c;
}

inline void write_target_csv(const fs::path& path, const StrainGrid& grid, const ResponseCurve& stress) {
    CsvTable t{{"strain", "stress"}, {}};
    for (Index j = 0; j < grid.size(); ++j) t.rows.push_back({grid.levels[j], stress.values[j]});
    write_csv(path, t);
}

inline void write_structure_csv(const fs::path& path, const StructureCurve& curve) {
    CsvTable t{{"t", "x"}, {}};
    const double dt = curve.spacing();
    for (Index k = 0; k < curve.size(); ++k) t.rows.push_back({double(k) * dt, curve.values[k]});
    write_csv(path, t);
}

// ---------------------------------------------------------------- JSON

inline json to_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const MatrixXd& M) {
    json rows = json::array();
    for (Index i = 0; i < M.rows(); ++i) rows.push_back(to_json(VectorXd(M.row(i).transpose())));
    return rows;
}

inline VectorXd vector_from_json(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(v.data(), Index(v.size()));
}

inline MatrixXd matrix_from_json(const json& j) {
    if (!j.is_array()) throw InvalidInput("matrix must be an array of rows");
    const Index r = Index(j.size());
    if (r == 0) return MatrixXd();
    const Index c = Index(j[0].size());
    MatrixXd M(r, c);
    for (Index i = 0; i < r; ++i) {
        const auto row = vector_from_json(j[std::size_t(i)]);
        if (row.size() != c) throw InvalidInput("ragged matrix");
        M.row(i) = row.transpose();
    }
    return M;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    out << text;
    if (!out) throw InvalidInput("write failed: " + path.string());
}

inline json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InvalidInput(path.string() + ": " + e.what());
    }
}

inline json model_to_json(const TrainedEmulator& model) {
    const auto& designs = model.designs();
    json j;
    j["p"] = designs.front().curve.size();
    j["structure_length_mm"] = designs.front().curve.length_mm;
    j["strain_grid"] = to_json(model.grid().levels);
    json ds = json::array();
    for (const auto& d : designs) {
        json e{{"d", d.diameter}, {"x", to_json(d.curve.values)}};
        if (d.sinusoid) e["sinusoid"] = {{"d", d.sinusoid->d}, {"A", d.sinusoid->A}, {"omega", d.sinusoid->omega}, {"phi", d.sinusoid->phi}};
        ds.push_back(std::move(e));
    }
    j["designs"] = std::move(ds);
    j["Y"] = to_json(model.log_responses());
    j["theta"] = to_json(model.params().theta);
    j["theta_d"] = model.params().theta_d;
    j["nugget"] = model.params().nugget;
    j["beta"] = to_json(model.beta());
    j["Sigma"] = to_json(model.sigma());
    j["family"] = std::string(to_string(model.params().family));
    const auto& m = model.metadata();
    j["fit_metadata"] = {{"lambda_I", m.lambda_I}, {"lambda_o", m.lambda_o}, {"objective", m.objective}, {"iterations", m.iterations}};
    return j;
}

/// Rebuilds the emulator (the correlation factorization is recomputed).
inline TrainedEmulator model_from_json(const json& j) {
    try {
        const Index p = j.at("p").get<Index>();
        const double length = j.value("structure_length_mm", kDefaultStructureLength);
        std::vector<StructureDesign> designs;
        for (const auto& e : j.at("designs")) {
            StructureDesign d;
            d.diameter = e.at("d").get<double>();
            d.curve.values = vector_from_json(e.at("x"));
            d.curve.length_mm = length;
            if (d.curve.size() != p) throw InvalidInput("design length differs from p");
            if (e.contains("sinusoid")) {
                const auto& s = e["sinusoid"];
                d.sinusoid = SinusoidSpec{s.at("d").get<double>(), s.at("A").get<double>(), s.at("omega").get<double>(),
                                          s.at("phi").get<double>()};
            }
            designs.push_back(std::move(d));
        }
        KernelParams params;
        params.theta = vector_from_json(j.at("theta"));
        params.theta_d = j.at("theta_d").get<double>();
        params.nugget = j.at("nugget").get<double>();
        params.family = parse_kernel_family(j.at("family").get<std::string>());
        FitMetadata meta;
        if (j.contains("fit_metadata")) {
            const auto& m = j["fit_metadata"];
            meta = {m.value("lambda_I", 0.0), m.value("lambda_o", 0.0), m.value("objective", 0.0), m.value("iterations", 0)};
        }
        return TrainedEmulator(std::move(designs), StrainGrid{vector_from_json(j.at("strain_grid"))},
                               matrix_from_json(j.at("Y")), std::move(params), vector_from_json(j.at("beta")),
                               matrix_from_json(j.at("Sigma")), meta);
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("malformed model file: ") + e.what());
    }
}

inline void save_model(const fs::path& path, const TrainedEmulator& model) { write_text(path, dump(model_to_json(model))); }
inline TrainedEmulator load_model(const fs::path& path) { return model_from_json(read_json(path)); }

inline json trace_to_json(const FitTrace& trace) {
    json runs = json::array();
    for (const auto& r : trace.runs) {
        json e{{"objectives", r.objectives},
               {"active_frequencies", r.active_frequencies},
               {"precision_offdiag_nonzeros", r.precision_offdiag_nonzeros},
               {"converged", r.converged},
               {"line_search_warning", r.line_search_warning},
               {"failed", r.failed}};
        if (r.failed) e["error"] = r.error;
        runs.push_back(std::move(e));
    }
    return {{"seed", trace.seed}, {"best_run", trace.best_run}, {"runs", std::move(runs)}};
}

struct CvConfig {
    int folds = 5;
    std::vector<double> lambda_I_grid;
    std::vector<double> lambda_o_grid;
    CvScore score = CvScore::mare;
};

struct RunConfig {
    FitConfig fit;
    std::optional<CvConfig> cv;
};

/// Keys: lambda_i, lambda_o, nugget, restarts, max_sweeps, sweep_tol, seed, family,
/// cv{folds, lambda_i_grid, lambda_o_grid, score}. Unknown keys are rejected.
inline RunConfig config_from_json(const json& j) {
    static const std::vector<std::string> known{"lambda_i", "lambda_o", "nugget", "restarts", "max_sweeps", "sweep_tol",
                                                "seed", "family", "cv", "glasso_tol", "glasso_max_iter", "theta_opt"};
    if (!j.is_object()) throw InvalidInput("config must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end()) throw InvalidInput("unknown config key: " + key);
    RunConfig rc;
    auto& c = rc.fit;
    try {
        c.lambda_I = j.value("lambda_i", c.lambda_I);
        c.lambda_o = j.value("lambda_o", c.lambda_o);
        c.nugget = j.value("nugget", c.nugget);
        c.restarts = j.value("restarts", c.restarts);
        c.max_sweeps = j.value("max_sweeps", c.max_sweeps);
        c.sweep_tol = j.value("sweep_tol", c.sweep_tol);
        c.seed = j.value("seed", c.seed);
        c.glasso_tol = j.value("glasso_tol", c.glasso_tol);
        c.glasso_max_iter = j.value("glasso_max_iter", c.glasso_max_iter);
        if (j.contains("family")) c.family = parse_kernel_family(j["family"].get<std::string>());
        if (j.contains("theta_opt")) {
            const auto& t = j["theta_opt"];
            c.theta_opt.max_iter = t.value("max_iter", c.theta_opt.max_iter);
            c.theta_opt.grad_tol = t.value("grad_tol", c.theta_opt.grad_tol);
            c.theta_opt.memory = t.value("memory", c.theta_opt.memory);
        }
        if (j.contains("cv") && !j["cv"].is_null()) {
            const auto& v = j["cv"];
            CvConfig cv;
            cv.folds = v.value("folds", cv.folds);
            cv.lambda_I_grid = v.value("lambda_i_grid", std::vector<double>{c.lambda_I});
            cv.lambda_o_grid = v.value("lambda_o_grid", std::vector<double>{c.lambda_o});
            const auto score = v.value("score", std::string("mare"));
            if (score == "mare") cv.score = CvScore::mare;
            else if (score == "log_likelihood") cv.score = CvScore::log_likelihood;
            else throw InvalidInput("unknown cv score: " + score);
            rc.cv = std::move(cv);
        }
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("malformed config: ") + e.what());
    }
    c.validate();
    return rc;
}

}  // namespace sped::io
