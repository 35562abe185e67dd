#pragma once

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cropuf/device.hpp"
#include "cropuf/errors.hpp"
#include "cropuf/extraction.hpp"
#include "cropuf/keyshare.hpp"

namespace cropuf {

using json = nlohmann::json;

// --- small helpers ----------------------------------------------------------

inline json grid_rows_json(const Grid& g) {
    json rows = json::array();
    for (int i = 0; i < g.n; ++i) {
        json row = json::array();
        for (int j = 0; j < g.m; ++j) row.push_back(g.at(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Grid grid_from_rows_json(const json& rows) {
    if (!rows.is_array() || rows.empty()) throw DataError("expected a non-empty 2D array");
    Grid g(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (int i = 0; i < g.n; ++i) {
        if (static_cast<int>(rows[i].size()) != g.m) throw DataError("ragged 2D array");
        for (int j = 0; j < g.m; ++j) g.at(i, j) = rows[i][j].get<double>();
    }
    return g;
}

/// Dash-joined row sequence, e.g. "0-2-1-3-0".
inline std::string path_to_string(const PathConfig& p) {
    std::string s;
    for (std::size_t j = 0; j < p.rows.size(); ++j) {
        if (j) s.push_back('-');
        s += std::to_string(p.rows[j]);
    }
    return s;
}

inline PathConfig path_from_string(const std::string& s) {
    PathConfig p;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        std::size_t dash = s.find('-', pos);
        std::string tok = s.substr(pos, dash == std::string::npos ? std::string::npos : dash - pos);
        if (tok.empty()) throw DataError("malformed path string '" + s + "'");
        p.rows.push_back(std::stoi(tok));
        if (dash == std::string::npos) break;
        pos = dash + 1;
    }
    if (p.rows.empty()) throw DataError("empty path string");
    return p;
}

// --- PufParams / PufInstance -------------------------------------------------

inline json to_json(const PufParams& p) {
    return json{{"n", p.n},
                {"m", p.m},
                {"nominal_delay", p.nominal_delay},
                {"sigma_process", p.sigma_process},
                {"temp_ref", p.temp_ref},
                {"temp_coeff_mean", p.temp_coeff_mean},
                {"temp_coeff_sigma", p.temp_coeff_sigma},
                {"jitter_sigma_rel", p.jitter_sigma_rel},
                {"counter_window", p.counter_window},
                {"crossing_delay", p.crossing_delay},
                {"integer_counts", p.integer_counts},
                {"seed", p.seed}};
}

inline PufParams params_from_json(const json& j) {
    PufParams p;
    p.n = j.at("n").get<int>();
    p.m = j.at("m").get<int>();
    p.nominal_delay = j.at("nominal_delay").get<double>();
    p.sigma_process = j.at("sigma_process").get<double>();
    p.temp_ref = j.at("temp_ref").get<double>();
    p.temp_coeff_mean = j.at("temp_coeff_mean").get<double>();
    p.temp_coeff_sigma = j.at("temp_coeff_sigma").get<double>();
    p.jitter_sigma_rel = j.at("jitter_sigma_rel").get<double>();
    p.counter_window = j.at("counter_window").get<double>();
    p.crossing_delay = j.value("crossing_delay", 0.0);
    p.integer_counts = j.value("integer_counts", false);
    p.seed = j.at("seed").get<std::uint64_t>();
    return p;
}

inline json to_json(const PufInstance& puf) {
    return json{{"n", puf.n()},
                {"m", puf.m()},
                {"delays", grid_rows_json(puf.delays())},
                {"temp_coeffs", grid_rows_json(puf.temp_coeffs())},
                {"params", to_json(puf.params())},
                {"fuse_intact", puf.fuse_intact()}};
}

inline PufInstance puf_from_json(const json& j) {
    Grid delays = grid_from_rows_json(j.at("delays"));
    Grid coeffs = grid_from_rows_json(j.at("temp_coeffs"));
    if (delays.n != j.at("n").get<int>() || delays.m != j.at("m").get<int>())
        throw DataError("declared dimensions disagree with the delay grid");
    PufInstance puf(std::move(delays), std::move(coeffs), params_from_json(j.at("params")));
    puf.set_fuse_state(j.at("fuse_intact").get<bool>());
    return puf;
}

// --- PredictedDelayMatrix ----------------------------------------------------

inline json to_json(const PredictedDelayMatrix& model) {
    return json{{"n", model.entries.n},
                {"m", model.entries.m},
                {"delays", grid_rows_json(model.entries)},
                {"residual_rms", model.residual_rms}};
}

inline PredictedDelayMatrix model_from_json(const json& j) {
    PredictedDelayMatrix model;
    model.entries = grid_from_rows_json(j.at("delays"));
    if (model.entries.n != j.at("n").get<int>() || model.entries.m != j.at("m").get<int>())
        throw DataError("declared dimensions disagree with the delay grid");
    model.residual_rms = j.at("residual_rms").get<double>();
    return model;
}

// --- Threshold ---------------------------------------------------------------

inline json to_json(const Threshold& t) {
    return json{{"value", t.value},
                {"margin_factor", t.margin_factor},
                {"probe", json{{"temps", t.probe.temperatures}, {"repeats", t.probe.repeats}}}};
}

inline Threshold threshold_from_json(const json& j) {
    Threshold t;
    t.value = j.at("value").get<double>();
    t.margin_factor = j.at("margin_factor").get<double>();
    t.probe.temperatures = j.at("probe").at("temps").get<std::vector<double>>();
    t.probe.repeats = j.at("probe").at("repeats").get<int>();
    if (!(t.value > 0)) throw DataError("threshold value must be positive");
    return t;
}

// --- Challenges --------------------------------------------------------------

inline json to_json(const Challenge& c) {
    return json{{"perms", c.config.perms}, {"pair", json::array({c.a, c.b})}};
}

inline Challenge challenge_from_json(const json& j) {
    Challenge c;
    c.config.perms = j.at("perms").get<std::vector<std::vector<int>>>();
    c.a = j.at("pair").at(0).get<int>();
    c.b = j.at("pair").at(1).get<int>();
    return c;
}

inline json to_json(const KeyChallenges& kc) {
    json arr = json::array();
    for (const auto& c : kc.per_bit) arr.push_back(to_json(c));
    return json{{"bits", kc.per_bit.size()}, {"challenges", std::move(arr)}};
}

inline KeyChallenges key_challenges_from_json(const json& j) {
    KeyChallenges kc;
    const json& arr = j.at("challenges");
    if (j.at("bits").get<std::size_t>() != arr.size()) throw DataError("bit count disagrees with challenge list");
    kc.per_bit.reserve(arr.size());
    for (const auto& cj : arr) kc.per_bit.push_back(challenge_from_json(cj));
    return kc;
}

// --- ReadingDataset CSV -------------------------------------------------------

inline std::string dataset_to_csv(const ReadingDataset& data) {
    std::ostringstream os;
    os.precision(17);
    os << "path,counts,temperature\n";
    for (const auto& s : data.samples)
        os << path_to_string(s.path) << ',' << s.counts << ',' << s.env.temperature << '\n';
    return os.str();
}

inline ReadingDataset dataset_from_csv(const std::string& csv, double window = 1.0) {
    ReadingDataset data;
    data.window = window;
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line) || line.rfind("path,counts,temperature", 0) != 0)
        throw DataError("missing dataset CSV header");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::size_t c1 = line.find(',');
        std::size_t c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) throw DataError("malformed dataset row: " + line);
        CounterReading r;
        r.path = path_from_string(line.substr(0, c1));
        r.counts = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        r.env.temperature = std::stod(line.substr(c2 + 1));
        if (!(r.counts > 0)) throw DataError("counts must be positive");
        data.samples.push_back(std::move(r));
    }
    if (data.samples.empty()) throw DataError("dataset has no samples");
    data.m = data.samples.front().path.stages();
    int max_row = 0;
    for (const auto& s : data.samples)
        for (int r : s.path.rows) max_row = std::max(max_row, r);
    data.n = max_row + 1;
    return data;
}

// --- files --------------------------------------------------------------------

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
}

inline json load_json_file(const std::string& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw DataError(path + ": " + e.what());
    }
}

inline void save_json_file(const std::string& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

}  // namespace cropuf
