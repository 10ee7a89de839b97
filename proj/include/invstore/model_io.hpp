// Versioned JSON persistence for identified models.
#ifndef INVSTORE_MODEL_IO_HPP
#define INVSTORE_MODEL_IO_HPP

#include "invstore/common.hpp"
#include "invstore/icnn.hpp"
#include "invstore/storage_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

namespace invstore {

#ifndef INVSTORE_VERSION
#define INVSTORE_VERSION "0.0.0"
#endif

struct PersistedModel {
    std::string kind;  // quadratic | soc | generic | equality
    StorageParams params;
    double soc_c1 = 0.0;  // soc kind: weight on the normalized SoC deviation
    std::optional<IcnnModel> icnn;
    // equality regime
    double alpha = 0.0;
    Vec eq_b;
    Mat eq_A;
};

namespace detail {

inline json mat_to_json(const Mat& m) {
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i)
        rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
    return rows;
}

inline Mat mat_from_json(const json& j) {
    const Index rows = static_cast<Index>(j.size());
    if (rows == 0) return Mat(0, 0);
    const Index cols = static_cast<Index>(j[0].size());
    Mat m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    return m;
}

inline json vec_to_json(const Vec& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline Vec vec_from_json(const json& j) {
    Vec v(static_cast<Index>(j.size()));
    for (Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
    return v;
}

} // namespace detail

inline json icnn_to_json(const IcnnModel& m) {
    json j;
    j["mode"] = m.mode == IcnnMode::Scalar ? "scalar" : "vector";
    j["T"] = m.T;
    j["hidden"] = m.hidden;
    j["input_scale"] = m.input_scale;
    j["W0"] = detail::mat_to_json(m.W0);
    j["Wz"] = detail::mat_to_json(m.Wz);
    j["Wy"] = detail::mat_to_json(m.Wy);
    j["b0"] = detail::vec_to_json(m.b0);
    j["b1"] = detail::vec_to_json(m.b1);
    j["vz"] = detail::vec_to_json(m.vz);
    j["vy"] = detail::vec_to_json(m.vy);
    j["b2"] = m.b2;
    return j;
}

inline IcnnModel icnn_from_json(const json& j) {
    IcnnModel m;
    m.mode = j.at("mode") == "scalar" ? IcnnMode::Scalar : IcnnMode::Vector;
    m.T = j.at("T").get<Index>();
    m.hidden = j.at("hidden").get<Index>();
    m.input_scale = j.at("input_scale").get<double>();
    m.W0 = detail::mat_from_json(j.at("W0"));
    m.Wz = detail::mat_from_json(j.at("Wz"));
    m.Wy = detail::mat_from_json(j.at("Wy"));
    m.b0 = detail::vec_from_json(j.at("b0"));
    m.b1 = detail::vec_from_json(j.at("b1"));
    m.vz = detail::vec_from_json(j.at("vz"));
    m.vy = detail::vec_from_json(j.at("vy"));
    m.b2 = j.at("b2").get<double>();
    return m;
}

inline json model_to_json(const PersistedModel& m) {
    json j;
    j["format"] = "invstore-model";
    j["version"] = 1;
    j["tool_version"] = INVSTORE_VERSION;
    j["model"] = m.kind;
    const StorageParams& s = m.params;
    j["c1"] = s.c1;
    j["c2"] = s.c2;
    j["eta_sq"] = s.eta_sq;
    j["e_min_shift"] = s.e_min_shift;
    j["e_max_shift"] = s.e_max_shift;
    j["p_min"] = s.p_min;
    j["p_max"] = s.p_max;
    j["e0"] = s.e0;
    j["T"] = s.T;
    j["dt"] = s.dt;
    if (m.kind == "soc") j["soc_c1"] = m.soc_c1;
    if (m.icnn) j["icnn"] = icnn_to_json(*m.icnn);
    if (m.kind == "equality") {
        j["equality"] = {{"alpha", m.alpha},
                         {"b", detail::vec_to_json(m.eq_b)},
                         {"A", detail::mat_to_json(m.eq_A)}};
    }
    return j;
}

inline void save_model(const std::filesystem::path& path, const PersistedModel& m) {
    std::ofstream out(path);
    if (!out) throw ModelLoadError("cannot open " + path.string() + " for writing");
    out << model_to_json(m).dump(2) << '\n';
}

inline PersistedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ModelLoadError("cannot open model file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ModelLoadError(path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "invstore-model")
        throw ModelLoadError(path.string() + ": not an invstore model file");

    PersistedModel m;
    try {
        m.kind = j.at("model").get<std::string>();
        StorageParams& s = m.params;
        s.c1 = j.at("c1").get<double>();
        s.c2 = j.at("c2").get<double>();
        s.eta_sq = j.at("eta_sq").get<double>();
        s.e_min_shift = j.at("e_min_shift").get<double>();
        s.e_max_shift = j.at("e_max_shift").get<double>();
        s.p_min = j.at("p_min").get<double>();
        s.p_max = j.at("p_max").get<double>();
        s.e0 = j.at("e0").get<double>();
        s.T = j.at("T").get<Index>();
        s.dt = j.at("dt").get<double>();
        m.soc_c1 = j.value("soc_c1", 0.0);
        if (j.contains("icnn")) m.icnn = icnn_from_json(j.at("icnn"));
        if (j.contains("equality")) {
            m.alpha = j.at("equality").at("alpha").get<double>();
            m.eq_b = detail::vec_from_json(j.at("equality").at("b"));
            m.eq_A = detail::mat_from_json(j.at("equality").at("A"));
        }
    } catch (const json::exception& e) {
        throw ModelLoadError(path.string() + ": malformed model: " + e.what());
    }
    return m;
}

} // namespace invstore

#endif
