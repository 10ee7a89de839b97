// Dataset container plus the on-disk CSV layout.
//
// A sample is one CSV file with header
//
//     timestamp,price,charge_mw,discharge_mw
//
// (or `timestamp,price,net_mw`: a signed net-dispatch column that is split
// into nonnegative charge/discharge halves on load). `daily` files hold one
// T-step day at dt = 1 h; `horizon` files hold one look-ahead window at
// dt = 0.5 h. A dataset directory contains meta.json plus train/ and test/
// subdirectories of sample files; a flat directory of CSVs or a single file
// also loads.
#ifndef INVSTORE_DATASET_HPP
#define INVSTORE_DATASET_HPP

#include "invstore/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace invstore {

namespace fs = std::filesystem;
using nlohmann::json;

enum class CsvSchema { Daily, Horizon };

inline double schema_dt(CsvSchema schema) { return schema == CsvSchema::Daily ? 1.0 : 0.5; }

struct Sample {
    Vec prices;    // T, $/MWh
    Vec response;  // 2T, [p; d] MW
};

struct Dataset {
    std::vector<Sample> samples;
    Index T = 0;
    double dt = 1.0;
    json meta = json::object();

    std::size_t size() const { return samples.size(); }

    void validate() const {
        for (const Sample& s : samples) {
            require(s.prices.size() == T, "sample price length mismatch");
            require(s.response.size() == 2 * T, "sample response length mismatch");
            require(s.prices.allFinite() && s.response.allFinite(),
                    "samples must be free of NaN/Inf");
        }
    }
};

namespace detail {

// minimal civil-date helper for the synthetic timestamps
inline std::string timestamp_at(double hours_from_epoch) {
    static const int days_in_month[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    long total_minutes = static_cast<long>(hours_from_epoch * 60.0 + 0.5);
    long minutes = total_minutes % (24 * 60);
    long days = total_minutes / (24 * 60);
    int year = 2019, month = 0;
    for (;;) {
        if (days < days_in_month[month]) break;
        days -= days_in_month[month];
        if (++month == 12) {
            month = 0;
            ++year;
        }
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02ld:%02ld", year, month + 1,
                  static_cast<long>(days + 1), minutes / 60, minutes % 60);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline double parse_field(const std::string& tok, const fs::path& path, int lineno) {
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw SchemaError(path.string() + ":" + std::to_string(lineno) +
                          ": cannot parse numeric field '" + tok + "'");
    }
}

} // namespace detail

inline void write_sample_csv(const fs::path& path, const Sample& sample, double dt,
                             double start_hour = 0.0) {
    const Index T = sample.prices.size();
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot open " + path.string() + " for writing");
    out << "timestamp,price,charge_mw,discharge_mw\n";
    char buf[96];
    for (Index t = 0; t < T; ++t) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g", sample.prices[t],
                      sample.response[t], sample.response[T + t]);
        out << detail::timestamp_at(start_hour + static_cast<double>(t) * dt) << ',' << buf
            << '\n';
    }
}

inline Sample load_sample_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path.string() + ":1: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = detail::split_csv_line(line);
    bool net_schema = false;
    if (header.size() == 4 && header[1] == "price" && header[2] == "charge_mw" &&
        header[3] == "discharge_mw") {
        net_schema = false;
    } else if (header.size() == 3 && header[1] == "price" && header[2] == "net_mw") {
        net_schema = true;
    } else {
        throw SchemaError(path.string() + ":1: unrecognized header '" + line + "'");
    }

    std::vector<double> price, charge, discharge;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw SchemaError(path.string() + ":" + std::to_string(lineno) +
                              ": expected " + std::to_string(header.size()) +
                              " fields, got " + std::to_string(fields.size()));
        price.push_back(detail::parse_field(fields[1], path, lineno));
        if (net_schema) {
            const double net = detail::parse_field(fields[2], path, lineno);
            charge.push_back(std::max(net, 0.0));
            discharge.push_back(std::max(-net, 0.0));
        } else {
            charge.push_back(detail::parse_field(fields[2], path, lineno));
            discharge.push_back(detail::parse_field(fields[3], path, lineno));
        }
    }
    if (price.empty()) throw SchemaError(path.string() + ": no data rows");

    Sample s;
    const Index T = static_cast<Index>(price.size());
    s.prices = Eigen::Map<Vec>(price.data(), T);
    s.response.resize(2 * T);
    s.response.head(T) = Eigen::Map<Vec>(charge.data(), T);
    s.response.tail(T) = Eigen::Map<Vec>(discharge.data(), T);
    if (!s.prices.allFinite() || !s.response.allFinite())
        throw SchemaError(path.string() + ": NaN/Inf in data");
    return s;
}

inline Vec load_prices_csv(const fs::path& path) {
    return load_sample_csv(path).prices;
}

// Load a single file or every *.csv in a directory (sorted by name).
inline Dataset load_csv(const fs::path& path, CsvSchema schema) {
    Dataset ds;
    ds.dt = schema_dt(schema);
    std::vector<fs::path> files;
    if (fs::is_directory(path)) {
        for (const auto& entry : fs::directory_iterator(path))
            if (entry.path().extension() == ".csv") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw SchemaError("no .csv files in " + path.string());
    } else {
        files.push_back(path);
    }
    for (const fs::path& f : files) {
        Sample s = load_sample_csv(f);
        if (ds.samples.empty())
            ds.T = s.prices.size();
        else if (s.prices.size() != ds.T)
            throw SchemaError(f.string() + ": horizon differs from earlier samples");
        ds.samples.push_back(std::move(s));
    }
    ds.validate();
    return ds;
}

struct DatasetSplits {
    Dataset train;
    Dataset test;
};

inline void write_dataset(const fs::path& dir, const Dataset& train, const Dataset& test) {
    fs::create_directories(dir / "train");
    fs::create_directories(dir / "test");
    auto write_split = [&](const fs::path& sub, const Dataset& ds) {
        char name[32];
        for (std::size_t i = 0; i < ds.samples.size(); ++i) {
            std::snprintf(name, sizeof(name), "sample_%03zu.csv", i);
            write_sample_csv(sub / name, ds.samples[i], ds.dt,
                             static_cast<double>(i) * 24.0 * ds.dt);
        }
    };
    write_split(dir / "train", train);
    write_split(dir / "test", test);
    std::ofstream meta(dir / "meta.json");
    meta << train.meta.dump(2) << '\n';
}

inline DatasetSplits load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw SchemaError(dir.string() + " is not a directory");
    json meta = json::object();
    if (fs::exists(dir / "meta.json")) {
        std::ifstream in(dir / "meta.json");
        in >> meta;
    }
    const double dt = meta.value("dt", 1.0);
    const CsvSchema schema = dt == 0.5 ? CsvSchema::Horizon : CsvSchema::Daily;

    DatasetSplits splits;
    if (fs::is_directory(dir / "train")) {
        splits.train = load_csv(dir / "train", schema);
        if (fs::is_directory(dir / "test")) splits.test = load_csv(dir / "test", schema);
    } else {
        splits.train = load_csv(dir, schema);
    }
    splits.train.dt = dt;
    splits.train.meta = meta;
    splits.test.dt = dt;
    splits.test.meta = meta;
    if (splits.test.samples.empty()) splits.test.T = splits.train.T;
    return splits;
}

} // namespace invstore

#endif
