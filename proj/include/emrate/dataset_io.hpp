#pragma once

// Dataset CSV format (see docs/FORMATS.md):
//
//   # emrate-dataset v1
//   # kind=gmm p=2 sigma=1 epsilon_miss=0 seed=42
//   # theta_star=1,0.5
//   y_0,y_1                       (gmm)
//   y,x_0,x_1                     (mlr)
//   y,x_0,x_1,mask                (rmc; mask is a 0/1 string, 1 = observed)
//
// Numbers use 17 significant digits, so write -> read -> write is byte-identical.

#include "emrate/format.hpp"
#include "emrate/model.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>

namespace emrate {

inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
    const ModelSpec& m = data.model;
    const std::size_t p = m.p();
    out << "# emrate-dataset v1\n";
    out << "# kind=" << to_string(m.kind) << " p=" << p << " sigma=" << format_double(m.sigma)
        << " epsilon_miss=" << format_double(m.epsilon_miss) << " seed=" << data.seed << '\n';
    out << "# theta_star=";
    for (std::size_t j = 0; j < p; ++j) out << (j ? "," : "") << format_double(m.theta_star[static_cast<Eigen::Index>(j)]);
    out << '\n';
    if (m.kind == ModelKind::GMM) {
        for (std::size_t j = 0; j < p; ++j) out << (j ? "," : "") << "y_" << j;
    } else {
        out << "y";
        for (std::size_t j = 0; j < p; ++j) out << ",x_" << j;
        if (m.kind == ModelKind::RMC) out << ",mask";
    }
    out << '\n';
    for (std::size_t k = 0; k < data.n(); ++k) {
        const auto row = static_cast<Eigen::Index>(k);
        if (m.kind == ModelKind::GMM) {
            for (std::size_t j = 0; j < p; ++j) out << (j ? "," : "") << format_double(data.obs(row, static_cast<Eigen::Index>(j)));
        } else {
            out << format_double(data.response[row]);
            for (std::size_t j = 0; j < p; ++j) out << ',' << format_double(data.obs(row, static_cast<Eigen::Index>(j)));
            if (m.kind == ModelKind::RMC) {
                out << ',';
                for (std::size_t j = 0; j < p; ++j) out << (data.mask(row, static_cast<Eigen::Index>(j)) != 0.0 ? '1' : '0');
            }
        }
        out << '\n';
    }
}

inline Dataset read_dataset_csv(std::istream& in) {
    std::string line;
    auto next_line = [&](const char* what) {
        if (!std::getline(in, line)) throw InvalidArgument(std::string("dataset file truncated: missing ") + what);
        if (!line.empty() && line.back() == '\r') line.pop_back();
    };
    next_line("format line");
    require(line == "# emrate-dataset v1", "not an emrate dataset file (bad first line)");
    next_line("parameter line");
    require(line.rfind("# ", 0) == 0, "malformed parameter line");
    std::map<std::string, std::string> params;
    for (const auto& token : split(line.substr(2), ' ')) {
        if (token.empty()) continue;
        const auto eq = token.find('=');
        require(eq != std::string::npos, "malformed parameter '" + token + "'");
        params[token.substr(0, eq)] = token.substr(eq + 1);
    }
    for (const char* key : {"kind", "p", "sigma", "epsilon_miss", "seed"})
        require(params.count(key) == 1, std::string("dataset header lacks ") + key);
    const ModelKind kind = parse_model_kind(params["kind"]);
    const long long p = std::stoll(params["p"]);
    require(p >= 1, "dataset p must be >= 1");
    next_line("theta_star line");
    require(line.rfind("# theta_star=", 0) == 0, "malformed theta_star line");
    const auto theta_fields = split(line.substr(13), ',');
    require(static_cast<long long>(theta_fields.size()) == p, "theta_star length does not match p");
    Vector theta(p);
    for (long long j = 0; j < p; ++j) theta[j] = parse_double(theta_fields[static_cast<std::size_t>(j)]);
    const ModelSpec model(kind, theta, parse_double(params["sigma"]), parse_double(params["epsilon_miss"]));
    const std::uint64_t seed = std::stoull(params["seed"]);
    next_line("column header");

    std::vector<Sample> samples;
    const std::size_t expected = kind == ModelKind::GMM ? p : kind == ModelKind::MLR ? p + 1 : p + 2;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split(line, ',');
        require(f.size() == expected, "dataset row " + std::to_string(samples.size() + 1) + " has " +
                                          std::to_string(f.size()) + " fields, expected " + std::to_string(expected));
        Sample s;
        s.obs.resize(p);
        if (kind == ModelKind::GMM) {
            for (long long j = 0; j < p; ++j) s.obs[j] = parse_double(f[static_cast<std::size_t>(j)]);
        } else {
            s.response = parse_double(f[0]);
            for (long long j = 0; j < p; ++j) s.obs[j] = parse_double(f[static_cast<std::size_t>(j + 1)]);
            if (kind == ModelKind::RMC) {
                const std::string& m = f.back();
                require(static_cast<long long>(m.size()) == p, "mask string length does not match p");
                s.mask.resize(p);
                for (long long j = 0; j < p; ++j) {
                    const char c = m[static_cast<std::size_t>(j)];
                    require(c == '0' || c == '1', "mask must be a 0/1 string");
                    s.mask[j] = c == '1' ? 1.0 : 0.0;
                }
            }
        }
        samples.push_back(std::move(s));
    }
    return Dataset::from_samples(model, samples, seed);
}

inline void save_dataset(const std::string& path, const Dataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    write_dataset_csv(out, data);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open dataset file " + path);
    return read_dataset_csv(in);
}

}  // namespace emrate
