#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "losses.hpp"
#include "model_space.hpp"

namespace sgic::io {

using json = nlohmann::json;

/// Fixed 12-significant-digit formatting used for every CSV cell.
inline std::string fmt(double v) {
    if (!std::isfinite(v))
        throw std::domain_error("refusing to format a non-finite number");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v == 0.0 ? 0.0 : v);
    return buf;
}

inline std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError(path, "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline json read_json_file(const std::string &path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error &e) {
        throw ConfigError(path, std::string("invalid JSON: ") + e.what());
    }
}

inline void write_file(const std::string &path, const std::string &contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ConfigError(path, "cannot write file");
    out << contents;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string &line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

inline std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos)
        return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

} // namespace detail

/// Tabular CSV: header row, covariate columns x1..xp followed by y.
inline TabularData parse_csv(const std::string &text, Family family,
                             const std::string &origin = "<csv>") {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        throw InvalidShape(origin + ": empty file, expected header x1..xp,y");
    const auto header = detail::split_csv_line(line);
    const Index cols = static_cast<Index>(header.size());
    if (cols < 2 || detail::trim(header.back()) != "y")
        throw InvalidShape(origin + ": expected header x1..xp,y with y last");
    std::vector<std::vector<double>> rows;
    Index lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty())
            continue;
        const auto cells = detail::split_csv_line(line);
        if (static_cast<Index>(cells.size()) != cols)
            throw InvalidShape(origin + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(cols) + " columns (x1..x" +
                               std::to_string(cols - 1) + ",y), got " +
                               std::to_string(cells.size()));
        std::vector<double> row;
        for (const auto &c : cells) {
            try {
                std::size_t used = 0;
                const std::string t = detail::trim(c);
                row.push_back(std::stod(t, &used));
                if (used != t.size())
                    throw std::invalid_argument(c);
            } catch (const std::exception &) {
                throw InvalidShape(origin + ":" + std::to_string(lineno) +
                                   ": non-numeric cell '" + c + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty())
        throw InvalidShape(origin + ": no data rows");
    TabularData d;
    d.family = family;
    d.X.resize(static_cast<Index>(rows.size()), cols - 1);
    d.y.resize(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (Index j = 0; j + 1 < cols; ++j)
            d.X(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
        d.y(static_cast<Index>(i)) = rows[i].back();
    }
    try {
        validate(Dataset{d});
    } catch (const std::exception &e) {
        throw InvalidShape(origin + ": " + e.what());
    }
    return d;
}

inline TabularData read_csv(const std::string &path, Family family) {
    return parse_csv(read_file(path), family, path);
}

inline std::string to_csv(const TabularData &d) {
    std::string out;
    for (Index j = 0; j < d.X.cols(); ++j)
        out += "x" + std::to_string(j + 1) + ",";
    out += "y\n";
    for (Index i = 0; i < d.X.rows(); ++i) {
        for (Index j = 0; j < d.X.cols(); ++j)
            out += fmt(d.X(i, j)) + ",";
        out += fmt(d.y(i)) + "\n";
    }
    return out;
}

/// Matrix-regression container {"p1", "p2", "X": [[...]], "y": [...]} with
/// each X_i flattened row-major.
inline MatrixRegData matrix_data_from_json(const json &j, const std::string &origin = "<json>") {
    MatrixRegData d;
    try {
        d.p1 = j.at("p1").get<Index>();
        d.p2 = j.at("p2").get<Index>();
        const auto &X = j.at("X");
        const auto &y = j.at("y");
        const Index n = static_cast<Index>(y.size());
        if (static_cast<Index>(X.size()) != n)
            throw InvalidShape("X has " + std::to_string(X.size()) + " entries but y has " +
                               std::to_string(n));
        d.design.resize(n, d.p1 * d.p2);
        d.y.resize(n);
        for (Index i = 0; i < n; ++i) {
            const auto &row = X.at(static_cast<std::size_t>(i));
            if (static_cast<Index>(row.size()) != d.p1 * d.p2)
                throw InvalidShape("X[" + std::to_string(i) + "] must have p1*p2 = " +
                                   std::to_string(d.p1 * d.p2) + " entries");
            for (Index a = 0; a < d.p1; ++a)
                for (Index b = 0; b < d.p2; ++b)
                    d.design(i, b * d.p1 + a) =
                        row.at(static_cast<std::size_t>(a * d.p2 + b)).get<double>();
            d.y(i) = y.at(static_cast<std::size_t>(i)).get<double>();
        }
        validate(Dataset{d});
    } catch (const json::exception &e) {
        throw InvalidShape(origin + ": expected {\"p1\",\"p2\",\"X\",\"y\"}: " + e.what());
    } catch (const std::exception &e) {
        throw InvalidShape(origin + ": " + e.what());
    }
    return d;
}

inline json to_json(const MatrixRegData &d) {
    json X = json::array();
    for (Index i = 0; i < d.design.rows(); ++i) {
        json row = json::array();
        for (Index a = 0; a < d.p1; ++a)
            for (Index b = 0; b < d.p2; ++b)
                row.push_back(d.design(i, b * d.p1 + a));
        X.push_back(std::move(row));
    }
    return json{{"p1", d.p1}, {"p2", d.p2}, {"X", std::move(X)},
                {"y", std::vector<double>(d.y.data(), d.y.data() + d.y.size())}};
}

/// Group file: {"groups": [[0, 1], [2, 3], ...]} with 0-based column indices.
inline GroupPartition read_groups_file(const std::string &path) {
    const json j = read_json_file(path);
    try {
        return GroupPartition::from_groups(
            j.at("groups").get<std::vector<std::vector<Index>>>());
    } catch (const json::exception &e) {
        throw ConfigError(path, std::string("expected {\"groups\": [[int]]}: ") + e.what());
    } catch (const std::invalid_argument &e) {
        throw ConfigError(path, e.what());
    }
}

inline json matrix_to_json(const Mat &m) {
    json out = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Index j = 0; j < m.cols(); ++j)
            row.push_back(m(i, j));
        out.push_back(std::move(row));
    }
    return out;
}

inline Mat matrix_from_json(const json &j, Index rows_if_empty) {
    const Index rows = static_cast<Index>(j.size());
    if (rows == 0)
        return Mat(rows_if_empty, 0);
    const Index cols = static_cast<Index>(j.at(0).size());
    Mat m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        if (static_cast<Index>(j.at(static_cast<std::size_t>(i)).size()) != cols)
            throw InvalidShape("ragged matrix in JSON");
        for (Index c = 0; c < cols; ++c)
            m(i, c) = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

/// {"variant": "group", "S": [...]} (0-based group indices) or
/// {"variant": "lowrank", "r": r, "U": [[...]], "V": [[...]]}.
inline json to_json(const ModelSubspace &M) {
    if (M.is_group())
        return json{{"variant", "group"}, {"S", M.group_support().S}};
    const auto &lr = M.low_rank();
    return json{{"variant", "lowrank"},
                {"r", lr.rank()},
                {"U", matrix_to_json(lr.U)},
                {"V", matrix_to_json(lr.V)}};
}

/// Inverse of to_json. Group subspaces need the partition they index into;
/// low-rank subspaces need (p1, p2) only when r = 0.
inline ModelSubspace model_from_json(const json &j, const PartitionPtr &partition,
                                     Index p1 = 0, Index p2 = 0) {
    const std::string variant = j.at("variant").get<std::string>();
    if (variant == "group") {
        if (!partition)
            throw std::invalid_argument("model_from_json: group variant needs a partition");
        return ModelSubspace::group(partition, j.at("S").get<std::vector<Index>>());
    }
    if (variant == "lowrank") {
        const Index r = j.at("r").get<Index>();
        Mat U = matrix_from_json(j.at("U"), p1);
        Mat V = matrix_from_json(j.at("V"), p2);
        if (r == 0)
            return ModelSubspace::zero_rank(p1, p2);
        if (U.cols() != r || V.cols() != r)
            throw InvalidShape("model_from_json: U, V must have r columns");
        return ModelSubspace::low_rank(std::move(U), std::move(V));
    }
    throw std::invalid_argument("model_from_json: unknown variant '" + variant + "'");
}

} // namespace sgic::io
