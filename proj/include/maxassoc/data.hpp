/**
 * @file data.hpp
 * @brief Data matrix container and CSV ingestion.
 */

#pragma once

#include <Eigen/Dense>

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace maxassoc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Observations in rows, variables in columns.
struct DataMatrix {
    Matrix values;
    std::vector<std::string> column_names;  // empty if no header

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }

    /// Throws if the matrix is empty or contains non-finite entries.
    void validate() const {
        if (rows() < 2 || cols() < 1)
            throw std::invalid_argument("DataMatrix requires at least 2 rows and 1 column");
        for (Eigen::Index i = 0; i < rows(); ++i)
            for (Eigen::Index j = 0; j < cols(); ++j)
                if (!std::isfinite(values(i, j)))
                    throw std::invalid_argument(
                        "non-finite entry at row " + std::to_string(i + 1) +
                        ", column " + std::to_string(j + 1));
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) {
        // trim whitespace
        auto b = field.find_first_not_of(" \t\r");
        auto e = field.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline bool parse_double(const std::string& s, double& value) {
    if (s.empty()) return false;
    char* end = nullptr;
    value = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

}  // namespace detail

/// Reads a CSV with observations in rows. The first row is treated as a
/// header when any of its fields fails to parse as a number. Non-finite
/// values are rejected with their coordinates.
inline DataMatrix read_csv(std::istream& in, const std::string& origin = "<stream>") {
    std::vector<std::vector<double>> rows;
    DataMatrix out;
    std::string line;
    std::size_t lineno = 0;
    bool first = true;
    std::size_t ncols = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = detail::split_csv_line(line);
        if (first) {
            first = false;
            ncols = fields.size();
            bool all_numeric = true;
            std::vector<double> vals(fields.size());
            for (std::size_t j = 0; j < fields.size(); ++j)
                if (!detail::parse_double(fields[j], vals[j])) { all_numeric = false; break; }
            if (!all_numeric) {
                out.column_names = fields;
                continue;
            }
            for (std::size_t j = 0; j < vals.size(); ++j)
                if (!std::isfinite(vals[j]))
                    throw std::invalid_argument(origin + ": non-finite value at line " +
                                                std::to_string(lineno) + ", column " + std::to_string(j + 1));
            rows.push_back(std::move(vals));
            continue;
        }
        if (fields.size() != ncols)
            throw std::invalid_argument(origin + ": line " + std::to_string(lineno) + " has " +
                                        std::to_string(fields.size()) + " fields, expected " +
                                        std::to_string(ncols));
        std::vector<double> vals(fields.size());
        for (std::size_t j = 0; j < fields.size(); ++j) {
            if (!detail::parse_double(fields[j], vals[j]) || !std::isfinite(vals[j]))
                throw std::invalid_argument(origin + ": invalid numeric value '" + fields[j] +
                                            "' at line " + std::to_string(lineno) + ", column " +
                                            std::to_string(j + 1));
        }
        rows.push_back(std::move(vals));
    }
    if (rows.empty())
        throw std::invalid_argument(origin + ": no data rows");
    out.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ncols));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < ncols; ++j)
            out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return out;
}

inline DataMatrix read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    return read_csv(in, path);
}

inline void write_csv(std::ostream& out, const Matrix& m,
                      const std::vector<std::string>& header = {}) {
    if (!header.empty()) {
        for (std::size_t j = 0; j < header.size(); ++j)
            out << (j ? "," : "") << header[j];
        out << "\n";
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            out << (j ? "," : "") << m(i, j);
        out << "\n";
    }
}

}  // namespace maxassoc
