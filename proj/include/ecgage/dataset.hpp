#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgage/common.hpp"

namespace ecgage {

/// Row-major predictor matrix with targets and provenance.
struct Dataset {
    std::vector<std::string> columns;
    std::vector<double> x;
    std::vector<double> age;           // regression target, years
    std::vector<double> smoker;        // secondary target, 0/1
    std::vector<std::string> subject_id;
    std::vector<std::string> segment_id;

    std::size_t rows() const { return age.size(); }
    std::size_t cols() const { return columns.size(); }
    std::span<const double> row(std::size_t i) const { return {x.data() + i * cols(), cols()}; }
    double at(std::size_t i, std::size_t j) const { return x[i * cols() + j]; }

    void add_row(std::span<const double> values, double age_years, double smoker_label, std::string subject,
                 std::string segment);
    std::vector<double> column(std::size_t j) const;
    std::optional<std::size_t> column_index(std::string_view name) const;
    Dataset subset(const std::vector<std::size_t>& rows) const;
    /// Keeps the named columns in the given order. Throws DataError if one is missing.
    Dataset select_columns(const std::vector<std::string>& names) const;
    /// Distinct subject ids in order of first appearance.
    std::vector<std::string> subjects() const;
};

/// CSV: predictor columns, then age_years, smoker_label, subject_id, segment_id.
std::string format_dataset(const Dataset& d);
/// Columns named age_years, smoker_label, subject_id and segment_id are
/// recognized by name; every other column is a numeric predictor. Only
/// age_years is mandatory.
Dataset parse_dataset(const std::string& text, const std::string& origin = "<text>");
Dataset load_dataset_csv(const std::string& path);
void write_dataset_csv(const std::string& path, const Dataset& d);

/// Fingerprint of the canonical CSV form.
std::string dataset_hash(const Dataset& d);

}  // namespace ecgage
