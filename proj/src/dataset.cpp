#include "ecgage/dataset.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

namespace ecgage {

namespace {

const char* const kAge = "age_years";
const char* const kSmoker = "smoker_label";
const char* const kSubject = "subject_id";
const char* const kSegment = "segment_id";

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_number(const std::string& s, const std::string& where) {
    if (s == "NaN" || s == "nan" || s == "NAN") return std::nan("");
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw DataError(where + ": not a number: '" + s + "'");
    return v;
}

}  // namespace

void Dataset::add_row(std::span<const double> values, double age_years, double smoker_label, std::string subject,
                      std::string segment) {
    if (values.size() != cols()) throw DataError("row width does not match the column count");
    x.insert(x.end(), values.begin(), values.end());
    age.push_back(age_years);
    smoker.push_back(smoker_label);
    subject_id.push_back(std::move(subject));
    segment_id.push_back(std::move(segment));
}

std::vector<double> Dataset::column(std::size_t j) const {
    std::vector<double> out(rows());
    for (std::size_t i = 0; i < rows(); ++i) out[i] = at(i, j);
    return out;
}

std::optional<std::size_t> Dataset::column_index(std::string_view name) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
        if (columns[j] == name) return j;
    return std::nullopt;
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.columns = columns;
    out.x.reserve(idx.size() * cols());
    for (std::size_t i : idx) {
        auto r = row(i);
        out.x.insert(out.x.end(), r.begin(), r.end());
        out.age.push_back(age[i]);
        out.smoker.push_back(smoker[i]);
        out.subject_id.push_back(subject_id[i]);
        out.segment_id.push_back(segment_id[i]);
    }
    return out;
}

Dataset Dataset::select_columns(const std::vector<std::string>& names) const {
    std::vector<std::size_t> src;
    for (const auto& n : names) {
        auto j = column_index(n);
        if (!j) throw DataError("missing column: " + n);
        src.push_back(*j);
    }
    Dataset out;
    out.columns = names;
    out.age = age;
    out.smoker = smoker;
    out.subject_id = subject_id;
    out.segment_id = segment_id;
    out.x.reserve(rows() * names.size());
    for (std::size_t i = 0; i < rows(); ++i)
        for (std::size_t j : src) out.x.push_back(at(i, j));
    return out;
}

std::vector<std::string> Dataset::subjects() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& s : subject_id)
        if (seen.insert(s).second) out.push_back(s);
    return out;
}

std::string format_dataset(const Dataset& d) {
    std::ostringstream os;
    for (const auto& c : d.columns) os << c << ',';
    os << kAge << ',' << kSmoker << ',' << kSubject << ',' << kSegment << '\n';
    for (std::size_t i = 0; i < d.rows(); ++i) {
        for (double v : d.row(i)) os << format_double(v) << ',';
        os << format_double(d.age[i]) << ',' << format_double(d.smoker[i]) << ',' << d.subject_id[i] << ','
           << d.segment_id[i] << '\n';
    }
    return os.str();
}

Dataset parse_dataset(const std::string& text, const std::string& origin) {
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line != "\r") {
            header = split_csv(line);
            break;
        }
    }
    if (header.empty()) throw DataError(origin + ": empty feature table");

    std::optional<std::size_t> age_col, smoker_col, subject_col, segment_col;
    std::vector<std::size_t> pred_cols;
    Dataset d;
    std::set<std::string> seen;
    for (std::size_t j = 0; j < header.size(); ++j) {
        const auto& h = header[j];
        if (!seen.insert(h).second) throw DataError(origin + ": duplicate column '" + h + "'");
        if (h == kAge) age_col = j;
        else if (h == kSmoker) smoker_col = j;
        else if (h == kSubject) subject_col = j;
        else if (h == kSegment) segment_col = j;
        else {
            pred_cols.push_back(j);
            d.columns.push_back(h);
        }
    }
    if (!age_col) throw DataError(origin + ": missing column age_years");

    std::vector<double> values(pred_cols.size());
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto f = split_csv(line);
        std::string where = origin + ":" + std::to_string(line_no);
        if (f.size() != header.size())
            throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(f.size()));
        for (std::size_t k = 0; k < pred_cols.size(); ++k) values[k] = parse_number(f[pred_cols[k]], where);
        double a = parse_number(f[*age_col], where);
        double s = smoker_col ? parse_number(f[*smoker_col], where) : std::nan("");
        std::string subj = subject_col ? f[*subject_col] : "row" + std::to_string(d.rows());
        std::string seg = segment_col ? f[*segment_col] : "full";
        d.add_row(values, a, s, std::move(subj), std::move(seg));
    }
    return d;
}

Dataset load_dataset_csv(const std::string& path) { return parse_dataset(read_file(path), path); }

void write_dataset_csv(const std::string& path, const Dataset& d) { write_file(path, format_dataset(d)); }

std::string dataset_hash(const Dataset& d) { return hex64(fnv1a64(format_dataset(d))); }

}  // namespace ecgage
