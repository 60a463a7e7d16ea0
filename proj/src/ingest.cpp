#include "ecgage/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ecgage {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

bool is_nan_token(std::string_view s) {
    if (s.size() != 3) return false;
    auto lower = [](char c) { return static_cast<char>(c >= 'A' && c <= 'Z' ? c + 32 : c); };
    return lower(s[0]) == 'n' && lower(s[1]) == 'a' && lower(s[2]) == 'n';
}

std::optional<double> parse_number(std::string_view s) {
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<long long> parse_index(std::string_view s) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

}  // namespace

std::size_t EcgRecording::valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

EcgRecording parse_recording(const std::string& text, double sampling_rate_hz,
                             const std::string& subject_id, const std::string& origin) {
    if (!(sampling_rate_hz > 0.0)) throw UsageError("sampling rate must be positive");
    EcgRecording rec;
    rec.subject_id = subject_id;
    rec.sampling_rate_hz = sampling_rate_hz;

    std::optional<long long> last_index;
    std::optional<bool> indexed;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string_view line = trim(std::string_view(text).substr(pos, nl - pos));
        pos = nl + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') continue;

        std::string_view value_field = line;
        auto comma = line.find(',');
        bool has_index = comma != std::string_view::npos;
        if (indexed && *indexed != has_index)
            throw DataError(origin + ":" + std::to_string(line_no) + ": mixed indexed and bare rows");
        indexed = has_index;
        if (has_index) {
            auto idx = parse_index(trim(line.substr(0, comma)));
            value_field = trim(line.substr(comma + 1));
            if (!idx || value_field.find(',') != std::string_view::npos)
                throw DataError(origin + ":" + std::to_string(line_no) + ": malformed row '" + std::string(line) + "'");
            if (last_index && *idx != *last_index + 1)
                throw DataError(origin + ":" + std::to_string(line_no) + ": non-monotone sample index " +
                                std::to_string(*idx) + " after " + std::to_string(*last_index));
            last_index = idx;
        }
        if (is_nan_token(value_field)) {
            rec.samples.push_back(kNaN);
            rec.valid.push_back(false);
            continue;
        }
        auto v = parse_number(value_field);
        if (!v) throw DataError(origin + ":" + std::to_string(line_no) + ": malformed row '" + std::string(line) + "'");
        rec.samples.push_back(*v);
        rec.valid.push_back(true);
    }
    if (rec.samples.empty()) throw DataError(origin + ": empty recording");
    return rec;
}

EcgRecording load_recording(const std::string& path, double sampling_rate_hz) {
    auto rec = parse_recording(read_file(path), sampling_rate_hz,
                               std::filesystem::path(path).stem().string(), path);
    return rec;
}

std::string format_recording(const EcgRecording& rec) {
    std::string out;
    out.reserve(rec.samples.size() * 24);
    for (std::size_t i = 0; i < rec.samples.size(); ++i) {
        out += std::to_string(i);
        out += ',';
        out += rec.valid[i] ? format_double(rec.samples[i]) : std::string("NaN");
        out += '\n';
    }
    return out;
}

void write_recording(const std::string& path, const EcgRecording& rec) {
    write_file(path, format_recording(rec));
}

std::vector<std::string> check_metadata(const SubjectMetadata& m) {
    std::vector<std::string> errs;
    const std::string who = "subject " + m.subject_id + ": ";
    if (m.height_cm && m.weight_kg && !std::isnan(m.bmi_kg_m2)) {
        double h = *m.height_cm / 100.0;
        double bmi = *m.weight_kg / (h * h);
        if (std::abs(bmi - m.bmi_kg_m2) > kBmiTolerance)
            errs.push_back(who + "bmi_kg_m2 " + format_double(m.bmi_kg_m2) + " inconsistent with height/weight (" +
                           format_double(bmi) + ")");
    }
    if (m.height_cm && !(*m.height_cm > 0)) errs.push_back(who + "height_cm must be positive");
    if (m.weight_kg && !(*m.weight_kg > 0)) errs.push_back(who + "weight_kg must be positive");
    if (!std::isnan(m.bmi_kg_m2) && !(m.bmi_kg_m2 > 0)) errs.push_back(who + "bmi_kg_m2 must be positive");
    if (!std::isnan(m.sleep_hours) && m.sleep_hours < 0) errs.push_back(who + "sleep_hours must be non-negative");
    if (!std::isnan(m.systolic_mmhg) && !std::isnan(m.diastolic_mmhg) && !(m.systolic_mmhg > m.diastolic_mmhg))
        errs.push_back(who + "systolic_mmhg must exceed diastolic_mmhg");
    if (!std::isnan(m.resting_hr_bpm) && !(m.resting_hr_bpm > 0 && m.resting_hr_bpm < 250))
        errs.push_back(who + "resting_hr_bpm out of range (0, 250)");
    if (m.age_years <= 0) errs.push_back(who + "age_years must be positive");
    return errs;
}

namespace {

double optional_number(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return kNaN;
    return j.at(key).get<double>();
}

SubjectMetadata parse_subject(const std::string& id, const json& j, std::vector<std::string>& errs) {
    SubjectMetadata m;
    m.subject_id = id;
    const std::string who = "subject " + id + ": ";
    for (const char* key : {"age_years", "sex", "smoker"}) {
        if (!j.contains(key) || j.at(key).is_null()) errs.push_back(who + "missing mandatory field '" + key + "'");
    }
    try {
        if (j.contains("age_years") && !j.at("age_years").is_null()) m.age_years = j.at("age_years").get<int>();
        if (j.contains("sex") && !j.at("sex").is_null()) {
            auto s = j.at("sex").get<std::string>();
            if (s == "male")
                m.sex = Sex::male;
            else if (s == "female")
                m.sex = Sex::female;
            else
                errs.push_back(who + "sex must be 'male' or 'female'");
        }
        if (j.contains("smoker") && !j.at("smoker").is_null()) m.smoker = j.at("smoker").get<bool>();
        if (j.contains("height_cm") && !j.at("height_cm").is_null()) m.height_cm = j.at("height_cm").get<double>();
        if (j.contains("weight_kg") && !j.at("weight_kg").is_null()) m.weight_kg = j.at("weight_kg").get<double>();
        m.bmi_kg_m2 = optional_number(j, "bmi_kg_m2");
        if (std::isnan(m.bmi_kg_m2) && m.height_cm && m.weight_kg) {
            double h = *m.height_cm / 100.0;
            m.bmi_kg_m2 = *m.weight_kg / (h * h);
        }
        m.sleep_hours = optional_number(j, "sleep_hours");
        m.systolic_mmhg = optional_number(j, "systolic_mmhg");
        m.diastolic_mmhg = optional_number(j, "diastolic_mmhg");
        m.resting_hr_bpm = optional_number(j, "resting_hr_bpm");
        if (j.contains("family_history") && !j.at("family_history").is_null())
            m.family_history = j.at("family_history").get<bool>();
    } catch (const json::exception& e) {
        errs.push_back(who + "bad field type: " + e.what());
    }
    return m;
}

}  // namespace

std::vector<SubjectMetadata> parse_metadata(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw DataError(std::string("metadata: invalid JSON: ") + e.what());
    }
    if (!doc.contains("schema_version") || doc.at("schema_version") != kMetadataSchemaVersion)
        throw DataError("metadata: unsupported or missing schema_version");
    if (!doc.contains("subjects") || !doc.at("subjects").is_object())
        throw DataError("metadata: 'subjects' must be an object keyed by subject_id");

    std::vector<SubjectMetadata> out;
    std::vector<std::string> errs;
    for (const auto& [id, rec] : doc.at("subjects").items()) {
        std::vector<std::string> rec_errs;
        auto m = parse_subject(id, rec, rec_errs);
        if (rec_errs.empty()) rec_errs = check_metadata(m);
        errs.insert(errs.end(), rec_errs.begin(), rec_errs.end());
        out.push_back(std::move(m));
    }
    if (!errs.empty()) {
        std::string msg = "metadata validation failed:";
        for (const auto& e : errs) msg += "\n  " + e;
        throw DataError(msg);
    }
    return out;
}

std::vector<SubjectMetadata> load_metadata(const std::string& path) {
    return parse_metadata(read_file(path));
}

std::string format_metadata(const std::vector<SubjectMetadata>& records) {
    json subjects = json::object();
    auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
    for (const auto& m : records) {
        json j;
        j["age_years"] = m.age_years;
        j["sex"] = m.sex == Sex::male ? "male" : "female";
        j["smoker"] = m.smoker;
        j["height_cm"] = m.height_cm ? json(*m.height_cm) : json(nullptr);
        j["weight_kg"] = m.weight_kg ? json(*m.weight_kg) : json(nullptr);
        j["bmi_kg_m2"] = num(m.bmi_kg_m2);
        j["sleep_hours"] = num(m.sleep_hours);
        j["systolic_mmhg"] = num(m.systolic_mmhg);
        j["diastolic_mmhg"] = num(m.diastolic_mmhg);
        j["resting_hr_bpm"] = num(m.resting_hr_bpm);
        j["family_history"] = m.family_history;
        subjects[m.subject_id] = j;
    }
    json doc{{"schema_version", kMetadataSchemaVersion}, {"subjects", subjects}};
    return doc.dump(2) + "\n";
}

MetadataSummary summarize(const std::vector<SubjectMetadata>& records) {
    MetadataSummary s;
    for (const auto& m : records) {
        ++s.total;
        (m.smoker ? s.smokers : s.non_smokers)++;
        (m.sex == Sex::male ? s.male : s.female)++;
    }
    return s;
}

DatasetManifest parse_manifest(const std::string& json_text) {
    DatasetManifest m;
    try {
        auto doc = json::parse(json_text);
        m.dataset_name = doc.at("dataset_name").get<std::string>();
        m.version = doc.at("version").get<std::string>();
        m.sampling_rate_hz = doc.value("sampling_rate_hz", 100.0);
        m.metadata_path = doc.value("metadata", std::string("metadata.json"));
        for (const auto& e : doc.at("entries")) {
            m.entries.push_back({e.at("recording").get<std::string>(), e.at("subject_id").get<std::string>()});
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest: ") + e.what());
    }
    if (!(m.sampling_rate_hz > 0)) throw DataError("manifest: sampling_rate_hz must be positive");
    return m;
}

DatasetManifest load_manifest(const std::string& path) { return parse_manifest(read_file(path)); }

std::string format_manifest(const DatasetManifest& m) {
    json entries = json::array();
    for (const auto& e : m.entries) entries.push_back({{"recording", e.recording_path}, {"subject_id", e.subject_id}});
    json doc{{"dataset_name", m.dataset_name},
             {"version", m.version},
             {"sampling_rate_hz", m.sampling_rate_hz},
             {"metadata", m.metadata_path},
             {"entries", entries}};
    return doc.dump(2) + "\n";
}

namespace {

std::string join_path(const std::string& root, const std::string& rel) {
    return (std::filesystem::path(root) / rel).string();
}

bool metadata_complete(const SubjectMetadata& m) {
    for (double v : {m.bmi_kg_m2, m.sleep_hours, m.systolic_mmhg, m.diastolic_mmhg, m.resting_hr_bpm})
        if (std::isnan(v)) return false;
    return true;
}

}  // namespace

ValidationReport validate_dataset(const DatasetManifest& manifest, const std::string& data_root) {
    if (manifest.entries.empty()) throw DataError("empty dataset");
    ValidationReport report;

    std::vector<SubjectMetadata> meta;
    try {
        meta = load_metadata(join_path(data_root, manifest.metadata_path));
    } catch (const DataError& e) {
        report.errors.push_back(e.what());
    }

    std::set<std::string> seen;
    for (const auto& e : manifest.entries) {
        SubjectValidation sv;
        sv.subject_id = e.subject_id;
        if (!seen.insert(e.subject_id).second) report.errors.push_back("duplicate subject_id " + e.subject_id);
        auto n_match = std::count_if(meta.begin(), meta.end(), [&](const auto& m) { return m.subject_id == e.subject_id; });
        if (n_match == 0) {
            report.errors.push_back("dangling metadata reference: " + e.subject_id);
        } else {
            auto it = std::find_if(meta.begin(), meta.end(), [&](const auto& m) { return m.subject_id == e.subject_id; });
            sv.metadata_complete = metadata_complete(*it);
        }
        try {
            auto rec = load_recording(join_path(data_root, e.recording_path), manifest.sampling_rate_hz);
            sv.duration_s = rec.duration_s();
            sv.masked_fraction = 1.0 - static_cast<double>(rec.valid_count()) / static_cast<double>(rec.size());
            report.total_duration_s += sv.duration_s;
        } catch (const DataError& err) {
            report.errors.push_back("unreadable recording for " + e.subject_id + ": " + err.what());
        }
        report.subjects.push_back(sv);
    }
    return report;
}

LoadedDataset load_dataset(const std::string& data_root, const std::string& manifest_name) {
    LoadedDataset ds;
    ds.manifest = load_manifest(join_path(data_root, manifest_name));
    if (ds.manifest.entries.empty()) throw DataError("empty dataset");
    auto meta = load_metadata(join_path(data_root, ds.manifest.metadata_path));
    std::set<std::string> seen;
    for (const auto& e : ds.manifest.entries) {
        if (!seen.insert(e.subject_id).second) throw DataError("duplicate subject_id " + e.subject_id);
        auto it = std::find_if(meta.begin(), meta.end(), [&](const auto& m) { return m.subject_id == e.subject_id; });
        if (it == meta.end()) throw DataError("dangling metadata reference: " + e.subject_id);
        auto rec = load_recording(join_path(data_root, e.recording_path), ds.manifest.sampling_rate_hz);
        rec.subject_id = e.subject_id;
        ds.recordings.push_back(std::move(rec));
        ds.metadata.push_back(*it);
    }
    return ds;
}

}  // namespace ecgage
