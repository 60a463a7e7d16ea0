#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ecgage/common.hpp"

namespace ecgage {

/// Raw single-lead trace. valid[i] is false for samples logged as NaN.
struct EcgRecording {
    std::string subject_id;
    double sampling_rate_hz = 100.0;
    std::vector<double> samples;
    std::vector<bool> valid;

    std::size_t size() const { return samples.size(); }
    double duration_s() const { return static_cast<double>(samples.size()) / sampling_rate_hz; }
    std::size_t valid_count() const;
};

enum class Sex { female = 0, male = 1 };

struct SubjectMetadata {
    std::string subject_id;
    int age_years = 0;
    Sex sex = Sex::male;
    bool smoker = false;
    std::optional<double> height_cm;
    std::optional<double> weight_kg;
    double bmi_kg_m2 = 0.0;
    double sleep_hours = 0.0;
    double systolic_mmhg = 0.0;
    double diastolic_mmhg = 0.0;
    double resting_hr_bpm = 0.0;
    bool family_history = false;
};

/// Numeric codes used when sex enters the feature matrix.
struct SexEncoding {
    double male = 1.0;
    double female = 0.0;
    double encode(Sex s) const { return s == Sex::male ? male : female; }
};

struct MetadataSummary {
    std::size_t total = 0;
    std::size_t smokers = 0;
    std::size_t non_smokers = 0;
    std::size_t male = 0;
    std::size_t female = 0;
};

struct ManifestEntry {
    std::string recording_path;  // relative to the dataset root
    std::string subject_id;
};

struct DatasetManifest {
    std::string dataset_name;
    std::string version;
    double sampling_rate_hz = 100.0;
    std::string metadata_path;  // relative to the dataset root
    std::vector<ManifestEntry> entries;
};

constexpr int kMetadataSchemaVersion = 1;
constexpr double kBmiTolerance = 0.5;

/// Parses the recording text format: one sample per line, either a bare
/// value or "index,value". A case-insensitive NaN token marks the sample
/// invalid. Blank lines and lines starting with '#' are ignored.
EcgRecording parse_recording(const std::string& text, double sampling_rate_hz,
                             const std::string& subject_id = {}, const std::string& origin = "<text>");
EcgRecording load_recording(const std::string& path, double sampling_rate_hz);
std::string format_recording(const EcgRecording& rec);
void write_recording(const std::string& path, const EcgRecording& rec);

/// Checks the SubjectMetadata invariants; returns one message per violation.
std::vector<std::string> check_metadata(const SubjectMetadata& m);

std::vector<SubjectMetadata> parse_metadata(const std::string& json_text);
std::vector<SubjectMetadata> load_metadata(const std::string& path);
std::string format_metadata(const std::vector<SubjectMetadata>& records);
MetadataSummary summarize(const std::vector<SubjectMetadata>& records);

DatasetManifest parse_manifest(const std::string& json_text);
DatasetManifest load_manifest(const std::string& path);
std::string format_manifest(const DatasetManifest& manifest);

struct SubjectValidation {
    std::string subject_id;
    double duration_s = 0.0;
    double masked_fraction = 0.0;
    bool metadata_complete = false;
};

struct ValidationReport {
    std::vector<SubjectValidation> subjects;
    std::vector<std::string> errors;
    double total_duration_s = 0.0;

    bool ok() const { return errors.empty(); }
};

/// Resolves every manifest entry under data_root and reports per-subject
/// duration, masked fraction and metadata completeness. Problems are
/// collected as error items; an empty manifest throws.
ValidationReport validate_dataset(const DatasetManifest& manifest, const std::string& data_root);

/// A manifest joined with its metadata, recordings loaded.
struct LoadedDataset {
    DatasetManifest manifest;
    std::vector<EcgRecording> recordings;
    std::vector<SubjectMetadata> metadata;  // aligned with recordings
};

LoadedDataset load_dataset(const std::string& data_root, const std::string& manifest_name = "manifest.json");

}  // namespace ecgage
