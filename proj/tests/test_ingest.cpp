#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ecgage/ingest.hpp"
#include "oracles.hpp"

using namespace ecgage;

namespace {

std::string meta_doc(const std::string& subjects) {
    return R"({"schema_version": 1, "subjects": {)" + subjects + "}}";
}

const char* kGood = R"("s01": {"age_years": 24, "sex": "female", "smoker": true, "height_cm": 170,
    "weight_kg": 65, "bmi_kg_m2": 22.5, "sleep_hours": 7, "systolic_mmhg": 120, "diastolic_mmhg": 80,
    "resting_hr_bpm": 70, "family_history": false})";

void expect_data_error(const std::function<void()>& fn, const std::string& needle) {
    try {
        fn();
        FAIL("expected DataError containing: " << needle);
    } catch (const DataError& e) {
        CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
}

}  // namespace

TEST_CASE("bare and indexed recordings parse to the same samples") {
    auto a = parse_recording("0.1\n0.2\nNaN\n-0.4\n", 100.0, "x");
    auto b = parse_recording("# header\n0,0.1\n1,0.2\n2,nan\n\n3,-0.4\n", 100.0, "x");
    REQUIRE(a.size() == 4);
    REQUIRE(b.size() == 4);
    CHECK(a.valid == b.valid);
    CHECK(a.valid == std::vector<bool>{true, true, false, true});
    CHECK(a.samples[3] == -0.4);
    CHECK(b.samples[1] == 0.2);
    CHECK(a.valid_count() == 3);
    CHECK(a.duration_s() == doctest::Approx(0.04));
}

TEST_CASE("recording format errors") {
    expect_data_error([] { parse_recording("", 100.0); }, "empty recording");
    expect_data_error([] { parse_recording("# only comments\n\n", 100.0); }, "empty recording");
    expect_data_error([] { parse_recording("0,1\n2\n", 100.0); }, "mixed indexed and bare rows");
    expect_data_error([] { parse_recording("1\nabc\n", 100.0, "", "f.csv"); }, "f.csv:2: malformed row");
    expect_data_error([] { parse_recording("0,1\n2,1\n", 100.0); }, "non-monotone sample index");
    expect_data_error([] { parse_recording("1,1\n0,1\n", 100.0); }, "non-monotone sample index");
    CHECK_THROWS_AS(parse_recording("1\n", 0.0), UsageError);
}

TEST_CASE("recording round-trips through its text form") {
    std::mt19937_64 gen(4);
    std::normal_distribution<double> nd;
    EcgRecording rec;
    rec.sampling_rate_hz = 100.0;
    for (int i = 0; i < 500; ++i) {
        bool ok = i % 37 != 5;
        rec.samples.push_back(ok ? nd(gen) : std::nan(""));
        rec.valid.push_back(ok);
    }
    oracle::TempDir dir("ingest");
    write_recording(dir.str("s.csv"), rec);
    auto back = load_recording(dir.str("s.csv"), 100.0);
    CHECK(back.subject_id == "s");
    CHECK(back.valid == rec.valid);
    for (std::size_t i = 0; i < rec.size(); ++i)
        if (rec.valid[i]) CHECK(back.samples[i] == rec.samples[i]);
    CHECK(format_recording(back) == format_recording(rec));
}

TEST_CASE("metadata parses and round-trips") {
    auto m = parse_metadata(meta_doc(kGood));
    REQUIRE(m.size() == 1);
    CHECK(m[0].subject_id == "s01");
    CHECK(m[0].age_years == 24);
    CHECK(m[0].sex == Sex::female);
    CHECK(m[0].smoker);
    CHECK(m[0].bmi_kg_m2 == 22.5);
    auto again = parse_metadata(format_metadata(m));
    CHECK(format_metadata(again) == format_metadata(m));
    auto s = summarize(m);
    CHECK(s.total == 1);
    CHECK(s.smokers == 1);
    CHECK(s.female == 1);
}

TEST_CASE("bmi is derived from height and weight when absent") {
    auto m = parse_metadata(meta_doc(R"("a": {"age_years": 20, "sex": "male", "smoker": false,
        "height_cm": 200, "weight_kg": 80})"));
    CHECK(m[0].bmi_kg_m2 == doctest::Approx(20.0));
    CHECK(std::isnan(m[0].sleep_hours));
}

TEST_CASE("metadata errors are aggregated into one report") {
    const std::string bad = R"("a": {"sex": "male", "smoker": false},
        "b": {"age_years": 30, "sex": "other", "smoker": false},
        "c": {"age_years": 30, "sex": "male", "smoker": false, "height_cm": 180, "weight_kg": 81, "bmi_kg_m2": 30},
        "d": {"age_years": 30, "sex": "male", "smoker": false, "systolic_mmhg": 70, "diastolic_mmhg": 80})";
    try {
        parse_metadata(meta_doc(bad));
        FAIL("expected DataError");
    } catch (const DataError& e) {
        std::string msg = e.what();
        CHECK(msg.find("subject a: missing mandatory field 'age_years'") != std::string::npos);
        CHECK(msg.find("subject b: sex must be") != std::string::npos);
        CHECK(msg.find("subject c: bmi_kg_m2") != std::string::npos);
        CHECK(msg.find("subject d: systolic_mmhg must exceed") != std::string::npos);
    }
    expect_data_error([] { parse_metadata("{"); }, "invalid JSON");
    expect_data_error([] { parse_metadata(R"({"subjects": {}})"); }, "schema_version");
}

TEST_CASE("dataset validation and loading") {
    oracle::TempDir dir("ingest_ds");
    DatasetManifest man;
    man.dataset_name = "t";
    man.version = "1";
    man.metadata_path = "metadata.json";
    man.entries = {{"recordings/s01.csv", "s01"}};
    write_file(dir.str("manifest.json"), format_manifest(man));
    write_file(dir.str("metadata.json"), meta_doc(kGood));
    write_file(dir.str("recordings/s01.csv"), "0,1\n1,NaN\n2,3\n3,4\n");
    auto rep = validate_dataset(load_manifest(dir.str("manifest.json")), dir.str());
    CHECK(rep.ok());
    REQUIRE(rep.subjects.size() == 1);
    CHECK(rep.subjects[0].duration_s == doctest::Approx(0.04));
    CHECK(rep.subjects[0].masked_fraction == doctest::Approx(0.25));
    CHECK(rep.subjects[0].metadata_complete);
    auto ds = load_dataset(dir.str());
    CHECK(ds.recordings.size() == 1);
    CHECK(ds.metadata[0].subject_id == "s01");

    SUBCASE("dangling and duplicate references") {
        man.entries.push_back({"recordings/s01.csv", "s01"});
        man.entries.push_back({"recordings/s01.csv", "zz"});
        write_file(dir.str("manifest.json"), format_manifest(man));
        auto r = validate_dataset(man, dir.str());
        CHECK_FALSE(r.ok());
        bool dup = false, dangling = false;
        for (const auto& e : r.errors) {
            dup = dup || e.find("duplicate subject_id") != std::string::npos;
            dangling = dangling || e.find("dangling metadata reference") != std::string::npos;
        }
        CHECK(dup);
        CHECK(dangling);
        CHECK_THROWS_AS(load_dataset(dir.str()), DataError);
    }
    SUBCASE("empty manifest") {
        man.entries.clear();
        expect_data_error([&] { validate_dataset(man, dir.str()); }, "empty dataset");
    }
}
