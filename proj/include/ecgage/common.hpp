#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ecgage {

/// Input data is malformed, missing or inconsistent. Maps to CLI exit code 3.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical routine could not produce a meaningful result. Maps to CLI exit code 4.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad invocation or configuration. Maps to CLI exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Counter-based pseudo-random stream.
///
/// Every draw is a pure function of (key, counter), so a stream keyed by
/// (seed, tree_index) yields the same values no matter which thread or in
/// which order it is consumed. Bounded integers and normals are derived
/// without std distributions so results do not depend on the standard
/// library implementation.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound);
    /// Standard normal (Box-Muller, one value per pair of uniforms).
    double normal();

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent sub-seed, e.g. for a per-subject or per-tree stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// 64-bit FNV-1a; used for dataset and config fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

double mean(std::span<const double> x);
/// Population standard deviation (divides by n).
double pstdev(std::span<const double> x);
/// Sample standard deviation (divides by n - 1).
double sstdev(std::span<const double> x);
/// Median of a copy of x. Empty input yields NaN.
double median(std::vector<double> x);

/// Shortest text form of a double that parses back to the same bits.
std::string format_double(double v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace ecgage
