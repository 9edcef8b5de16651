#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace adaptagen {

using json = nlohmann::json;

/// Base error for every failure raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Stable hashing and seed derivation
// ---------------------------------------------------------------------------

/// 64-bit FNV-1a followed by a splitmix64 finalizer. Stable across platforms
/// and releases; never change the constants.
std::uint64_t stable_hash(std::string_view bytes);

/// 32-bit stable hash (upper half folded into lower half of stable_hash).
std::uint32_t stable_hash32(std::string_view bytes);

/// Derive an independent stream seed from a parent seed and a site name.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view site);

/// Seeded generator with platform-independent distributions.
///
/// std::uniform_real_distribution and friends are implementation-defined, so
/// every draw is built here directly from mt19937_64 output bits.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform01();
    /// Uniform in [lo, hi].
    double uniform(double lo, double hi);
    /// Unbiased integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound);
    /// Standard normal via Box-Muller.
    double gaussian();

    std::string state() const;

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Digests
// ---------------------------------------------------------------------------

class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::span<const std::uint8_t> bytes);
    void update(std::string_view text);
    std::vector<std::uint8_t> finish();
    std::string finish_hex();

private:
    void* ctx_;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file_hex(const std::filesystem::path& path);

std::string to_hex(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

std::string trim(std::string_view text);
std::string to_lower(std::string_view text);
/// Lowercased alphanumeric runs of `text`.
std::vector<std::string> word_tokens(std::string_view text);
/// Lowercase, strip punctuation, collapse whitespace.
std::string normalize_text(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never observe
/// a partial file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

/// One JSON document per line, keys sorted.
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);
std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& doc);
json read_json(const std::filesystem::path& path);

}  // namespace adaptagen
