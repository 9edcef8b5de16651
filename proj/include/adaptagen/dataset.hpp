#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adaptagen/common.hpp"

namespace adaptagen {

/// One training image. `path` is relative to the dataset root.
struct ImageRecord {
    std::string image_id;  // "<category>/<filename-stem>"
    std::string category;
    std::filesystem::path path;

    bool operator==(const ImageRecord&) const = default;
};

/// Category-grouped image listing. Categories iterate in lexicographic order
/// and records within a category stay in canonical (lexicographic) order.
struct DatasetManifest {
    std::filesystem::path root;
    std::uint64_t seed = 0;
    /// Unset until sample_per_category() has run.
    std::optional<std::size_t> per_category_count;
    std::map<std::string, std::vector<ImageRecord>> categories;
    /// In-memory only; not part of the canonical serialization.
    std::chrono::system_clock::time_point created_at = std::chrono::system_clock::now();

    std::size_t record_count() const;
    std::vector<ImageRecord> all_records() const;
    std::vector<std::string> category_names() const;
    std::filesystem::path absolute_path(const ImageRecord& record) const { return root / record.path; }
};

bool is_image_extension(const std::filesystem::path& path);

/// Walks root/<category>/<image files>. Throws on a missing root, an empty
/// root, or any category directory without image files.
DatasetManifest scan_dataset(const std::filesystem::path& root);

/// Seeded uniform sampling without replacement, k records per category.
/// Each category draws from its own stream derived from (seed, category), and
/// the chosen records keep their canonical order.
DatasetManifest sample_per_category(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed);

json manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const json& doc);
/// Sorted-key compact JSON; byte-identical for identical manifests.
std::string canonical_manifest(const DatasetManifest& manifest);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace adaptagen
