#include "adaptagen/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace adaptagen {

namespace fs = std::filesystem;

std::size_t DatasetManifest::record_count() const {
    std::size_t n = 0;
    for (const auto& [_, records] : categories) {
        n += records.size();
    }
    return n;
}

std::vector<ImageRecord> DatasetManifest::all_records() const {
    std::vector<ImageRecord> out;
    out.reserve(record_count());
    for (const auto& [_, records] : categories) {
        out.insert(out.end(), records.begin(), records.end());
    }
    return out;
}

std::vector<std::string> DatasetManifest::category_names() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : categories) {
        names.push_back(name);
    }
    return names;
}

bool is_image_extension(const fs::path& path) {
    static const std::set<std::string> kExtensions = {".jpg", ".jpeg", ".png", ".bmp", ".webp"};
    return kExtensions.contains(to_lower(path.extension().string()));
}

DatasetManifest scan_dataset(const fs::path& root) {
    if (!fs::exists(root)) {
        throw Error("dataset root does not exist: " + root.string());
    }
    if (!fs::is_directory(root)) {
        throw Error("dataset root is not a directory: " + root.string());
    }

    std::vector<fs::path> category_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) {
            category_dirs.push_back(entry.path());
        }
    }
    if (category_dirs.empty()) {
        throw Error("no categories found under " + root.string());
    }
    std::sort(category_dirs.begin(), category_dirs.end());

    DatasetManifest manifest;
    manifest.root = root;
    std::vector<std::string> empty_categories;
    for (const auto& dir : category_dirs) {
        const std::string category = dir.filename().string();
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && is_image_extension(entry.path())) {
                files.push_back(entry.path().filename());
            }
        }
        if (files.empty()) {
            empty_categories.push_back(category);
            continue;
        }
        std::sort(files.begin(), files.end());

        auto& records = manifest.categories[category];
        std::set<std::string> seen_ids;
        for (const auto& file : files) {
            ImageRecord record;
            record.category = category;
            record.image_id = category + "/" + file.stem().string();
            record.path = fs::path(category) / file;
            if (!seen_ids.insert(record.image_id).second) {
                // a.jpg and a.png collide on the stem
                throw Error("duplicate image_id " + record.image_id + " in category " + category);
            }
            records.push_back(std::move(record));
        }
    }
    if (!empty_categories.empty()) {
        throw Error("category directories with no images: " + join(empty_categories, ", "));
    }
    return manifest;
}

DatasetManifest sample_per_category(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed) {
    if (k == 0) {
        throw Error("sample_per_category: k must be positive");
    }
    for (const auto& [category, records] : manifest.categories) {
        if (records.size() < k) {
            throw Error("category " + category + " has " + std::to_string(records.size()) +
                        " images, fewer than the requested " + std::to_string(k));
        }
    }

    DatasetManifest out;
    out.root = manifest.root;
    out.seed = seed;
    out.per_category_count = k;
    for (const auto& [category, records] : manifest.categories) {
        std::vector<std::size_t> index(records.size());
        std::iota(index.begin(), index.end(), std::size_t{0});
        Rng rng(derive_seed(seed, "dataset.sample/" + category));
        // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(index.size() - i));
            std::swap(index[i], index[j]);
        }
        index.resize(k);
        std::sort(index.begin(), index.end());

        auto& chosen = out.categories[category];
        chosen.reserve(k);
        for (std::size_t i : index) {
            chosen.push_back(records[i]);
        }
    }
    return out;
}

json manifest_to_json(const DatasetManifest& manifest) {
    json categories = json::object();
    for (const auto& [category, records] : manifest.categories) {
        json list = json::array();
        for (const auto& r : records) {
            list.push_back({{"image_id", r.image_id}, {"path", r.path.generic_string()}});
        }
        categories[category] = std::move(list);
    }
    json doc;
    doc["root"] = manifest.root.generic_string();
    doc["seed"] = manifest.seed;
    doc["per_category_count"] =
        manifest.per_category_count ? json(*manifest.per_category_count) : json(nullptr);
    doc["categories"] = std::move(categories);
    return doc;
}

DatasetManifest manifest_from_json(const json& doc) {
    DatasetManifest manifest;
    try {
        manifest.root = doc.at("root").get<std::string>();
        manifest.seed = doc.at("seed").get<std::uint64_t>();
        const auto& count = doc.at("per_category_count");
        if (!count.is_null()) {
            manifest.per_category_count = count.get<std::size_t>();
        }
        std::set<std::string> seen;
        for (const auto& [category, list] : doc.at("categories").items()) {
            auto& records = manifest.categories[category];
            for (const auto& item : list) {
                ImageRecord r;
                r.category = category;
                r.image_id = item.at("image_id").get<std::string>();
                r.path = item.at("path").get<std::string>();
                if (!seen.insert(r.image_id).second) {
                    throw Error("duplicate image_id in manifest: " + r.image_id);
                }
                records.push_back(std::move(r));
            }
        }
    } catch (const json::exception& e) {
        throw Error(std::string("malformed manifest: ") + e.what());
    }
    return manifest;
}

std::string canonical_manifest(const DatasetManifest& manifest) { return manifest_to_json(manifest).dump(); }

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
    write_json(path, manifest_to_json(manifest));
}

DatasetManifest read_manifest(const fs::path& path) { return manifest_from_json(read_json(path)); }

}  // namespace adaptagen
