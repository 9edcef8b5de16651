#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "adaptagen/common.hpp"
#include "adaptagen/image_io.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("adaptagen-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

/// Small PNG with a seeded gradient and block pattern.
inline adaptagen::Image fixture_image(std::uint64_t seed, int size = 32) {
    adaptagen::Rng rng(seed);
    adaptagen::Image img{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size * 3)};
    const int base[3] = {static_cast<int>(rng.below(256)), static_cast<int>(rng.below(256)),
                         static_cast<int>(rng.below(256))};
    const int block = 4 + static_cast<int>(rng.below(8));
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const bool on = ((x / block) + (y / block)) % 2 == 0;
            for (int c = 0; c < 3; ++c) {
                const int v = base[c] + (on ? 40 : -40) + (x + y) * (c + 1) % 32;
                img.rgb[(static_cast<std::size_t>(y) * size + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::clamp(v, 0, 255));
            }
        }
    }
    return img;
}

/// root/<category>/img-XX.png for every category.
inline void make_fixture(const std::filesystem::path& root, const std::vector<std::string>& categories,
                         std::size_t per_category, std::uint64_t seed = 1) {
    for (const auto& cat : categories) {
        std::filesystem::create_directories(root / cat);
        for (std::size_t i = 0; i < per_category; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "img-%02zu.png", i);
            adaptagen::write_png(root / cat / name,
                                 fixture_image(adaptagen::derive_seed(seed, cat + "/" + std::to_string(i))));
        }
    }
}

}  // namespace testing
