#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adaptagen/common.hpp"
#include "adaptagen/image_io.hpp"

namespace adaptagen {

/// Inputs to one generator call: prompt, steps n, guidance omega, LoRA scale s.
struct GenerationRequest {
    std::string prompt_id;
    std::string category;
    std::string prompt;
    int steps = 30;
    double guidance = 7.5;
    double lora_scale = 1.0;
    std::uint64_t seed = 0;
    int width = 512;
    int height = 512;

    void validate() const;
};

json request_to_json(const GenerationRequest& request);

/// A trained adapter handed to the generator by reference.
struct AdapterRef {
    std::filesystem::path path;
    std::string sha256;  // of the checkpoint file

    static AdapterRef from_file(const std::filesystem::path& path);
};

class GeneratorBackend {
public:
    virtual ~GeneratorBackend() = default;
    virtual std::string name() const = 0;
    /// Maximum simultaneous generate() calls; 0 means unlimited.
    virtual std::size_t max_concurrency() const { return 1; }
    /// Deterministic for fixed (request, adapter).
    virtual Image generate(const GenerationRequest& request, const AdapterRef* adapter) = 0;
};

enum class GenerationStatus { ok, failed };

struct GeneratedImage {
    GenerationRequest request;
    std::filesystem::path path;  // relative to the output tree root
    std::string content_hash;    // sha256 of decoded RGB bytes; empty when failed
    GenerationStatus status = GenerationStatus::failed;
    std::string error;
};

/// Per-request seed: stable_hash(run_seed, prompt_id).
std::uint64_t request_seed(std::uint64_t run_seed, const std::string& prompt_id);

/// "<category>/<prompt_id>-<seed>.png"
std::filesystem::path output_relpath(const GenerationRequest& request);

std::string pixel_hash(const Image& image);

/// Validates the request (throws on violation), calls the backend with one
/// retry, and writes the PNG under `out_root`. Backend failures come back as
/// a failed record rather than an exception.
GeneratedImage generate(const GenerationRequest& request, GeneratorBackend& backend, const AdapterRef* adapter,
                        const std::filesystem::path& out_root);

struct BatchResult {
    std::vector<GeneratedImage> images;  // request order
    std::size_t failed = 0;

    /// More than 10% of requests failed.
    bool failure_threshold_exceeded() const;
};

/// Throws on duplicate prompt ids before any generation. Results do not
/// depend on `parallelism` or scheduling order.
BatchResult batch_generate(const std::vector<GenerationRequest>& requests, GeneratorBackend& backend,
                           const AdapterRef* adapter, const std::filesystem::path& out_root,
                           std::size_t parallelism);

json generated_to_json(const GeneratedImage& image);
GeneratedImage generated_from_json(const json& row);
void write_generation_manifest(const std::filesystem::path& path, const std::vector<GeneratedImage>& images);
std::vector<GeneratedImage> read_generation_manifest(const std::filesystem::path& path);

/// Re-hashes every ok entry against its file. Returns the prompt ids that fail.
std::vector<std::string> verify_generation_manifest(const std::vector<GeneratedImage>& images,
                                                    const std::filesystem::path& out_root);

}  // namespace adaptagen
