#include "adaptagen/generation.hpp"

#include <cmath>
#include <mutex>
#include <set>

#include <spdlog/spdlog.h>

#include "adaptagen/parallel.hpp"

namespace adaptagen {

void GenerationRequest::validate() const {
    if (prompt_id.empty()) {
        throw Error("generation request without prompt_id");
    }
    if (trim(prompt).empty()) {
        throw Error("generation request " + prompt_id + " has an empty prompt");
    }
    if (steps < 1) {
        throw Error("generation request " + prompt_id + ": steps must be >= 1");
    }
    if (!(guidance >= 0.0) || !std::isfinite(guidance)) {
        throw Error("generation request " + prompt_id + ": guidance must be >= 0");
    }
    if (!(lora_scale >= 0.0) || !std::isfinite(lora_scale)) {
        throw Error("generation request " + prompt_id + ": lora scale must be >= 0");
    }
    if (width < 64 || height < 64 || width % 2 != 0 || height % 2 != 0) {
        throw Error("generation request " + prompt_id + ": size must be even and at least 64x64");
    }
}

json request_to_json(const GenerationRequest& r) {
    return {{"prompt_id", r.prompt_id}, {"category", r.category}, {"prompt", r.prompt},
            {"n", r.steps},             {"omega", r.guidance},     {"s", r.lora_scale},
            {"seed", r.seed},           {"width", r.width},        {"height", r.height}};
}

AdapterRef AdapterRef::from_file(const std::filesystem::path& path) { return {path, sha256_file_hex(path)}; }

std::uint64_t request_seed(std::uint64_t run_seed, const std::string& prompt_id) {
    return derive_seed(run_seed, "generate/" + prompt_id);
}

std::filesystem::path output_relpath(const GenerationRequest& request) {
    return std::filesystem::path(request.category) / (request.prompt_id + "-" + std::to_string(request.seed) + ".png");
}

std::string pixel_hash(const Image& image) { return sha256_hex(image.rgb); }

GeneratedImage generate(const GenerationRequest& request, GeneratorBackend& backend, const AdapterRef* adapter,
                        const std::filesystem::path& out_root) {
    request.validate();
    GeneratedImage out;
    out.request = request;
    out.path = output_relpath(request);

    for (int attempt = 0; attempt < 2; ++attempt) {
        try {
            Image image = backend.generate(request, adapter);
            if (image.width != request.width || image.height != request.height || image.rgb.size() != image.byte_size()) {
                throw Error("backend returned a " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                            " image for a " + std::to_string(request.width) + "x" + std::to_string(request.height) +
                            " request");
            }
            write_png(out_root / out.path, image);
            out.content_hash = pixel_hash(image);
            out.status = GenerationStatus::ok;
            out.error.clear();
            return out;
        } catch (const std::exception& e) {
            out.error = e.what();
            spdlog::warn("generate: {} attempt {} failed: {}", request.prompt_id, attempt + 1, e.what());
        }
    }
    out.status = GenerationStatus::failed;
    return out;
}

bool BatchResult::failure_threshold_exceeded() const { return failed * 10 > images.size(); }

BatchResult batch_generate(const std::vector<GenerationRequest>& requests, GeneratorBackend& backend,
                           const AdapterRef* adapter, const std::filesystem::path& out_root,
                           std::size_t parallelism) {
    std::set<std::string> ids;
    for (const auto& r : requests) {
        if (!ids.insert(r.prompt_id).second) {
            throw Error("duplicate prompt_id " + r.prompt_id);
        }
        r.validate();
    }
    if (parallelism == 0) {
        throw Error("parallelism must be positive");
    }
    std::size_t workers = parallelism;
    if (backend.max_concurrency() > 0) {
        workers = std::min(workers, backend.max_concurrency());
    }

    BatchResult result;
    result.images.resize(requests.size());
    parallel_for(requests.size(), workers, [&](std::size_t i) {
        result.images[i] = generate(requests[i], backend, adapter, out_root);
    });
    for (const auto& img : result.images) {
        if (img.status == GenerationStatus::failed) {
            ++result.failed;
        }
    }
    return result;
}

json generated_to_json(const GeneratedImage& image) {
    return {{"prompt_id", image.request.prompt_id},
            {"seed", image.request.seed},
            {"path", image.path.generic_string()},
            {"content_hash", image.content_hash},
            {"status", image.status == GenerationStatus::ok ? "ok" : "failed"},
            {"n", image.request.steps},
            {"omega", image.request.guidance},
            {"s", image.request.lora_scale}};
}

GeneratedImage generated_from_json(const json& row) {
    GeneratedImage g;
    g.request.prompt_id = row.at("prompt_id").get<std::string>();
    g.request.seed = row.at("seed").get<std::uint64_t>();
    g.path = row.at("path").get<std::string>();
    g.request.category = g.path.parent_path().generic_string();
    g.content_hash = row.at("content_hash").get<std::string>();
    const auto status = row.at("status").get<std::string>();
    if (status != "ok" && status != "failed") {
        throw Error("unknown generation status " + status);
    }
    g.status = status == "ok" ? GenerationStatus::ok : GenerationStatus::failed;
    g.request.steps = row.at("n").get<int>();
    g.request.guidance = row.at("omega").get<double>();
    g.request.lora_scale = row.at("s").get<double>();
    return g;
}

void write_generation_manifest(const std::filesystem::path& path, const std::vector<GeneratedImage>& images) {
    std::vector<json> rows;
    for (const auto& img : images) {
        rows.push_back(generated_to_json(img));
    }
    write_jsonl(path, rows);
}

std::vector<GeneratedImage> read_generation_manifest(const std::filesystem::path& path) {
    std::vector<GeneratedImage> out;
    for (const auto& row : read_jsonl(path)) {
        out.push_back(generated_from_json(row));
    }
    return out;
}

std::vector<std::string> verify_generation_manifest(const std::vector<GeneratedImage>& images,
                                                    const std::filesystem::path& out_root) {
    std::vector<std::string> bad;
    for (const auto& img : images) {
        if (img.status != GenerationStatus::ok) {
            continue;
        }
        try {
            if (pixel_hash(read_png(out_root / img.path)) != img.content_hash) {
                bad.push_back(img.request.prompt_id);
            }
        } catch (const std::exception&) {
            bad.push_back(img.request.prompt_id);
        }
    }
    return bad;
}

}  // namespace adaptagen
