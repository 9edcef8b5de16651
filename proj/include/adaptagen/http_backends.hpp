#pragma once

// JSON-over-HTTP adapters for real model servers. Every call is a POST with
// a JSON body to `<endpoint><route>`; images travel as base64 strings.
//
//   GET  /info         -> {"embedding_dim": int, "feature_dim": int, "num_classes": int}
//   POST /caption      {"image_b64", "image_id", "template_id", "instruction", "seed"} -> {"text"}
//   POST /embed_image  {"image_b64"}                                   -> {"embedding": [float]}
//   POST /embed_text   {"text"}                                        -> {"embedding": [float]}
//   POST /paraphrase   {"text", "temperature", "seed"}                 -> {"text"}
//   POST /generate     {"prompt", "n", "omega", "s", "seed", "width", "height",
//                       "adapter_path", "adapter_sha256"}              -> {"png_b64"}
//   POST /features     {"image_b64"}                                   -> {"features": [float]}
//   POST /classify     {"image_b64"}                                   -> {"probabilities": [float]}
//
// Options: {"endpoint": "http://host:port", "timeout_s": number,
// "max_concurrency": int}. Non-2xx replies and malformed bodies throw.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adaptagen/common.hpp"

namespace adaptagen {

class BackendRegistry;

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Registers "http" for every interface except the trainer.
void register_http_backends(BackendRegistry& registry);

}  // namespace adaptagen
