#pragma once

#include <filesystem>
#include <string>

#include "adaptagen/common.hpp"

namespace adaptagen {

/// Fixed-width text table of a metrics.json document: one row per category
/// plus the overall row.
std::string render_metrics_table(const json& metrics);

/// Static SVG with one bar panel per metric (FID, IS, CLIP) across categories.
std::string render_metrics_svg(const json& metrics);

}  // namespace adaptagen
