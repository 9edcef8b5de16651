#include "adaptagen/lora.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <set>

namespace adaptagen {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string_view to_string(ScaleMode mode) {
    return mode == ScaleMode::paper ? "paper" : "conventional";
}

ScaleMode scale_mode_from_string(std::string_view name) {
    if (name == "paper") {
        return ScaleMode::paper;
    }
    if (name == "conventional") {
        return ScaleMode::conventional;
    }
    throw Error("unknown scale_mode: " + std::string(name));
}

std::vector<std::string> default_target_selectors() {
    return {"*attn2.to_q", "*attn2.to_k", "*attn2.to_v", "*attn2.to_out.0"};
}

void LoraConfig::validate() const {
    if (rank == 0) {
        throw Error("lora.rank must be positive");
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw Error("lora.alpha must be a positive finite number");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw Error("lora.learning_rate must be a positive finite number");
    }
    if (max_steps == 0) {
        throw Error("lora.max_steps must be positive");
    }
    if (max_grad_norm < 0.0 || !std::isfinite(max_grad_norm)) {
        throw Error("lora.max_grad_norm must be >= 0");
    }
    if (target_selectors.empty()) {
        throw Error("lora.target_selectors must not be empty");
    }
}

json lora_config_to_json(const LoraConfig& cfg) {
    return {{"rank", cfg.rank},
            {"alpha", cfg.alpha},
            {"d_interpretation", "input_dim"},
            {"scale_mode", std::string(to_string(cfg.scale_mode))},
            {"target_selectors", cfg.target_selectors},
            {"learning_rate", cfg.learning_rate},
            {"max_steps", cfg.max_steps},
            {"seed", cfg.seed},
            {"checkpoint_interval", cfg.checkpoint_interval},
            {"log_interval", cfg.log_interval},
            {"max_grad_norm", cfg.max_grad_norm}};
}

LoraConfig lora_config_from_json(const json& doc) {
    LoraConfig cfg;
    cfg.rank = doc.at("rank").get<std::size_t>();
    cfg.alpha = doc.at("alpha").get<double>();
    if (doc.at("d_interpretation").get<std::string>() != "input_dim") {
        throw Error("unknown d_interpretation");
    }
    cfg.scale_mode = scale_mode_from_string(doc.at("scale_mode").get<std::string>());
    cfg.target_selectors = doc.at("target_selectors").get<std::vector<std::string>>();
    cfg.learning_rate = doc.at("learning_rate").get<double>();
    cfg.max_steps = doc.at("max_steps").get<std::size_t>();
    cfg.seed = doc.at("seed").get<std::uint64_t>();
    cfg.checkpoint_interval = doc.value("checkpoint_interval", cfg.checkpoint_interval);
    cfg.log_interval = doc.value("log_interval", cfg.log_interval);
    cfg.max_grad_norm = doc.value("max_grad_norm", cfg.max_grad_norm);
    return cfg;
}

double scale_factor(const LoraConfig& cfg, std::size_t d_in) {
    const double r = static_cast<double>(cfg.rank);
    double sigma = 0.0;
    switch (cfg.scale_mode) {
        case ScaleMode::paper: sigma = cfg.alpha * r / static_cast<double>(d_in); break;
        case ScaleMode::conventional: sigma = cfg.alpha / r; break;
    }
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw Error("adapter scale factor is not finite and positive");
    }
    return sigma;
}

Tensor AdapterEntry::delta(double runtime_scale) const { return (runtime_scale * scale) * (B * A); }

const AdapterEntry* LoraAdapter::find(std::string_view target) const {
    for (const auto& e : entries) {
        if (e.target_name == target) {
            return &e;
        }
    }
    return nullptr;
}

AdapterEntry* LoraAdapter::find(std::string_view target) {
    return const_cast<AdapterEntry*>(std::as_const(*this).find(target));
}

std::size_t LoraAdapter::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) {
        n += static_cast<std::size_t>(e.A.size() + e.B.size());
    }
    return n;
}

LoraAdapter init_adapter(const std::vector<TargetShape>& targets, const LoraConfig& cfg) {
    cfg.validate();
    LoraAdapter adapter;
    adapter.config = cfg;
    std::set<std::string> names;
    const double stddev = 1.0 / std::sqrt(static_cast<double>(cfg.rank));
    for (const auto& t : targets) {
        if (!names.insert(t.name).second) {
            throw Error("duplicate adapter target " + t.name);
        }
        if (t.d_out == 0 || t.d_in == 0) {
            throw Error("target " + t.name + " has an empty weight shape");
        }
        if (cfg.rank > std::min(t.d_out, t.d_in)) {
            throw Error("rank " + std::to_string(cfg.rank) + " exceeds min(d_out, d_in) = " +
                        std::to_string(std::min(t.d_out, t.d_in)) + " for target " + t.name);
        }
        AdapterEntry e;
        e.target_name = t.name;
        e.d_out = t.d_out;
        e.d_in = t.d_in;
        e.scale = scale_factor(cfg, t.d_in);
        const auto r = static_cast<Eigen::Index>(cfg.rank);
        e.A.resize(r, static_cast<Eigen::Index>(t.d_in));
        Rng rng(derive_seed(cfg.seed, "lora.init/" + t.name));
        for (Eigen::Index i = 0; i < e.A.rows(); ++i) {
            for (Eigen::Index j = 0; j < e.A.cols(); ++j) {
                e.A(i, j) = stddev * rng.gaussian();
            }
        }
        e.B = Tensor::Zero(static_cast<Eigen::Index>(t.d_out), r);
        adapter.entries.push_back(std::move(e));
    }
    return adapter;
}

namespace {

void check_weight(const AdapterEntry& entry, const Tensor& w0) {
    if (static_cast<std::size_t>(w0.rows()) != entry.d_out || static_cast<std::size_t>(w0.cols()) != entry.d_in) {
        throw Error("weight shape " + std::to_string(w0.rows()) + "x" + std::to_string(w0.cols()) +
                    " does not match adapter target " + entry.target_name + " (" + std::to_string(entry.d_out) +
                    "x" + std::to_string(entry.d_in) + ")");
    }
    if (entry.A.cols() != w0.cols() || entry.B.rows() != w0.rows() || entry.A.rows() != entry.B.cols()) {
        throw Error("adapter matrices for " + entry.target_name + " are inconsistent");
    }
}

}  // namespace

Tensor adapter_forward(const AdapterEntry& entry, const Tensor& w0, const Tensor& x, double runtime_scale) {
    check_weight(entry, w0);
    if (x.rows() != w0.cols()) {
        throw Error("input has " + std::to_string(x.rows()) + " features, target " + entry.target_name +
                    " expects " + std::to_string(w0.cols()));
    }
    Tensor h = w0 * x;
    h.noalias() += (runtime_scale * entry.scale) * (entry.B * (entry.A * x));
    return h;
}

Tensor merge(const AdapterEntry& entry, const Tensor& w0, double runtime_scale) {
    check_weight(entry, w0);
    return w0 + entry.delta(runtime_scale);
}

Tensor unmerge(const AdapterEntry& entry, const Tensor& merged, double runtime_scale) {
    check_weight(entry, merged);
    return merged - entry.delta(runtime_scale);
}

double diffusion_loss(const Tensor& predicted_noise, const Tensor& true_noise) {
    if (predicted_noise.rows() != true_noise.rows() || predicted_noise.cols() != true_noise.cols()) {
        throw Error("diffusion_loss: shape mismatch");
    }
    if (predicted_noise.size() == 0) {
        throw Error("diffusion_loss: empty tensors");
    }
    return (predicted_noise - true_noise).squaredNorm() / static_cast<double>(predicted_noise.size());
}

bool matches_selector(std::string_view name, std::string_view pattern) {
    std::size_t n = 0, p = 0, star = std::string_view::npos, mark = 0;
    while (n < name.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
            ++n;
            ++p;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = n;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            n = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') {
        ++p;
    }
    return p == pattern.size();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void append_tensor(std::vector<std::uint8_t>& payload, const Tensor& t) {
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
        for (Eigen::Index j = 0; j < t.cols(); ++j) {
            const float v = static_cast<float>(t(i, j));
            std::uint8_t raw[4];
            std::memcpy(raw, &v, 4);
            payload.insert(payload.end(), raw, raw + 4);
        }
    }
}

Tensor read_tensor(std::span<const std::uint8_t> payload, const json& info, const std::string& key) {
    if (info.at("dtype").get<std::string>() != "F32") {
        throw Error("checkpoint tensor " + key + " is not F32");
    }
    const auto shape = info.at("shape").get<std::vector<std::size_t>>();
    const auto offsets = info.at("data_offsets").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > payload.size() ||
        offsets[1] - offsets[0] != shape[0] * shape[1] * 4) {
        throw Error("checkpoint tensor " + key + " has an invalid shape or offsets");
    }
    Tensor t(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
    const std::uint8_t* p = payload.data() + offsets[0];
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
        for (Eigen::Index j = 0; j < t.cols(); ++j) {
            float v;
            std::memcpy(&v, p, 4);
            p += 4;
            t(i, j) = v;
        }
    }
    return t;
}

}  // namespace

void save_adapter(const std::filesystem::path& path, const LoraAdapter& adapter) {
    json header = json::object();
    json scales = json::object();
    std::vector<std::uint8_t> payload;
    for (const auto& e : adapter.entries) {
        if (!e.A.allFinite() || !e.B.allFinite()) {
            throw Error("refusing to checkpoint non-finite adapter " + e.target_name);
        }
        for (const auto& [suffix, tensor] : {std::pair{".lora_A", &e.A}, std::pair{".lora_B", &e.B}}) {
            const std::size_t begin = payload.size();
            append_tensor(payload, *tensor);
            header[e.target_name + suffix] = {{"dtype", "F32"},
                                              {"shape", {tensor->rows(), tensor->cols()}},
                                              {"data_offsets", {begin, payload.size()}}};
        }
        scales[e.target_name] = e.scale;
    }
    header["__metadata__"] = {{"format", "adaptagen-lora"},
                              {"version", "1"},
                              {"config", lora_config_to_json(adapter.config).dump()},
                              {"scales", scales.dump()}};

    std::string text = header.dump();
    while (text.size() % 8 != 0) {
        text.push_back(' ');
    }
    std::vector<std::uint8_t> bytes(8);
    const std::uint64_t len = text.size();
    std::memcpy(bytes.data(), &len, 8);
    bytes.insert(bytes.end(), text.begin(), text.end());
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    write_file_atomic(path, bytes);
}

LoraAdapter load_adapter(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 8) {
        throw Error("checkpoint too short: " + path.string());
    }
    std::uint64_t len;
    std::memcpy(&len, bytes.data(), 8);
    if (len > bytes.size() - 8) {
        throw Error("checkpoint header length out of range: " + path.string());
    }
    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
    } catch (const json::parse_error& e) {
        throw Error("checkpoint header is not JSON: " + std::string(e.what()));
    }
    const auto payload = std::span(bytes).subspan(8 + len);

    const auto& meta = header.at("__metadata__");
    if (meta.at("format").get<std::string>() != "adaptagen-lora") {
        throw Error("not an adapter checkpoint: " + path.string());
    }
    LoraAdapter adapter;
    adapter.config = lora_config_from_json(json::parse(meta.at("config").get<std::string>()));
    const json scales = json::parse(meta.at("scales").get<std::string>());
    for (const auto& [target, sigma] : scales.items()) {
        AdapterEntry e;
        e.target_name = target;
        e.A = read_tensor(payload, header.at(target + ".lora_A"), target + ".lora_A");
        e.B = read_tensor(payload, header.at(target + ".lora_B"), target + ".lora_B");
        e.d_in = static_cast<std::size_t>(e.A.cols());
        e.d_out = static_cast<std::size_t>(e.B.rows());
        e.scale = sigma.get<double>();
        if (e.A.rows() != e.B.cols()) {
            throw Error("checkpoint tensors for " + target + " disagree on rank");
        }
        adapter.entries.push_back(std::move(e));
    }
    return adapter;
}

}  // namespace adaptagen
