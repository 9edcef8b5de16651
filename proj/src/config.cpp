#include "adaptagen/config.hpp"

#include <set>
#include <type_traits>

#include <yaml-cpp/yaml.h>

#include "adaptagen/registry.hpp"

namespace adaptagen {

std::string_view to_string(ClipConvention convention) {
    return convention == ClipConvention::raw ? "raw" : "scaled";
}

ClipConvention clip_convention_from_string(std::string_view name) {
    if (name == "raw") return ClipConvention::raw;
    if (name == "scaled") return ClipConvention::scaled;
    throw Error("unknown clip convention \"" + std::string(name) + "\" (expected raw or scaled)");
}

LoraConfig RunConfig::resolved_lora() const {
    LoraConfig cfg = lora.lora;
    if (!lora.seed_given) {
        cfg.seed = derive_seed(seed, "lora");
    }
    return cfg;
}

namespace {

json yaml_to_json(const YAML::Node& node) {
    switch (node.Type()) {
        case YAML::NodeType::Null:
        case YAML::NodeType::Undefined:
            return nullptr;
        case YAML::NodeType::Sequence: {
            json out = json::array();
            for (const auto& item : node) {
                out.push_back(yaml_to_json(item));
            }
            return out;
        }
        case YAML::NodeType::Map: {
            json out = json::object();
            for (const auto& kv : node) {
                out[kv.first.as<std::string>()] = yaml_to_json(kv.second);
            }
            return out;
        }
        case YAML::NodeType::Scalar:
            break;
    }
    const std::string text = node.Scalar();
    if (node.Tag() == "!") {  // quoted scalar
        return text;
    }
    if (text == "true" || text == "True" || text == "TRUE") return true;
    if (text == "false" || text == "False" || text == "FALSE") return false;
    if (text == "~" || text == "null" || text == "Null" || text == "NULL") return nullptr;
    try {
        std::size_t used = 0;
        if (text.find_first_of(".eE") == std::string::npos) {
            if (!text.empty() && text[0] == '-') {
                const long long v = std::stoll(text, &used);
                if (used == text.size()) return v;
            } else {
                const unsigned long long v = std::stoull(text, &used);
                if (used == text.size()) return v;
            }
        }
        const double d = std::stod(text, &used);
        if (used == text.size()) return d;
    } catch (const std::exception&) {
    }
    return text;
}

/// One mapping of the config tree. Every key read is recorded so that
/// finish() can reject the rest.
class Section {
public:
    Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) {
            throw Error("config key " + display() + " must be a mapping");
        }
    }

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) {
        seen_.insert(key);
        return node_.IsMap() && node_[key] && !node_[key].IsNull();
    }

    YAML::Node raw(const std::string& key) {
        seen_.insert(key);
        return node_.IsMap() ? node_[key] : YAML::Node();
    }

    Section child(const std::string& key) { return Section(raw(key), key_path(key)); }

    template <typename T>
    T get(const std::string& key, T fallback) {
        if (!has(key)) {
            return fallback;
        }
        return convert<T>(node_[key], key_path(key));
    }

    template <typename T>
    std::optional<T> optional(const std::string& key) {
        if (!has(key)) {
            return std::nullopt;
        }
        return convert<T>(node_[key], key_path(key));
    }

    template <typename T>
    T required(const std::string& key) {
        if (!has(key)) {
            throw Error("missing required config key " + key_path(key));
        }
        return convert<T>(node_[key], key_path(key));
    }

    void finish() const {
        if (!node_.IsMap()) {
            return;
        }
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!seen_.count(key)) {
                throw Error("unknown config key " + key_path(key));
            }
        }
    }

    template <typename T>
    static T convert(const YAML::Node& value, const std::string& where) {
        try {
            if constexpr (std::is_same_v<T, bool>) {
                return value.as<bool>();
            } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
                const auto text = value.Scalar();
                if (!text.empty() && text[0] == '-') {
                    throw Error("config key " + where + " must be a non-negative integer, got " + text);
                }
                return value.as<T>();
            } else {
                return value.as<T>();
            }
        } catch (const YAML::Exception&) {
            throw Error("config key " + where + " has an invalid value \"" + (value.IsScalar() ? value.Scalar() : "") +
                        "\"");
        }
    }

private:
    std::string display() const { return path_.empty() ? "<root>" : path_; }

    YAML::Node node_;
    std::string path_;
    std::set<std::string> seen_;
};

BackendChoice read_backend(Section& s, const std::string& name_key, const std::string& options_key) {
    BackendChoice b;
    b.name = s.get<std::string>(name_key, b.name);
    const YAML::Node opts = s.raw(options_key);
    if (opts && !opts.IsNull()) {
        if (!opts.IsMap()) {
            throw Error("config key " + s.key_path(options_key) + " must be a mapping");
        }
        b.options = yaml_to_json(opts);
    }
    return b;
}

void check_backend(const BackendRegistry* registry, const std::string& kind, const BackendChoice& b,
                   const std::string& where) {
    if (registry && !registry->has(kind, b.name)) {
        throw Error("config key " + where + ": unknown " + kind + " backend \"" + b.name + "\" (known: " +
                    join(registry->names(kind), ", ") + ")");
    }
}

template <typename Fn>
void wrap(const std::string& where, Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        throw Error("config key " + where + ": " + e.what());
    }
}

std::size_t positive(std::size_t value, const std::string& where) {
    if (value == 0) {
        throw Error("config key " + where + " must be >= 1");
    }
    return value;
}

}  // namespace

RunConfig validate_config(const std::string& text, const BackendRegistry* registry) {
    YAML::Node doc;
    try {
        doc = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw Error(std::string("config is not well-formed: ") + e.what());
    }
    if (!doc.IsMap()) {
        throw Error("config must be a mapping with a dataset section");
    }

    RunConfig cfg;
    Section top(doc, "");
    cfg.seed = top.get<std::uint64_t>("seed", cfg.seed);

    {
        Section s = top.child("dataset");
        cfg.dataset.root = s.required<std::string>("root");
        cfg.dataset.k = positive(s.get<std::size_t>("k", cfg.dataset.k), "dataset.k");
        cfg.dataset.seed = s.optional<std::uint64_t>("seed");
        s.finish();
    }
    {
        Section s = top.child("caption");
        if (s.has("templates")) {
            const YAML::Node list = s.raw("templates");
            if (!list.IsSequence()) {
                throw Error("config key caption.templates must be a list");
            }
            cfg.caption.templates.clear();
            for (std::size_t i = 0; i < list.size(); ++i) {
                Section t(list[i], "caption.templates[" + std::to_string(i) + "]");
                PromptTemplate pt;
                pt.template_id = t.required<std::string>("template_id");
                const auto perspective = t.required<std::string>("perspective");
                wrap(t.key_path("perspective"), [&] { pt.perspective = perspective_from_string(perspective); });
                pt.instruction_text = t.required<std::string>("instruction_text");
                t.finish();
                cfg.caption.templates.push_back(std::move(pt));
            }
        }
        wrap("caption.templates", [&] { validate_templates(cfg.caption.templates); });
        cfg.caption.backend = read_backend(s, "backend", "backend_options");
        cfg.caption.parallelism = positive(s.get<std::size_t>("parallelism", 1), "caption.parallelism");
        s.finish();
    }
    {
        Section s = top.child("select");
        cfg.select.backend = read_backend(s, "backend", "backend_options");
        cfg.select.parallelism = positive(s.get<std::size_t>("parallelism", 1), "select.parallelism");
        s.finish();
    }
    {
        Section s = top.child("lora");
        LoraConfig& l = cfg.lora.lora;
        l.rank = s.get<std::size_t>("rank", l.rank);
        l.alpha = s.get<double>("alpha", l.alpha);
        if (s.has("scale_mode")) {
            const auto mode = s.get<std::string>("scale_mode", "");
            wrap("lora.scale_mode", [&] { l.scale_mode = scale_mode_from_string(mode); });
        }
        if (s.has("d_interpretation") && s.get<std::string>("d_interpretation", "") != "input_dim") {
            throw Error("config key lora.d_interpretation: only input_dim is supported");
        }
        l.target_selectors = s.get<std::vector<std::string>>("target_selectors", l.target_selectors);
        l.learning_rate = s.get<double>("learning_rate", l.learning_rate);
        l.max_steps = s.get<std::size_t>("max_steps", l.max_steps);
        if (auto seed = s.optional<std::uint64_t>("seed")) {
            l.seed = *seed;
            cfg.lora.seed_given = true;
        }
        l.checkpoint_interval = s.get<std::size_t>("checkpoint_interval", l.checkpoint_interval);
        l.log_interval = s.get<std::size_t>("log_interval", l.log_interval);
        l.max_grad_norm = s.get<double>("max_grad_norm", l.max_grad_norm);
        wrap("lora", [&] { l.validate(); });
        cfg.lora.backend = read_backend(s, "backend", "backend_options");
        s.finish();
    }
    {
        Section s = top.child("transform");
        auto& t = cfg.transform;
        t.temperature.tau_base = s.get<double>("tau_base", t.temperature.tau_base);
        t.temperature.delta_tau = s.get<double>("delta_tau", t.temperature.delta_tau);
        wrap("transform.delta_tau", [&] { t.temperature.validate(); });
        t.disable_transform = s.get<bool>("disable_transform", false);
        t.disable_fusion = s.get<bool>("disable_fusion", false);
        t.backend = read_backend(s, "backend", "backend_options");
        s.finish();
    }
    {
        Section s = top.child("generate");
        auto& g = cfg.generate;
        g.steps = s.get<int>("n", g.steps);
        g.omega = s.get<double>("omega", g.omega);
        g.s = s.get<double>("s", g.s);
        if (s.has("size")) {
            const YAML::Node size = s.raw("size");
            if (size.IsSequence() && size.size() == 2) {
                g.width = Section::convert<int>(size[0], "generate.size[0]");
                g.height = Section::convert<int>(size[1], "generate.size[1]");
            } else {
                g.width = g.height = Section::convert<int>(size, "generate.size");
            }
        }
        g.per_category_count =
            positive(s.get<std::size_t>("per_category_count", g.per_category_count), "generate.per_category_count");
        g.backend = read_backend(s, "backend", "backend_options");
        g.parallelism = positive(s.get<std::size_t>("parallelism", g.parallelism), "generate.parallelism");
        GenerationRequest probe;
        probe.prompt_id = "probe";
        probe.category = "probe";
        probe.prompt = "probe";
        probe.steps = g.steps;
        probe.guidance = g.omega;
        probe.lora_scale = g.s;
        probe.width = g.width;
        probe.height = g.height;
        wrap("generate", [&] { probe.validate(); });
        s.finish();
    }
    {
        Section s = top.child("evaluate");
        auto& e = cfg.evaluate;
        e.features = read_backend(s, "feature_backend", "feature_options");
        e.classifier = read_backend(s, "classifier_backend", "classifier_options");
        if (s.has("embedder_backend") || s.has("embedder_options")) {
            e.embedder = read_backend(s, "embedder_backend", "embedder_options");
        }
        e.splits = positive(s.get<std::size_t>("splits", e.splits), "evaluate.splits");
        if (s.has("clip_convention")) {
            const auto name = s.get<std::string>("clip_convention", "");
            wrap("evaluate.clip_convention", [&] { e.clip_convention = clip_convention_from_string(name); });
        }
        s.finish();
    }
    {
        Section s = top.child("output");
        cfg.out_dir = s.get<std::string>("out_dir", cfg.out_dir.string());
        s.finish();
    }
    top.finish();

    check_backend(registry, "captioner", cfg.caption.backend, "caption.backend");
    check_backend(registry, "embedder", cfg.select.backend, "select.backend");
    check_backend(registry, "trainer", cfg.lora.backend, "lora.backend");
    check_backend(registry, "paraphraser", cfg.transform.backend, "transform.backend");
    check_backend(registry, "generator", cfg.generate.backend, "generate.backend");
    check_backend(registry, "feature_extractor", cfg.evaluate.features, "evaluate.feature_backend");
    check_backend(registry, "classifier", cfg.evaluate.classifier, "evaluate.classifier_backend");
    check_backend(registry, "embedder", cfg.eval_embedder(), "evaluate.embedder_backend");
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const BackendRegistry* registry) {
    return validate_config(read_text_file(path), registry);
}

json run_config_to_json(const RunConfig& cfg) {
    const LoraConfig& l = cfg.lora.lora;
    json templates = json::array();
    for (const auto& t : cfg.caption.templates) {
        templates.push_back({{"template_id", t.template_id},
                             {"perspective", std::string(to_string(t.perspective))},
                             {"instruction_text", t.instruction_text}});
    }
    json dataset = {{"root", cfg.dataset.root.string()}, {"k", cfg.dataset.k}};
    if (cfg.dataset.seed) {
        dataset["seed"] = *cfg.dataset.seed;
    }
    json lora = {{"rank", l.rank},
                 {"alpha", l.alpha},
                 {"scale_mode", std::string(to_string(l.scale_mode))},
                 {"d_interpretation", "input_dim"},
                 {"target_selectors", l.target_selectors},
                 {"learning_rate", l.learning_rate},
                 {"max_steps", l.max_steps},
                 {"checkpoint_interval", l.checkpoint_interval},
                 {"log_interval", l.log_interval},
                 {"max_grad_norm", l.max_grad_norm},
                 {"backend", cfg.lora.backend.name},
                 {"backend_options", cfg.lora.backend.options}};
    if (cfg.lora.seed_given) {
        lora["seed"] = l.seed;
    }
    json evaluate = {{"feature_backend", cfg.evaluate.features.name},
                     {"feature_options", cfg.evaluate.features.options},
                     {"classifier_backend", cfg.evaluate.classifier.name},
                     {"classifier_options", cfg.evaluate.classifier.options},
                     {"splits", cfg.evaluate.splits},
                     {"clip_convention", std::string(to_string(cfg.evaluate.clip_convention))}};
    if (cfg.evaluate.embedder) {
        evaluate["embedder_backend"] = cfg.evaluate.embedder->name;
        evaluate["embedder_options"] = cfg.evaluate.embedder->options;
    }
    return {{"seed", cfg.seed},
            {"dataset", dataset},
            {"caption",
             {{"templates", templates},
              {"backend", cfg.caption.backend.name},
              {"backend_options", cfg.caption.backend.options},
              {"parallelism", cfg.caption.parallelism}}},
            {"select",
             {{"backend", cfg.select.backend.name},
              {"backend_options", cfg.select.backend.options},
              {"parallelism", cfg.select.parallelism}}},
            {"lora", lora},
            {"transform",
             {{"tau_base", cfg.transform.temperature.tau_base},
              {"delta_tau", cfg.transform.temperature.delta_tau},
              {"disable_transform", cfg.transform.disable_transform},
              {"disable_fusion", cfg.transform.disable_fusion},
              {"backend", cfg.transform.backend.name},
              {"backend_options", cfg.transform.backend.options}}},
            {"generate",
             {{"n", cfg.generate.steps},
              {"omega", cfg.generate.omega},
              {"s", cfg.generate.s},
              {"size", {cfg.generate.width, cfg.generate.height}},
              {"per_category_count", cfg.generate.per_category_count},
              {"backend", cfg.generate.backend.name},
              {"backend_options", cfg.generate.backend.options},
              {"parallelism", cfg.generate.parallelism}}},
            {"evaluate", evaluate},
            {"output", {{"out_dir", cfg.out_dir.string()}}}};
}

}  // namespace adaptagen
