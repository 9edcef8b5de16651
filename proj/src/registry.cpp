#include "adaptagen/registry.hpp"

#include <algorithm>
#include <cstdlib>

#include <dlfcn.h>
#include <spdlog/spdlog.h>

#include "adaptagen/http_backends.hpp"
#include "adaptagen/mock_backends.hpp"

namespace adaptagen {

template <typename T>
std::unique_ptr<T> BackendRegistry::make(const std::map<std::string, Factory<T>>& table, const std::string& kind,
                                         const std::string& name, const json& options) {
    const auto it = table.find(name);
    if (it == table.end()) {
        std::vector<std::string> known;
        for (const auto& [k, _] : table) {
            known.push_back(k);
        }
        throw Error("unknown " + kind + " backend \"" + name + "\" (known: " + join(known, ", ") + ")");
    }
    auto backend = it->second(options.is_null() ? json::object() : options);
    if (!backend) {
        throw Error(kind + " backend \"" + name + "\" factory returned nothing");
    }
    return backend;
}

std::unique_ptr<CaptionerBackend> BackendRegistry::captioner(const std::string& name, const json& options) const {
    return make(captioners_, "captioner", name, options);
}
std::unique_ptr<EmbedderBackend> BackendRegistry::embedder(const std::string& name, const json& options) const {
    return make(embedders_, "embedder", name, options);
}
std::unique_ptr<TrainerBackend> BackendRegistry::trainer(const std::string& name, const json& options) const {
    return make(trainers_, "trainer", name, options);
}
std::unique_ptr<ParaphraserBackend> BackendRegistry::paraphraser(const std::string& name, const json& options) const {
    return make(paraphrasers_, "paraphraser", name, options);
}
std::unique_ptr<GeneratorBackend> BackendRegistry::generator(const std::string& name, const json& options) const {
    return make(generators_, "generator", name, options);
}
std::unique_ptr<FeatureExtractor> BackendRegistry::feature_extractor(const std::string& name,
                                                                     const json& options) const {
    return make(features_, "feature_extractor", name, options);
}
std::unique_ptr<ImageClassifier> BackendRegistry::classifier(const std::string& name, const json& options) const {
    return make(classifiers_, "classifier", name, options);
}

std::vector<std::string> BackendRegistry::names(const std::string& kind) const {
    std::vector<std::string> out;
    auto collect = [&out](const auto& table) {
        for (const auto& [k, _] : table) {
            out.push_back(k);
        }
    };
    if (kind == "captioner") collect(captioners_);
    else if (kind == "embedder") collect(embedders_);
    else if (kind == "trainer") collect(trainers_);
    else if (kind == "paraphraser") collect(paraphrasers_);
    else if (kind == "generator") collect(generators_);
    else if (kind == "feature_extractor") collect(features_);
    else if (kind == "classifier") collect(classifiers_);
    else throw Error("unknown backend kind \"" + kind + "\"");
    return out;
}

bool BackendRegistry::has(const std::string& kind, const std::string& name) const {
    const auto all = names(kind);
    return std::find(all.begin(), all.end(), name) != all.end();
}

std::size_t BackendRegistry::load_plugins(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw Error("plugin directory does not exist: " + dir.string());
    }
    std::vector<fs::path> libs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".so") {
            libs.push_back(entry.path());
        }
    }
    std::sort(libs.begin(), libs.end());
    std::size_t loaded = 0;
    for (const auto& lib : libs) {
        void* handle = dlopen(lib.c_str(), RTLD_NOW | RTLD_LOCAL);
        if (!handle) {
            throw Error("cannot load plugin " + lib.string() + ": " + dlerror());
        }
        auto fn = reinterpret_cast<adaptagen_register_fn>(dlsym(handle, "adaptagen_register_backends"));
        if (!fn) {
            dlclose(handle);
            throw Error("plugin " + lib.string() + " does not export adaptagen_register_backends");
        }
        fn(*this);
        spdlog::debug("loaded backend plugin {}", lib.string());
        ++loaded;
    }
    return loaded;
}

void register_builtin_backends(BackendRegistry& registry) {
    registry.add_captioner("mock", [](const json&) { return std::make_unique<mock::MockCaptioner>(); });
    registry.add_embedder("mock", [](const json& o) {
        return std::make_unique<mock::MockEmbedder>(o.value("dim", std::size_t{32}));
    });
    registry.add_trainer("mock", [](const json&) { return std::make_unique<mock::MockTrainer>(); });
    registry.add_paraphraser("mock", [](const json&) { return std::make_unique<mock::MockParaphraser>(); });
    registry.add_generator("mock", [](const json&) { return std::make_unique<mock::MockGenerator>(); });
    registry.add_feature_extractor("mock", [](const json& o) {
        return std::make_unique<mock::MockFeatureExtractor>(o.value("dim", std::size_t{16}));
    });
    registry.add_classifier("mock", [](const json& o) {
        return std::make_unique<mock::MockClassifier>(o.value("classes", std::size_t{10}));
    });
    register_http_backends(registry);
}

BackendRegistry default_registry() {
    BackendRegistry registry;
    register_builtin_backends(registry);
    if (const char* dir = std::getenv("ADAPTAGEN_BACKEND_DIR"); dir && *dir) {
        registry.load_plugins(dir);
    }
    return registry;
}

}  // namespace adaptagen
