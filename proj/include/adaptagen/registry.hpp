#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "adaptagen/caption.hpp"
#include "adaptagen/common.hpp"
#include "adaptagen/evaluation.hpp"
#include "adaptagen/generation.hpp"
#include "adaptagen/lora_train.hpp"
#include "adaptagen/prompt_matrix.hpp"
#include "adaptagen/semantic_transform.hpp"

namespace adaptagen {

/// Name-keyed factories for every backend interface. Factories receive the
/// free-form `backend_options` object of their config section.
class BackendRegistry {
public:
    template <typename T>
    using Factory = std::function<std::unique_ptr<T>(const json& options)>;

    void add_captioner(const std::string& name, Factory<CaptionerBackend> f) { captioners_[name] = std::move(f); }
    void add_embedder(const std::string& name, Factory<EmbedderBackend> f) { embedders_[name] = std::move(f); }
    void add_trainer(const std::string& name, Factory<TrainerBackend> f) { trainers_[name] = std::move(f); }
    void add_paraphraser(const std::string& name, Factory<ParaphraserBackend> f) { paraphrasers_[name] = std::move(f); }
    void add_generator(const std::string& name, Factory<GeneratorBackend> f) { generators_[name] = std::move(f); }
    void add_feature_extractor(const std::string& name, Factory<FeatureExtractor> f) { features_[name] = std::move(f); }
    void add_classifier(const std::string& name, Factory<ImageClassifier> f) { classifiers_[name] = std::move(f); }

    std::unique_ptr<CaptionerBackend> captioner(const std::string& name, const json& options = {}) const;
    std::unique_ptr<EmbedderBackend> embedder(const std::string& name, const json& options = {}) const;
    std::unique_ptr<TrainerBackend> trainer(const std::string& name, const json& options = {}) const;
    std::unique_ptr<ParaphraserBackend> paraphraser(const std::string& name, const json& options = {}) const;
    std::unique_ptr<GeneratorBackend> generator(const std::string& name, const json& options = {}) const;
    std::unique_ptr<FeatureExtractor> feature_extractor(const std::string& name, const json& options = {}) const;
    std::unique_ptr<ImageClassifier> classifier(const std::string& name, const json& options = {}) const;

    /// kind is one of captioner, embedder, trainer, paraphraser, generator,
    /// feature_extractor, classifier.
    bool has(const std::string& kind, const std::string& name) const;
    std::vector<std::string> names(const std::string& kind) const;

    /// Loads every shared library in `dir` and calls its exported
    /// `adaptagen_register_backends(adaptagen::BackendRegistry&)`. Returns the
    /// number of plugins loaded. Libraries stay loaded for the process lifetime.
    std::size_t load_plugins(const std::filesystem::path& dir);

private:
    template <typename T>
    static std::unique_ptr<T> make(const std::map<std::string, Factory<T>>& table, const std::string& kind,
                                   const std::string& name, const json& options);

    std::map<std::string, Factory<CaptionerBackend>> captioners_;
    std::map<std::string, Factory<EmbedderBackend>> embedders_;
    std::map<std::string, Factory<TrainerBackend>> trainers_;
    std::map<std::string, Factory<ParaphraserBackend>> paraphrasers_;
    std::map<std::string, Factory<GeneratorBackend>> generators_;
    std::map<std::string, Factory<FeatureExtractor>> features_;
    std::map<std::string, Factory<ImageClassifier>> classifiers_;
};

/// Registry with the "mock" and "http" backends, plus plugins found in
/// $ADAPTAGEN_BACKEND_DIR when set.
BackendRegistry default_registry();

void register_builtin_backends(BackendRegistry& registry);

}  // namespace adaptagen

extern "C" {
/// Signature plugins must export.
using adaptagen_register_fn = void (*)(adaptagen::BackendRegistry&);
}
