#include "adaptagen/http_backends.hpp"

#include <algorithm>
#include <memory>
#include <regex>

// Eigen-based headers first: httplib pulls in <resolv.h>, whose `_res`
// macro breaks Eigen's product kernels.
#include "adaptagen/registry.hpp"

#include <httplib.h>
#include <openssl/evp.h>

namespace adaptagen {

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::string clean;
    clean.reserve(text.size());
    for (char c : text) {
        if (c != '\n' && c != '\r' && c != ' ') {
            clean.push_back(c);
        }
    }
    if (clean.size() % 4 != 0) {
        throw Error("base64: length is not a multiple of 4");
    }
    std::vector<std::uint8_t> out(3 * clean.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                  static_cast<int>(clean.size()));
    if (n < 0) {
        throw Error("base64: invalid input");
    }
    std::size_t size = static_cast<std::size_t>(n);
    // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
    if (!clean.empty() && clean.back() == '=') {
        --size;
        if (clean.size() >= 2 && clean[clean.size() - 2] == '=') {
            --size;
        }
    }
    out.resize(size);
    return out;
}

namespace {

class HttpClient {
public:
    explicit HttpClient(const json& options) {
        if (!options.is_object() || !options.contains("endpoint")) {
            throw Error("http backend: options.endpoint is required");
        }
        endpoint_ = options.at("endpoint").get<std::string>();
        static const std::regex pattern(R"(^(http://[^/]+)(/.*)?$)");
        std::smatch m;
        if (!std::regex_match(endpoint_, m, pattern)) {
            throw Error("http backend: endpoint must look like http://host:port[/prefix], got " + endpoint_);
        }
        host_ = m[1].str();
        prefix_ = m[2].matched ? m[2].str() : "";
        while (!prefix_.empty() && prefix_.back() == '/') {
            prefix_.pop_back();
        }
        timeout_s_ = options.value("timeout_s", 600.0);
        max_concurrency_ = options.value("max_concurrency", std::size_t{1});
    }

    json get(const std::string& route) const {
        auto cli = client();
        auto res = cli->Get(prefix_ + route);
        return parse(route, res);
    }

    json post(const std::string& route, const json& body) const {
        auto cli = client();
        auto res = cli->Post(prefix_ + route, body.dump(), "application/json");
        return parse(route, res);
    }

    std::size_t max_concurrency() const { return max_concurrency_; }

private:
    std::unique_ptr<httplib::Client> client() const {
        auto cli = std::make_unique<httplib::Client>(host_);
        const auto sec = static_cast<time_t>(timeout_s_);
        const auto usec = static_cast<time_t>((timeout_s_ - static_cast<double>(sec)) * 1e6);
        cli->set_connection_timeout(sec, usec);
        cli->set_read_timeout(sec, usec);
        cli->set_write_timeout(sec, usec);
        return cli;
    }

    json parse(const std::string& route, const httplib::Result& res) const {
        if (!res) {
            throw Error("http backend " + endpoint_ + route + ": " + httplib::to_string(res.error()));
        }
        if (res->status < 200 || res->status >= 300) {
            throw Error("http backend " + endpoint_ + route + ": status " + std::to_string(res->status) + ": " +
                        res->body.substr(0, 200));
        }
        try {
            return json::parse(res->body);
        } catch (const json::exception& e) {
            throw Error("http backend " + endpoint_ + route + ": malformed JSON reply: " + e.what());
        }
    }

    std::string endpoint_;
    std::string host_;
    std::string prefix_;
    double timeout_s_ = 600.0;
    std::size_t max_concurrency_ = 1;
};

template <typename T>
T field(const json& reply, const char* key, const char* route) {
    if (!reply.is_object() || !reply.contains(key)) {
        throw Error(std::string("http backend ") + route + ": reply has no \"" + key + "\"");
    }
    try {
        return reply.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(std::string("http backend ") + route + ": bad \"" + key + "\": " + e.what());
    }
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::size_t info_dim(const HttpClient& client, const json& options, const char* key) {
    if (options.contains(key)) {
        return options.at(key).get<std::size_t>();
    }
    return field<std::size_t>(client.get("/info"), key, "/info");
}

class HttpCaptioner final : public CaptionerBackend {
public:
    explicit HttpCaptioner(const json& options) : client_(options) {}
    std::string name() const override { return "http"; }
    bool concurrent_safe() const override { return client_.max_concurrency() != 1; }
    std::string caption(const CaptionRequest& r) override {
        const json reply = client_.post("/caption", {{"image_b64", base64_encode(r.image_bytes)},
                                                    {"image_id", r.record.image_id},
                                                    {"template_id", r.prompt.template_id},
                                                    {"instruction", r.prompt.instruction_text},
                                                    {"seed", r.seed}});
        return field<std::string>(reply, "text", "/caption");
    }

private:
    HttpClient client_;
};

class HttpEmbedder final : public EmbedderBackend {
public:
    explicit HttpEmbedder(const json& options) : client_(options), dim_(info_dim(client_, options, "embedding_dim")) {}
    std::string name() const override { return "http"; }
    bool concurrent_safe() const override { return client_.max_concurrency() != 1; }
    std::size_t dim() const override { return dim_; }
    EmbeddingVector embed_image(std::span<const std::uint8_t> bytes) override {
        return checked(client_.post("/embed_image", {{"image_b64", base64_encode(bytes)}}), "/embed_image");
    }
    EmbeddingVector embed_text(const std::string& text) override {
        return checked(client_.post("/embed_text", {{"text", text}}), "/embed_text");
    }

private:
    EmbeddingVector checked(const json& reply, const char* route) const {
        const auto v = field<std::vector<double>>(reply, "embedding", route);
        if (v.size() != dim_) {
            throw Error(std::string("http backend ") + route + ": embedding has " + std::to_string(v.size()) +
                        " dims, expected " + std::to_string(dim_));
        }
        return EmbeddingVector(v);
    }

    HttpClient client_;
    std::size_t dim_;
};

class HttpParaphraser final : public ParaphraserBackend {
public:
    explicit HttpParaphraser(const json& options) : client_(options) {}
    std::string name() const override { return "http"; }
    bool concurrent_safe() const override { return client_.max_concurrency() != 1; }
    std::string transform(const std::string& text, double temperature, std::uint64_t seed) override {
        const json reply = client_.post("/paraphrase", {{"text", text}, {"temperature", temperature}, {"seed", seed}});
        return field<std::string>(reply, "text", "/paraphrase");
    }

private:
    HttpClient client_;
};

class HttpGenerator final : public GeneratorBackend {
public:
    explicit HttpGenerator(const json& options) : client_(options) {}
    std::string name() const override { return "http"; }
    std::size_t max_concurrency() const override { return client_.max_concurrency(); }
    Image generate(const GenerationRequest& r, const AdapterRef* adapter) override {
        json body = {{"prompt", r.prompt}, {"n", r.steps},      {"omega", r.guidance},  {"s", r.lora_scale},
                     {"seed", r.seed},     {"width", r.width}, {"height", r.height}};
        body["adapter_path"] = adapter ? json(adapter->path.string()) : json(nullptr);
        body["adapter_sha256"] = adapter ? json(adapter->sha256) : json(nullptr);
        const json reply = client_.post("/generate", body);
        const auto png = base64_decode(field<std::string>(reply, "png_b64", "/generate"));
        return decode_png(png);
    }

private:
    HttpClient client_;
};

class HttpFeatureExtractor final : public FeatureExtractor {
public:
    explicit HttpFeatureExtractor(const json& options)
        : client_(options), dim_(info_dim(client_, options, "feature_dim")) {}
    std::string name() const override { return "http"; }
    std::size_t dim() const override { return dim_; }
    Eigen::VectorXd extract(std::span<const std::uint8_t> bytes) override {
        const auto v = field<std::vector<double>>(client_.post("/features", {{"image_b64", base64_encode(bytes)}}),
                                                  "features", "/features");
        if (v.size() != dim_) {
            throw Error("http backend /features: expected " + std::to_string(dim_) + " dims, got " +
                        std::to_string(v.size()));
        }
        return to_vector(v);
    }

private:
    HttpClient client_;
    std::size_t dim_;
};

class HttpClassifier final : public ImageClassifier {
public:
    explicit HttpClassifier(const json& options)
        : client_(options), classes_(info_dim(client_, options, "num_classes")) {}
    std::string name() const override { return "http"; }
    std::size_t num_classes() const override { return classes_; }
    Eigen::VectorXd classify(std::span<const std::uint8_t> bytes) override {
        const auto v = field<std::vector<double>>(client_.post("/classify", {{"image_b64", base64_encode(bytes)}}),
                                                  "probabilities", "/classify");
        if (v.size() != classes_) {
            throw Error("http backend /classify: expected " + std::to_string(classes_) + " classes, got " +
                        std::to_string(v.size()));
        }
        return to_vector(v);
    }

private:
    HttpClient client_;
    std::size_t classes_;
};

}  // namespace

void register_http_backends(BackendRegistry& registry) {
    registry.add_captioner("http", [](const json& o) { return std::make_unique<HttpCaptioner>(o); });
    registry.add_embedder("http", [](const json& o) { return std::make_unique<HttpEmbedder>(o); });
    registry.add_paraphraser("http", [](const json& o) { return std::make_unique<HttpParaphraser>(o); });
    registry.add_generator("http", [](const json& o) { return std::make_unique<HttpGenerator>(o); });
    registry.add_feature_extractor("http", [](const json& o) { return std::make_unique<HttpFeatureExtractor>(o); });
    registry.add_classifier("http", [](const json& o) { return std::make_unique<HttpClassifier>(o); });
}

}  // namespace adaptagen
