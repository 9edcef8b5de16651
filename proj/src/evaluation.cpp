#include "adaptagen/evaluation.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace adaptagen {

void FeatureStats::validate() const {
    if (count < 2) {
        throw Error("feature stats need at least 2 samples");
    }
    if (cov.rows() != cov.cols() || cov.rows() != mean.size()) {
        throw Error("feature stats: covariance shape does not match mean");
    }
    if (!mean.allFinite() || !cov.allFinite()) {
        throw Error("feature stats contain non-finite values");
    }
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
        throw Error("feature stats: covariance is not symmetric");
    }
}

FeatureStats feature_stats(const Eigen::MatrixXd& features) {
    if (features.rows() < 2) {
        throw Error("feature_stats needs at least 2 rows, got " + std::to_string(features.rows()));
    }
    if (!features.allFinite()) {
        throw Error("feature_stats: non-finite feature values");
    }
    FeatureStats s;
    s.count = static_cast<std::size_t>(features.rows());
    s.mean = features.colwise().mean().transpose();
    const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(features.rows() - 1);
    s.cov = 0.5 * (cov + cov.transpose());
    return s;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    if (eig.info() != Eigen::Success) {
        throw Error(std::string("fid: eigendecomposition failed for ") + what);
    }
    Eigen::VectorXd values = eig.eigenvalues();
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (values(i) < 0.0) {
            if (std::sqrt(-values(i)) > kFidImaginaryTolerance) {
                std::ostringstream os;
                os << "fid: " << what << " has eigenvalue " << values(i) << " (not positive semi-definite)";
                throw Error(os.str());
            }
            values(i) = 0.0;
        }
    }
    return eig.eigenvectors() * values.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double fid(const FeatureStats& a, const FeatureStats& b) {
    a.validate();
    b.validate();
    if (a.dim() != b.dim()) {
        throw Error("fid: dimension mismatch " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
    }
    const Eigen::MatrixXd root_a = psd_sqrt(a.cov, "covariance a");
    Eigen::MatrixXd product = root_a * b.cov * root_a;
    product = 0.5 * (product + product.transpose());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(product, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) {
        throw Error("fid: eigendecomposition of the covariance product failed");
    }
    double trace_sqrt = 0.0;
    for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
        const double lambda = eig.eigenvalues()(i);
        if (lambda < 0.0) {
            const double imaginary = std::sqrt(-lambda);
            if (imaginary > kFidImaginaryTolerance) {
                std::ostringstream os;
                os << "fid: matrix square root has imaginary component " << imaginary;
                throw Error(os.str());
            }
            continue;
        }
        trace_sqrt += std::sqrt(lambda);
    }

    const double mean_term = (a.mean - b.mean).squaredNorm();
    const double value = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt;
    if (!std::isfinite(value)) {
        throw Error("fid: non-finite result");
    }
    if (value < 0.0) {
        if (value >= -1e-8) {
            return 0.0;
        }
        std::ostringstream os;
        os << "fid: negative distance " << value;
        throw Error(os.str());
    }
    return value;
}

void ClassProbabilities::validate() const {
    if (rows.rows() == 0 || rows.cols() == 0) {
        throw Error("class probabilities are empty");
    }
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        if (!rows.row(i).allFinite() || rows.row(i).minCoeff() < 0.0) {
            throw Error("class probability row " + std::to_string(i) + " has negative or non-finite entries");
        }
        const double sum = rows.row(i).sum();
        if (std::abs(sum - 1.0) > 1e-6) {
            std::ostringstream os;
            os << "class probability row " << i << " sums to " << sum << ", not 1";
            throw Error(os.str());
        }
    }
}

InceptionScore inception_score(const ClassProbabilities& probs, std::size_t splits) {
    probs.validate();
    const auto n = static_cast<std::size_t>(probs.rows.rows());
    if (splits == 0 || n < splits) {
        throw Error("inception_score: need at least " + std::to_string(splits) + " rows, got " + std::to_string(n));
    }
    const auto k = probs.rows.cols();
    std::vector<double> scores;
    scores.reserve(splits);
    for (std::size_t s = 0; s < splits; ++s) {
        const auto begin = static_cast<Eigen::Index>(s * n / splits);
        const auto end = static_cast<Eigen::Index>((s + 1) * n / splits);
        const auto chunk = probs.rows.middleRows(begin, end - begin);
        const Eigen::RowVectorXd marginal = chunk.colwise().mean();
        double kl_sum = 0.0;
        for (Eigen::Index i = 0; i < chunk.rows(); ++i) {
            double kl = 0.0;
            for (Eigen::Index c = 0; c < k; ++c) {
                const double p = chunk(i, c);
                if (p > 0.0) {
                    kl += p * (std::log(std::max(p, kLogFloor)) - std::log(std::max(marginal(c), kLogFloor)));
                }
            }
            kl_sum += kl;
        }
        scores.push_back(std::exp(kl_sum / static_cast<double>(chunk.rows())));
    }
    InceptionScore out;
    for (double v : scores) {
        out.mean += v;
    }
    out.mean /= static_cast<double>(scores.size());
    double var = 0.0;
    for (double v : scores) {
        var += (v - out.mean) * (v - out.mean);
    }
    out.std = std::sqrt(var / static_cast<double>(scores.size()));
    return out;
}

double clip_score(const std::vector<EmbeddingVector>& image_embeddings,
                  const std::vector<EmbeddingVector>& prompt_embeddings, ClipConvention convention) {
    if (image_embeddings.size() != prompt_embeddings.size()) {
        throw Error("clip_score: " + std::to_string(image_embeddings.size()) + " images vs " +
                    std::to_string(prompt_embeddings.size()) + " prompts");
    }
    if (image_embeddings.empty()) {
        throw Error("clip_score: no pairs");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < image_embeddings.size(); ++i) {
        const double c = cosine(image_embeddings[i], prompt_embeddings[i]);
        sum += convention == ClipConvention::raw ? c : 2.5 * std::max(c, 0.0);
    }
    return sum / static_cast<double>(image_embeddings.size());
}

void aggregate(MetricReport& report) {
    CategoryMetrics overall;
    overall.is_mean = 0.0;
    if (report.per_category.empty()) {
        throw Error("metric report has no categories");
    }
    for (const auto& [_, m] : report.per_category) {
        overall.fid += m.fid;
        overall.is_mean += m.is_mean;
        overall.is_std += m.is_std;
        overall.clip_score += m.clip_score;
        overall.n_real += m.n_real;
        overall.n_generated += m.n_generated;
    }
    const double n = static_cast<double>(report.per_category.size());
    overall.fid /= n;
    overall.is_mean /= n;
    overall.is_std /= n;
    overall.clip_score /= n;
    report.overall = overall;
}

namespace {

json metrics_to_json(const CategoryMetrics& m) {
    return {{"fid", m.fid},           {"is_mean", m.is_mean}, {"is_std", m.is_std},
            {"clip_score", m.clip_score}, {"n_real", m.n_real},   {"n_generated", m.n_generated}};
}

CategoryMetrics metrics_from_json(const json& j) {
    CategoryMetrics m;
    m.fid = j.at("fid").get<double>();
    m.is_mean = j.at("is_mean").get<double>();
    m.is_std = j.at("is_std").get<double>();
    m.clip_score = j.at("clip_score").get<double>();
    m.n_real = j.at("n_real").get<std::size_t>();
    m.n_generated = j.at("n_generated").get<std::size_t>();
    return m;
}

void check_metrics(const json& j, const std::string& where, const std::string& convention,
                   std::vector<std::string>& problems) {
    if (!j.is_object()) {
        problems.push_back(where + " is not an object");
        return;
    }
    for (const char* key : {"fid", "is_mean", "is_std", "clip_score"}) {
        if (!j.contains(key) || !j[key].is_number()) {
            problems.push_back(where + "." + key + " missing or not a number");
        }
    }
    for (const char* key : {"n_real", "n_generated"}) {
        if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<std::int64_t>() < 0) {
            problems.push_back(where + "." + key + " missing or not a non-negative integer");
        }
    }
    if (!problems.empty()) {
        return;
    }
    if (j["fid"].get<double>() < 0.0) {
        problems.push_back(where + ".fid is negative");
    }
    if (j["is_mean"].get<double>() < 1.0 - 1e-9) {
        problems.push_back(where + ".is_mean is below 1");
    }
    if (j["is_std"].get<double>() < 0.0) {
        problems.push_back(where + ".is_std is negative");
    }
    const double clip = j["clip_score"].get<double>();
    const double lo = convention == "raw" ? -1.0 : 0.0;
    const double hi = convention == "raw" ? 1.0 : 2.5;
    if (clip < lo - 1e-12 || clip > hi + 1e-12) {
        problems.push_back(where + ".clip_score out of range");
    }
}

}  // namespace

json metric_report_to_json(const MetricReport& report) {
    json per = json::object();
    for (const auto& [cat, m] : report.per_category) {
        per[cat] = metrics_to_json(m);
    }
    return {{"overall", metrics_to_json(report.overall)},
            {"per_category", std::move(per)},
            {"metadata",
             {{"backends", report.backends}, {"clip_convention", report.clip_convention}, {"splits", report.splits}}}};
}

MetricReport metric_report_from_json(const json& doc) {
    MetricReport r;
    r.overall = metrics_from_json(doc.at("overall"));
    for (const auto& [cat, m] : doc.at("per_category").items()) {
        r.per_category[cat] = metrics_from_json(m);
    }
    if (doc.contains("metadata")) {
        const auto& meta = doc["metadata"];
        r.backends = meta.value("backends", std::map<std::string, std::string>{});
        r.clip_convention = meta.value("clip_convention", std::string("raw"));
        r.splits = meta.value("splits", std::size_t{10});
    }
    return r;
}

std::vector<std::string> validate_metrics_json(const json& doc) {
    std::vector<std::string> problems;
    if (!doc.is_object()) {
        return {"document is not an object"};
    }
    std::string convention = "raw";
    if (doc.contains("metadata") && doc["metadata"].is_object()) {
        convention = doc["metadata"].value("clip_convention", convention);
    }
    if (!doc.contains("overall")) {
        problems.push_back("missing overall");
    } else {
        check_metrics(doc["overall"], "overall", convention, problems);
    }
    if (!doc.contains("per_category") || !doc["per_category"].is_object() || doc["per_category"].empty()) {
        problems.push_back("per_category missing or empty");
        return problems;
    }
    double fid_sum = 0.0;
    for (const auto& [cat, m] : doc["per_category"].items()) {
        check_metrics(m, "per_category." + cat, convention, problems);
        if (problems.empty()) {
            fid_sum += m["fid"].get<double>();
        }
    }
    if (problems.empty()) {
        const double mean = fid_sum / static_cast<double>(doc["per_category"].size());
        if (std::abs(mean - doc["overall"]["fid"].get<double>()) > 1e-9 * std::max(1.0, std::abs(mean))) {
            problems.push_back("overall.fid is not the mean of per-category values");
        }
    }
    return problems;
}

}  // namespace adaptagen
