#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace privpart {

struct RoundMetrics {
    int round = 0;  // 1-based
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::string partition_label;
    std::string model_label;
};

struct SeedSummary {
    double mean = 0.0;
    double std_dev = 0.0;  // population standard deviation
    int n_seeds = 0;
};

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("accuracy: length mismatch");
    if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (predictions[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// Unweighted mean over all classes of per-class F1 = 2PR/(P+R). A class with
// no predicted and no actual positives contributes 0.
inline double macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                       int num_classes) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("macro_f1: length mismatch");
    if (predictions.empty()) throw std::invalid_argument("macro_f1: empty input");
    if (num_classes < 1) throw std::invalid_argument("macro_f1: num_classes < 1");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= num_classes || predictions[i] < 0 ||
            predictions[i] >= num_classes)
            throw std::invalid_argument("macro_f1: class index out of range");

    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] == labels[i]) {
            tp[labels[i]]++;
        } else {
            fp[predictions[i]]++;
            fn[labels[i]]++;
        }
    }
    double acc = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        const double p_den = static_cast<double>(tp[c] + fp[c]);
        const double r_den = static_cast<double>(tp[c] + fn[c]);
        const double precision = p_den > 0.0 ? tp[c] / p_den : 0.0;
        const double recall = r_den > 0.0 ? tp[c] / r_den : 0.0;
        const double f1 =
            (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        acc += f1;
    }
    return acc / num_classes;
}

inline SeedSummary aggregate_seeds(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("aggregate_seeds: empty input");
    SeedSummary s;
    s.n_seeds = static_cast<int>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / values.size();
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.std_dev = std::sqrt(var / values.size());
    return s;
}

}  // namespace privpart
