#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "privpart/nn.hpp"
#include "privpart/rng.hpp"

namespace privpart {

inline constexpr int kNumSubjects = 6;
inline constexpr int kNumRooms = 2;
inline constexpr int kNumModalities = 3;
inline constexpr int kNumClasses = 6;

// One activity observation. A raw recording carries all three modality
// views of the same event (modality == 0); a separated sample carries
// exactly one view (modality in [1,3]) with the other slots zeroed.
struct Sample {
    std::vector<double> features;  // kNumModalities * width, absent slots zeroed
    std::array<std::uint8_t, kNumModalities> present{};
    int label = 0;    // [0, kNumClasses)
    int subject = 1;  // [1, kNumSubjects]
    int room = 1;     // [1, kNumRooms]
    int modality = 0; // [1, kNumModalities] for single-view samples, 0 otherwise

    int width() const { return static_cast<int>(features.size()) / kNumModalities; }
};

// Synthetic multimodal activity data. Per class a Gaussian blob in a shared
// base space; subjects and rooms add mean shifts at their own scales; each
// modality views the base space through its own fixed linear transform.
// Room 2 draws labels from a geometrically tilted distribution.
struct GeneratorConfig {
    int feature_width = 8;
    double class_signal = 1.2;              // scale of per-class mean separation
    double subject_shift_scale = 1.0;       // small: per-subject mean shift
    double room_shift_scale = 2.2;          // medium: per-room mean shift
    double modality_transform_scale = 2.4;  // large: per-modality feature transform
    double room_label_skew = 2.2;           // room-2 label weights ~ exp(-skew * class)
    int samples_per_cell = 100;             // per (subject, room)

    bool valid() const {
        return feature_width >= 1 && samples_per_cell >= 1 && class_signal >= 0.0 &&
               subject_shift_scale >= 0.0 && room_shift_scale >= 0.0 &&
               modality_transform_scale >= 0.0 && room_label_skew >= 0.0;
    }
};

namespace detail {

// inverse-CDF draw from weights ~ exp(-skew * c); skew 0 is uniform
inline int draw_label(SplitMix64& rng, double skew) {
    if (skew == 0.0) {
        int c = static_cast<int>(rng.next_below(kNumClasses));
        return c;
    }
    double weights[kNumClasses];
    double total = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        weights[c] = std::exp(-skew * c);
        total += weights[c];
    }
    const double u = rng.next_double() * total;
    double acc = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        acc += weights[c];
        if (u < acc) return c;
    }
    return kNumClasses - 1;
}

// One shift vector per group: random orientation, centred across the groups,
// then rescaled so every group sits exactly `scale` from the shared centre.
// Centring keeps the groups bracketing the class means instead of drifting
// together, and the fixed norm keeps difficulty comparable across seeds.
inline std::vector<std::vector<double>> draw_shifts(SplitMix64& rng, int groups, int width,
                                                    double scale) {
    std::vector<std::vector<double>> shift(groups, std::vector<double>(width));
    for (auto& d : shift)
        for (double& v : d) v = rng.next_normal();
    std::vector<double> mean(width, 0.0);
    for (const auto& d : shift)
        for (int j = 0; j < width; ++j) mean[j] += d[j] / groups;
    for (auto& d : shift) {
        double norm2 = 0.0;
        for (int j = 0; j < width; ++j) {
            d[j] -= mean[j];
            norm2 += d[j] * d[j];
        }
        const double norm = std::sqrt(norm2);
        const double k = norm > 0.0 ? scale / norm : 0.0;
        for (double& v : d) v *= k;
    }
    return shift;
}

}  // namespace detail

// Deterministic per (cfg, seed). Draw order is fixed: class means, subject
// shifts, room shifts, modality transforms, then per-cell samples with
// subjects outermost. Every recording has all three modality slots filled
// from one base draw, so the three views of an event stay aligned.
inline std::vector<Sample> generate(const GeneratorConfig& cfg, std::uint64_t seed) {
    if (!cfg.valid()) throw std::invalid_argument("generate: invalid generator config");
    const int w = cfg.feature_width;
    SplitMix64 rng(seed);

    std::vector<std::vector<double>> class_mean(kNumClasses, std::vector<double>(w));
    for (auto& mu : class_mean)
        for (double& v : mu) v = rng.next_normal() * cfg.class_signal;

    const auto subject_shift =
        detail::draw_shifts(rng, kNumSubjects, w, cfg.subject_shift_scale);
    const auto room_shift = detail::draw_shifts(rng, kNumRooms, w, cfg.room_shift_scale);

    // T_m = I + scale * R / sqrt(w), row-major
    std::vector<std::vector<double>> transform(kNumModalities,
                                               std::vector<double>(static_cast<std::size_t>(w) * w));
    const double tscale = cfg.modality_transform_scale / std::sqrt(static_cast<double>(w));
    for (int m = 0; m < kNumModalities; ++m)
        for (int i = 0; i < w; ++i)
            for (int j = 0; j < w; ++j)
                transform[m][static_cast<std::size_t>(i) * w + j] =
                    (i == j ? 1.0 : 0.0) + tscale * rng.next_normal();

    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(kNumSubjects) * kNumRooms * cfg.samples_per_cell);
    std::vector<double> base(w);
    for (int subject = 1; subject <= kNumSubjects; ++subject) {
        for (int room = 1; room <= kNumRooms; ++room) {
            for (int i = 0; i < cfg.samples_per_cell; ++i) {
                Sample s;
                s.subject = subject;
                s.room = room;
                s.modality = 0;
                s.label = (room == 2) ? detail::draw_label(rng, cfg.room_label_skew)
                                      : detail::draw_label(rng, 0.0);
                for (int j = 0; j < w; ++j)
                    base[j] = class_mean[s.label][j] + subject_shift[subject - 1][j] +
                              room_shift[room - 1][j] + rng.next_normal();
                s.features.assign(static_cast<std::size_t>(kNumModalities) * w, 0.0);
                for (int m = 0; m < kNumModalities; ++m) {
                    s.present[m] = 1;
                    for (int r = 0; r < w; ++r) {
                        double acc = 0.0;
                        const double* trow = transform[m].data() + static_cast<std::size_t>(r) * w;
                        for (int j = 0; j < w; ++j) acc += trow[j] * base[j];
                        s.features[static_cast<std::size_t>(m) * w + r] = acc;
                    }
                }
                out.push_back(std::move(s));
            }
        }
    }
    return out;
}

// Pack samples (all of one width) into a model batch. `order` indexes into
// `samples`; rows [first, last) of that ordering are taken.
inline Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& order,
                        std::size_t first, std::size_t last) {
    if (first >= last || last > order.size())
        throw std::invalid_argument("make_batch: bad row range");
    const int w = samples[order[first]].width();
    Batch b;
    b.rows = static_cast<int>(last - first);
    b.slots = kNumModalities;
    b.width = w;
    b.features.assign(static_cast<std::size_t>(b.rows) * b.slots * w, 0.0);
    b.present.assign(static_cast<std::size_t>(b.rows) * b.slots, 0);
    b.labels.resize(b.rows);
    for (std::size_t r = first; r < last; ++r) {
        const Sample& s = samples[order[r]];
        if (s.width() != w) throw std::invalid_argument("make_batch: mixed feature widths");
        const std::size_t row = r - first;
        std::copy(s.features.begin(), s.features.end(),
                  b.features.begin() + row * b.slots * w);
        for (int m = 0; m < kNumModalities; ++m)
            b.present[row * b.slots + m] = s.present[m];
        b.labels[row] = s.label;
    }
    return b;
}

inline Batch make_batch(const std::vector<Sample>& samples) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    return make_batch(samples, order, 0, order.size());
}

// --- line-delimited manifest -------------------------------------------
// One JSON record per sample: subject, room, modality, label, features
// (one array per modality slot). Presence is implied by the modality field.

inline void write_manifest(const std::vector<Sample>& samples, std::ostream& os) {
    for (const Sample& s : samples) {
        nlohmann::json rec;
        rec["subject"] = s.subject;
        rec["room"] = s.room;
        rec["modality"] = s.modality;
        rec["label"] = s.label;
        const int w = s.width();
        nlohmann::json slots = nlohmann::json::array();
        for (int m = 0; m < kNumModalities; ++m) {
            nlohmann::json arr = nlohmann::json::array();
            for (int j = 0; j < w; ++j) arr.push_back(s.features[static_cast<std::size_t>(m) * w + j]);
            slots.push_back(std::move(arr));
        }
        rec["features"] = std::move(slots);
        os << rec.dump() << '\n';
    }
}

inline void write_manifest(const std::vector<Sample>& samples, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_manifest: cannot open " + path);
    write_manifest(samples, os);
}

inline std::vector<Sample> read_manifest(std::istream& is) {
    std::vector<Sample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            Sample s;
            s.subject = rec.at("subject").get<int>();
            s.room = rec.at("room").get<int>();
            s.modality = rec.at("modality").get<int>();
            s.label = rec.at("label").get<int>();
            const auto& slots = rec.at("features");
            if (!slots.is_array() || slots.size() != kNumModalities)
                throw std::runtime_error("expected one feature array per modality");
            const std::size_t w = slots.at(0).size();
            s.features.assign(kNumModalities * w, 0.0);
            for (int m = 0; m < kNumModalities; ++m) {
                const auto& arr = slots.at(m);
                if (arr.size() != w) throw std::runtime_error("ragged feature arrays");
                for (std::size_t j = 0; j < w; ++j)
                    s.features[static_cast<std::size_t>(m) * w + j] = arr.at(j).get<double>();
            }
            if (s.modality == 0) {
                s.present.fill(1);
            } else if (s.modality >= 1 && s.modality <= kNumModalities) {
                s.present.fill(0);
                s.present[s.modality - 1] = 1;
            } else {
                throw std::runtime_error("modality out of range");
            }
            if (s.subject < 1 || s.subject > kNumSubjects || s.room < 1 || s.room > kNumRooms ||
                s.label < 0 || s.label >= kNumClasses)
                throw std::runtime_error("field out of range");
            out.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + e.what());
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<Sample> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_manifest: cannot open " + path);
    return read_manifest(is);
}

}  // namespace privpart
