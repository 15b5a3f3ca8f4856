#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "privpart/dataset.hpp"

namespace privpart {

// Privacy level of a partition: the grouping key that raw data must not be
// shared across.
enum class PrivacyLevel { Centralised, Subject, SubjectEnv, SubjectEnvMod };
enum class FusionMode { Fused, Separated };

inline std::string level_name(PrivacyLevel level) {
    switch (level) {
        case PrivacyLevel::Centralised: return "centralised";
        case PrivacyLevel::Subject: return "subj";
        case PrivacyLevel::SubjectEnv: return "subj+env";
        case PrivacyLevel::SubjectEnvMod: return "subj+env+mod";
    }
    return "?";
}

inline std::string fusion_name(FusionMode fusion) {
    return fusion == FusionMode::Fused ? "fused" : "separated";
}

inline PrivacyLevel parse_level(const std::string& s) {
    if (s == "centralised" || s == "centralized") return PrivacyLevel::Centralised;
    if (s == "subj") return PrivacyLevel::Subject;
    if (s == "subj+env") return PrivacyLevel::SubjectEnv;
    if (s == "subj+env+mod") return PrivacyLevel::SubjectEnvMod;
    throw std::invalid_argument("unknown privacy level '" + s +
                                "' (expected centralised, subj, subj+env or subj+env+mod)");
}

inline FusionMode parse_fusion(const std::string& s) {
    if (s == "fused" || s == "F" || s == "f") return FusionMode::Fused;
    if (s == "separated" || s == "S" || s == "s") return FusionMode::Separated;
    throw std::invalid_argument("unknown fusion mode '" + s + "' (expected fused or separated)");
}

struct PartitionSpec {
    PrivacyLevel level = PrivacyLevel::Centralised;
    FusionMode fusion = FusionMode::Fused;
    int holdout_subject = kNumSubjects;

    // modality-level separation only makes sense for single-view samples
    bool valid() const {
        if (level == PrivacyLevel::SubjectEnvMod && fusion == FusionMode::Fused) return false;
        return holdout_subject >= 1 && holdout_subject <= kNumSubjects;
    }

    std::string label() const {
        return level_name(level) + " (" + (fusion == FusionMode::Fused ? "F" : "S") + ")";
    }
};

struct ClientDataset {
    std::string client_id;
    std::vector<Sample> samples;
};

struct Partitioned {
    std::vector<ClientDataset> train_clients;
    std::vector<Sample> test_set;  // every sample of the holdout subject
};

namespace detail {

inline std::vector<Sample> apply_fusion(const std::vector<Sample>& recordings, FusionMode fusion) {
    if (fusion == FusionMode::Fused) return recordings;
    std::vector<Sample> out;
    out.reserve(recordings.size() * kNumModalities);
    const int w = recordings.empty() ? 0 : recordings.front().width();
    for (const Sample& rec : recordings) {
        for (int m = 0; m < kNumModalities; ++m) {
            if (!rec.present[m]) continue;
            Sample s;
            s.subject = rec.subject;
            s.room = rec.room;
            s.label = rec.label;
            s.modality = m + 1;
            s.present.fill(0);
            s.present[m] = 1;
            s.features.assign(static_cast<std::size_t>(kNumModalities) * w, 0.0);
            std::copy(rec.features.begin() + static_cast<std::size_t>(m) * w,
                      rec.features.begin() + static_cast<std::size_t>(m + 1) * w,
                      s.features.begin() + static_cast<std::size_t>(m) * w);
            out.push_back(std::move(s));
        }
    }
    return out;
}

inline std::string client_id_for(int subject, int room, int modality) {
    std::ostringstream os;
    os << "s" << subject;
    if (room > 0) os << "r" << room;
    if (modality > 0) os << "m" << modality;
    return os.str();
}

}  // namespace detail

// Split recordings into per-client training sets and the holdout test set.
// The input is the raw recording list (all modality slots present); fusion
// decides whether clients and the test set hold fused recordings or one
// sample per modality view. Clients are ordered by subject, then room, then
// modality index.
inline Partitioned partition(const std::vector<Sample>& recordings, const PartitionSpec& spec) {
    if (!spec.valid())
        throw std::invalid_argument("partition: invalid spec (subj+env+mod requires separated)");
    std::set<int> subjects;
    for (const Sample& s : recordings) subjects.insert(s.subject);
    if (static_cast<int>(subjects.size()) != kNumSubjects)
        throw std::invalid_argument("partition: samples must cover all six subjects");

    const std::vector<Sample> samples = detail::apply_fusion(recordings, spec.fusion);

    Partitioned out;
    std::vector<const Sample*> train;
    train.reserve(samples.size());
    for (const Sample& s : samples) {
        if (s.subject == spec.holdout_subject)
            out.test_set.push_back(s);
        else
            train.push_back(&s);
    }

    // grouping key: (subject, room, modality) with unused components zeroed
    std::map<std::tuple<int, int, int>, std::vector<Sample>> groups;
    switch (spec.level) {
        case PrivacyLevel::Centralised: {
            auto& g = groups[{0, 0, 0}];
            for (const Sample* s : train) g.push_back(*s);
            break;
        }
        case PrivacyLevel::Subject: {
            // One subject is split into its two room halves so the client
            // count comes out one higher than the subject count; pick the
            // subject with the most balanced room presence, lowest index on
            // ties.
            std::map<int, std::array<std::size_t, 2>> room_counts;
            for (const Sample* s : train) room_counts[s->subject][s->room - 1]++;
            int split_subject = -1;
            std::size_t best_gap = 0;
            for (const auto& [subj, counts] : room_counts) {
                const std::size_t gap = counts[0] > counts[1] ? counts[0] - counts[1]
                                                              : counts[1] - counts[0];
                if (split_subject < 0 || gap < best_gap) {
                    split_subject = subj;
                    best_gap = gap;
                }
            }
            for (const Sample* s : train) {
                if (s->subject == split_subject)
                    groups[{s->subject, s->room, 0}].push_back(*s);
                else
                    groups[{s->subject, 0, 0}].push_back(*s);
            }
            break;
        }
        case PrivacyLevel::SubjectEnv: {
            for (const Sample* s : train) groups[{s->subject, s->room, 0}].push_back(*s);
            break;
        }
        case PrivacyLevel::SubjectEnvMod: {
            for (const Sample* s : train)
                groups[{s->subject, s->room, s->modality}].push_back(*s);
            break;
        }
    }

    for (auto& [key, group] : groups) {
        const auto [subj, room, mod] = key;
        ClientDataset client;
        client.client_id = (spec.level == PrivacyLevel::Centralised)
                               ? "all"
                               : detail::client_id_for(subj, room, mod);
        client.samples = std::move(group);
        out.train_clients.push_back(std::move(client));
    }
    return out;
}

struct PartitionStats {
    double mean_samples = 0.0;
    double std_samples = 0.0;  // population standard deviation
    std::size_t client_count = 0;
};

inline PartitionStats partition_stats(const std::vector<ClientDataset>& clients) {
    if (clients.empty()) throw std::invalid_argument("partition_stats: empty partition");
    PartitionStats st;
    st.client_count = clients.size();
    double sum = 0.0;
    for (const auto& c : clients) sum += static_cast<double>(c.samples.size());
    st.mean_samples = sum / static_cast<double>(clients.size());
    double var = 0.0;
    for (const auto& c : clients) {
        const double d = static_cast<double>(c.samples.size()) - st.mean_samples;
        var += d * d;
    }
    st.std_samples = std::sqrt(var / static_cast<double>(clients.size()));
    return st;
}

}  // namespace privpart
