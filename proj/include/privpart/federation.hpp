#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "privpart/adamw.hpp"
#include "privpart/dataset.hpp"
#include "privpart/metrics.hpp"
#include "privpart/nn.hpp"
#include "privpart/partition.hpp"
#include "privpart/rng.hpp"

namespace privpart {

struct FederationConfig {
    int rounds = 10;
    int local_epochs = 10;
    double client_fraction = 0.30;
    std::uint64_t seed = 42;

    bool valid() const {
        return rounds >= 1 && local_epochs >= 0 && client_fraction > 0.0 &&
               client_fraction <= 1.0;
    }
};

struct MutualConfig {
    double lambda_global = 0.33;  // weight of KL(group || global) in the global model's loss
    double lambda_group = 0.75;   // weight of KL(global || group) in the group model's loss

    bool valid() const { return lambda_global >= 0.0 && lambda_group >= 0.0; }
};

// One model per modality, federated only among clients of that modality.
using GroupRegistry = std::map<int, ParamVector>;

struct ClientUpdate {
    ParamVector params;
    std::size_t num_samples = 0;
    std::string client_id;
};

// Child-stream tags hanging off a run's master seed. Data generation uses
// kStreamData outside the engine; everything the engine draws comes from the
// other tags, so schedules and inits never depend on the model kind.
inline constexpr std::uint64_t kStreamData = 1;
inline constexpr std::uint64_t kStreamInit = 2;
inline constexpr std::uint64_t kStreamSchedule = 3;
inline constexpr std::uint64_t kStreamClient = 4;
inline constexpr std::uint64_t kStreamGroupInit = 5;

// Number of participants drawn each round.
inline std::size_t clients_per_round(std::size_t pool_size, double fraction) {
    if (pool_size == 0) throw std::invalid_argument("clients_per_round: empty pool");
    // nudge below the product so 0.3 * 30 lands on 9, not 10, despite FP noise
    auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(pool_size) - 1e-9));
    if (k < 1) k = 1;
    if (k > pool_size) k = pool_size;
    return k;
}

// The round's participants: ceil(pool * fraction) distinct indices via
// partial Fisher-Yates on a splitmix64 stream keyed by (master_seed, round).
// Depends on nothing else, so every model kind sees the same sequence.
inline std::vector<std::size_t> sample_clients(std::size_t pool_size, double fraction,
                                               int round_index, std::uint64_t master_seed) {
    const std::size_t k = clients_per_round(pool_size, fraction);
    SplitMix64 rng(derive_seed(derive_seed(master_seed, kStreamSchedule),
                               static_cast<std::uint64_t>(round_index)));
    return sample_without_replacement(pool_size, k, rng);
}

// Full schedule, generated up front.
inline std::vector<std::vector<std::size_t>> make_schedule(std::size_t pool_size, double fraction,
                                                           int rounds,
                                                           std::uint64_t master_seed) {
    std::vector<std::vector<std::size_t>> schedule;
    schedule.reserve(rounds);
    for (int r = 0; r < rounds; ++r)
        schedule.push_back(sample_clients(pool_size, fraction, r, master_seed));
    return schedule;
}

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t rng_seed, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(derive_seed(rng_seed, static_cast<std::uint64_t>(epoch)));
    shuffle(order, rng);
    return order;
}

}  // namespace detail

// Local epochs of plain cross-entropy training: shuffled mini-batches with a
// fresh optimizer per call. The batch order is a pure function of (rng_seed,
// epoch), which mutual training reuses so the two paths stay comparable.
inline ClientUpdate local_train(const ParamVector& params, const Architecture& arch,
                                const ClientDataset& data, int epochs,
                                const OptimizerConfig& opt_cfg, std::uint64_t rng_seed) {
    if (data.samples.empty()) throw std::invalid_argument("local_train: empty client dataset");
    ParamVector p = params;
    OptimizerState state = make_optimizer_state(p.values.size());
    const std::size_t n = data.samples.size();
    const std::size_t bs = static_cast<std::size_t>(opt_cfg.batch_size);
    for (int e = 0; e < epochs; ++e) {
        const auto order = detail::epoch_order(n, rng_seed, e);
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t stop = std::min(start + bs, n);
            const Batch batch = make_batch(data.samples, order, start, stop);
            auto lg = loss_and_grad(arch, p, batch, LossSpec::plain_ce());
            std::tie(p, state) = adamw_step(p, lg.grad, std::move(state), opt_cfg);
        }
    }
    return {std::move(p), n, data.client_id};
}

// Sample-count-weighted coordinate-wise mean. Updates are reduced in
// client_id order regardless of input order, so the floating-point sum is
// reproducible and permutation-invariant.
inline ParamVector fedavg(const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw std::invalid_argument("fedavg: no updates");
    std::vector<const ClientUpdate*> sorted;
    sorted.reserve(updates.size());
    for (const auto& u : updates) sorted.push_back(&u);
    std::sort(sorted.begin(), sorted.end(), [](const ClientUpdate* a, const ClientUpdate* b) {
        return a->client_id < b->client_id;
    });

    const std::string& arch_id = sorted.front()->params.arch_id;
    const std::size_t dim = sorted.front()->params.values.size();
    std::size_t total = 0;
    for (const auto* u : sorted) {
        if (u->params.arch_id != arch_id || u->params.values.size() != dim)
            throw std::invalid_argument("fedavg: mixed architectures");
        if (u->num_samples == 0) throw std::invalid_argument("fedavg: update with zero samples");
        total += u->num_samples;
    }

    ParamVector out;
    out.arch_id = arch_id;
    out.values.assign(dim, 0.0);
    for (const auto* u : sorted) {
        const double w = static_cast<double>(u->num_samples) / static_cast<double>(total);
        for (std::size_t i = 0; i < dim; ++i) out.values[i] += w * u->params.values[i];
    }
    return out;
}

// Deep-mutual-learning step for one client: the global and the group model
// train side by side, each on CE plus its distillation weight times
// KL(peer || own). Peer probabilities are captured once per batch before
// either model steps, so the update is symmetric and order-free. The peer is
// a constant in each model's loss; no gradient crosses over.
inline std::pair<ClientUpdate, ClientUpdate> mutual_local_train(
    const ParamVector& global_params, const ParamVector& group_params,
    const Architecture& global_arch, const Architecture& group_arch, const ClientDataset& data,
    int epochs, const OptimizerConfig& opt_cfg, const MutualConfig& mutual,
    std::uint64_t rng_seed) {
    if (data.samples.empty())
        throw std::invalid_argument("mutual_local_train: empty client dataset");
    if (!mutual.valid()) throw std::invalid_argument("mutual_local_train: bad distillation weights");
    const int modality = data.samples.front().modality;
    if (modality < 1)
        throw std::invalid_argument("mutual_local_train: client data must be single-modality");
    for (const Sample& s : data.samples)
        if (s.modality != modality)
            throw std::invalid_argument("mutual_local_train: mixed-modality client data");

    ParamVector pg = global_params;
    ParamVector ph = group_params;
    OptimizerState sg = make_optimizer_state(pg.values.size());
    OptimizerState sh = make_optimizer_state(ph.values.size());
    const std::size_t n = data.samples.size();
    const std::size_t bs = static_cast<std::size_t>(opt_cfg.batch_size);
    const int classes = global_arch.num_classes;

    for (int e = 0; e < epochs; ++e) {
        const auto order = detail::epoch_order(n, rng_seed, e);
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t stop = std::min(start + bs, n);
            const Batch batch = make_batch(data.samples, order, start, stop);

            const auto probs_global =
                softmax_rows(forward(global_arch, pg, batch), batch.rows, classes);
            const auto probs_group =
                softmax_rows(forward(group_arch, ph, batch), batch.rows, classes);

            auto lg_global = loss_and_grad(global_arch, pg, batch,
                                           LossSpec::mutual_ce_kl(mutual.lambda_global, probs_group));
            auto lg_group = loss_and_grad(group_arch, ph, batch,
                                          LossSpec::mutual_ce_kl(mutual.lambda_group, probs_global));
            std::tie(pg, sg) = adamw_step(pg, lg_global.grad, std::move(sg), opt_cfg);
            std::tie(ph, sh) = adamw_step(ph, lg_group.grad, std::move(sh), opt_cfg);
        }
    }
    return {ClientUpdate{std::move(pg), n, data.client_id},
            ClientUpdate{std::move(ph), n, data.client_id}};
}

// Batched argmax predictions for a sample list.
inline std::vector<int> predict(const Architecture& arch, const ParamVector& params,
                                const std::vector<Sample>& samples) {
    if (samples.empty()) return {};
    Batch batch = make_batch(samples);
    batch.labels.clear();
    const auto logits = forward(arch, params, batch);
    std::vector<int> preds(samples.size());
    for (std::size_t r = 0; r < samples.size(); ++r)
        preds[r] = argmax_row(logits.data() + r * arch.num_classes, arch.num_classes);
    return preds;
}

// Route a single-modality sample to its modality's group model.
inline int ensemble_predict(const GroupRegistry& registry, const Architecture& group_arch,
                            const Sample& sample) {
    if (sample.modality < 1)
        throw std::invalid_argument("ensemble_predict: sample is not single-modality");
    const auto it = registry.find(sample.modality);
    if (it == registry.end())
        throw std::invalid_argument("ensemble_predict: no group model for modality " +
                                    std::to_string(sample.modality));
    const std::vector<Sample> one{sample};
    Batch batch = make_batch(one);
    batch.labels.clear();
    const auto logits = forward(group_arch, it->second, batch);
    return argmax_row(logits.data(), group_arch.num_classes);
}

inline std::vector<int> ensemble_predict_all(const GroupRegistry& registry,
                                             const Architecture& group_arch,
                                             const std::vector<Sample>& samples) {
    std::vector<int> preds;
    preds.reserve(samples.size());
    for (const Sample& s : samples) preds.push_back(ensemble_predict(registry, group_arch, s));
    return preds;
}

enum class TrainMode { Plain, Mutual };

struct ExperimentSetup {
    Partitioned partition;
    std::string partition_label;
    std::string model_label;  // label stamped on the global model's metric rows
    FederationConfig fed;
    OptimizerConfig opt;
    Architecture global_arch;
    Architecture group_arch;  // mutual mode only
    MutualConfig mutual;
    TrainMode mode = TrainMode::Plain;
};

struct ExperimentResult {
    std::vector<RoundMetrics> rounds;
    ParamVector global_model;
    GroupRegistry group_models;  // empty in plain mode
    std::vector<std::vector<std::size_t>> schedule;
};

// One federated run: per round, draw the scheduled clients, train locally
// from the current global parameters (pairing each client with its modality
// group model in mutual mode), aggregate, then evaluate on the holdout test
// set. Group models without a sampled client this round carry over
// unchanged. Evaluation never feeds back into training.
inline ExperimentResult run_experiment(const ExperimentSetup& setup) {
    if (!setup.fed.valid()) throw std::invalid_argument("run_experiment: invalid federation config");
    if (!setup.opt.valid()) throw std::invalid_argument("run_experiment: invalid optimizer config");
    if (setup.partition.train_clients.empty())
        throw std::invalid_argument("run_experiment: no train clients");
    if (setup.partition.test_set.empty())
        throw std::invalid_argument("run_experiment: empty test set");

    const auto& clients = setup.partition.train_clients;
    const std::size_t pool = clients.size();
    const std::uint64_t master = setup.fed.seed;

    std::vector<int> client_modality(pool, 0);
    if (setup.mode == TrainMode::Mutual) {
        if (!setup.mutual.valid())
            throw std::invalid_argument("run_experiment: bad distillation weights");
        for (std::size_t i = 0; i < pool; ++i) {
            const int m = clients[i].samples.empty() ? 0 : clients[i].samples.front().modality;
            if (m < 1)
                throw std::invalid_argument(
                    "run_experiment: mutual mode requires separated single-modality clients");
            for (const Sample& s : clients[i].samples)
                if (s.modality != m)
                    throw std::invalid_argument(
                        "run_experiment: mutual mode requires single-modality clients");
            client_modality[i] = m;
        }
        for (const Sample& s : setup.partition.test_set)
            if (s.modality < 1)
                throw std::invalid_argument(
                    "run_experiment: mutual mode requires a separated test set");
    }

    ExperimentResult result;
    result.schedule = make_schedule(pool, setup.fed.client_fraction, setup.fed.rounds, master);
    result.global_model = init_model(setup.global_arch, derive_seed(master, kStreamInit));

    if (setup.mode == TrainMode::Mutual) {
        std::set<int> modalities;
        for (std::size_t i = 0; i < pool; ++i) modalities.insert(client_modality[i]);
        const std::uint64_t group_root = derive_seed(master, kStreamGroupInit);
        for (int m : modalities)
            result.group_models[m] =
                init_model(setup.group_arch, derive_seed(group_root, static_cast<std::uint64_t>(m)));
    }

    std::vector<int> test_labels;
    test_labels.reserve(setup.partition.test_set.size());
    for (const Sample& s : setup.partition.test_set) test_labels.push_back(s.label);

    const std::uint64_t client_root = derive_seed(master, kStreamClient);
    for (int r = 0; r < setup.fed.rounds; ++r) {
        const std::uint64_t round_root = derive_seed(client_root, static_cast<std::uint64_t>(r));
        std::vector<ClientUpdate> global_updates;
        std::map<int, std::vector<ClientUpdate>> group_updates;
        for (const std::size_t idx : result.schedule[r]) {
            const std::uint64_t train_seed = derive_seed(round_root, idx);
            if (setup.mode == TrainMode::Plain) {
                global_updates.push_back(local_train(result.global_model, setup.global_arch,
                                                     clients[idx], setup.fed.local_epochs,
                                                     setup.opt, train_seed));
            } else {
                auto [ug, uh] = mutual_local_train(
                    result.global_model, result.group_models.at(client_modality[idx]),
                    setup.global_arch, setup.group_arch, clients[idx], setup.fed.local_epochs,
                    setup.opt, setup.mutual, train_seed);
                global_updates.push_back(std::move(ug));
                group_updates[client_modality[idx]].push_back(std::move(uh));
            }
        }
        result.global_model = fedavg(global_updates);
        for (auto& [m, ups] : group_updates) result.group_models[m] = fedavg(ups);

        const auto preds = predict(setup.global_arch, result.global_model, setup.partition.test_set);
        RoundMetrics rm;
        rm.round = r + 1;
        rm.seed = master;
        rm.accuracy = accuracy(preds, test_labels);
        rm.macro_f1 = macro_f1(preds, test_labels, setup.global_arch.num_classes);
        rm.partition_label = setup.partition_label;
        rm.model_label = setup.model_label;
        result.rounds.push_back(std::move(rm));

        if (setup.mode == TrainMode::Mutual) {
            const auto epreds = ensemble_predict_all(result.group_models, setup.group_arch,
                                                     setup.partition.test_set);
            RoundMetrics em;
            em.round = r + 1;
            em.seed = master;
            em.accuracy = accuracy(epreds, test_labels);
            em.macro_f1 = macro_f1(epreds, test_labels, setup.group_arch.num_classes);
            em.partition_label = setup.partition_label;
            em.model_label = "ensemble";
            result.rounds.push_back(std::move(em));
        }
    }
    return result;
}

}  // namespace privpart
