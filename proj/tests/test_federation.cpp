#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <vector>

#include <privpart/adamw.hpp>
#include <privpart/dataset.hpp>
#include <privpart/federation.hpp>
#include <privpart/partition.hpp>
#include <privpart/rng.hpp>

using namespace privpart;

namespace {

Architecture small_flat() {
    Architecture a;
    a.kind = ArchKind::FlatDense;
    a.input_width = 8;
    a.max_modalities = 3;
    a.hidden = {6};
    a.num_classes = kNumClasses;
    return a;
}

Architecture small_token() {
    Architecture a = small_flat();
    a.kind = ArchKind::TokenPooling;
    return a;
}

GeneratorConfig small_gen() {
    GeneratorConfig g;
    g.samples_per_cell = 6;
    return g;
}

OptimizerConfig fast_opt() {
    OptimizerConfig o;
    o.learning_rate = 0.01;
    return o;
}

ClientDataset first_client(PrivacyLevel level, FusionMode fusion, std::uint64_t seed) {
    PartitionSpec spec;
    spec.level = level;
    spec.fusion = fusion;
    return partition(generate(small_gen(), seed), spec).train_clients.front();
}

ParamVector pv(std::vector<double> v, std::string id = "x") {
    ParamVector p;
    p.arch_id = std::move(id);
    p.values = std::move(v);
    return p;
}

}  // namespace

TEST_CASE("clients per round uses the ceiling with a clamp") {
    CHECK(clients_per_round(1, 0.3) == 1);
    CHECK(clients_per_round(6, 0.3) == 2);
    CHECK(clients_per_round(10, 0.3) == 3);
    CHECK(clients_per_round(30, 0.3) == 9);
    CHECK(clients_per_round(10, 1.0) == 10);
    CHECK(clients_per_round(3, 0.01) == 1);
    CHECK_THROWS_AS(clients_per_round(0, 0.3), std::invalid_argument);
}

TEST_CASE("client sampling is deterministic, distinct and schedule-stable") {
    const auto a = sample_clients(30, 0.3, 4, 42);
    const auto b = sample_clients(30, 0.3, 4, 42);
    CHECK(a == b);
    REQUIRE(a.size() == 9);
    std::set<std::size_t> uniq(a.begin(), a.end());
    CHECK(uniq.size() == 9);
    for (const auto i : a) CHECK(i < 30);

    const auto schedule = make_schedule(30, 0.3, 10, 42);
    REQUIRE(schedule.size() == 10);
    for (int r = 0; r < 10; ++r) CHECK(schedule[r] == sample_clients(30, 0.3, r, 42));

    // rounds see different draws (overwhelmingly likely under any sane hash)
    CHECK(schedule[0] != schedule[1]);
}

TEST_CASE("zero local epochs returns the input parameters") {
    const auto arch = small_flat();
    const auto params = init_model(arch, 1);
    const auto client = first_client(PrivacyLevel::SubjectEnv, FusionMode::Fused, 5);
    const auto up = local_train(params, arch, client, 0, fast_opt(), 7);
    CHECK(up.params.values == params.values);
    CHECK(up.num_samples == client.samples.size());
    CHECK(up.client_id == client.client_id);
}

TEST_CASE("one epoch of local training matches a hand-driven loop") {
    const auto arch = small_flat();
    const auto params = init_model(arch, 2);
    const auto client = first_client(PrivacyLevel::SubjectEnv, FusionMode::Fused, 6);
    const auto opt = fast_opt();
    const std::uint64_t rng_seed = 99;

    const auto up = local_train(params, arch, client, 1, opt, rng_seed);

    ParamVector p = params;
    OptimizerState st = make_optimizer_state(p.values.size());
    const auto order = detail::epoch_order(client.samples.size(), rng_seed, 0);
    const std::size_t bs = static_cast<std::size_t>(opt.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::size_t stop = std::min(start + bs, order.size());
        const Batch batch = make_batch(client.samples, order, start, stop);
        const auto lg = loss_and_grad(arch, p, batch, LossSpec::plain_ce());
        std::tie(p, st) = adamw_step(p, lg.grad, std::move(st), opt);
    }
    CHECK(up.params.values == p.values);
}

TEST_CASE("local training lowers the client loss") {
    const auto arch = small_flat();
    const auto params = init_model(arch, 3);
    const auto client = first_client(PrivacyLevel::Centralised, FusionMode::Fused, 8);
    const auto batch = make_batch(client.samples);
    const double before = loss_and_grad(arch, params, batch, LossSpec::plain_ce()).loss;
    const auto up = local_train(params, arch, client, 5, fast_opt(), 1);
    const double after = loss_and_grad(arch, up.params, batch, LossSpec::plain_ce()).loss;
    CHECK(after < before);
}

TEST_CASE("fedavg hand oracle and identity") {
    std::vector<ClientUpdate> updates;
    updates.push_back({pv({1.0, 3.0}), 1, "a"});
    updates.push_back({pv({5.0, 7.0}), 3, "b"});
    const auto avg = fedavg(updates);
    CHECK(avg.values[0] == Catch::Approx(4.0).epsilon(1e-15));
    CHECK(avg.values[1] == Catch::Approx(6.0).epsilon(1e-15));

    const auto one = fedavg({{pv({2.5, -1.5}), 7, "solo"}});
    CHECK(one.values == std::vector<double>{2.5, -1.5});
}

TEST_CASE("fedavg is invariant to the order updates arrive") {
    SplitMix64 rng(17);
    std::vector<ClientUpdate> updates;
    for (int i = 0; i < 7; ++i) {
        std::vector<double> v(11);
        for (double& x : v) x = rng.next_normal();
        updates.push_back({pv(std::move(v)), rng.next_below(50) + 1,
                           "client-" + std::to_string(i)});
    }
    const auto base = fedavg(updates);
    auto shuffled = updates;
    shuffle(shuffled, rng);
    const auto again = fedavg(shuffled);
    CHECK(base.values == again.values);  // bitwise, thanks to the sorted reduction
}

TEST_CASE("averaging identical models returns them") {
    const auto p = init_model(small_flat(), 4);
    // power-of-two equal weights: exact
    std::vector<ClientUpdate> four;
    for (int i = 0; i < 4; ++i) four.push_back({p, 5, "c" + std::to_string(i)});
    CHECK(fedavg(four).values == p.values);
    // three-way split only rounds
    std::vector<ClientUpdate> three;
    for (int i = 0; i < 3; ++i) three.push_back({p, 5, "c" + std::to_string(i)});
    const auto avg = fedavg(three);
    for (std::size_t i = 0; i < p.values.size(); ++i)
        CHECK(avg.values[i] == Catch::Approx(p.values[i]).margin(1e-12));
}

TEST_CASE("fedavg rejects mixed architectures and empty updates") {
    CHECK_THROWS_AS(fedavg({}), std::invalid_argument);
    std::vector<ClientUpdate> updates;
    updates.push_back({pv({1.0}, "a"), 1, "x"});
    updates.push_back({pv({1.0}, "b"), 1, "y"});
    CHECK_THROWS_AS(fedavg(updates), std::invalid_argument);
    std::vector<ClientUpdate> zero;
    zero.push_back({pv({1.0}), 0, "x"});
    CHECK_THROWS_AS(fedavg(zero), std::invalid_argument);
}

TEST_CASE("mutual training with zero weights equals two plain runs") {
    const auto global_arch = small_token();
    const auto group_arch = small_flat();
    PartitionSpec spec;
    spec.level = PrivacyLevel::SubjectEnvMod;
    spec.fusion = FusionMode::Separated;
    const auto parts = partition(generate(small_gen(), 9), spec);
    const auto& client = parts.train_clients.front();

    const auto pg = init_model(global_arch, 10);
    const auto ph = init_model(group_arch, 11);
    MutualConfig off;
    off.lambda_global = 0.0;
    off.lambda_group = 0.0;

    const auto [ug, uh] =
        mutual_local_train(pg, ph, global_arch, group_arch, client, 3, fast_opt(), off, 77);
    const auto plain_g = local_train(pg, global_arch, client, 3, fast_opt(), 77);
    const auto plain_h = local_train(ph, group_arch, client, 3, fast_opt(), 77);
    CHECK(ug.params.values == plain_g.params.values);
    CHECK(uh.params.values == plain_h.params.values);
}

TEST_CASE("mutual training changes both models when the weights are on") {
    const auto global_arch = small_token();
    const auto group_arch = small_flat();
    const auto client = first_client(PrivacyLevel::SubjectEnvMod, FusionMode::Separated, 12);
    const auto pg = init_model(global_arch, 13);
    const auto ph = init_model(group_arch, 14);
    const MutualConfig on;  // 0.33 / 0.75

    const auto [ug, uh] =
        mutual_local_train(pg, ph, global_arch, group_arch, client, 2, fast_opt(), on, 21);
    const auto plain_g = local_train(pg, global_arch, client, 2, fast_opt(), 21);
    CHECK(ug.params.values != plain_g.params.values);
    CHECK(uh.params.values != ph.values);
}

TEST_CASE("mutual training rejects fused or mixed-modality clients") {
    const auto global_arch = small_token();
    const auto group_arch = small_flat();
    const auto pg = init_model(global_arch, 15);
    const auto ph = init_model(group_arch, 16);

    const auto fused = first_client(PrivacyLevel::SubjectEnv, FusionMode::Fused, 17);
    CHECK_THROWS_AS(mutual_local_train(pg, ph, global_arch, group_arch, fused, 1, fast_opt(),
                                       MutualConfig{}, 1),
                    std::invalid_argument);

    // separated but grouped above modality level: mixed views in one client
    const auto mixed = first_client(PrivacyLevel::SubjectEnv, FusionMode::Separated, 17);
    CHECK_THROWS_AS(mutual_local_train(pg, ph, global_arch, group_arch, mixed, 1, fast_opt(),
                                       MutualConfig{}, 1),
                    std::invalid_argument);
}

TEST_CASE("a one-client federation reduces to sequential local training") {
    const auto arch = small_flat();
    const std::uint64_t seed = 42;
    const auto data = generate(small_gen(), derive_seed(seed, kStreamData));
    PartitionSpec spec;  // centralised (F)
    ExperimentSetup setup;
    setup.partition = partition(data, spec);
    setup.partition_label = spec.label();
    setup.model_label = "flat-dense";
    setup.fed.rounds = 3;
    setup.fed.local_epochs = 2;
    setup.fed.seed = seed;
    setup.opt = fast_opt();
    setup.global_arch = arch;
    setup.group_arch = arch;
    const auto result = run_experiment(setup);

    ParamVector p = init_model(arch, derive_seed(seed, kStreamInit));
    const std::uint64_t client_root = derive_seed(seed, kStreamClient);
    for (int r = 0; r < 3; ++r) {
        const std::uint64_t train_seed = derive_seed(derive_seed(client_root, r), 0);
        const auto up = local_train(p, arch, setup.partition.train_clients.front(), 2,
                                    setup.opt, train_seed);
        p = fedavg({up});
    }
    CHECK(result.global_model.values == p.values);
    REQUIRE(result.rounds.size() == 3);
    for (int r = 0; r < 3; ++r) {
        CHECK(result.rounds[r].round == r + 1);
        CHECK(result.rounds[r].model_label == "flat-dense");
    }
}

TEST_CASE("the client schedule does not depend on the model kind") {
    const auto data = generate(small_gen(), derive_seed(7, kStreamData));
    PartitionSpec spec;
    spec.level = PrivacyLevel::SubjectEnvMod;
    spec.fusion = FusionMode::Separated;

    ExperimentSetup setup;
    setup.partition = partition(data, spec);
    setup.partition_label = spec.label();
    setup.model_label = "flat-dense";
    setup.fed.rounds = 4;
    setup.fed.local_epochs = 1;
    setup.fed.seed = 7;
    setup.opt = fast_opt();
    setup.global_arch = small_flat();
    setup.group_arch = small_flat();
    const auto a = run_experiment(setup);

    setup.global_arch = small_token();
    setup.group_arch = small_token();
    setup.model_label = "token-pooling";
    const auto b = run_experiment(setup);
    CHECK(a.schedule == b.schedule);

    ExperimentSetup mut = setup;
    mut.mode = TrainMode::Mutual;
    mut.global_arch = small_token();
    mut.group_arch = small_flat();
    mut.model_label = "mutual-global";
    const auto c = run_experiment(mut);
    CHECK(a.schedule == c.schedule);
}

TEST_CASE("mutual experiments reject fused partitions and emit ensemble rows") {
    const auto data = generate(small_gen(), derive_seed(3, kStreamData));

    ExperimentSetup bad;
    PartitionSpec fused;  // centralised (F)
    bad.partition = partition(data, fused);
    bad.partition_label = fused.label();
    bad.model_label = "mutual-global";
    bad.fed.rounds = 1;
    bad.fed.local_epochs = 1;
    bad.fed.seed = 3;
    bad.opt = fast_opt();
    bad.global_arch = small_token();
    bad.group_arch = small_flat();
    bad.mode = TrainMode::Mutual;
    CHECK_THROWS_AS(run_experiment(bad), std::invalid_argument);

    PartitionSpec sem;
    sem.level = PrivacyLevel::SubjectEnvMod;
    sem.fusion = FusionMode::Separated;
    ExperimentSetup good = bad;
    good.partition = partition(data, sem);
    good.partition_label = sem.label();
    good.fed.rounds = 2;
    const auto result = run_experiment(good);
    REQUIRE(result.rounds.size() == 4);  // global + ensemble per round
    CHECK(result.rounds[0].model_label == "mutual-global");
    CHECK(result.rounds[1].model_label == "ensemble");
    CHECK(result.group_models.size() == 3);
}

TEST_CASE("unsampled group models carry forward their initialisation") {
    // three single-modality clients, one sampled per round
    const auto data = generate(small_gen(), derive_seed(19, kStreamData));
    PartitionSpec sem;
    sem.level = PrivacyLevel::SubjectEnvMod;
    sem.fusion = FusionMode::Separated;
    auto parts = partition(data, sem);
    // keep exactly one client per modality
    std::vector<ClientDataset> keep;
    std::set<int> seen;
    for (const auto& c : parts.train_clients)
        if (seen.insert(c.samples.front().modality).second) keep.push_back(c);
    parts.train_clients = keep;
    REQUIRE(parts.train_clients.size() == 3);

    ExperimentSetup setup;
    setup.partition = parts;
    setup.partition_label = sem.label();
    setup.model_label = "mutual-global";
    setup.fed.rounds = 1;
    setup.fed.local_epochs = 1;
    setup.fed.client_fraction = 0.34;  // one of three clients per round
    setup.fed.seed = 19;
    setup.opt = fast_opt();
    setup.global_arch = small_token();
    setup.group_arch = small_flat();
    setup.mode = TrainMode::Mutual;
    const auto result = run_experiment(setup);

    REQUIRE(result.schedule.size() == 1);
    REQUIRE(result.schedule[0].size() == 2);
    std::set<int> sampled;
    for (const auto idx : result.schedule[0])
        sampled.insert(parts.train_clients[idx].samples.front().modality);

    const std::uint64_t group_root = derive_seed(19, kStreamGroupInit);
    for (int m = 1; m <= 3; ++m) {
        const auto init = init_model(setup.group_arch, derive_seed(group_root, m));
        if (sampled.count(m) == 0)
            CHECK(result.group_models.at(m).values == init.values);
        else
            CHECK(result.group_models.at(m).values != init.values);
    }
}

TEST_CASE("ensemble prediction routes by modality") {
    // linear group models with zero weights and a biased class per modality:
    // modality m always predicts class m
    Architecture lin;
    lin.kind = ArchKind::FlatDense;
    lin.input_width = 8;
    lin.max_modalities = 3;
    lin.hidden = {};
    lin.num_classes = kNumClasses;

    GroupRegistry registry;
    for (int m = 1; m <= 3; ++m) {
        ParamVector p;
        p.arch_id = lin.id();
        p.values.assign(param_count(lin), 0.0);
        p.values[p.values.size() - kNumClasses + m] = 1.0;  // bias of class m
        registry[m] = p;
    }

    const auto data = generate(small_gen(), 1);
    PartitionSpec cen;
    cen.fusion = FusionMode::Separated;
    const auto parts = partition(data, cen);
    for (const Sample& s : parts.test_set)
        CHECK(ensemble_predict(registry, lin, s) == s.modality);

    Sample fused_sample = data.front();
    CHECK_THROWS_AS(ensemble_predict(registry, lin, fused_sample), std::invalid_argument);

    registry.erase(2);
    Sample view2;
    for (const Sample& s : parts.test_set)
        if (s.modality == 2) {
            view2 = s;
            break;
        }
    CHECK_THROWS_AS(ensemble_predict(registry, lin, view2), std::invalid_argument);
}
