// cropuf: simulate crossover ring-oscillator PUF devices, extract delay
// models, pick reliability thresholds, generate per-key challenges, and run
// the TTP key-sharing protocol between simulated devices.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <thread>

#include "cropuf/cropuf.hpp"

using namespace cropuf;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string key_hex(const SharedKey& key) {
    std::vector<std::uint8_t> packed((key.bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < key.bits.size(); ++i)
        packed[i / 8] = static_cast<std::uint8_t>(packed[i / 8] << 1 | key.bits[i]);
    if (key.bits.size() % 8) packed.back() = static_cast<std::uint8_t>(packed.back() << (8 - key.bits.size() % 8));
    return to_hex(packed);
}

/// Values from an optional JSON config file fill in flags the user did not
/// pass on the command line.
struct ConfigFile {
    json values = json::object();

    void load(const std::string& path) { values = load_json_file(path); }

    template <typename T>
    void fill(const CLI::Option* opt, const char* key, T& value) const {
        if (opt != nullptr && opt->count() > 0) return;  // explicit flag wins
        if (values.contains(key)) value = values.at(key).get<T>();
    }
};

struct ParamFlags {
    PufParams params;
    CLI::Option *o_n = nullptr, *o_m = nullptr, *o_nominal = nullptr, *o_sigma = nullptr, *o_tref = nullptr,
                *o_tcm = nullptr, *o_tcs = nullptr, *o_jitter = nullptr, *o_window = nullptr,
                *o_crossing = nullptr, *o_int = nullptr, *o_seed = nullptr;

    void attach(CLI::App* cmd) {
        o_n = cmd->add_option("--n", params.n, "oscillator rows");
        o_m = cmd->add_option("--m", params.m, "inverter stages per row (odd)");
        o_nominal = cmd->add_option("--nominal-delay", params.nominal_delay, "mean per-inverter delay");
        o_sigma = cmd->add_option("--sigma-process", params.sigma_process, "process variation std-dev");
        o_tref = cmd->add_option("--temp-ref", params.temp_ref, "reference temperature, C");
        o_tcm = cmd->add_option("--temp-coeff-mean", params.temp_coeff_mean, "mean thermal sensitivity per C");
        o_tcs = cmd->add_option("--temp-coeff-sigma", params.temp_coeff_sigma, "thermal sensitivity std-dev");
        o_jitter = cmd->add_option("--jitter", params.jitter_sigma_rel, "relative counter noise std-dev");
        o_window = cmd->add_option("--window", params.counter_window, "counter window length");
        o_crossing = cmd->add_option("--crossing-delay", params.crossing_delay, "additive delay per crossing");
        o_int = cmd->add_flag("--integer-counts", params.integer_counts, "truncate counter values");
        o_seed = cmd->add_option("--seed", params.seed, "device sampling seed");
    }

    void apply_config(const ConfigFile& cfg) {
        cfg.fill(o_n, "n", params.n);
        cfg.fill(o_m, "m", params.m);
        cfg.fill(o_nominal, "nominal_delay", params.nominal_delay);
        cfg.fill(o_sigma, "sigma_process", params.sigma_process);
        cfg.fill(o_tref, "temp_ref", params.temp_ref);
        cfg.fill(o_tcm, "temp_coeff_mean", params.temp_coeff_mean);
        cfg.fill(o_tcs, "temp_coeff_sigma", params.temp_coeff_sigma);
        cfg.fill(o_jitter, "jitter_sigma_rel", params.jitter_sigma_rel);
        cfg.fill(o_window, "counter_window", params.counter_window);
        cfg.fill(o_crossing, "crossing_delay", params.crossing_delay);
        cfg.fill(o_int, "integer_counts", params.integer_counts);
        cfg.fill(o_seed, "seed", params.seed);
    }
};

struct ProbeFlags {
    std::vector<double> temps{-20.0, 0.0, 25.0, 50.0, 75.0};
    int repeats = 11;
    double margin = 1.5;
    CLI::Option *o_temps = nullptr, *o_repeats = nullptr, *o_margin = nullptr;

    void attach(CLI::App* cmd) {
        o_temps = cmd->add_option("--probe-temps", temps, "stability sweep temperatures, C")->delimiter(',');
        o_repeats = cmd->add_option("--probe-repeats", repeats, "responses per sweep temperature");
        o_margin = cmd->add_option("--margin", margin, "threshold margin factor (>= 1)");
    }

    void apply_config(const ConfigFile& cfg) {
        cfg.fill(o_temps, "probe_temps", temps);
        cfg.fill(o_repeats, "probe_repeats", repeats);
        cfg.fill(o_margin, "margin_factor", margin);
    }

    ProbeConfig probe() const { return ProbeConfig{temps, repeats}; }
};

PairPolicy accuracy_policy() {
    PairPolicy p;
    p.exhaustive_cap = 200'000;  // exhaustive CRP set up to here, sampled above
    p.sample_size = 100'000;
    return p;
}

void emit(bool as_json, const json& machine, const std::string& human) {
    if (as_json)
        std::cout << machine.dump(2) << "\n";
    else
        std::cout << human;
}

// --- selftest ----------------------------------------------------------------

int run_selftest(bool as_json) {
    struct Case {
        std::string name;
        bool ok;
    };
    std::vector<Case> cases;
    auto check = [&](const std::string& name, bool ok) { cases.push_back({name, ok}); };

    Grid mat_a = Grid::from_rows({{3, 6, 8, 5}, {9, 7, 4, 5}, {5, 4, 6, 5}, {2, 5, 6, 3}});
    Grid mat_b = Grid::from_rows({{2, 4, 6, 5}, {5, 1, 3, 2}, {8, 6, 5, 7}, {3, 6, 4, 5}});
    Grid mat_b_adj = Grid::from_rows({{2, 4, 6, 5}, {5, 6, 3, 7}, {8, 1, 5, 5}, {3, 6, 4, 2}});

    auto bits_of = [](const Grid& g, std::initializer_list<std::pair<int, int>> pairs) {
        PufParams quiet;
        quiet.jitter_sigma_rel = 0.0;
        PufInstance dev = PufInstance::from_delays(g, quiet);
        std::string out;
        for (auto [a, b] : pairs) {
            Challenge c{StageConfig::identity(g.n, g.m), a, b};
            out += respond(dev, c, EnvCondition{25.0}, nullptr) ? '1' : '0';
        }
        return out;
    };

    check("matrix-A challenge set 1 -> 011", bits_of(mat_a, {{0, 1}, {1, 2}, {2, 3}}) == "011");
    check("matrix-B challenge set 1 -> 011", bits_of(mat_b, {{0, 2}, {2, 3}, {3, 1}}) == "011");
    check("matrix-A challenge set 2 -> 010", bits_of(mat_a, {{3, 1}, {1, 2}, {2, 0}}) == "010");
    check("adjusted matrix-B challenge set 2 -> 010", bits_of(mat_b_adj, {{0, 1}, {1, 3}, {3, 2}}) == "010");

    PufParams quiet;
    quiet.jitter_sigma_rel = 0.0;
    PufInstance dev_a = PufInstance::from_delays(mat_a, quiet);
    check("matrix-A row sums {22,25,20,16}",
          path_delay(dev_a, PathConfig{{0, 0, 0, 0}}, EnvCondition{25.0}) == 22.0 &&
              path_delay(dev_a, PathConfig{{1, 1, 1, 1}}, EnvCondition{25.0}) == 25.0 &&
              path_delay(dev_a, PathConfig{{2, 2, 2, 2}}, EnvCondition{25.0}) == 20.0 &&
              path_delay(dev_a, PathConfig{{3, 3, 3, 3}}, EnvCondition{25.0}) == 16.0);

    check("xor vector 10100101 ^ 01101001 = 11001100",
          xor_bitstrings("10100101", "01101001") == "11001100" &&
              xor_bitstrings("11001100", "01101001") == "10100101");

    ProtocolMessage hello{1, 1, msg::Hello{"a", 4, 5}};
    auto frame = encode_message(hello);
    check("wire frame round-trip", decode_message(frame) == hello);

    bool all_ok = true;
    json results = json::array();
    for (const auto& c : cases) {
        all_ok = all_ok && c.ok;
        results.push_back({{"name", c.name}, {"ok", c.ok}});
        if (!as_json) std::cout << (c.ok ? "[PASS] " : "[FAIL] ") << c.name << "\n";
    }
    if (as_json) std::cout << json{{"ok", all_ok}, {"cases", results}}.dump(2) << "\n";
    return all_ok ? 0 : 1;
}

// --- demo ----------------------------------------------------------------------

struct DemoOptions {
    std::uint64_t seed = 1;
    std::size_t key_bits = 128;
    std::string fixed_key;
    std::string message_bits;
    std::string message_text = "shared-key demo payload";
    std::string tamper;
    bool transcript = false;
    bool as_json = false;
    ParamFlags params;
    ProbeFlags probe;
};

int run_demo(const DemoOptions& opt) {
    TtpConfig cfg;
    cfg.probe = opt.probe.probe();
    cfg.margin_factor = opt.probe.margin;
    cfg.fit_temperature = opt.params.params.temp_ref;
    if (cfg.fit_index() < 0) cfg.probe.temperatures.push_back(cfg.fit_temperature);
    InProcessHarness harness(cfg);

    PufParams pa = opt.params.params;
    pa.seed = opt.seed;
    PufParams pb = opt.params.params;
    pb.seed = opt.seed + 1;
    AgentConfig ca, cb;
    ca.device_id = "alice";
    ca.rng_seed = opt.seed ^ 0xA11CE;
    cb.device_id = "bob";
    cb.rng_seed = opt.seed ^ 0xB0B;
    DeviceAgent alice(sample_puf(pa), ca);
    DeviceAgent bob(sample_puf(pb), cb);

    std::cout << "enrolling alice (" << pa.n << "x" << pa.m << " device, seed " << pa.seed << ")...\n";
    harness.enroll(alice);
    std::cout << "enrolling bob   (" << pb.n << "x" << pb.m << " device, seed " << pb.seed << ")...\n";
    harness.enroll(bob);
    std::cout << "alice threshold " << harness.ttp().enrolled("alice").threshold.value << ", bob threshold "
              << harness.ttp().enrolled("bob").threshold.value << "\n";

    if (opt.tamper == "flip-one-challenge") {
        harness.set_ttp_to_device_hook([](const std::string& device_id, const std::vector<std::uint8_t>& f) {
            if (device_id != "bob") return f;
            ProtocolMessage m = decode_message(f);
            if (auto* prov = std::get_if<msg::Provision>(&m.payload)) {
                std::swap(prov->challenges.per_bit[0].a, prov->challenges.per_bit[0].b);
                return encode_message(m);
            }
            return f;
        });
    } else if (!opt.tamper.empty()) {
        throw ParamError("unknown tamper mode '" + opt.tamper + "'");
    }

    Rng rng(opt.seed ^ 0x7749);
    SharedKey fixed;
    const SharedKey* fixed_ptr = nullptr;
    if (!opt.fixed_key.empty()) {
        fixed = SharedKey::from_bitstring(opt.fixed_key);
        fixed_ptr = &fixed;
    }
    auto outcome = harness.provision("alice", "bob", opt.key_bits, rng, fixed_ptr);
    std::cout << "provisioned key id " << outcome.key_id << " (" << outcome.key.bits.size() << " bits)\n";

    SharedKey ka = alice.keys().at(outcome.key_id);
    SharedKey kb = bob.keys().at(outcome.key_id);
    bool keys_match = ka == outcome.key && kb == outcome.key;
    int first_mismatch = -1;
    if (!keys_match) {
        for (std::size_t i = 0; i < outcome.key.bits.size(); ++i) {
            bool a_ok = i < ka.bits.size() && ka.bits[i] == outcome.key.bits[i];
            bool b_ok = i < kb.bits.size() && kb.bits[i] == outcome.key.bits[i];
            if (!a_ok || !b_ok) {
                first_mismatch = static_cast<int>(i);
                break;
            }
        }
    }

    // encrypted message alice -> bob under the shared key
    std::vector<std::uint8_t> message;
    std::string cipher_bits;
    bool roundtrip_ok = false;
    if (keys_match) {
        if (!opt.message_bits.empty()) {
            if (opt.message_bits.size() % 8) throw ParamError("--message bit length must be a multiple of 8");
            for (std::size_t i = 0; i < opt.message_bits.size(); i += 8) {
                std::uint8_t b = 0;
                for (int j = 0; j < 8; ++j)
                    b = static_cast<std::uint8_t>(b << 1 | (opt.message_bits[i + j] == '1'));
                message.push_back(b);
            }
        } else {
            message.assign(opt.message_text.begin(), opt.message_text.end());
            if (message.size() * 8 > outcome.key.bits.size()) message.resize(outcome.key.bits.size() / 8);
        }
        auto data_frame = alice.data_frame(outcome.key_id, message);
        bob.on_frame(data_frame);
        roundtrip_ok = !bob.received().empty() && bob.received().back().plaintext == message;
        ProtocolMessage data_msg = decode_message(data_frame);
        const auto& cipher = std::get<msg::Data>(data_msg.payload).ciphertext;
        for (std::uint8_t byte : cipher)
            for (int bit = 7; bit >= 0; --bit) cipher_bits.push_back((byte >> bit) & 1 ? '1' : '0');
        std::cout << "message bits:    ";
        for (std::uint8_t byte : message)
            for (int bit = 7; bit >= 0; --bit) std::cout << (((byte >> bit) & 1) ? '1' : '0');
        std::cout << "\nciphertext bits: " << cipher_bits << "\n";
    }

    if (opt.transcript) {
        std::cout << "--- transcript (" << harness.transcript().size() << " frames) ---\n";
        for (const auto& f : harness.transcript()) std::cout << to_hex(f) << "\n";
    }

    bool pass = keys_match && roundtrip_ok;
    if (opt.as_json) {
        json j{{"pass", pass},
               {"key_id", outcome.key_id},
               {"key_bits", outcome.key.to_bitstring()},
               {"keys_match", keys_match},
               {"roundtrip_ok", roundtrip_ok},
               {"frames", harness.transcript().size()}};
        if (first_mismatch >= 0) j["first_mismatched_bit"] = first_mismatch;
        if (!cipher_bits.empty()) j["ciphertext_bits"] = cipher_bits;
        std::cout << j.dump(2) << "\n";
    } else if (pass) {
        std::cout << "PASS: both devices derived the TTP key and the encrypted message round-tripped\n";
    } else if (!keys_match) {
        std::cout << "FAIL: derived keys disagree with the TTP key at bit " << first_mismatch << "\n";
    } else {
        std::cout << "FAIL: encrypted message did not round-trip\n";
    }
    return pass ? 0 : 1;
}

// --- experiments -----------------------------------------------------------------

int run_experiment_accuracy(const std::vector<std::string>& sizes, int repeats, std::uint64_t seed,
                            const std::string& out_path, bool as_json) {
    json rows = json::array();
    std::string csv = "size,mode,accuracy,residual_rms,seconds\n";
    for (const auto& size : sizes) {
        auto x = size.find('x');
        if (x == std::string::npos) throw ParamError("size must look like 4x5, got '" + size + "'");
        PufParams params;
        params.n = std::stoi(size.substr(0, x));
        params.m = std::stoi(size.substr(x + 1));
        params.seed = seed;
        CrpSet crps = enumerate_crps(params.n, params.m, accuracy_policy());

        for (bool noiseless : {true, false}) {
            PufParams p = params;
            if (noiseless) p.jitter_sigma_rel = 0.0;
            PufInstance dev = sample_puf(p);
            auto start = Clock::now();
            Rng rng(seed ^ 0x5EED);
            ReadingDataset data = harvest(dev, enumerate_paths(p.n, p.m), EnvCondition{p.temp_ref},
                                          noiseless ? 1 : repeats, rng);
            PredictedDelayMatrix model = fit_delay_matrix(data);
            double accuracy = model_accuracy(model, dev, crps, EnvCondition{p.temp_ref});
            double secs = seconds_since(start);
            const char* mode = noiseless ? "noiseless" : "jittered";
            char line[160];
            std::snprintf(line, sizeof(line), "%s,%s,%.6f,%.3e,%.3f\n", size.c_str(), mode, accuracy,
                          model.residual_rms, secs);
            csv += line;
            rows.push_back({{"size", size},
                            {"mode", mode},
                            {"accuracy", accuracy},
                            {"residual_rms", model.residual_rms},
                            {"seconds", secs},
                            {"crps", crps.pairs.size()}});
        }
    }
    if (!out_path.empty()) write_text_file(out_path, csv);
    emit(as_json, json{{"rows", rows}}, csv);
    return 0;
}

int run_experiment_cos(int count, const ParamFlags& pf, const ProbeFlags& probe, std::uint64_t seed_base,
                       unsigned workers, const std::string& out_path, const std::string& json_out,
                       bool as_json) {
    PopulationSpec spec;
    spec.count = count;
    spec.params = pf.params;
    spec.seed_base = seed_base;
    auto start = Clock::now();
    PopulationResult result = cos_population(spec, probe.probe(), PairPolicy{}, probe.margin, workers);
    double secs = seconds_since(start);

    std::uint64_t at_least_100 = 0;
    for (auto r : result.reliable_counts) at_least_100 += (r >= 100);
    double mean_cos = 0;
    for (double c : result.cos_values) mean_cos += c;
    if (!result.cos_values.empty()) mean_cos /= static_cast<double>(result.cos_values.size());

    std::string csv = histogram_to_csv(result.histogram);
    if (!out_path.empty()) write_text_file(out_path, csv);
    json summary{{"count", count},
                 {"failures", result.failures},
                 {"crp_population", result.crp_population},
                 {"mean_cos", mean_cos},
                 {"devices_with_100_reliable", at_least_100},
                 {"seconds", secs},
                 {"histogram", result.histogram.counts}};
    if (!json_out.empty()) save_json_file(json_out, summary);
    char line[256];
    std::snprintf(line, sizeof(line),
                  "devices %d, failures %llu, mean COS %.4f, >=100 reliable CRPs on %llu devices, %.1fs\n",
                  count, static_cast<unsigned long long>(result.failures), mean_cos,
                  static_cast<unsigned long long>(at_least_100), secs);
    emit(as_json, summary, csv + line);
    return 0;
}

int run_experiment_uniqueness(int count, int challenge_count, const ParamFlags& pf, std::uint64_t seed_base,
                              const std::string& out_path, bool as_json) {
    std::vector<PufInstance> pop;
    pop.reserve(count);
    for (int i = 0; i < count; ++i) {
        PufParams p = pf.params;
        p.seed = seed_base + static_cast<std::uint64_t>(i);
        pop.push_back(sample_puf(p));
    }
    Rng rng(0);  // the shared challenge set is pinned to seed 0
    std::vector<Challenge> challenges;
    challenges.reserve(challenge_count);
    for (int i = 0; i < challenge_count; ++i)
        challenges.push_back(random_challenge(pf.params.n, pf.params.m, rng));
    UniquenessReport rep = uniqueness(pop, challenges);
    std::vector<MetricRow> rows = {{"uniqueness_mean", rep.mean, rep.ci_low, rep.ci_high}};
    std::string csv = metrics_to_csv(rows);
    if (!out_path.empty()) write_text_file(out_path, csv);
    json j{{"mean", rep.mean},        {"ci_low", rep.ci_low},
           {"ci_high", rep.ci_high},  {"pairs", rep.pair_count},
           {"challenges", rep.challenge_count}, {"devices", count}};
    emit(as_json, j, csv);
    return 0;
}

int run_experiment_adversary(int pairs, int bits_per_pair, std::uint64_t seed_base, bool as_json) {
    CrpSet crps;
    std::uint64_t chance_matched = 0, chance_total = 0;
    std::uint64_t stolen_matched = 0, stolen_total = 0;
    for (int i = 0; i < pairs; ++i) {
        PufParams params;
        params.seed = seed_base + static_cast<std::uint64_t>(i);
        PufInstance dev = sample_puf(params);
        if (crps.pairs.empty()) crps = enumerate_crps(params.n, params.m);
        PredictedDelayMatrix model = fit_noiseless(dev);
        Threshold t = compute_threshold(model, dev, crps, ProbeConfig{}, 1.5, params.seed);
        Rng rng(seed_base ^ (0xAD5 + static_cast<std::uint64_t>(i) * 77));
        SharedKey key = SharedKey::random(bits_per_pair, rng);
        KeyChallenges kc = generate_challenges(model, t, key, rng);
        dev.burn_fuse();

        PufParams foreign;
        foreign.seed = seed_base + 50000 + static_cast<std::uint64_t>(i);
        AdversaryReport chance = adversary_baseline(dev, kc, fit_noiseless(sample_puf(foreign)));
        AdversaryReport stolen = adversary_baseline(dev, kc, model);
        chance_matched += chance.matched;
        chance_total += chance.bits;
        stolen_matched += stolen.matched;
        stolen_total += stolen.bits;
    }
    double chance_acc = static_cast<double>(chance_matched) / static_cast<double>(chance_total);
    double stolen_acc = static_cast<double>(stolen_matched) / static_cast<double>(stolen_total);
    json j{{"challenge_only_accuracy", chance_acc},
           {"stolen_model_accuracy", stolen_acc},
           {"bits", chance_total},
           {"pairs", pairs}};
    char line[160];
    std::snprintf(line, sizeof(line), "challenge-only %.4f, stolen-model %.4f over %llu bits\n", chance_acc,
                  stolen_acc, static_cast<unsigned long long>(chance_total));
    emit(as_json, j, line);
    return 0;
}

// --- ttp / device over TCP ---------------------------------------------------------

int run_ttp(const std::string& host, int port, const std::string& store_dir,
            const std::vector<std::string>& imports, const std::string& provision_spec, int key_bits,
            std::uint64_t seed, const ProbeFlags& probe) {
    TtpConfig cfg;
    cfg.probe = probe.probe();
    cfg.margin_factor = probe.margin;
    cfg.store_dir = store_dir;
    TtpNode ttp(cfg);

    for (const auto& spec : imports) {
        auto eq = spec.find('=');
        auto colon = spec.find(':', eq == std::string::npos ? 0 : eq);
        if (eq == std::string::npos || colon == std::string::npos)
            throw ParamError("--import expects id=model.json:threshold.json");
        EnrolledDevice dev;
        dev.device_id = spec.substr(0, eq);
        dev.model = model_from_json(load_json_file(spec.substr(eq + 1, colon - eq - 1)));
        dev.threshold = threshold_from_json(load_json_file(spec.substr(colon + 1)));
        dev.n = dev.model.entries.n;
        dev.m = dev.model.entries.m;
        ttp.import_device(dev);
        std::cout << "imported " << dev.device_id << "\n";
    }

    std::string dev_a, dev_b;
    if (!provision_spec.empty()) {
        auto comma = provision_spec.find(',');
        if (comma == std::string::npos) throw ParamError("--provision expects A,B");
        dev_a = provision_spec.substr(0, comma);
        dev_b = provision_spec.substr(comma + 1);
    }

    TcpListener listener(port, host);
    std::cout << "ttp listening on " << host << ":" << listener.port() << std::endl;
    std::atomic<bool> stop{false};
    std::vector<std::thread> workers;
    std::mutex workers_mu;
    std::thread acceptor([&] {
        try {
            for (;;) {
                TcpConnection conn = listener.accept_one();
                std::lock_guard<std::mutex> lock(workers_mu);
                workers.emplace_back([&ttp, &stop, conn = std::move(conn)]() mutable {
                    serve_ttp_connection(ttp, std::move(conn), &stop);
                });
            }
        } catch (const Error&) {
            // listener closed at shutdown
        }
    });
    acceptor.detach();  // blocked in accept(); reclaimed at process exit

    if (!provision_spec.empty()) {
        while (!(ttp.is_enrolled(dev_a) && ttp.is_enrolled(dev_b) && ttp.has_live_session(dev_a) &&
                 ttp.has_live_session(dev_b)))
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        Rng rng(seed);
        auto outcome = ttp.provision(dev_a, dev_b, static_cast<std::size_t>(key_bits), rng);
        while (!ttp.provision_acked(outcome.key_id))
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        std::cout << "provisioned key_id " << outcome.key_id << " key " << key_hex(outcome.key) << std::endl;
        std::this_thread::sleep_for(std::chrono::milliseconds(200));  // let KEY_ACK flushes finish
        stop = true;
        std::lock_guard<std::mutex> lock(workers_mu);
        for (auto& w : workers) w.join();
        return 0;
    }
    std::cout << "serving until interrupted" << std::endl;
    for (;;) std::this_thread::sleep_for(std::chrono::seconds(1));
}

int run_device(const std::string& device_file, const std::string& id, const std::string& host, int port,
               double temperature, std::uint64_t rng_seed, int wait_keys) {
    PufInstance dev = puf_from_json(load_json_file(device_file));
    AgentConfig cfg;
    cfg.device_id = id;
    cfg.env = EnvCondition{temperature};
    cfg.rng_seed = rng_seed;
    DeviceAgent agent(std::move(dev), cfg);

    TcpConnection conn = TcpConnection::connect_to(host, port);
    conn.send_frame(agent.hello_frame());
    for (;;) {
        std::vector<std::uint8_t> frame;
        RecvStatus st = conn.recv_frame(frame, cfg.max_frame, 100);
        if (st == RecvStatus::Closed) break;
        if (st == RecvStatus::Frame) {
            agent.on_frame(frame);
            for (const auto& f : agent.take_outgoing()) conn.send_frame(f);
        }
        if (wait_keys > 0 && agent.keys().size() >= static_cast<std::size_t>(wait_keys)) break;
    }
    std::cout << "device " << id << (agent.device().fuse_intact() ? " (fuse intact)" : " (fuse burned)")
              << ", " << agent.keys().size() << " key(s)\n";
    for (const auto& [key_id, key] : agent.keys()) std::cout << "key " << key_id << " " << key_hex(key) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crossover ring-oscillator PUF key-sharing simulator"};
    app.require_subcommand(1);
    bool as_json = false;
    app.add_flag("--json", as_json, "machine-readable output");
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file; flags override its values");
    ConfigFile cfg;

    // simulate
    auto* c_sim = app.add_subcommand("simulate", "sample a device and write its JSON description");
    ParamFlags sim_params;
    sim_params.attach(c_sim);
    std::string sim_out = "device.json";
    c_sim->add_option("-o,--out", sim_out, "output device file");

    // extract
    auto* c_ext = app.add_subcommand("extract", "harvest counter readings and fit the delay model");
    std::string ext_device, ext_out = "model.json";
    int ext_repeats = 1;
    double ext_temp = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t ext_seed = 0;
    bool ext_gd = false;
    std::string ext_csv;
    c_ext->add_option("--device", ext_device, "device JSON file")->required();
    c_ext->add_option("-o,--out", ext_out, "output model file");
    c_ext->add_option("--repeats", ext_repeats, "readings averaged per path");
    c_ext->add_option("--temperature", ext_temp, "harvest temperature (default: device temp_ref)");
    c_ext->add_option("--seed", ext_seed, "measurement noise seed");
    c_ext->add_flag("--gradient-descent", ext_gd, "fit by gradient descent instead of least squares");
    c_ext->add_option("--dump-csv", ext_csv, "also write the harvested readings as CSV");

    // threshold
    auto* c_thr = app.add_subcommand("threshold", "run the reliability-threshold search on a device");
    std::string thr_device, thr_model, thr_out = "threshold.json";
    std::uint64_t thr_seed = 0;
    ProbeFlags thr_probe;
    thr_probe.attach(c_thr);
    c_thr->add_option("--device", thr_device, "device JSON file")->required();
    c_thr->add_option("--model", thr_model, "model JSON file (default: noiseless fit of the device)");
    c_thr->add_option("-o,--out", thr_out, "output threshold file");
    c_thr->add_option("--seed", thr_seed, "probe noise seed");

    // genchal
    auto* c_gen = app.add_subcommand("genchal", "generate per-bit challenges for a key");
    std::string gen_model, gen_threshold, gen_key, gen_out = "challenges.json";
    int gen_bits = 128;
    std::uint64_t gen_seed = 0;
    int gen_attempts = 10000;
    c_gen->add_option("--model", gen_model, "model JSON file")->required();
    c_gen->add_option("--threshold", gen_threshold, "threshold JSON file")->required();
    c_gen->add_option("--key", gen_key, "explicit key bitstring");
    c_gen->add_option("--key-bits", gen_bits, "random key length when --key is absent");
    c_gen->add_option("--seed", gen_seed, "search seed");
    c_gen->add_option("--max-attempts", gen_attempts, "draw budget per key bit");
    c_gen->add_option("-o,--out", gen_out, "output challenges file");

    // derive
    auto* c_der = app.add_subcommand("derive", "replay challenges on a device and print the key");
    std::string der_device, der_challenges, der_expect;
    double der_temp = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t der_seed = 0;
    bool der_noiseless = false;
    c_der->add_option("--device", der_device, "device JSON file")->required();
    c_der->add_option("--challenges", der_challenges, "challenges JSON file")->required();
    c_der->add_option("--temperature", der_temp, "derivation temperature (default: device temp_ref)");
    c_der->add_option("--expect", der_expect, "expected key bitstring; mismatch fails");
    c_der->add_option("--seed", der_seed, "measurement noise seed");
    c_der->add_flag("--noiseless", der_noiseless, "derive with zero measurement noise");

    // ttp
    auto* c_ttp = app.add_subcommand("ttp", "run the trusted-third-party server");
    std::string ttp_host = "127.0.0.1", ttp_store, ttp_provision;
    int ttp_port = 9460, ttp_key_bits = 128;
    std::uint64_t ttp_seed = 0;
    std::vector<std::string> ttp_imports;
    ProbeFlags ttp_probe;
    ttp_probe.attach(c_ttp);
    c_ttp->add_option("--host", ttp_host, "bind address (loopback by default)");
    c_ttp->add_option("--port", ttp_port, "listen port (0 = ephemeral)");
    c_ttp->add_option("--store", ttp_store, "directory for enrolled-device files");
    c_ttp->add_option("--import", ttp_imports, "pre-fitted device: id=model.json:threshold.json");
    c_ttp->add_option("--provision", ttp_provision, "provision a key between A,B then exit");
    c_ttp->add_option("--key-bits", ttp_key_bits, "provisioned key length");
    c_ttp->add_option("--seed", ttp_seed, "key and challenge randomness seed");

    // device
    auto* c_dev = app.add_subcommand("device", "run a device agent against a TTP");
    std::string dev_file, dev_id = "device-0", dev_host = "127.0.0.1";
    int dev_port = 9460, dev_wait_keys = 0;
    double dev_temp = 25.0;
    std::uint64_t dev_seed = 0;
    c_dev->add_option("--device", dev_file, "device JSON file")->required();
    c_dev->add_option("--id", dev_id, "device identity");
    c_dev->add_option("--host", dev_host, "TTP address");
    c_dev->add_option("--port", dev_port, "TTP port");
    c_dev->add_option("--temperature", dev_temp, "ambient temperature");
    c_dev->add_option("--seed", dev_seed, "measurement noise seed");
    c_dev->add_option("--wait-keys", dev_wait_keys, "exit after deriving this many keys");

    // demo
    auto* c_demo = app.add_subcommand("demo", "end-to-end in-process key sharing demo");
    DemoOptions demo;
    demo.params.attach(c_demo);
    demo.probe.attach(c_demo);
    c_demo->add_option("--demo-seed", demo.seed, "demo scenario seed");
    c_demo->add_option("--key-bits", demo.key_bits, "key length");
    c_demo->add_option("--fixed-key", demo.fixed_key, "use this key bitstring instead of a random key");
    c_demo->add_option("--message", demo.message_bits, "message as a bitstring (multiple of 8 bits)");
    c_demo->add_option("--message-text", demo.message_text, "message as text");
    c_demo->add_option("--tamper", demo.tamper, "fault injection: flip-one-challenge");
    c_demo->add_flag("--transcript", demo.transcript, "hex-dump every frame");

    // experiment
    auto* c_exp = app.add_subcommand("experiment", "population-scale experiments");
    c_exp->require_subcommand(1);
    auto* c_acc = c_exp->add_subcommand("accuracy", "extraction fidelity per device size");
    std::vector<std::string> acc_sizes{"3x5", "3x7", "4x5", "5x5"};
    int acc_repeats = 10;
    std::uint64_t acc_seed = 1;
    std::string acc_out;
    c_acc->add_option("--sizes", acc_sizes, "device sizes, e.g. 3x5 4x5")->delimiter(',');
    c_acc->add_option("--repeats", acc_repeats, "readings averaged per path (jittered mode)");
    c_acc->add_option("--seed", acc_seed, "device seed");
    c_acc->add_option("-o,--out", acc_out, "CSV output path");

    auto* c_cos = c_exp->add_subcommand("cos", "COS distribution over a simulated population");
    int cos_count = 10000;
    std::uint64_t cos_seed_base = 1;
    unsigned cos_workers = 0;
    std::string cos_out, cos_json_out;
    ParamFlags cos_params;
    cos_params.attach(c_cos);
    ProbeFlags cos_probe;
    cos_probe.attach(c_cos);
    c_cos->add_option("--count", cos_count, "population size");
    c_cos->add_option("--seed-base", cos_seed_base, "instance i uses seed-base + i");
    c_cos->add_option("--workers", cos_workers, "worker threads (0 = hardware)");
    c_cos->add_option("-o,--out", cos_out, "histogram CSV path");
    c_cos->add_option("--json-out", cos_json_out, "summary JSON path");

    auto* c_uni = c_exp->add_subcommand("uniqueness", "inter-device Hamming distance");
    int uni_count = 50, uni_challenges = 1024;
    std::uint64_t uni_seed_base = 1;
    std::string uni_out;
    ParamFlags uni_params;
    uni_params.attach(c_uni);
    c_uni->add_option("--count", uni_count, "population size");
    c_uni->add_option("--challenges", uni_challenges, "shared challenge count");
    c_uni->add_option("--seed-base", uni_seed_base, "instance i uses seed-base + i");
    c_uni->add_option("-o,--out", uni_out, "metrics CSV path");

    auto* c_adv = c_exp->add_subcommand("adversary", "challenge-only and stolen-model baselines");
    int adv_pairs = 100, adv_bits = 10;
    std::uint64_t adv_seed = 1;
    c_adv->add_option("--pairs", adv_pairs, "independent device pairs");
    c_adv->add_option("--bits-per-pair", adv_bits, "key bits provisioned per pair");
    c_adv->add_option("--seed-base", adv_seed, "base seed");

    // selftest
    auto* c_self = app.add_subcommand("selftest", "run the built-in regression vectors");

    try {
        app.parse(argc, argv);
        if (!config_path.empty()) cfg.load(config_path);

        if (c_sim->parsed()) {
            sim_params.apply_config(cfg);
            PufInstance dev = sample_puf(sim_params.params);
            save_json_file(sim_out, to_json(dev));
            emit(as_json, json{{"out", sim_out}, {"n", dev.n()}, {"m", dev.m()}}, "wrote " + sim_out + "\n");
            return 0;
        }
        if (c_ext->parsed()) {
            PufInstance dev = puf_from_json(load_json_file(ext_device));
            double temp = std::isnan(ext_temp) ? dev.params().temp_ref : ext_temp;
            Rng rng(ext_seed);
            auto start = Clock::now();
            ReadingDataset data =
                harvest(dev, enumerate_paths(dev.n(), dev.m()), EnvCondition{temp}, ext_repeats, rng);
            FitOptions fit_opts;
            if (ext_gd) fit_opts.method = FitOptions::Method::GradientDescent;
            PredictedDelayMatrix model = fit_delay_matrix(data, fit_opts);
            double secs = seconds_since(start);
            CrpSet crps = enumerate_crps(dev.n(), dev.m(), accuracy_policy());
            double accuracy = model_accuracy(model, dev, crps, EnvCondition{temp});
            save_json_file(ext_out, to_json(model));
            if (!ext_csv.empty()) write_text_file(ext_csv, dataset_to_csv(data));
            char line[160];
            std::snprintf(line, sizeof(line), "accuracy %.6f over %zu CRPs, residual %.3e, %.3fs\n", accuracy,
                          crps.pairs.size(), model.residual_rms, secs);
            emit(as_json,
                 json{{"out", ext_out},
                      {"accuracy", accuracy},
                      {"crps", crps.pairs.size()},
                      {"residual_rms", model.residual_rms},
                      {"seconds", secs}},
                 std::string("wrote ") + ext_out + "; " + line);
            return 0;
        }
        if (c_thr->parsed()) {
            thr_probe.apply_config(cfg);
            PufInstance dev = puf_from_json(load_json_file(thr_device));
            PredictedDelayMatrix model =
                thr_model.empty() ? fit_noiseless(dev) : model_from_json(load_json_file(thr_model));
            CrpSet crps = enumerate_crps(dev.n(), dev.m());
            Threshold t = compute_threshold(model, dev, crps, thr_probe.probe(), thr_probe.margin, thr_seed);
            CosReport cos = cos_report(model, t, crps);
            save_json_file(thr_out, to_json(t));
            char line[220];
            std::snprintf(line, sizeof(line),
                          "threshold %.4f (trigger %.4f, margin %.2f), COS %.4f (%llu/%llu), %s\n", t.value,
                          t.trigger_delta, t.margin_factor, cos.cos(),
                          static_cast<unsigned long long>(cos.r_reliable),
                          static_cast<unsigned long long>(cos.r_total),
                          t.sampled_pairs ? "sampled pairs" : "exhaustive pairs");
            emit(as_json,
                 json{{"out", thr_out},
                      {"value", t.value},
                      {"trigger_delta", t.trigger_delta},
                      {"degenerate", t.degenerate},
                      {"cos", cos.cos()},
                      {"r_reliable", cos.r_reliable},
                      {"r_total", cos.r_total},
                      {"sampled_pairs", t.sampled_pairs}},
                 std::string("wrote ") + thr_out + "; " + line);
            return 0;
        }
        if (c_gen->parsed()) {
            PredictedDelayMatrix model = model_from_json(load_json_file(gen_model));
            Threshold t = threshold_from_json(load_json_file(gen_threshold));
            Rng rng(gen_seed);
            SharedKey key = gen_key.empty() ? SharedKey::random(static_cast<std::size_t>(gen_bits), rng)
                                            : SharedKey::from_bitstring(gen_key);
            KeyChallenges kc = generate_challenges(model, t, key, rng, gen_attempts);
            save_json_file(gen_out, to_json(kc));
            emit(as_json, json{{"out", gen_out}, {"key", key.to_bitstring()}, {"bits", key.bits.size()}},
                 "wrote " + gen_out + "\nkey " + key.to_bitstring() + "\n");
            return 0;
        }
        if (c_der->parsed()) {
            PufInstance dev = puf_from_json(load_json_file(der_device));
            KeyChallenges kc = key_challenges_from_json(load_json_file(der_challenges));
            double temp = std::isnan(der_temp) ? dev.params().temp_ref : der_temp;
            Rng rng(der_seed);
            SharedKey key = derive_key(dev, kc, EnvCondition{temp}, der_noiseless ? nullptr : &rng);
            bool ok = der_expect.empty() || key.to_bitstring() == der_expect;
            emit(as_json, json{{"key", key.to_bitstring()}, {"match", ok}}, key.to_bitstring() + "\n");
            if (!ok) std::cerr << "derived key does not match --expect\n";
            return ok ? 0 : 1;
        }
        if (c_ttp->parsed()) {
            ttp_probe.apply_config(cfg);
            return run_ttp(ttp_host, ttp_port, ttp_store, ttp_imports, ttp_provision, ttp_key_bits, ttp_seed,
                           ttp_probe);
        }
        if (c_dev->parsed()) return run_device(dev_file, dev_id, dev_host, dev_port, dev_temp, dev_seed,
                                               dev_wait_keys);
        if (c_demo->parsed()) {
            demo.params.apply_config(cfg);
            demo.probe.apply_config(cfg);
            demo.as_json = as_json;
            return run_demo(demo);
        }
        if (c_exp->parsed()) {
            if (c_acc->parsed()) return run_experiment_accuracy(acc_sizes, acc_repeats, acc_seed, acc_out, as_json);
            if (c_cos->parsed()) {
                cos_params.apply_config(cfg);
                cos_probe.apply_config(cfg);
                return run_experiment_cos(cos_count, cos_params, cos_probe, cos_seed_base, cos_workers, cos_out,
                                          cos_json_out, as_json);
            }
            if (c_uni->parsed()) {
                uni_params.apply_config(cfg);
                return run_experiment_uniqueness(uni_count, uni_challenges, uni_params, uni_seed_base, uni_out,
                                                 as_json);
            }
            if (c_adv->parsed()) return run_experiment_adversary(adv_pairs, adv_bits, adv_seed, as_json);
        }
        if (c_self->parsed()) return run_selftest(as_json);
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage errors exit 2; --help exits 0
    } catch (const ParamError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
