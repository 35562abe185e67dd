#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "cropuf/agents.hpp"
#include "cropuf/crp.hpp"
#include "cropuf/transport.hpp"

using namespace cropuf;

namespace {

PufParams device_params(std::uint64_t seed) {
    PufParams p;
    p.seed = seed;
    return p;  // default noise model
}

DeviceAgent make_agent(const std::string& id, std::uint64_t seed) {
    AgentConfig cfg;
    cfg.device_id = id;
    cfg.rng_seed = seed * 31 + 7;
    return DeviceAgent(sample_puf(device_params(seed)), cfg);
}

TtpConfig fast_ttp_config() {
    TtpConfig cfg;  // defaults: full probe grid, margin 1.5
    return cfg;
}

}  // namespace

TEST(Enrollment, FreshDeviceYieldsAccurateModelAndBurnsFuse) {
    InProcessHarness harness(fast_ttp_config());
    DeviceAgent agent = make_agent("alice", 60);
    std::string id = harness.enroll(agent);
    EXPECT_EQ(id, "alice");
    EXPECT_TRUE(harness.ttp().is_enrolled("alice"));
    EXPECT_FALSE(agent.device().fuse_intact());

    EnrolledDevice rec = harness.ttp().enrolled("alice");
    EXPECT_GT(rec.threshold.value, 0.0);
    CrpSet crps = enumerate_crps(4, 5);
    EXPECT_GE(model_accuracy(rec.model, agent.device(), crps), 0.999);
}

TEST(Enrollment, SecondEnrollmentIsRefused) {
    InProcessHarness harness(fast_ttp_config());
    DeviceAgent agent = make_agent("alice", 61);
    harness.enroll(agent);
    DeviceAgent clone = make_agent("alice", 61);
    try {
        harness.enroll(clone);
        FAIL() << "expected refusal";
    } catch (const ProtocolError& e) {
        EXPECT_EQ(e.code, "enrollment_refused");
    }
}

TEST(Enrollment, BurnedFuseDeviceIsRefused) {
    InProcessHarness harness(fast_ttp_config());
    DeviceAgent agent = make_agent("bob", 62);
    agent.device().burn_fuse();
    try {
        harness.enroll(agent);
        FAIL() << "expected refusal";
    } catch (const ProtocolError& e) {
        EXPECT_EQ(e.code, "enrollment_refused");
    }
    EXPECT_FALSE(harness.ttp().is_enrolled("bob"));
}

TEST(Enrollment, DroppedChannelLeavesNoPartialState) {
    TtpNode ttp(fast_ttp_config());
    DeviceAgent agent = make_agent("carol", 63);
    SessionId sid = ttp.open_session();
    ttp.on_frame(sid, agent.hello_frame());
    // run exactly ten read round-trips, then drop the connection
    for (int round = 0; round < 10; ++round) {
        auto out = ttp.take_outgoing(sid);
        ASSERT_FALSE(out.empty());
        for (const auto& f : out) agent.on_frame(f);
        for (const auto& f : agent.take_outgoing()) ttp.on_frame(sid, f);
    }
    ttp.close_session(sid);
    EXPECT_FALSE(ttp.is_enrolled("carol"));
    EXPECT_FALSE(ttp.has_live_session("carol"));
}

TEST(Provisioning, BothDevicesDeriveTheTtpKey) {
    InProcessHarness harness(fast_ttp_config());
    DeviceAgent alice = make_agent("alice", 64);
    DeviceAgent bob = make_agent("bob", 65);
    harness.enroll(alice);
    harness.enroll(bob);

    Rng rng(66);
    auto outcome = harness.provision("alice", "bob", 128, rng);
    EXPECT_EQ(outcome.key.bits.size(), 128u);
    ASSERT_TRUE(alice.keys().count(outcome.key_id));
    ASSERT_TRUE(bob.keys().count(outcome.key_id));
    EXPECT_EQ(alice.keys().at(outcome.key_id), outcome.key);
    EXPECT_EQ(bob.keys().at(outcome.key_id), outcome.key);
    EXPECT_EQ(harness.ttp().provisioned_key(outcome.key_id), outcome.key);
}

TEST(Provisioning, KeyNeverAppearsInAnyFrame) {
    InProcessHarness harness(fast_ttp_config());
    DeviceAgent alice = make_agent("alice", 67);
    DeviceAgent bob = make_agent("bob", 68);
    harness.enroll(alice);
    harness.enroll(bob);
    Rng rng(69);
    auto outcome = harness.provision("alice", "bob", 128, rng);

    std::string bitstring = outcome.key.to_bitstring();
    EXPECT_FALSE(transcript_contains(harness.transcript(), bitstring));
    // hex rendering of the key bytes, both cases
    std::vector<std::uint8_t> packed;
    for (std::size_t i = 0; i < outcome.key.bits.size(); i += 8) {
        std::uint8_t b = 0;
        for (int j = 0; j < 8; ++j) b = static_cast<std::uint8_t>((b << 1) | outcome.key.bits[i + j]);
        packed.push_back(b);
    }
    EXPECT_FALSE(transcript_contains(harness.transcript(), to_hex(packed)));
    // sanity: the transcript does contain the challenges
    EXPECT_TRUE(transcript_contains(harness.transcript(), "PROVISION"));
    EXPECT_GT(harness.transcript().size(), 100u);
}

TEST(Provisioning, UnknownDeviceIsRejected) {
    InProcessHarness harness(fast_ttp_config());
    DeviceAgent alice = make_agent("alice", 70);
    harness.enroll(alice);
    Rng rng(71);
    try {
        harness.provision("alice", "mallory", 16, rng);
        FAIL() << "expected unknown_device";
    } catch (const ProtocolError& e) {
        EXPECT_EQ(e.code, "unknown_device");
    }
}

TEST(Provisioning, DisjointPairsAreOrderIndependent) {
    auto run = [](bool swapped) {
        InProcessHarness harness(fast_ttp_config());
        DeviceAgent a = make_agent("a", 72), b = make_agent("b", 73);
        DeviceAgent c = make_agent("c", 74), d = make_agent("d", 75);
        for (DeviceAgent* agent : {&a, &b, &c, &d}) harness.enroll(*agent);
        SharedKey k1, k2;
        if (!swapped) {
            Rng r1(81), r2(82);
            k1 = harness.provision("a", "b", 32, r1).key;
            k2 = harness.provision("c", "d", 32, r2).key;
        } else {
            Rng r2(82), r1(81);
            k2 = harness.provision("c", "d", 32, r2).key;
            k1 = harness.provision("a", "b", 32, r1).key;
        }
        return std::make_pair(k1, k2);
    };
    auto forward = run(false);
    auto reversed = run(true);
    EXPECT_EQ(forward.first, reversed.first);
    EXPECT_EQ(forward.second, reversed.second);
}

TEST(DeviceAgentBehavior, ReadAfterBurnAnswersFuseError) {
    DeviceAgent agent = make_agent("dave", 76);
    agent.device().burn_fuse();
    msg::ReadRequest req;
    req.paths = {0, 1, 2};
    ProtocolMessage m{1, 1, req};
    agent.on_frame(encode_message(m));
    auto out = agent.take_outgoing();
    ASSERT_EQ(out.size(), 1u);
    ProtocolMessage reply = decode_message(out[0]);
    ASSERT_TRUE(std::holds_alternative<msg::Error>(reply.payload));
    EXPECT_EQ(std::get<msg::Error>(reply.payload).code, "fuse_burned");
}

TEST(DeviceAgentBehavior, MalformedChallengeAnswersBadChallenge) {
    DeviceAgent agent = make_agent("erin", 77);
    KeyChallenges kc;
    Rng rng(1);
    kc.per_bit.push_back(random_challenge(4, 5, rng));
    kc.per_bit[0].config.perms[1] = {0, 0, 1, 2};  // not a bijection
    ProtocolMessage m{1, 1, msg::Provision{"k1", kc}};
    agent.on_frame(encode_message(m));
    auto out = agent.take_outgoing();
    ASSERT_EQ(out.size(), 1u);
    ProtocolMessage reply = decode_message(out[0]);
    ASSERT_TRUE(std::holds_alternative<msg::Error>(reply.payload));
    EXPECT_EQ(std::get<msg::Error>(reply.payload).code, "bad_challenge");
}

TEST(DeviceAgentBehavior, ReplayedProvisionIsIdempotent) {
    PufParams params = device_params(78);
    params.jitter_sigma_rel = 0.0;  // deterministic measurement
    AgentConfig cfg;
    cfg.device_id = "frank";
    DeviceAgent agent(sample_puf(params), cfg);

    KeyChallenges kc;
    Rng rng(2);
    for (int i = 0; i < 16; ++i) kc.per_bit.push_back(random_challenge(4, 5, rng));
    agent.on_frame(encode_message({1, 1, msg::Provision{"k9", kc}}));
    SharedKey first = agent.keys().at("k9");
    agent.on_frame(encode_message({1, 2, msg::Provision{"k9", kc}}));
    EXPECT_EQ(agent.keys().at("k9"), first);
}

TEST(DeviceAgentBehavior, StaleSequenceNumbersRejected) {
    DeviceAgent agent = make_agent("gina", 79);
    std::vector<std::uint8_t> frame = encode_message({1, 5, msg::BurnFuse{}});
    agent.on_frame(frame);
    agent.take_outgoing();
    agent.on_frame(frame);  // replay with the same sequence number
    auto out = agent.take_outgoing();
    ASSERT_EQ(out.size(), 1u);
    ProtocolMessage reply = decode_message(out[0]);
    ASSERT_TRUE(std::holds_alternative<msg::Error>(reply.payload));
    EXPECT_EQ(std::get<msg::Error>(reply.payload).code, "bad_sequence");
}

TEST(DataExchange, EncryptedMessageRoundTripsBetweenDevices) {
    InProcessHarness harness(fast_ttp_config());
    DeviceAgent alice = make_agent("alice", 80);
    DeviceAgent bob = make_agent("bob", 81);
    harness.enroll(alice);
    harness.enroll(bob);
    Rng rng(82);
    auto outcome = harness.provision("alice", "bob", 64, rng);

    std::vector<std::uint8_t> message = {'s', 'e', 'c', 'r', 'e', 't', '!', '!'};
    std::vector<std::uint8_t> frame = alice.data_frame(outcome.key_id, message);
    // ciphertext travels, plaintext does not
    EXPECT_EQ(std::search(frame.begin(), frame.end(), message.begin(), message.end()), frame.end());
    bob.on_frame(frame);
    ASSERT_EQ(bob.received().size(), 1u);
    EXPECT_EQ(bob.received()[0].plaintext, message);
    EXPECT_EQ(bob.received()[0].key_id, outcome.key_id);
}

TEST(Store, EnrollmentPersistsAndReloads) {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "cropuf_store_test";
    fs::remove_all(dir);

    TtpConfig cfg = fast_ttp_config();
    cfg.store_dir = dir.string();
    {
        InProcessHarness harness(cfg);
        DeviceAgent agent = make_agent("alice", 83);
        harness.enroll(agent);
        EXPECT_TRUE(fs::exists(dir / "alice.json"));
    }
    TtpNode reloaded(cfg);
    EXPECT_TRUE(reloaded.is_enrolled("alice"));
    EXPECT_EQ(reloaded.enrolled("alice").n, 4);
    EXPECT_GT(reloaded.enrolled("alice").threshold.value, 0.0);

    // enrolled but not connected: provisioning must demand a live session
    Rng rng(84);
    TtpNode fresh(cfg);
    DeviceAgent other = make_agent("bob", 85);
    InProcessHarness harness2(cfg);
    harness2.enroll(other);
    try {
        harness2.provision("alice", "bob", 8, rng);
        FAIL() << "expected no_session";
    } catch (const ProtocolError& e) {
        EXPECT_EQ(e.code, "no_session");
    }
    fs::remove_all(dir);
}

TEST(Store, ImportModeRegistersPrefittedModel) {
    TtpNode ttp(fast_ttp_config());
    PufInstance dev = sample_puf(device_params(86));
    EnrolledDevice rec;
    rec.device_id = "imported";
    rec.n = dev.n();
    rec.m = dev.m();
    rec.model = fit_noiseless(dev);
    rec.threshold = compute_threshold(rec.model, dev, enumerate_crps(4, 5), ProbeConfig{}, 1.5, 86);
    ttp.import_device(rec);
    EXPECT_TRUE(ttp.is_enrolled("imported"));
}

TEST(Tcp, EnrollAndProvisionOverLocalSockets) {
    TtpConfig cfg = fast_ttp_config();
    TtpNode ttp(cfg);
    TcpListener listener(0);  // ephemeral port on loopback
    std::atomic<bool> stop{false};

    std::thread server([&] {
        std::vector<std::thread> workers;
        for (int i = 0; i < 2; ++i) workers.emplace_back([&ttp, conn = listener.accept_one()]() mutable {
            serve_ttp_connection(ttp, std::move(conn));
        });
        for (auto& w : workers) w.join();
    });

    DeviceAgent alice = make_agent("alice", 87);
    DeviceAgent bob = make_agent("bob", 88);
    std::atomic<bool> stop_clients{false};
    std::thread ta([&] { run_device_client(alice, "127.0.0.1", listener.port(), &stop_clients); });
    std::thread tb([&] { run_device_client(bob, "127.0.0.1", listener.port(), &stop_clients); });

    auto wait_until = [&](auto predicate) {
        for (int i = 0; i < 400 && !predicate(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(25));
        return predicate();
    };
    ASSERT_TRUE(wait_until([&] { return ttp.is_enrolled("alice") && ttp.is_enrolled("bob"); }));

    Rng rng(89);
    auto outcome = ttp.provision("alice", "bob", 64, rng);
    ASSERT_TRUE(wait_until([&] { return ttp.provision_acked(outcome.key_id); }));
    EXPECT_EQ(alice.keys().at(outcome.key_id), outcome.key);
    EXPECT_EQ(bob.keys().at(outcome.key_id), outcome.key);

    stop_clients = true;
    ta.join();
    tb.join();
    server.join();
}
