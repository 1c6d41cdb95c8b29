#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include <doctest.h>

#include "bytes.hpp"
#include "checkpoint.hpp"
#include "errors.hpp"
#include "experiment.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "reports.hpp"

using namespace dormant;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using fixture::read_all;
using fixture::synthetic_config;

fs::path scratch(const std::string& name) { return fixture::scratch("harness_" + name); }

struct EnvGuard {
  explicit EnvGuard(const char* value) { setenv("DT_OUTPUT_DIR", value, 1); }
  ~EnvGuard() { unsetenv("DT_OUTPUT_DIR"); }
};

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("checkpoint round-trip is byte-identical") {
    const auto dir = scratch("ckpt");
    const auto spec = mnist_cnn_spec();
    const auto params = init_params(spec, 4);
    checkpoint_save(spec, params, dir / "a.dtnn");
    const auto back = checkpoint_load(dir / "a.dtnn");
    CHECK(back.spec == spec);
    CHECK(bitwise_equal(back.params, params));
    checkpoint_save(back.spec, back.params, dir / "b.dtnn");
    CHECK(read_all(dir / "a.dtnn") == read_all(dir / "b.dtnn"));
  }

  TEST_CASE("checkpoint corruption and truncation are format errors") {
    const NetworkSpec spec{{LayerSpec::flatten(), LayerSpec::dense(4, 3)}, {1, 2, 2}, 3};
    const auto bytes = encode_checkpoint(spec, init_params(spec, 1));
    auto expect_format = [](std::vector<unsigned char> b) {
      try {
        decode_checkpoint(std::move(b), "test");
        FAIL("expected format error");
      } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Format);
      }
    };
    for (std::size_t pos : {std::size_t{0}, std::size_t{4}, bytes.size() / 2, bytes.size() - 1}) {
      auto b = bytes;
      b[pos] ^= 0x20;
      expect_format(b);
    }
    expect_format({bytes.begin(), bytes.end() - 7});
    expect_format({});
  }

  TEST_CASE("spec JSON round-trip and strict parsing") {
    for (const auto& spec : {mnist_cnn_spec(), mnist_mlp_spec()}) CHECK(spec_from_json(spec_to_json(spec)) == spec);
    auto j = spec_to_json(mnist_mlp_spec());
    j["layers"][1]["stride"] = 2;
    CHECK_THROWS_AS(spec_from_json(j), Error);
    j = spec_to_json(mnist_mlp_spec());
    j["layers"][1]["kind"] = "attention";
    CHECK_THROWS_AS(spec_from_json(j), Error);
  }

  TEST_CASE("config parsing is strict") {
    const auto base = scratch("cfg");
    CHECK_NOTHROW(parse_experiment(synthetic_config(), base));
    auto expect_config = [&](const json& j, const std::string& fragment) {
      try {
        parse_experiment(j, base);
        FAIL("expected config error");
      } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
        CHECK(std::string(e.what()).find(fragment) != std::string::npos);
      }
    };
    auto j = synthetic_config();
    j["train"]["lamda1"] = 1.0;
    expect_config(j, "lamda1");
    j = synthetic_config();
    j["train"]["epochs"] = "ten";
    expect_config(j, "epochs");
    j = synthetic_config();
    j["train"]["optimizer"] = "rmsprop";
    expect_config(j, "optimizer");
    j = synthetic_config();
    j["data"] = {{"kind", "idx"}, {"train_images", "missing.idx"}, {"train_labels", "x"}, {"test_images", "x"},
                 {"test_labels", "x"}};
    expect_config(j, "missing.idx");
    j = synthetic_config();
    j["trigger"]["row"] = 7;
    expect_config(j, "trigger");
    j = synthetic_config();
    j["model"] = "mnist_cnn";
    expect_config(j, "outputs");
    j = synthetic_config();
    j.erase("data");
    expect_config(j, "data");
  }

  TEST_CASE("relative paths resolve against the config directory") {
    const auto base = scratch("paths");
    const auto cfg = parse_experiment(synthetic_config(), base);
    CHECK(cfg.output_dir == base / "runs");
    auto j = synthetic_config();
    j["output_dir"] = "out/here";
    CHECK(parse_experiment(j, base).output_dir == base / "out/here");
    {
      EnvGuard env("/tmp/dt_env_override");
      CHECK(resolve_output_dir(cfg) == fs::path("/tmp/dt_env_override"));
    }
    CHECK(resolve_output_dir(cfg) == base / "runs");
  }

  TEST_CASE("config hash is stable and sensitive") {
    const auto a = synthetic_config();
    auto b = a;
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 8);
    b["train"]["seed"] = 2;
    CHECK(config_hash(a) != config_hash(b));
    const std::string text = a.dump();
    char expect[9];
    std::snprintf(expect, sizeof expect, "%08x",
                  crc32({reinterpret_cast<const unsigned char*>(text.data()), text.size()}));
    CHECK(config_hash(a) == expect);
  }

  TEST_CASE("training artifacts per mode and overwrite guard") {
    const auto base = scratch("artifacts");
    const auto cfg = parse_experiment(synthetic_config(), base);
    const auto data = load_data(cfg);
    CHECK(data.train.size() == 160);
    CHECK(data.test.size() == 40);

    const auto std_art = run_training(cfg, "std", data);
    write_artifacts(std_art, base / "std", "aaaa0000");
    CHECK(fs::exists(base / "std" / "model.dtnn"));
    CHECK_FALSE(fs::exists(base / "std" / "key.dtky"));

    const auto dorm = run_training(cfg, "dormant", data);
    REQUIRE(dorm.key);
    write_artifacts(dorm, base / "dorm", "bbbb0000");
    for (const char* f : {"model.dtnn", "key.dtky", "report.json", "losses.csv"}) CHECK(fs::exists(base / "dorm" / f));

    std::ifstream rin(base / "dorm" / "report.json");
    const json report = json::parse(rin);
    CHECK(report.at("config_hash") == "bbbb0000");
    CHECK(report.at("mode") == "dormant");
    CHECK(report.at("epochs").size() == 2);
    CHECK(report.at("epochs")[0].contains("awakened"));

    std::ifstream cin(base / "dorm" / "losses.csv");
    std::string header;
    std::getline(cin, header);
    CHECK(header == "epoch,L1,T1,T2,T3,L3,total,acc_c,acc_t,awakened_acc_c,awakened_acc_t");

    CHECK_NOTHROW(write_artifacts(dorm, base / "dorm", "bbbb0000"));
    try {
      write_artifacts(std_art, base / "dorm", "cccc0000");
      FAIL("expected config error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Config);
    }
    CHECK_THROWS_AS(run_training(cfg, "finetune", data), Error);

    const auto again = run_training(cfg, "dormant", data);
    CHECK(bitwise_equal(again.params, dorm.params));
    CHECK(bitwise_equal(*again.key, *dorm.key));
  }

  TEST_CASE("detection report JSON round-trip") {
    DetectionReport r = assess_norms({4, 9, 10, 11, 12}, -2.0);
    r.attack_success = {1, 1, 0.5, 1, 1};
    const json j = to_json(r);
    CHECK(j.at("verdict") == "trojan");
    CHECK(j.at("min_class") == 0);
    const auto back = detection_report_from_json(j);
    CHECK(back.norms == r.norms);
    CHECK(back.indices == r.indices);
    CHECK(back.trojan == r.trojan);
    CHECK(back.min_class == r.min_class);
  }

  TEST_CASE("campaign summary equals a recount of the verdict files") {
    const auto base = scratch("campaign");
    const auto cfg = parse_experiment(synthetic_config(), base);
    const auto result = run_campaign(cfg, 3, base / "out");
    CHECK(result.runs.size() == 6);
    CHECK(result.dir.parent_path() == base / "out");
    CHECK(result.dir.filename().string().rfind("campaign-", 0) == 0);
    for (const auto& r : result.runs) {
      CHECK(r.error.empty());
      CHECK(fs::exists(r.dir / "verdict.json"));
      CHECK(fs::exists(r.dir / "model.dtnn"));
    }
    CHECK(result.runs[1].seed == cfg.train.seed + 1);

    for (double thr : {-2.0, -1.0, 0.5}) {
      const json recount = recount_campaign(result.dir, thr, 1);
      char key[32];
      std::snprintf(key, sizeof key, "%g", thr);
      for (const char* regime : {"std", "badnet"}) {
        CHECK(recount.at(regime).at("by_threshold").at(key) ==
              result.summary.at("regimes").at(regime).at("by_threshold").at(key));
        int flagged = 0;
        for (const auto& r : result.runs)
          if (r.regime == regime) flagged += assess_norms(r.report->norms, thr).trojan ? 1 : 0;
        CHECK(result.summary.at("regimes").at(regime).at("by_threshold").at(key).at("flagged") == flagged);
      }
    }
    const auto& std_rates = result.summary.at("regimes").at("std").at("by_threshold");
    CHECK(std_rates.at("-1").at("flagged").get<int>() >= std_rates.at("-2").at("flagged").get<int>());
    CHECK_THROWS_AS(run_campaign(cfg, 0, base / "out"), Error);

    const auto stamp = fs::last_write_time(result.runs[0].dir / "model.dtnn");
    const auto again = run_campaign(cfg, 3, base / "out");
    CHECK(fs::last_write_time(result.runs[0].dir / "model.dtnn") == stamp);
    CHECK(again.summary == result.summary);

    fs::remove(result.runs[2].dir / "verdict.json");
    const auto partial = run_campaign(cfg, 3, base / "out");
    CHECK(partial.summary == result.summary);
    CHECK(fs::exists(result.runs[2].dir / "verdict.json"));
  }
}
