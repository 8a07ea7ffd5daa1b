#include <gtest/gtest.h>

#include <chrono>
#include <map>
#include <set>
#include <thread>

#include "fixtures.hpp"
#include "refinery/pipeline.hpp"

using namespace refinery;
namespace fs = std::filesystem;

namespace {

// Every artifact of an iteration except the call ledger and the manifest,
// which are compared separately.
std::map<std::string, std::string> artifacts(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name == "calls.jsonl" || name == "manifest.json" || name == "stages.json") continue;
    if (name.find(".checkpoint") != std::string::npos) continue;
    out[name] = read_file(e.path());
  }
  return out;
}

void expect_same_run(const RunConfig& a, const RunConfig& b, int iterations) {
  for (int t = 1; t <= iterations; ++t) {
    const auto da = iteration_dir(a, t), db = iteration_dir(b, t);
    const auto fa = artifacts(da), fb = artifacts(db);
    ASSERT_EQ(fa.size(), fb.size()) << "iteration " << t;
    for (const auto& [name, body] : fa) {
      ASSERT_TRUE(fb.count(name)) << name;
      EXPECT_EQ(body, fb.at(name)) << "iteration " << t << " " << name;
    }
    auto ma = manifest_for_comparison(read_json_file(da / "manifest.json"));
    auto mb = manifest_for_comparison(read_json_file(db / "manifest.json"));
    EXPECT_EQ(dump_compact(ma), dump_compact(mb)) << "iteration " << t;
  }
}

RunConfig relocated(RunConfig c, const fs::path& out) {
  c.out_dir = out.string();
  return c;
}

}  // namespace

TEST(Pipeline, EndToEndTwoIterations) {
  fixtures::TempDir dir("pipe_e2e");
  const auto e = fixtures::make_end_to_end(dir.path());
  auto gw = fixtures::scripted_gateway(e.script);
  const auto start = std::chrono::steady_clock::now();
  const auto manifests = run_loop(e.config, 2, *gw);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 60.0);
  ASSERT_EQ(manifests.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& m = manifests[i];
    EXPECT_EQ(m["status"], "complete");
    EXPECT_EQ(m["iteration"], static_cast<int>(i + 1));
    EXPECT_EQ(m["counts"], e.expected_counts[i]) << m["counts"].dump();
    EXPECT_NEAR(m["metrics"]["refinement_rate"].get<double>(), e.expected_refinement_rate[i], 1e-12);
    EXPECT_NEAR(m["metrics"]["principle_discovery_rate"].get<double>(), e.expected_discovery_rate[i],
                1e-12);
    for (const char* key : {"schema_version", "config_digest", "slice_digest", "seeds", "delta",
                            "scheme", "review", "counts", "metrics", "training_hook", "artifacts",
                            "timing"}) {
      EXPECT_TRUE(m.contains(key)) << key;
    }
    const auto dir_i = iteration_dir(e.config, static_cast<int>(i + 1));
    EXPECT_TRUE(fs::exists(dir_i / "sft.jsonl"));
    EXPECT_EQ(read_jsonl(dir_i / "sft.jsonl").size(), e.expected_counts[i]["sft_examples"].get<std::size_t>());
  }
  EXPECT_LT(manifests[1]["metrics"]["principle_discovery_rate"].get<double>(),
            manifests[0]["metrics"]["principle_discovery_rate"].get<double>());
  EXPECT_NE(manifests[0]["slice_digest"], manifests[1]["slice_digest"]);

  // A second call resumes completed iterations without new model calls.
  gw->ledger().clear();
  const auto again = run_loop(e.config, 2, *gw);
  ASSERT_EQ(again.size(), 2u);
  EXPECT_EQ(gw->ledger().entries().size(), 0u);
  EXPECT_EQ(dump_compact(again[1]), dump_compact(manifests[1]));
}

TEST(Pipeline, WorkerCountDoesNotChangeArtifacts) {
  fixtures::TempDir dir("pipe_workers");
  const auto e = fixtures::make_end_to_end(dir.path());
  auto one = relocated(e.config, dir / "w1");
  one.workers = 1;
  auto eight = relocated(e.config, dir / "w8");
  eight.workers = 8;
  auto g1 = fixtures::scripted_gateway(e.script);
  auto g8 = fixtures::scripted_gateway(e.script);
  ASSERT_EQ(run_loop(one, 2, *g1).size(), 2u);
  ASSERT_EQ(run_loop(eight, 2, *g8).size(), 2u);
  expect_same_run(one, eight, 2);
  for (int t = 1; t <= 2; ++t) {
    EXPECT_EQ(read_file(iteration_dir(one, t) / "calls.jsonl"),
              read_file(iteration_dir(eight, t) / "calls.jsonl"));
  }
}

TEST(Pipeline, ResumeAfterEveryStage) {
  fixtures::TempDir dir("pipe_resume");
  const auto e = fixtures::make_end_to_end(dir.path());
  auto ref = relocated(e.config, dir / "ref");
  {
    auto gw = fixtures::scripted_gateway(e.script);
    ASSERT_EQ(run_loop(ref, 2, *gw).size(), 2u);
  }
  for (const auto& stage : kStages) {
    auto cfg = relocated(e.config, dir / ("stop_" + stage));
    {
      auto gw = fixtures::scripted_gateway(e.script);
      ASSERT_EQ(run_iteration(cfg, 1, *gw).has_value(), true);
      PipelineOptions stop;
      stop.stop_after_stage = stage;
      EXPECT_FALSE(run_iteration(cfg, 2, *gw, stop).has_value()) << stage;
    }
    auto gw = fixtures::scripted_gateway(e.script);
    const auto m = run_loop(cfg, 2, *gw);
    ASSERT_EQ(m.size(), 2u) << stage;
    EXPECT_TRUE(m[1]["timing"]["resumed"].get<bool>());
    expect_same_run(ref, cfg, 2);
  }
}

TEST(Pipeline, ResumeInsideEstep) {
  fixtures::TempDir dir("pipe_resume_estep");
  const auto e = fixtures::make_end_to_end(dir.path());
  auto ref = relocated(e.config, dir / "ref");
  {
    auto gw = fixtures::scripted_gateway(e.script);
    ASSERT_EQ(run_loop(ref, 1, *gw).size(), 1u);
  }
  auto cfg = relocated(e.config, dir / "cut");
  cfg.checkpoint_every = 10;
  ref.checkpoint_every = 10;
  {
    auto gw = fixtures::scripted_gateway(e.script);
    PipelineOptions stop;
    stop.estep_stop_after = 50;
    EXPECT_FALSE(run_iteration(cfg, 1, *gw, stop).has_value());
    EXPECT_TRUE(fs::exists(iteration_dir(cfg, 1) / "estep.checkpoint.json"));
  }
  auto gw = fixtures::scripted_gateway(e.script);
  ASSERT_EQ(run_loop(cfg, 1, *gw).size(), 1u);
  expect_same_run(ref, cfg, 1);
}

TEST(Pipeline, ReviewGateAppliesDecisions) {
  fixtures::TempDir dir("pipe_review");
  const auto e = fixtures::make_end_to_end(dir.path());
  auto cfg = e.config;
  {
    auto gw = fixtures::scripted_gateway(e.script);
    ASSERT_TRUE(run_iteration(cfg, 1, *gw).has_value());
  }
  cfg.review_gate = true;
  cfg.review_poll_ms = 1;
  const auto it2 = iteration_dir(cfg, 2);
  std::size_t polls = 0;
  PipelineOptions opts;
  opts.sleeper = [&](std::chrono::milliseconds) {
    ++polls;
    const auto bundle = read_json_file(it2 / "review_bundle.json");
    Json decisions = Json::array();
    for (const auto& c : bundle["clusters"]) {
      if (c["size"] == 5) decisions.push_back({{"cluster_id", c["id"]}, {"action", "discard"}});
    }
    write_json_file(it2 / "decisions.json", decisions);
  };
  auto gw = fixtures::scripted_gateway(e.script);
  const auto m = run_iteration(cfg, 2, *gw, opts);
  ASSERT_TRUE(m.has_value());
  EXPECT_GE(polls, 1u);
  EXPECT_EQ((*m)["counts"]["trajectories"], 40);
  EXPECT_EQ((*m)["counts"]["dataset"], 35);
  EXPECT_EQ((*m)["counts"]["sft_examples"], 35);
  EXPECT_EQ((*m)["counts"]["constitution_size"], 4);
  EXPECT_EQ((*m)["review"]["status"], "approved");
  const auto approved = read_json_file(it2 / "constitution.approved.json");
  EXPECT_EQ(approved["provenance"]["decisions_sha256"], sha256_hex(read_file(it2 / "decisions.json")));
  for (const auto& row : read_jsonl(it2 / "dataset.jsonl")) {
    const auto label = row["principle_label"].get<std::string>();
    EXPECT_NE(label, "Empathy");
    EXPECT_NE(label, "Empathetic Tone");
  }
}

TEST(Pipeline, ReviewGateTimesOut) {
  fixtures::TempDir dir("pipe_review_timeout");
  const auto e = fixtures::make_end_to_end(dir.path());
  auto cfg = e.config;
  cfg.review_gate = true;
  cfg.review_poll_ms = 1;
  cfg.review_timeout_s = 0.005;
  PipelineOptions opts;
  opts.sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  auto gw = fixtures::scripted_gateway(e.script);
  EXPECT_THROW(run_iteration(cfg, 1, *gw, opts), ReviewTimeout);
  EXPECT_TRUE(fs::exists(iteration_dir(cfg, 1) / "review_bundle.json"));
  EXPECT_FALSE(fs::exists(iteration_dir(cfg, 1) / "manifest.json"));
}

TEST(Pipeline, WaitForDecisions) {
  fixtures::TempDir dir("pipe_wait");
  const auto path = dir / "decisions.json";
  int calls = 0;
  const auto got = wait_for_decisions(path, std::chrono::milliseconds(1), std::chrono::milliseconds(1000),
                                      [&](std::chrono::milliseconds) {
                                        if (++calls == 3) {
                                          write_file_atomic(path, R"([{"cluster_id": 2, "action": "keep"}])");
                                        }
                                      });
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].cluster_id, 2);
  EXPECT_EQ(calls, 3);
}

TEST(Pipeline, SchemeNoneKeepsRawLabels) {
  fixtures::TempDir dir("pipe_none");
  const auto e = fixtures::make_end_to_end(dir.path());
  auto cfg = e.config;
  cfg.scheme = Scheme::kNone;
  auto gw = fixtures::scripted_gateway(e.script);
  const auto m = run_iteration(cfg, 1, *gw);
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ((*m)["counts"]["constitution_size"], 0);
  EXPECT_EQ((*m)["counts"]["dataset"], 60);
  const auto d = iteration_dir(cfg, 1);
  EXPECT_EQ(read_file(d / "dataset.jsonl"), read_file(d / "trajectories.jsonl"));
  EXPECT_FALSE(fs::exists(d / "constitution.json"));
}

TEST(Pipeline, TrainingHookStatus) {
  fixtures::TempDir dir("pipe_hook");
  const auto e = fixtures::make_end_to_end(dir.path());
  auto fail = relocated(e.config, dir / "fail");
  fail.training_hook = "false";
  auto gw = fixtures::scripted_gateway(e.script);
  const auto m = run_loop(fail, 2, *gw);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0]["status"], "failed_after_export");
  EXPECT_NE(m[0]["training_hook"]["exit_code"], 0);
  EXPECT_TRUE(fs::exists(iteration_dir(fail, 1) / "sft.jsonl"));
  EXPECT_THROW(run_iteration(fail, 2, *gw), ValidationError);

  auto ok = relocated(e.config, dir / "ok");
  ok.training_hook = "test -s";
  auto gw2 = fixtures::scripted_gateway(e.script);
  const auto m2 = run_loop(ok, 1, *gw2);
  ASSERT_EQ(m2.size(), 1u);
  EXPECT_EQ(m2[0]["status"], "complete");
  EXPECT_EQ(m2[0]["training_hook"]["exit_code"], 0);
}

TEST(Pipeline, IngestDeduplicatesAndPartitions) {
  fixtures::TempDir dir("pipe_ingest");
  const auto e = fixtures::make_end_to_end(dir.path());
  LoadResult load;
  const auto slices = ingest(e.config, &load);
  ASSERT_EQ(slices.size(), 2u);
  EXPECT_EQ(slices[0].records.size(), 100u);
  EXPECT_EQ(slices[1].records.size(), 100u);
  std::set<std::string> ids;
  for (const auto& s : slices) for (const auto& r : s.records) EXPECT_TRUE(ids.insert(r.id).second);
  auto big = e.config;
  big.iteration_sizes = {150, 100};
  EXPECT_THROW(ingest(big), SizingError);
}
