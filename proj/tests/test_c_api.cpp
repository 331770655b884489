#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "twodpo/twodpo.h"

using nlohmann::json;

namespace {

const std::string kFixtures = TWODPO_FIXTURES;

std::string take(char* s) {
  std::string out = s ? s : "";
  tdpo_free_string(s);
  return out;
}

std::filesystem::path scratch() {
  const auto dir = std::filesystem::temp_directory_path() / "twodpo_c_api_test";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string config(json extra = json::object()) {
  json j = {{"data", kFixtures + "/synthetic_heldout.jsonl"},
            {"dim", 8},
            {"hidden", 8},
            {"context", 4},
            {"sft_epochs", 3},
            {"steps", 5},
            {"log_interval", 2},
            {"batch_size", 4},
            {"out_dir", scratch().string()}};
  j.update(extra);
  return j.dump();
}

void collect(const char* row, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(row); }

}  // namespace

TEST_CASE("status names and last error") {
  CHECK(std::string(tdpo_status_name(TDPO_OK)) == "Ok");
  CHECK(std::string(tdpo_status_name(TDPO_E_EMPTY_TEXT)) == "EmptyText");
  CHECK(std::string(tdpo_status_name(TDPO_E_DEGENERATE_ROUND)) == "DegenerateRound");
  CHECK(std::string(tdpo_status_name(static_cast<tdpo_status>(999))) == "Unknown");

  char* out = nullptr;
  CHECK(tdpo_segment_text("   ", &out) == TDPO_E_EMPTY_TEXT);
  CHECK(out == nullptr);
  CHECK(std::string(tdpo_last_error()).size() > 0);
  CHECK(tdpo_segment_text(nullptr, &out) == TDPO_E_INVALID_ARGUMENT);
  REQUIRE(tdpo_segment_text("Dr. Smith arrived. He left.", &out) == TDPO_OK);
  CHECK(std::string(tdpo_last_error()).empty());
  const auto segs = json::parse(take(out));
  REQUIRE(segs.size() == 2);
  CHECK(segs[0]["text"] == "Dr. Smith arrived.");
  CHECK(segs[0]["sep"] == " ");
  CHECK(segs[1]["text"] == "He left.");
}

TEST_CASE("datasets") {
  tdpo_dataset* ds = nullptr;
  REQUIRE(tdpo_dataset_load((kFixtures + "/synthetic_heldout.jsonl").c_str(), &ds) == TDPO_OK);
  CHECK(tdpo_dataset_size(ds) == 50);
  char* csv = nullptr;
  REQUIRE(tdpo_dataset_stats(ds, "csv", &csv) == TDPO_OK);
  CHECK(take(csv).rfind("kind,side,aspect,score,count", 0) == 0);
  char* js = nullptr;
  REQUIRE(tdpo_dataset_stats(ds, "json", &js) == TDPO_OK);
  CHECK(json::parse(take(js)).is_object());
  CHECK(tdpo_dataset_stats(ds, "xml", &js) == TDPO_E_INVALID_ARGUMENT);

  const auto copy = (scratch() / "copy.jsonl").string();
  REQUIRE(tdpo_dataset_save(ds, copy.c_str()) == TDPO_OK);
  tdpo_dataset* again = nullptr;
  REQUIRE(tdpo_dataset_load(copy.c_str(), &again) == TDPO_OK);
  CHECK(tdpo_dataset_size(again) == 50);
  tdpo_dataset_free(again);
  tdpo_dataset_free(ds);

  CHECK(tdpo_dataset_load((kFixtures + "/invalid_pairs.jsonl").c_str(), &ds) == TDPO_E_INVARIANT_VIOLATION);
  CHECK(tdpo_dataset_load("/nonexistent/file.jsonl", &ds) == TDPO_E_IO);

  char* report = nullptr;
  size_t rejected = 0;
  REQUIRE(tdpo_validate_file((kFixtures + "/invalid_pairs.jsonl").c_str(), &report, &rejected) == TDPO_OK);
  const auto r = json::parse(take(report));
  CHECK(r.size() == 4);
  CHECK(rejected == 3);
  CHECK(r[0]["accepted"] == true);
  CHECK(r[1]["violations"].size() >= 1);
}

TEST_CASE("mock annotation of a file") {
  const auto in = (scratch() / "unscored.jsonl").string();
  const auto out = (scratch() / "scored.jsonl").string();
  const auto transcript = (scratch() / "transcript.jsonl").string();
  {
    std::ofstream f(in);
    f << R"({"id":"u1","history":[{"role":"user","content":"q"}],"chosen":{"text":"A. B."},"rejected":{"text":"C."}})"
      << "\n\n"
      << R"({"id":"u2","history":[{"role":"user","content":"r"}],"chosen":{"text":"D!"},"rejected":{"text":"E? F."}})"
      << "\n";
  }
  size_t n = 0;
  REQUIRE(tdpo_annotate_file(in.c_str(), out.c_str(), transcript.c_str(), R"({"kind":"mock","seed":3})", &n) ==
          TDPO_OK);
  CHECK(n == 2);
  tdpo_dataset* ds = nullptr;
  REQUIRE(tdpo_dataset_load(out.c_str(), &ds) == TDPO_OK);
  CHECK(tdpo_dataset_size(ds) == 2);
  tdpo_dataset_free(ds);
  std::ifstream t(transcript);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(t, line)) ++lines;
  CHECK(lines == 2);

  CHECK(tdpo_annotate_file(in.c_str(), out.c_str(), nullptr, R"({"kind":"oracle"})", &n) == TDPO_E_CONFIG);
  CHECK(tdpo_annotate_file(in.c_str(), out.c_str(), nullptr, "[1]", &n) == TDPO_E_CONFIG);
}

TEST_CASE("config resolution") {
  char* out = nullptr;
  REQUIRE(tdpo_config_resolve(R"({"method":"one_d_dpo","steps":9})", &out) == TDPO_OK);
  const auto j = json::parse(take(out));
  CHECK(j["method"] == "one_d_dpo");
  CHECK(j["steps"] == 9);
  CHECK(j["beta_target"] == 0.2);
  CHECK(j["batch_size"] == 8);
  CHECK(tdpo_config_resolve(R"({"stepz":9})", &out) == TDPO_E_CONFIG);
  CHECK(tdpo_config_resolve("{", &out) == TDPO_E_CONFIG);
  CHECK(tdpo_config_resolve(R"({"top_p":2})", &out) == TDPO_E_CONFIG);
}

TEST_CASE("numeric primitives") {
  const double w[] = {0.5, 1.0}, l[] = {-0.25, -0.25};
  double loss = 0, gw[2], gl[2];
  REQUIRE(tdpo_dpo_loss(w, 2, l, 2, 0.2, &loss, gw, gl) == TDPO_OK);
  CHECK(std::abs(loss - 0.513015252399952623668) < 1e-15);
  CHECK(gw[0] < 0);
  CHECK(gl[0] > 0);
  CHECK(tdpo_dpo_loss(w, 2, l, 2, 0.2, nullptr, gw, gl) == TDPO_E_INVALID_ARGUMENT);

  const int m[] = {4, 4, 4, 1, 4, 2, 4, 4, 3, 2};
  const double weights[] = {0.3, 0.4, 0.1, 0.1, 0.1};
  double score = 0;
  REQUIRE(tdpo_representative_score(m, 2, weights, &score) == TDPO_OK);
  CHECK(std::abs(score - 0.85) < 1e-15);
  const int bad[] = {5, 4, 4, 4, 4};
  CHECK(tdpo_representative_score(bad, 1, weights, &score) == TDPO_E_OUT_OF_RANGE);
  const double skewed[] = {0.5, 0.5, 0.5, 0, 0};
  CHECK(tdpo_representative_score(m, 2, skewed, &score) == TDPO_E_INVALID_ARGUMENT);

  const double cr[] = {0.9, 0.2, 0.7}, rr[] = {0.4, 0.1};
  size_t ci[3], ri[3], n = 0;
  REQUIRE(tdpo_select_segments(cr, 3, rr, 2, ci, ri, &n) == TDPO_OK);
  REQUIRE(n == 2);
  CHECK(ci[0] == 0);
  CHECK(ri[0] == 1);
  CHECK(ci[1] == 2);
  CHECK(ri[1] == 0);
  CHECK(tdpo_select_segments(cr, 0, rr, 2, ci, ri, &n) == TDPO_E_EMPTY_RESPONSE);
}

TEST_CASE("fine-tune, train, evaluate and sample") {
  const std::string cfg = config();
  tdpo_policy* sft = nullptr;
  char* summary = nullptr;
  REQUIRE(tdpo_sft(cfg.c_str(), &sft, &summary) == TDPO_OK);
  const auto s = json::parse(take(summary));
  CHECK(s["final_nll"].get<double>() < s["initial_nll"].get<double>());
  CHECK(s["vocab_size"] == tdpo_policy_vocab_size(sft));

  const auto ckpt = (scratch() / "sft.ckpt").string();
  REQUIRE(tdpo_policy_save(sft, ckpt.c_str()) == TDPO_OK);
  tdpo_policy* ref = nullptr;
  REQUIRE(tdpo_policy_load(ckpt.c_str(), &ref) == TDPO_OK);
  CHECK(tdpo_policy_vocab_size(ref) == tdpo_policy_vocab_size(sft));

  std::vector<std::string> rows;
  tdpo_policy* trained = nullptr;
  REQUIRE(tdpo_train(cfg.c_str(), sft, ref, collect, &rows, &trained, &summary) == TDPO_OK);
  const auto t = json::parse(take(summary));
  CHECK(rows.size() == 4);
  CHECK(t["records"].size() == 4);
  CHECK(t["final"]["step"] == 5);

  char* report = nullptr;
  REQUIRE(tdpo_evaluate(cfg.c_str(), ref, ref, &report) == TDPO_OK);
  const auto at_ref = json::parse(take(report));
  CHECK(at_ref["accuracy"] == 0.0);
  CHECK(at_ref["mean_kl_chosen"] == 0.0);
  REQUIRE(tdpo_evaluate(cfg.c_str(), trained, ref, &report) == TDPO_OK);
  const auto ev = json::parse(take(report));
  CHECK(ev["pairs"].size() == 50);
  CHECK(ev["mean_kl_chosen"].get<double>() > 0.0);

  char* a = nullptr;
  char* b = nullptr;
  REQUIRE(tdpo_policy_sample(trained, "user: explain tea\n", 0.7, 0.8, 16, 11, &a) == TDPO_OK);
  REQUIRE(tdpo_policy_sample(trained, "user: explain tea\n", 0.7, 0.8, 16, 11, &b) == TDPO_OK);
  CHECK(take(a) == take(b));
  CHECK(tdpo_policy_sample(trained, "x", 0.0, 0.8, 16, 11, &a) == TDPO_E_INVALID_ARGUMENT);

  CHECK(tdpo_train(cfg.c_str(), sft, nullptr, nullptr, nullptr, &trained, nullptr) == TDPO_E_INVALID_ARGUMENT);
  CHECK(tdpo_train(config({{"data", ""}}).c_str(), sft, ref, nullptr, nullptr, &trained, nullptr) == TDPO_E_CONFIG);
  CHECK(tdpo_policy_load("/nonexistent.ckpt", &trained) == TDPO_E_IO);

  tdpo_policy_free(trained);
  tdpo_policy_free(ref);
  tdpo_policy_free(sft);
}
