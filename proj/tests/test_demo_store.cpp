#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "demoq/demo_store.hpp"
#include "demoq/error.hpp"
#include "support.hpp"

using namespace demoq;
using namespace demoq::demo;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const std::string kHeader = R"({"type":"header","env":"chain10","seed":0,"by":"scripted","version":1})";

std::string one_hot(int i) {
  std::string s = "[";
  for (int k = 0; k < 10; ++k) s += (k ? "," : "") + std::string(k == i ? "1" : "0");
  return s + "]";
}

}  // namespace

TEST_CASE("reward transform") {
  CHECK(transform_reward(0.0) == 0.0);
  CHECK(transform_reward(25000.0) == doctest::Approx(10.12667110305036).epsilon(1e-12));
  CHECK(transform_reward(-10.0) == doctest::Approx(-2.3978952727983707).epsilon(1e-12));
  CHECK(std::fabs(transform_reward(25000.0) - std::log(25001.0)) <= 1e-12);
  CHECK(std::fabs(transform_reward(-10.0) + std::log(11.0)) <= 1e-12);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e4, 1e4);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng);
    CHECK(transform_reward(-a) == -transform_reward(a));
    if (a < b) CHECK(transform_reward(a) < transform_reward(b));
  }
}

TEST_CASE("save and load round trip") {
  const auto e = env::make_env("keydoor");
  const auto path = oracle::temp_path("kd.jsonl");
  const Episode a = record_scripted(*e, 0);
  const Episode b = record_scripted(*e, 1);
  save_episode(a, path);
  save_episode(b, path);
  const auto loaded = load_demos(path, e->spec());
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0] == a);
  CHECK(loaded[1] == b);
  CHECK(loaded[0].total_raw_score() == 100.0);
  for (const auto& t : loaded[0].transitions) CHECK(t.reward == transform_reward(t.reward_raw));
}

TEST_CASE("round trip preserves awkward doubles exactly") {
  Episode ep;
  ep.env_id = "chain10";
  ep.recorded_by = "human";
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  env::Observation o(10);
  for (double& v : o) v = u(rng) / 3.0;
  env::Observation o2 = o;
  o2[3] = 0.1 + 0.2;
  ep.transitions.push_back(make_transition(o, 1, 1.0 / 7.0, o2, false, Source::Demo));
  ep.transitions.push_back(make_transition(o2, 0, -1e-300, o, true, Source::Demo));
  const auto path = oracle::temp_path("awkward.jsonl");
  save_episode(ep, path);
  const auto back = load_demos(path, env::make_env("chain10")->spec());
  REQUIRE(back.size() == 1);
  CHECK(back[0] == ep);
}

TEST_CASE("truncated episodes keep their flag") {
  const auto e = env::make_env("chain10");
  EpisodeRecorder rec(*e, 0, "human");
  for (int i = 0; !rec.finished(); ++i) rec.act(static_cast<std::size_t>((i + 1) % 2));  // bounce 0 <-> 1 until the cap
  const Episode ep = rec.episode();
  CHECK(ep.truncated);
  CHECK(ep.transitions.size() == 50);
  CHECK_FALSE(ep.transitions.back().done);
  const auto back = parse_demos(serialize_episode(ep), e->spec());
  REQUIRE(back.size() == 1);
  CHECK(back[0] == ep);
}

TEST_CASE("loader errors") {
  const auto spec = env::make_env("chain10")->spec();
  CHECK(parse_demos("", spec).empty());
  CHECK_THROWS_AS(load_demos(oracle::temp_path("absent.jsonl"), spec), IoError);

  SUBCASE("action out of range names its line") {
    const std::string text = kHeader + "\n" + R"({"type":"t","o":)" + one_hot(0) +
                             R"(,"a":99,"r_raw":0,"d":false})" + "\n" + R"({"type":"end","o_next":)" + one_hot(1) +
                             "}\n";
    try {
      parse_demos(text, spec);
      FAIL("expected ValidationError");
    } catch (const ValidationError& err) {
      CHECK(err.line() == 2);
    }
  }
  SUBCASE("env mismatch") {
    CHECK_THROWS_AS(parse_demos(kHeader + "\n", env::make_env("keydoor")->spec()), ValidationError);
  }
  SUBCASE("wrong observation width") {
    const std::string text = kHeader + "\n" + R"({"type":"t","o":[1,0],"a":1,"r_raw":0,"d":false})" + "\n";
    CHECK_THROWS_AS(parse_demos(text, spec), ValidationError);
  }
  SUBCASE("malformed JSON") {
    try {
      parse_demos(kHeader + "\n{oops\n", spec);
      FAIL("expected ParseError");
    } catch (const ParseError& err) {
      CHECK(err.line() == 2);
    }
  }
  SUBCASE("missing field") {
    const std::string text = kHeader + "\n" + R"({"type":"t","o":)" + one_hot(0) + R"(,"r_raw":0,"d":false})" + "\n";
    CHECK_THROWS_AS(parse_demos(text, spec), ParseError);
  }
  SUBCASE("unterminated episode is not silently dropped") {
    const std::string text = kHeader + "\n" + R"({"type":"t","o":)" + one_hot(0) +
                             R"(,"a":1,"r_raw":0,"d":false})" + "\n";
    CHECK_THROWS_AS(parse_demos(text, spec), ParseError);
  }
  SUBCASE("transition after terminal") {
    const std::string t = R"({"type":"t","o":)" + one_hot(0) + R"(,"a":0,"r_raw":-1,"d":true})";
    const std::string text = kHeader + "\n" + t + "\n" + t + "\n";
    CHECK_THROWS_AS(parse_demos(text, spec), ValidationError);
  }
}

TEST_CASE("file format fields") {
  const auto e = env::make_env("chain10");
  const auto path = oracle::temp_path("fmt.jsonl");
  save_episode(record_scripted(*e, 5), path);
  std::istringstream in(slurp(path));
  std::string line;
  std::vector<nlohmann::json> recs;
  while (std::getline(in, line)) recs.push_back(nlohmann::json::parse(line));
  REQUIRE(recs.size() == 9 + 2);
  CHECK(recs[0]["type"] == "header");
  CHECK(recs[0]["env"] == "chain10");
  CHECK(recs[0]["seed"] == 5);
  CHECK(recs[0]["by"] == "scripted");
  CHECK(recs[0]["version"] == 1);
  CHECK(recs[1]["type"] == "t");
  CHECK(recs[1].contains("o"));
  CHECK(recs[1]["a"] == 1);
  CHECK(recs[1].contains("r_raw"));
  CHECK(recs[1]["d"] == false);
  CHECK_FALSE(recs[1].contains("r"));
  CHECK(recs.back()["type"] == "end");
  CHECK(recs.back()["o_next"].size() == 10);
}

TEST_CASE("recorder matches scripted recording of the same actions") {
  const auto e = env::make_env("keydoor");
  const Episode ref = record_scripted(*e, 3);
  EpisodeRecorder rec(*e, 3, "scripted");
  for (const auto& t : ref.transitions) {
    CHECK_FALSE(rec.finished());
    rec.act(t.action);
  }
  CHECK(rec.finished());
  CHECK(rec.episode() == ref);
  CHECK(rec.score_raw() == 100.0);
  CHECK_THROWS(rec.act(0));
}
