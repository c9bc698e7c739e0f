// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 125).

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "demoq/agent.hpp"
#include "demoq/losses.hpp"
#include "demoq/replay.hpp"
#include "demoq/trainer.hpp"
#include "support.hpp"

using namespace demoq;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string list(const std::vector<double>& v, const char* f = "%.4g") {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(f, v[i]);
  return s + "]";
}

// ---------------------------------------------------------------- A1

Verdict a1_gradients() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(2, 7), act(2, 5), batch(1, 6), hidden(3, 10);
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto d = oracle::random_draw(1000 + i, dim(rng), act(rng), batch(rng), hidden(rng));
    nn::LossSpec spec;
    spec.lambda_l2 = 1e-3;
    const auto g = nn::backward(d.params, spec, d.batch);
    const auto fd = oracle::fd_gradient(d.params, spec, d.batch, 1e-6);
    worst = std::max(worst, oracle::relative_error(g.grads.values(), fd));
  }
  return {worst <= 1e-4, "max relative error " + fmt("%.3g", worst) + " over 100 nets"};
}

// ---------------------------------------------------------------- A2

Verdict a2_unit_values() {
  using Row = std::vector<double>;
  struct Case {
    const char* name;
    double got;
    double want;
  };
  // Hand-evaluated: ln(25001) and ln(11) to double precision.
  const Row q{0.2, 1.7, -0.4};
  const std::vector<Case> cases = {
      {"margin [1,.5,.2] a=0", margin_loss(Row{1.0, 0.5, 0.2}, 0, 0.8), 0.3},
      {"margin [2,1] a=0", margin_loss(Row{2.0, 1.0}, 0, 0.8), 0.0},
      {"margin [0,0] a=1", margin_loss(Row{0.0, 0.0}, 1, 0.8), 0.8},
      {"n-step bootstrap 4", agent::n_step_target(0.0, 10, false, 1.0, Row{4, 1}, Row{4, 0}), 4.0},
      {"n-step hand sum", agent::n_step_target(1.75, 3, false, 0.5, Row{2, 0}, Row{2, 9}), 2.0},
      {"n-step terminal", agent::n_step_target(1.0, 1, true, 0.5, Row{100, 0}, Row{100, 0}), 1.0},
      {"double-Q terminal", agent::double_q_target(1.0, true, 0.9, Row{5, 6}, Row{7, 8}), 1.0},
      {"double-Q 3.7", agent::double_q_target(1.0, false, 0.9, Row{1, 5}, Row{7, 3}), 3.7},
      {"double-Q theta=theta'", agent::double_q_target(0.5, false, 0.99, q, q), 0.5 + 0.99 * 1.7},
      {"transform 0", demo::transform_reward(0.0), 0.0},
      {"transform 25000", demo::transform_reward(25000.0), 10.12667110305036},
      {"transform -10", demo::transform_reward(-10.0), -2.3978952727983707},
  };
  int bad = 0;
  std::string first;
  for (const auto& c : cases) {
    if (std::fabs(c.got - c.want) > 1e-12) {
      if (!bad++) first = std::string(", first mismatch ") + c.name;
    }
  }
  return {bad == 0, std::to_string(cases.size() - static_cast<std::size_t>(bad)) + "/" +
                        std::to_string(cases.size()) + " examples within 1e-12" + first};
}

// ---------------------------------------------------------------- A3

Verdict a3_sampling_law() {
  const auto t0 = std::chrono::steady_clock::now();
  replay::ReplayConfig c;
  c.capacity = 2;
  c.n = 1;
  c.alpha = 1.0;
  c.eps_agent = 1.0;
  replay::PrioritizedReplay buf(c);
  for (int i = 0; i < 2; ++i) {
    buf.add_agent(demo::make_transition({0.0}, 0, 0.0, {0.0}, false, demo::Source::Agent), false);
  }
  const std::vector<std::size_t> slots{0, 1};
  buf.update_priorities(slots, std::vector<double>{2.0, 0.0});  // p = {3, 1}
  std::mt19937_64 rng(7);
  std::array<double, 2> freq{};
  double w_err = 0.0;
  constexpr int kDraws = 100'000;
  for (int i = 0; i < kDraws; ++i) freq[buf.sample(1, 0.6, rng).slots[0]] += 1.0 / kDraws;
  for (int i = 0; i < 1000; ++i) {
    const auto s = buf.sample(2, 0.6, rng);
    // Closed form over the batch: w = (N P)^-beta normalized by its max.
    double mx = 0.0;
    std::array<double, 2> raw{};
    for (std::size_t k = 0; k < 2; ++k) {
      const double p = s.slots[k] == 0 ? 0.75 : 0.25;
      raw[k] = std::pow(2.0 * p, -0.6);
      mx = std::max(mx, raw[k]);
    }
    for (std::size_t k = 0; k < 2; ++k) w_err = std::max(w_err, std::fabs(s.is_weights[k] - raw[k] / mx));
  }
  const double l1 = std::fabs(freq[0] - 0.75) + std::fabs(freq[1] - 0.25);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {l1 <= 0.01 && w_err <= 1e-12 && secs < 10.0,
          "L1 " + fmt("%.4f", l1) + ", IS weight error " + fmt("%.2g", w_err) + ", " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------- A4

Verdict a4_permanence() {
  replay::ReplayConfig c;
  c.capacity = 100;
  c.n = 1;
  replay::PrioritizedReplay buf(c);
  const auto kd = env::make_env("keydoor");
  buf.seed_demos({demo::record_scripted(*kd, 0), demo::record_scripted(*kd, 1)});
  const std::size_t n_demo = buf.demo_count();
  std::vector<replay::ReplayEntry> before;
  for (auto s : buf.demo_slots()) before.push_back(buf.entry(s));
  const auto slots = buf.demo_slots();

  const std::size_t keep = c.capacity - n_demo;
  bool fifo = true;
  for (std::size_t i = 0; i < 10 * c.capacity; ++i) {
    const double tag = static_cast<double>(i);
    buf.add_agent(demo::make_transition({tag}, 0, 0.0, {tag}, false, demo::Source::Agent), false);
    // Survivors must be exactly the `keep` most recent agent inserts.
    std::set<double> alive;
    for (std::size_t s = 0; s < buf.size(); ++s) {
      if (!buf.entry(s).is_demo()) alive.insert(buf.entry(s).transition.obs[0]);
    }
    const std::size_t lo = i + 1 > keep ? i + 1 - keep : 0;
    if (alive.size() != i + 1 - lo || *alive.begin() != static_cast<double>(lo) || *alive.rbegin() != tag) {
      fifo = false;
    }
  }
  bool same = buf.demo_slots() == slots && buf.demo_count() == n_demo;
  for (std::size_t k = 0; same && k < slots.size(); ++k) {
    const auto& e = buf.entry(slots[k]);
    same = e.transition == before[k].transition && e.insertion_index == before[k].insertion_index;
  }
  return {same && fifo, std::to_string(n_demo) + " demo entries " + (same ? "unchanged" : "CHANGED") +
                            " after 1000 agent inserts, eviction " + (fifo ? "FIFO" : "NOT FIFO")};
}

// ---------------------------------------------------------------- training runs

struct RunOutcome {
  std::vector<train::MetricsRow> rows;
  std::vector<double> episode_returns;
  double agreement = std::nan("");  // greedy agreement on demo states after pretraining
  double greedy_return = std::nan("");
  nn::NetParams params;
};

double agreement(const nn::NetParams& params, const std::vector<demo::Episode>& demos) {
  std::mt19937_64 rng(0);
  std::size_t hit = 0, total = 0;
  for (const auto& ep : demos) {
    for (const auto& t : ep.transitions) {
      hit += agent::select_action(params, t.obs, 0.0, rng) == t.action;
      ++total;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

RunOutcome execute(const train::RunConfig& config, const std::vector<demo::Episode>& demos) {
  train::Trainer t(config, demos);
  RunOutcome out;
  if (t.plan().pretrain) {
    out.rows = t.pretrain(config.hp.pretrain_steps);
    out.agreement = agreement(t.learner().online, demos);
  }
  if (t.plan().online) {
    auto online = t.run_online(config.steps);
    out.rows.insert(out.rows.end(), online.begin(), online.end());
  }
  out.episode_returns = t.episode_returns();
  out.params = t.learner().online;
  out.greedy_return = train::evaluate(out.params, t.env(), 1, 0.0, 0).mean;
  return out;
}

struct Job {
  std::string variant;
  std::string env;
  std::uint64_t seed;
  std::int64_t steps;
};

using Results = std::map<std::pair<std::string, std::uint64_t>, RunOutcome>;

// Independent runs, optionally spread over worker threads.
Results run_all(const std::vector<Job>& jobs, const std::map<std::string, std::vector<demo::Episode>>& demos,
                unsigned workers) {
  Results out;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < jobs.size();) {
      const Job& j = jobs[i];
      train::RunConfig c;
      c.variant = train::AlgoVariant::parse(j.variant);
      c.env = j.env;
      c.seed = j.seed;
      c.steps = j.steps;
      const auto t0 = std::chrono::steady_clock::now();
      RunOutcome r = execute(c, demos.at(j.env));
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::lock_guard<std::mutex> g(mu);
      std::fprintf(stderr, "  run %-20s %-22s seed %llu  %.0f s\n", j.variant.c_str(), j.env.c_str(),
                   static_cast<unsigned long long>(j.seed), secs);
      out[{j.variant + "@" + j.env, j.seed}] = std::move(r);
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return out;
}

std::vector<double> per_seed(const Results& r, const std::string& key, std::size_t seeds,
                             const std::function<double(const RunOutcome&)>& f) {
  std::vector<double> v;
  for (std::uint64_t s = 0; s < seeds; ++s) v.push_back(f(r.at({key, s})));
  return v;
}

constexpr std::int64_t kEarlyWindow = 20'000;

double early_mean(const RunOutcome& r) { return train::early_window_mean_return(r.rows, kEarlyWindow); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DQfD acceptance suite"};
  std::vector<std::string> only;
  std::size_t seeds = 4;
  unsigned jobs = 1;
  app.add_option("--only", only, "criteria to run, e.g. A1 A3");
  app.add_option("--seeds", seeds, "seeds per training configuration")->check(CLI::Range(1, 16));
  app.add_option("--jobs", jobs, "concurrent training runs")->check(CLI::Range(1, 64));
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](const std::string& id) { return only.empty() || std::count(only.begin(), only.end(), id) > 0; };
  int failed = 0;
  auto report = [&](const char* id, const char* title, const Verdict& v) {
    std::printf("%-3s %s  %s: %s\n", id, v.pass ? "PASS" : "FAIL", title, v.detail.c_str());
    std::fflush(stdout);
    failed += !v.pass;
  };

  if (wanted("A1")) report("A1", "gradient correctness", a1_gradients());
  if (wanted("A2")) report("A2", "unit values", a2_unit_values());
  if (wanted("A3")) report("A3", "sampling law", a3_sampling_law());
  if (wanted("A4")) report("A4", "demo permanence and eviction", a4_permanence());

  const std::vector<std::string> kd_variants = {"dqfd", "pdd_dqn", "rbs", "her", "adet", "dqfd-no-nstep",
                                                "dqfd-no-supervised"};
  const bool need_kd = wanted("A5") || wanted("A6") || wanted("A8") || wanted("A9") || wanted("A10");
  const bool need_chain = wanted("A7");
  std::map<std::string, std::vector<demo::Episode>> demos;
  demos["keydoor"] = train::scripted_demos("keydoor", 10);
  demos["chain10-detour-expert"] = train::scripted_demos("chain10-detour-expert", 5);

  std::vector<Job> all;
  for (const auto& v : kd_variants) {
    const bool used = wanted("A6") && (v == "dqfd" || v == "pdd_dqn") ||
                      wanted("A8") && (v == "dqfd" || v == "adet" || v == "her" || v == "rbs") ||
                      wanted("A9") && (v == "dqfd" || v.rfind("dqfd-no", 0) == 0) ||
                      wanted("A5") && (v == "dqfd" || v == "dqfd-no-supervised") || wanted("A10") && v == "dqfd";
    if (!need_kd || !used) continue;
    for (std::uint64_t s = 0; s < seeds; ++s) all.push_back({v, "keydoor", s, kEarlyWindow});
  }
  if (need_chain) {
    for (std::uint64_t s = 0; s < seeds; ++s) {
      all.push_back({"dqfd", "chain10-detour-expert", s, 50'000});
      all.push_back({"imitation", "chain10-detour-expert", s, 0});
    }
  }
  if (!all.empty()) std::fprintf(stderr, "training %zu runs\n", all.size());
  const Results runs = run_all(all, demos, jobs);
  const std::string kd = "@keydoor";

  if (wanted("A5")) {
    const auto full = per_seed(runs, "dqfd" + kd, seeds, [](const RunOutcome& r) { return r.agreement; });
    const auto abl = per_seed(runs, "dqfd-no-supervised" + kd, seeds, [](const RunOutcome& r) { return r.agreement; });
    report("A5", "pre-training imitation",
           {median(full) >= 0.9 && median(abl) <= 0.6, "median agreement " + fmt("%.3f", median(full)) + " " +
                                                           list(full, "%.3f") + ", without supervised loss " +
                                                           fmt("%.3f", median(abl)) + " " + list(abl, "%.3f")});
  }
  if (wanted("A6")) {
    const auto dq = per_seed(runs, "dqfd" + kd, seeds, early_mean);
    const auto pdd = per_seed(runs, "pdd_dqn" + kd, seeds, early_mean);
    std::size_t eps = 0, wins = 0;
    for (std::uint64_t s = 0; s < seeds; ++s) {
      for (double g : runs.at({"pdd_dqn" + kd, s}).episode_returns) {
        ++eps;
        wins += g > 0.0;
      }
    }
    const double rate = eps ? static_cast<double>(wins) / static_cast<double>(eps) : 0.0;
    report("A6", "early performance vs PDD DQN",
           {median(dq) > median(pdd) && rate < 0.05, "median early return DQfD " + fmt("%.2f", median(dq)) +
                                                         " vs PDD " + fmt("%.2f", median(pdd)) +
                                                         ", PDD success rate " + fmt("%.4f", rate)});
  }
  if (wanted("A7")) {
    const std::string ch = "@chain10-detour-expert";
    const auto e = env::make_env("chain10-detour-expert");
    const double optimum = oracle::ValueIteration(*e, 0.99).optimal_return(0);
    double best_demo = -1e300;
    for (const auto& ep : demos.at("chain10-detour-expert")) best_demo = std::max(best_demo, ep.total_raw_score());
    const auto dq = per_seed(runs, "dqfd" + ch, seeds, [](const RunOutcome& r) { return r.greedy_return; });
    const auto imi = per_seed(runs, "imitation" + ch, seeds, [](const RunOutcome& r) { return r.greedy_return; });
    const double dq_med = median(dq), imi_med = median(imi);
    report("A7", "surpassing the demonstrator",
           {dq_med == optimum && dq_med > best_demo && imi_med <= best_demo,
            "optimum " + fmt("%g", optimum) + ", best demo " + fmt("%g", best_demo) + ", DQfD greedy " +
                list(dq, "%g") + ", imitation " + list(imi, "%g")});
  }
  if (wanted("A8")) {
    std::map<std::string, double> m;
    std::string detail;
    for (const char* v : {"dqfd", "adet", "her", "rbs"}) {
      const auto x = per_seed(runs, v + kd, seeds, early_mean);
      m[v] = median(x);
      detail += std::string(detail.empty() ? "" : ", ") + v + " " + fmt("%.3f", m[v]);
    }
    report("A8", "related-algorithm ordering",
           {m["dqfd"] >= m["adet"] && m["adet"] > std::max(m["her"], m["rbs"]), "median early return " + detail});
  }
  if (wanted("A9")) {
    const double full = median(per_seed(runs, "dqfd" + kd, seeds, early_mean));
    const double no_n = median(per_seed(runs, "dqfd-no-nstep" + kd, seeds, early_mean));
    const double no_e = median(per_seed(runs, "dqfd-no-supervised" + kd, seeds, early_mean));
    report("A9", "ablation direction",
           {no_n < full && no_e < full, "median early return full " + fmt("%.3f", full) + ", no n-step " +
                                            fmt("%.3f", no_n) + ", no supervised " + fmt("%.3f", no_e)});
  }
  if (wanted("A10")) {
    double lo = 1e300;
    std::size_t windows = 0, missing = 0;
    for (std::uint64_t s = 0; s < seeds; ++s) {
      for (const auto& r : runs.at({"dqfd" + kd, s}).rows) {
        ++windows;
        if (std::isnan(r.demo_ratio)) {
          ++missing;
          continue;
        }
        lo = std::min(lo, r.demo_ratio);
      }
    }
    report("A10", "demo-ratio telemetry",
           {missing == 0 && lo >= 1.0, "min demo_ratio " + fmt("%.4f", lo) + " over " + std::to_string(windows) +
                                           " windows, " + std::to_string(missing) + " unreported"});
  }
  if (wanted("A11")) {
    train::RunConfig c;
    c.env = "keydoor";
    c.steps = 5'000;
    c.hp.pretrain_steps = 1'000;
    c.seed = 3;
    const auto kd_demos = train::scripted_demos("keydoor", 10);
    const auto a = oracle::temp_path("a11-first.csv"), b = oracle::temp_path("a11-second.csv");
    train::write_metrics_csv(train::run_variant(c, kd_demos).rows, a);
    train::write_metrics_csv(train::run_variant(c, kd_demos).rows, b);
    auto slurp = [](const std::filesystem::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    const std::string x = slurp(a), y = slurp(b);
    report("A11", "determinism",
           {!x.empty() && x == y, std::to_string(x.size()) + " bytes, " + (x == y ? "identical" : "DIFFERENT")});
  }
  std::printf("%d criteria failed\n", failed);
  return std::min(failed, 125);
}
