#pragma once
// Batch harness: run configuration, paired corpora, parallel evaluation and
// the calibrate / run / train / ablate / report commands.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgnav/agent.hpp"
#include "dgnav/common.hpp"
#include "dgnav/granularity.hpp"
#include "dgnav/planner.hpp"
#include "dgnav/world.hpp"

#ifndef DGNAV_VERSION
#define DGNAV_VERSION "unknown"
#endif

namespace dgnav {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::string_view kVersion = DGNAV_VERSION;

// --- configuration ----------------------------------------------------------

struct CorpusSpec {
  int n_worlds = 100;
  std::vector<WorldStyle> styles{WorldStyle::kCorridor, WorldStyle::kOpen, WorldStyle::kRooms, WorldStyle::kMixed};
  double size_m = 12.0;
};

struct PolicySpec {
  ThresholdPolicy policy;
  std::string calibration;  // path to a calibration report
  bool has_sigma = false;   // sigma_med / sigma_max given inline
  bool has_line = false;    // alpha / beta given inline
};

struct TrainSpec {
  int steps = 1000;
  double lr = 0.01;
  int batch = 16;
  int checkpoint_every = 500;
  int n_worlds = 40;
};

struct AblationSpec {
  std::string axis = "threshold_policy";
};

struct RunConfig {
  std::uint64_t seed = 0;
  CorpusSpec corpus;
  PolicySpec policy;
  double omega_init = 0.1;
  bool sem_enabled = true;
  bool inst_enabled = true;
  TrainStrategy strategy;
  ModelConfig model;
  std::string checkpoint;
  TrainSpec train;
  EpisodeLimits limits;
  Driver driver = Driver::kPlanner;
  bool log_trajectories = true;
  AblationSpec ablation;
  std::string output_dir = "runs";
  int workers = 1;
  json source;  // the config as given, copied into every run directory
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::kConfig, where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw Error(ErrorCode::kConfig, "unknown key '" + key + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig config_from_json(const json& j) {
  using detail::check_keys;
  using detail::read;
  RunConfig c;
  c.source = j;
  try {
    check_keys(j, {"seed", "corpus", "policy", "fusion", "model", "train", "limits", "driver", "log_trajectories",
                   "ablation", "output_dir", "workers"},
               "config");
    read(j, "seed", c.seed);
    read(j, "output_dir", c.output_dir);
    read(j, "workers", c.workers);
    read(j, "log_trajectories", c.log_trajectories);
    if (j.contains("driver")) {
      const auto d = j.at("driver").get<std::string>();
      if (d == "planner")
        c.driver = Driver::kPlanner;
      else if (d == "oracle")
        c.driver = Driver::kOracle;
      else
        throw Error(ErrorCode::kConfig, "driver must be 'planner' or 'oracle'");
    }
    if (j.contains("corpus")) {
      const auto& k = j.at("corpus");
      check_keys(k, {"n_worlds", "styles", "size_m"}, "corpus");
      read(k, "n_worlds", c.corpus.n_worlds);
      read(k, "size_m", c.corpus.size_m);
      if (k.contains("styles")) {
        c.corpus.styles.clear();
        for (const auto& s : k.at("styles")) c.corpus.styles.push_back(parse_world_style(s.get<std::string>()));
      }
    }
    if (j.contains("policy")) {
      const auto& p = j.at("policy");
      check_keys(p, {"kind", "gamma_fix", "gamma_min", "gamma_max", "alpha", "beta", "sigma_med", "sigma_max", "seed",
                     "calibration"},
                 "policy");
      auto& t = c.policy.policy;
      if (p.contains("kind")) t.kind = parse_policy_kind(p.at("kind").get<std::string>());
      read(p, "gamma_fix", t.gamma_fix);
      read(p, "gamma_min", t.gamma_min);
      read(p, "gamma_max", t.gamma_max);
      read(p, "alpha", t.alpha);
      read(p, "beta", t.beta);
      read(p, "sigma_med", t.sigma_med);
      read(p, "sigma_max", t.sigma_max);
      read(p, "seed", t.rng_seed);
      read(p, "calibration", c.policy.calibration);
      c.policy.has_sigma = p.contains("sigma_med") && p.contains("sigma_max");
      c.policy.has_line = p.contains("alpha") && p.contains("beta");
    }
    if (j.contains("fusion")) {
      const auto& f = j.at("fusion");
      check_keys(f, {"omega_init", "sem_enabled", "inst_enabled", "strategy"}, "fusion");
      read(f, "omega_init", c.omega_init);
      read(f, "sem_enabled", c.sem_enabled);
      read(f, "inst_enabled", c.inst_enabled);
      if (f.contains("strategy")) {
        const auto& s = f.at("strategy");
        check_keys(s, {"node_gating", "geo_dropout_p", "annealing", "p_max", "t_ramp"}, "fusion.strategy");
        read(s, "node_gating", c.strategy.node_gating);
        read(s, "geo_dropout_p", c.strategy.geo_dropout_p);
        read(s, "annealing", c.strategy.annealing);
        read(s, "p_max", c.strategy.p_max);
        read(s, "t_ramp", c.strategy.t_ramp);
      }
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, {"D", "layers", "heads", "checkpoint"}, "model");
      read(m, "D", c.model.dim);
      read(m, "layers", c.model.layers);
      read(m, "heads", c.model.heads);
      read(m, "checkpoint", c.checkpoint);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t, {"steps", "lr", "batch", "checkpoint_every", "n_worlds"}, "train");
      read(t, "steps", c.train.steps);
      read(t, "lr", c.train.lr);
      read(t, "batch", c.train.batch);
      read(t, "checkpoint_every", c.train.checkpoint_every);
      read(t, "n_worlds", c.train.n_worlds);
    }
    if (j.contains("limits")) {
      const auto& l = j.at("limits");
      check_keys(l, {"max_steps", "success_radius", "ray_count", "max_range", "clearance"}, "limits");
      read(l, "max_steps", c.limits.max_steps);
      read(l, "success_radius", c.limits.success_radius);
      read(l, "ray_count", c.limits.ray_count);
      read(l, "max_range", c.limits.max_range);
      read(l, "clearance", c.limits.clearance);
    }
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      check_keys(a, {"axis"}, "ablation");
      read(a, "axis", c.ablation.axis);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  c.strategy.seed = c.seed;
  c.model.node_gating = c.strategy.node_gating;
  if (c.corpus.n_worlds < 0) throw Error(ErrorCode::kConfig, "corpus.n_worlds must be >= 0");
  if (c.corpus.styles.empty()) throw Error(ErrorCode::kConfig, "corpus.styles must not be empty");
  if (c.workers < 1) throw Error(ErrorCode::kConfig, "workers must be >= 1");
  if (c.limits.max_steps < 1) throw Error(ErrorCode::kConfig, "limits.max_steps must be >= 1");
  if (c.train.batch < 1 || c.train.steps < 0) throw Error(ErrorCode::kConfig, "train.batch >= 1, train.steps >= 0");
  return c;
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

// --- corpus -----------------------------------------------------------------

struct Episode {
  int index = 0;
  std::uint64_t seed = 0;
  OccupancyWorld world;
  Instruction instruction;
};

/// Landmarks the reference path passes through, in order, ending at the
/// goal's landmark.
inline std::vector<int> route_landmarks(const OccupancyWorld& world) {
  const GeodesicField field(world, world.goal);
  std::vector<int> seq;
  for (Vec2 p : reference_path(world, field, world.start.position())) {
    const Landmark* lm = world.landmark_at(p);
    if (lm && std::find(seq.begin(), seq.end(), lm->id) == seq.end()) seq.push_back(lm->id);
  }
  const Landmark* goal_lm = world.landmark_at(world.goal);
  if (goal_lm) {
    std::erase(seq, goal_lm->id);
    seq.push_back(goal_lm->id);
  }
  return seq;
}

inline std::uint64_t episode_seed(std::uint64_t corpus_seed, int index) {
  return hash_combine(corpus_seed, static_cast<std::uint64_t>(index));
}

inline Episode make_episode(const CorpusSpec& spec, std::uint64_t corpus_seed, int index, int dim) {
  Episode e;
  e.index = index;
  e.seed = episode_seed(corpus_seed, index);
  const WorldStyle style = spec.styles[static_cast<std::size_t>(index) % spec.styles.size()];
  e.world = generate_world(e.seed, style, spec.size_m);
  e.instruction = encode_instruction(e.world, route_landmarks(e.world), dim);
  return e;
}

inline constexpr std::uint64_t kTrainCorpusSalt = 0x7A41'0000'0000'0001ULL;

/// Runs fn(i) for i in [0, n) on `workers` threads. The lowest-index
/// exception, if any, is rethrown after every worker has joined.
template <class Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  int failed_index = n;
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (i < failed_index) {
            failed_index = i;
            failure = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// --- evaluation -------------------------------------------------------------

struct EpisodeRecord {
  int index = 0;
  std::uint64_t seed = 0;
  WorldStyle style = WorldStyle::kOpen;
  EpisodeResult result;
  std::string log;  // JSON lines, empty unless requested
};

inline PlannerModel build_model(const RunConfig& c) {
  PlannerModel m = c.checkpoint.empty() ? PlannerModel::init(c.model, c.seed, c.omega_init)
                                        : checkpoint_from_json(read_json_file(c.checkpoint));
  m.fusion.sem_enabled = c.sem_enabled;
  m.fusion.inst_enabled = c.inst_enabled;
  if (c.checkpoint.empty()) m.config.node_gating = c.strategy.node_gating;
  return m;
}

/// Resolves calibrated fields of the configured policy. `report` overrides
/// the configured file when given.
inline ThresholdPolicy resolve_policy(const PolicySpec& spec, const CalibrationReport* report = nullptr) {
  ThresholdPolicy p = spec.policy;
  std::optional<CalibrationReport> loaded;
  if (!report && !spec.calibration.empty()) {
    loaded = report_from_json(read_json_file(spec.calibration));
    report = &*loaded;
  }
  const bool needs_sigma = needs_calibration(p.kind);
  const bool needs_line = p.kind == PolicyKind::kGlobalLinear && !spec.has_line;
  if (report) {
    if (!spec.has_sigma) {
      p.sigma_med = report->sigma_med;
      p.sigma_max = report->sigma_max;
    }
    if (needs_line) {
      const auto fit = fit_global_linear(*report, p.gamma_min, p.gamma_max);
      p.alpha = fit.alpha;
      p.beta = fit.beta;
    }
  } else if ((needs_sigma && !spec.has_sigma) || needs_line) {
    throw Error(ErrorCode::kMissingCalibration,
                std::string(to_string(p.kind)) + " policy needs sigma_med/sigma_max; run calibrate first");
  }
  p.validate();
  return p;
}

inline std::vector<EpisodeRecord> evaluate_corpus(const RunConfig& c, const ThresholdPolicy& policy,
                                                  const PlannerModel& model, BiasSource bias = BiasSource::kDynamic) {
  std::vector<EpisodeRecord> out(static_cast<std::size_t>(c.corpus.n_worlds));
  parallel_for(c.corpus.n_worlds, c.workers, [&](int i) {
    const Episode e = make_episode(c.corpus, c.seed, i, model.config.dim);
    ThresholdPolicy p = policy;
    p.reset_stream(hash_combine(policy.rng_seed, e.seed));
    EpisodeHooks hooks;
    hooks.driver = c.driver;
    hooks.bias = bias;
    std::ostringstream log;
    if (c.log_trajectories) hooks.log = &log;
    EpisodeRecord& rec = out[static_cast<std::size_t>(i)];
    rec.index = i;
    rec.seed = e.seed;
    rec.style = e.world.style;
    try {
      rec.result = run_episode(e.world, e.instruction, p, model, c.limits, hooks);
    } catch (const Error& err) {
      throw Error(err.code(), "episode " + std::to_string(i) + ": " + err.what());
    }
    rec.log = log.str();
  });
  return out;
}

struct Summary {
  int episodes = 0;
  double sr = 0, osr = 0, spl = 0, ne = 0, tl = 0, ndtw = 0, sdtw = 0, nodes = 0, steps = 0;

  json to_json() const {
    return {{"episodes", episodes}, {"sr", sr},     {"osr", osr},     {"spl", spl},       {"ne", ne},
            {"tl", tl},             {"ndtw", ndtw}, {"sdtw", sdtw}, {"node_count", nodes}, {"steps", steps}};
  }
};

inline Summary summarize(const std::vector<EpisodeRecord>& recs) {
  Summary s;
  s.episodes = static_cast<int>(recs.size());
  if (recs.empty()) return s;
  for (const auto& r : recs) {
    const auto& e = r.result;
    s.sr += e.success;
    s.osr += e.oracle_success;
    s.spl += e.spl;
    s.ne += e.ne;
    s.tl += e.tl;
    s.ndtw += e.ndtw;
    s.sdtw += e.sdtw;
    s.nodes += e.node_count;
    s.steps += e.steps;
  }
  const double n = static_cast<double>(recs.size());
  for (double* v : {&s.sr, &s.osr, &s.spl, &s.ne, &s.tl, &s.ndtw, &s.sdtw, &s.nodes, &s.steps}) *v /= n;
  return s;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline std::string episode_csv(const std::vector<EpisodeRecord>& recs) {
  std::ostringstream os;
  os << kEpisodeCsvHeader << '\n';
  for (const auto& r : recs) {
    const auto& e = r.result;
    os << r.index << ',' << r.seed << ',' << to_string(r.style) << ',' << e.success << ',' << e.oracle_success << ','
       << fmt(e.spl) << ',' << fmt(e.ndtw) << ',' << fmt(e.sdtw) << ',' << fmt(e.tl) << ',' << fmt(e.ne) << ','
       << fmt(e.ne_geodesic) << ',' << fmt(e.shortest) << ',' << e.node_count << ',' << e.steps << ',' << e.cycles
       << ',' << e.collisions << ',' << e.local_failures << ',' << e.stopped << '\n';
  }
  return os.str();
}

inline std::string trace_csv(const std::vector<EpisodeRecord>& recs, const std::string& variant = {}) {
  std::ostringstream os;
  for (const auto& r : recs)
    for (std::size_t k = 0; k < r.result.sigma_trace.size(); ++k) {
      if (!variant.empty()) os << variant << ',';
      os << r.index << ',' << k << ',' << fmt(r.result.sigma_trace[k]) << ',' << fmt(r.result.gamma_trace[k]) << '\n';
    }
  return os.str();
}

// --- run directories --------------------------------------------------------

inline std::string run_id(std::string_view command, const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return std::string(command) + "-" + hex64(h).substr(0, 12);
}

/// Creates output_dir/<run-id>/ with the config copy and a manifest.
inline fs::path open_run_dir(const RunConfig& c, std::string_view command, const json& extra_seeds = json::object()) {
  const fs::path dir = fs::path(c.output_dir) / run_id(command, c.source);
  fs::create_directories(dir);
  write_text(dir / "config.json", c.source.dump(2) + "\n");
  json manifest = {{"command", command}, {"version", kVersion}, {"seed", c.seed}, {"seeds", extra_seeds}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return dir;
}

inline json corpus_seeds(const RunConfig& c) {
  json arr = json::array();
  for (int i = 0; i < c.corpus.n_worlds; ++i) arr.push_back(episode_seed(c.seed, i));
  return arr;
}

inline void write_episode_logs(const fs::path& dir, const std::vector<EpisodeRecord>& recs) {
  for (const auto& r : recs) {
    if (r.log.empty()) continue;
    std::ostringstream name;
    name << "episode_" << std::setw(4) << std::setfill('0') << r.index << ".jsonl";
    write_text(dir / "trajectories" / name.str(), r.log);
  }
}

// --- commands ---------------------------------------------------------------

struct CalibrationOutcome {
  CalibrationReport report;
  fs::path dir;
};

/// Collects sigma over fixed-gamma episodes of the configured corpus.
inline CalibrationReport collect_calibration(const RunConfig& c, const PlannerModel& model) {
  RunConfig fixed = c;
  fixed.log_trajectories = false;
  ThresholdPolicy p = ThresholdPolicy::fixed(c.policy.policy.gamma_fix);
  const auto recs = evaluate_corpus(fixed, p, model);
  std::vector<double> sigmas;
  for (const auto& r : recs) sigmas.insert(sigmas.end(), r.result.sigma_trace.begin(), r.result.sigma_trace.end());
  return calibrate(sigmas);
}

inline std::string histogram_csv(const CalibrationReport& r) {
  std::ostringstream os;
  os << "bin_lo,bin_hi,count\n";
  const double w = r.sigma_max / kHistogramBins;
  for (int b = 0; b < kHistogramBins; ++b) os << fmt(b * w) << ',' << fmt((b + 1) * w) << ',' << r.histogram[b] << '\n';
  return os.str();
}

inline CalibrationOutcome cmd_calibrate(const RunConfig& c) {
  const PlannerModel model = build_model(c);
  CalibrationOutcome out;
  out.report = collect_calibration(c, model);
  out.dir = open_run_dir(c, "calibrate", corpus_seeds(c));
  write_text(out.dir / "calibration.json", report_to_json(out.report).dump(2) + "\n");
  write_text(out.dir / "sigma_histogram.csv", histogram_csv(out.report));
  return out;
}

struct RunOutcome {
  std::vector<EpisodeRecord> records;
  Summary summary;
  fs::path dir;
};

inline RunOutcome cmd_run(const RunConfig& c) {
  const ThresholdPolicy policy = resolve_policy(c.policy);
  const PlannerModel model = build_model(c);
  RunOutcome out;
  out.records = evaluate_corpus(c, policy, model);
  out.summary = summarize(out.records);
  out.dir = open_run_dir(c, "run", corpus_seeds(c));
  write_text(out.dir / "results.csv", episode_csv(out.records));
  write_text(out.dir / "gamma_trace.csv", "episode,cycle,sigma,gamma\n" + trace_csv(out.records));
  write_text(out.dir / "summary.json", out.summary.to_json().dump(2) + "\n");
  write_episode_logs(out.dir, out.records);
  return out;
}

// --- training ---------------------------------------------------------------

/// Teacher-forced imitation samples: oracle-driven episodes at gamma = 0.5,
/// one sample per planner cycle.
inline std::vector<TrainSample> build_dataset(const RunConfig& c, int dim) {
  CorpusSpec spec = c.corpus;
  spec.n_worlds = c.train.n_worlds;
  const std::uint64_t corpus_seed = hash_combine(c.seed, kTrainCorpusSalt);
  std::vector<std::vector<TrainSample>> per_episode(static_cast<std::size_t>(spec.n_worlds));
  const PlannerModel dummy = PlannerModel::zeros(ModelConfig{dim, 1, 1, false});
  parallel_for(spec.n_worlds, c.workers, [&](int i) {
    const Episode e = make_episode(spec, corpus_seed, i, dim);
    EpisodeHooks hooks;
    hooks.driver = Driver::kOracle;
    auto& bucket = per_episode[static_cast<std::size_t>(i)];
    hooks.on_decision = [&bucket](const PlannerInput& in, const Decision& oracle) {
      int row = static_cast<int>(in.node_ids.size());
      if (!oracle.stop)
        row = static_cast<int>(std::find(in.node_ids.begin(), in.node_ids.end(), oracle.node_id) - in.node_ids.begin());
      bucket.push_back({in, row});
    };
    run_episode(e.world, e.instruction, ThresholdPolicy::fixed(0.5), dummy, c.limits, hooks);
  });
  std::vector<TrainSample> all;
  for (auto& b : per_episode) std::move(b.begin(), b.end(), std::back_inserter(all));
  return all;
}

struct TrainOutcome {
  PlannerModel model;
  std::vector<double> losses;
  fs::path dir;
};

/// Batch of `size` samples drawn with replacement, seeded by step.
inline std::vector<TrainSample> sample_batch(const std::vector<TrainSample>& data, int size, std::uint64_t seed,
                                             int step) {
  Rng rng(hash_combine(hash_combine(seed, 0xBA7C4ULL), static_cast<std::uint64_t>(step)));
  std::vector<TrainSample> batch;
  batch.reserve(static_cast<std::size_t>(size));
  for (int k = 0; k < size; ++k)
    batch.push_back(data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(data.size()) - 1))]);
  return batch;
}

/// Trains without touching the filesystem when `dir` is empty.
inline TrainOutcome train_model(const RunConfig& c, const std::vector<TrainSample>& data,
                                const fs::path& dir = {}) {
  if (data.empty()) throw Error(ErrorCode::kInsufficientSamples, "imitation dataset is empty");
  TrainOutcome out;
  out.model = build_model(c);
  out.dir = dir;
  std::ostringstream loss_csv;
  loss_csv << "step,loss,grad_norm\n";
  auto save = [&](const std::string& name, const PlannerModel& m) {
    if (!dir.empty()) write_text(dir / name, checkpoint_to_json(m).dump() + "\n");
  };
  for (int step = 0; step < c.train.steps; ++step) {
    const auto batch = sample_batch(data, c.train.batch, c.seed, step);
    const PlannerModel last_good = out.model;
    TrainStepResult r;
    try {
      r = train_step(out.model, batch, c.train.lr, c.strategy, step);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kNonFinite) {
        save("checkpoint.json", last_good);
        if (!dir.empty()) write_text(dir / "loss.csv", loss_csv.str());
      }
      throw;
    }
    out.losses.push_back(r.loss);
    loss_csv << step << ',' << fmt(r.loss) << ',' << fmt(r.grad_norm) << '\n';
    if (c.train.checkpoint_every > 0 && (step + 1) % c.train.checkpoint_every == 0) {
      std::ostringstream name;
      name << "checkpoint_step_" << std::setw(6) << std::setfill('0') << step + 1 << ".json";
      save(name.str(), out.model);
    }
  }
  save("checkpoint.json", out.model);
  if (!dir.empty()) write_text(dir / "loss.csv", loss_csv.str());
  return out;
}

inline TrainOutcome cmd_train(const RunConfig& c) {
  const auto data = build_dataset(c, c.model.dim);
  json seeds = {{"train_corpus_seed", hash_combine(c.seed, kTrainCorpusSalt)}, {"samples", data.size()}};
  const fs::path dir = open_run_dir(c, "train", seeds);
  return train_model(c, data, dir);
}

// --- ablation ---------------------------------------------------------------

struct Variant {
  std::string name;
  RunConfig config;
  BiasSource bias = BiasSource::kDynamic;
};

inline constexpr int kCurvePoints = 200;

/// Paired variants along one axis; every variant inherits the base corpus and seed.
inline std::vector<Variant> ablation_variants(const RunConfig& base) {
  std::vector<Variant> v;
  auto with_policy = [&](const std::string& name, PolicyKind kind, double gamma_fix = 0.5) {
    Variant x{name, base};
    x.config.policy.policy.kind = kind;
    x.config.policy.policy.gamma_fix = gamma_fix;
    x.config.policy.has_line = false;
    x.config.policy.has_sigma = false;
    if (kind == PolicyKind::kFixed) {
      x.config.policy.policy.gamma_min = std::min(0.25, gamma_fix);
      x.config.policy.policy.gamma_max = std::max(0.5, gamma_fix);
    }
    v.push_back(std::move(x));
  };
  const auto& axis = base.ablation.axis;
  if (axis == "threshold_policy") {
    with_policy("fixed_0.25", PolicyKind::kFixed, 0.25);
    with_policy("fixed_0.40", PolicyKind::kFixed, 0.40);
    with_policy("fixed_0.50", PolicyKind::kFixed, 0.50);
    with_policy("random", PolicyKind::kRandom);
    with_policy("dynamic", PolicyKind::kConditionalLinear);
  } else if (axis == "mapping_function") {
    with_policy("fixed", PolicyKind::kFixed);
    with_policy("global_linear", PolicyKind::kGlobalLinear);
    with_policy("conditional_linear", PolicyKind::kConditionalLinear);
    with_policy("sigmoid", PolicyKind::kSigmoid);
    with_policy("exponential", PolicyKind::kExponential);
  } else if (axis == "edge_components") {
    for (auto [sem, inst] : {std::pair{false, false}, {true, false}, {false, true}, {true, true}}) {
      Variant x{std::string("sem_") + (sem ? "on" : "off") + "_inst_" + (inst ? "on" : "off"), base};
      x.config.sem_enabled = sem;
      x.config.inst_enabled = inst;
      v.push_back(std::move(x));
    }
  } else if (axis == "train_strategy") {
    struct S {
      const char* name;
      bool gate;
      double drop;
      bool ann;
    };
    for (S s : {S{"baseline", false, 0.0, false}, S{"gate", true, 0.0, false}, S{"drop", false, base.strategy.p_max, false},
                S{"ann", false, 0.0, true}, S{"gate_drop", true, base.strategy.p_max, false},
                S{"gate_ann", true, 0.0, true}}) {
      Variant x{s.name, base};
      x.config.strategy.node_gating = s.gate;
      x.config.model.node_gating = s.gate;
      x.config.strategy.geo_dropout_p = s.drop;
      x.config.strategy.annealing = s.ann;
      v.push_back(std::move(x));
    }
  } else {
    throw Error(ErrorCode::kConfig, "unknown ablation axis '" + axis + "'");
  }
  return v;
}

struct AblationRow {
  std::string variant;
  Summary summary;
  std::vector<std::uint64_t> corpus;
  std::vector<double> gammas;
};

struct AblationOutcome {
  std::vector<AblationRow> rows;
  fs::path dir;
};

inline constexpr int kGammaBins = 25;

inline AblationOutcome cmd_ablate(const RunConfig& base) {
  auto variants = ablation_variants(base);
  AblationOutcome out;
  out.dir = open_run_dir(base, "ablate", corpus_seeds(base));

  // Calibration is shared across variants; an explicit report wins.
  std::optional<CalibrationReport> report;
  if (!base.policy.calibration.empty()) {
    report = report_from_json(read_json_file(base.policy.calibration));
  } else if (base.ablation.axis == "threshold_policy" || base.ablation.axis == "mapping_function" ||
             needs_calibration(base.policy.policy.kind) || base.policy.policy.kind == PolicyKind::kGlobalLinear) {
    report = collect_calibration(base, build_model(base));
    write_text(out.dir / "calibration.json", report_to_json(*report).dump(2) + "\n");
  }

  const bool train_each = base.ablation.axis == "edge_components" || base.ablation.axis == "train_strategy";
  std::optional<std::vector<TrainSample>> data;
  std::ostringstream table, gamma_csv, curves, traces;
  table << "variant,episodes,sr,osr,spl,ne,tl,ndtw,sdtw,node_count,steps\n";
  gamma_csv << "variant,bin_lo,bin_hi,count\n";
  curves << "variant,sigma,gamma\n";
  traces << "variant,episode,cycle,sigma,gamma\n";
  for (auto& var : variants) {
    const ThresholdPolicy policy = resolve_policy(var.config.policy, report ? &*report : nullptr);
    PlannerModel model = build_model(var.config);
    if (train_each && var.config.train.steps > 0 && var.config.checkpoint.empty()) {
      if (!data) data = build_dataset(base, base.model.dim);
      model = train_model(var.config, *data, out.dir / ("model_" + var.name)).model;
      model.fusion.sem_enabled = var.config.sem_enabled;
      model.fusion.inst_enabled = var.config.inst_enabled;
    }
    RunConfig eval = var.config;
    eval.log_trajectories = false;
    const auto recs = evaluate_corpus(eval, policy, model, var.bias);
    AblationRow row;
    row.variant = var.name;
    row.summary = summarize(recs);
    for (const auto& r : recs) {
      row.corpus.push_back(r.seed);
      row.gammas.insert(row.gammas.end(), r.result.gamma_trace.begin(), r.result.gamma_trace.end());
    }
    if (!out.rows.empty() && row.corpus != out.rows.front().corpus)
      throw Error(ErrorCode::kInvalidArgument, "ablation variants are not paired");
    const auto& s = row.summary;
    table << var.name << ',' << s.episodes << ',' << fmt(s.sr) << ',' << fmt(s.osr) << ',' << fmt(s.spl) << ','
          << fmt(s.ne) << ',' << fmt(s.tl) << ',' << fmt(s.ndtw) << ',' << fmt(s.sdtw) << ',' << fmt(s.nodes) << ','
          << fmt(s.steps) << '\n';
    std::vector<int> bins(kGammaBins, 0);
    const double lo = policy.gamma_min, hi = policy.gamma_max;
    for (double g : row.gammas) {
      int b = hi > lo ? static_cast<int>((g - lo) / (hi - lo) * kGammaBins) : 0;
      ++bins[std::clamp(b, 0, kGammaBins - 1)];
    }
    for (int b = 0; b < kGammaBins; ++b)
      gamma_csv << var.name << ',' << fmt(lo + b * (hi - lo) / kGammaBins) << ','
                << fmt(lo + (b + 1) * (hi - lo) / kGammaBins) << ',' << bins[b] << '\n';
    if (policy.kind != PolicyKind::kRandom) {
      const double top = report ? report->sigma_max : std::max(policy.sigma_max, 1.0);
      for (int k = 0; k < kCurvePoints; ++k) {
        const double sigma = top * k / (kCurvePoints - 1);
        curves << var.name << ',' << fmt(sigma) << ',' << fmt(policy.deterministic_gamma(sigma)) << '\n';
      }
    }
    traces << trace_csv(recs, var.name);
    out.rows.push_back(std::move(row));
  }
  write_text(out.dir / "ablation.csv", table.str());
  write_text(out.dir / "gamma_distribution.csv", gamma_csv.str());
  write_text(out.dir / "mapping_curves.csv", curves.str());
  write_text(out.dir / "gamma_trace.csv", traces.str());
  return out;
}

// --- report -----------------------------------------------------------------

/// Collects every run summary under output_dir into one table.
inline std::string cmd_report(const RunConfig& c) {
  const fs::path root(c.output_dir);
  if (!fs::is_directory(root)) throw Error(ErrorCode::kIo, "no output directory " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::ostringstream os;
  os << "run,variant,episodes,sr,osr,spl,ne,tl,ndtw,sdtw,node_count,steps\n";
  for (const auto& d : dirs) {
    const std::string run = d.filename().string();
    if (fs::exists(d / "summary.json")) {
      const json s = read_json_file(d / "summary.json");
      os << run << ",-," << s.at("episodes") << ',' << fmt(s.at("sr")) << ',' << fmt(s.at("osr")) << ','
         << fmt(s.at("spl")) << ',' << fmt(s.at("ne")) << ',' << fmt(s.at("tl")) << ',' << fmt(s.at("ndtw")) << ','
         << fmt(s.at("sdtw")) << ',' << fmt(s.at("node_count")) << ',' << fmt(s.at("steps")) << '\n';
    }
    if (fs::exists(d / "ablation.csv")) {
      std::ifstream in(d / "ablation.csv");
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty()) os << run << ',' << line << '\n';
    }
  }
  write_text(root / "report.csv", os.str());
  return os.str();
}

}  // namespace dgnav
